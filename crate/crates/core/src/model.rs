//! Full network assembly and the variant switchboard.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agr::{Csp, CspMode, Ssag, SsagConfig, EDGES};
use crate::autograd::{Graph, Var};
use crate::backbone::{Backbones, StubConfig, SAM_PREFIX};
use crate::cge::{Cge, CgeConfig, CgeMode};
use crate::config::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::heads::{MaskDecoder, SideHeads};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Architecture switches derived from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub stub: StubConfig,
    pub heads: usize,
    pub use_depth: bool,
    pub use_pvt: bool,
    /// `None` when cross-modal enhancement is absent.
    pub cge_mode: Option<CgeMode>,
    pub hga_stack: usize,
    /// `None` when the anchor is `S4 + F_p` (or `S4` without `F_p`).
    pub ssag: Option<SsagConfig>,
    pub csp: CspMode,
}

impl ModelSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.effective();
        let d = cfg.embed_dim;
        let mut spec = ModelSpec {
            stub: StubConfig::new(cfg.input_size, d)?,
            heads: cfg.heads,
            use_depth: true,
            use_pvt: true,
            cge_mode: Some(CgeMode::Graph {
                pooling: true,
                typed: true,
            }),
            hga_stack: cfg.hga_stack,
            ssag: Some(SsagConfig {
                dim: d,
                heads: cfg.heads,
                ratio: cfg.ssag_ratio,
                pooling: true,
                attention: true,
                fill: cfg.unpool_fill,
            }),
            csp: CspMode::Edges,
        };
        match cfg.variant {
            Variant::Baseline => {
                spec.use_pvt = false;
                spec.cge_mode = None;
                spec.ssag = None;
                spec.csp = CspMode::Off;
            }
            Variant::BaselineCge => {
                spec.ssag = None;
                spec.csp = CspMode::Off;
            }
            Variant::BaselineAgr => spec.cge_mode = None,
            Variant::NoDepth => spec.use_depth = false,
            Variant::SimpleFusion => spec.cge_mode = Some(CgeMode::SimpleFusion),
            Variant::UniformGraph => {
                spec.cge_mode = Some(CgeMode::Graph {
                    pooling: true,
                    typed: false,
                })
            }
            Variant::NoGraphPoolCge => {
                spec.cge_mode = Some(CgeMode::Graph {
                    pooling: false,
                    typed: true,
                })
            }
            Variant::NoSsag => spec.ssag = None,
            Variant::NoGraphPoolAgr => spec.ssag.as_mut().expect("ssag").pooling = false,
            Variant::NoAttention => spec.ssag.as_mut().expect("ssag").attention = false,
            Variant::NoCsp => spec.csp = CspMode::Off,
            Variant::NoEdge => spec.csp = CspMode::NoEdges,
            Variant::Direct => spec.csp = CspMode::Direct,
            Variant::Full
            | Variant::HgaStack(_)
            | Variant::NoHga
            | Variant::RgbRatios(_)
            | Variant::SsagRatio(_) => {}
        }
        Ok(spec)
    }
}

pub struct Model {
    pub cfg: RunConfig,
    pub spec: ModelSpec,
    pub backbones: Backbones,
    pub cge: Option<Cge>,
    pub ssag: Option<Ssag>,
    pub csp: Csp,
    pub decoder: MaskDecoder,
    pub sides: SideHeads,
}

/// Shapes and node counts recorded during a forward pass.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Trace {
    pub sam_pyramid: Vec<Vec<usize>>,
    pub pvt_pyramid: Vec<Vec<usize>>,
    pub depth_feature: Option<Vec<usize>>,
    pub cge_rgb_counts: Vec<usize>,
    pub cge_depth_count: Option<usize>,
    pub cge_unified_count: Option<usize>,
    pub f_p: Option<Vec<usize>>,
    pub e_d: Option<Vec<usize>>,
    pub ssag_joint_count: Option<usize>,
    pub ssag_kept: Option<usize>,
    pub anchor: Vec<usize>,
    /// `(from, to, shape)` per top-down edge.
    pub csp_messages: Vec<(usize, usize, Vec<usize>)>,
    pub levels: Vec<Vec<usize>>,
    pub main: Vec<usize>,
    pub sides: Vec<Vec<usize>>,
}

pub struct ForwardOutput {
    /// Main logits `[b, 1, h, w]`.
    pub main: Var,
    /// Side logits for levels 2..4 at input resolution.
    pub sides: Vec<Var>,
    pub trace: Trace,
}

impl Model {
    /// Builds the network and its parameters from `cfg.seed`.
    pub fn new(cfg: &RunConfig) -> Result<(Model, ParamStore)> {
        let spec = ModelSpec::from_config(cfg)?;
        let eff = cfg.effective();
        let d = spec.stub.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamStore::new();
        let backbones = Backbones::new(&mut ps, &spec.stub, spec.use_pvt, spec.use_depth, &mut rng)?;
        let cge = if spec.use_pvt {
            let mode = spec.cge_mode.unwrap_or(CgeMode::Bypass);
            let cge_cfg = CgeConfig {
                dim: d,
                heads: spec.heads,
                rgb_channels: spec.stub.widths,
                depth_channels: d,
                rgb_ratios: eff.rgb_ratios,
                depth_ratio: eff.depth_ratio,
                hga_stack: spec.hga_stack,
                mode,
                use_depth: spec.use_depth && spec.cge_mode.is_some(),
                fill: eff.unpool_fill,
                fp_mode: eff.fp_mode,
            };
            Some(Cge::new(&mut ps, "cge", cge_cfg, &mut rng)?)
        } else {
            None
        };
        let ssag = match &spec.ssag {
            Some(s) => Some(Ssag::new(&mut ps, "ssag", s.clone(), spec.stub.widths[3], &mut rng)?),
            None => None,
        };
        let w = spec.stub.widths;
        let csp = Csp::new(&mut ps, "csp", spec.csp, [w[0], w[1], w[2]], d, &mut rng);
        let decoder = MaskDecoder::new(&mut ps, d, spec.use_depth, &mut rng);
        let sides = SideHeads::new(&mut ps, d, &mut rng);
        if cfg.freeze_sam {
            ps.set_frozen_prefix(&format!("{SAM_PREFIX}."), true);
        }
        Ok((
            Model {
                cfg: cfg.clone(),
                spec,
                backbones,
                cge,
                ssag,
                csp,
                decoder,
                sides,
            },
            ps,
        ))
    }

    pub fn input_size(&self) -> usize {
        self.spec.stub.input_size
    }

    pub fn uses_depth(&self) -> bool {
        self.spec.use_depth
    }

    /// `images` `[b, 3, h, w]`; `depths` `[b, 1, h, w]`, ignored without a depth branch.
    pub fn forward(&self, g: &Graph, images: &Tensor, depths: Option<&Tensor>) -> Result<ForwardOutput> {
        if images.ndim() != 4 || images.shape()[1] != 3 {
            return Err(Error::Input(format!("images must be [b, 3, h, w], got {:?}", images.shape())));
        }
        let (_, _, h, w) = images.dims4();
        let mut trace = Trace::default();
        let x = g.constant(images.clone());
        let sam = self.backbones.encode_sam(g, x)?;
        trace.sam_pyramid = sam.iter().map(|&v| g.shape(v)).collect();

        let f_depth = if self.spec.use_depth {
            let dt = depths.ok_or_else(|| Error::Input("this variant needs depth maps".into()))?;
            let fd = self.backbones.encode_depth(g, g.constant(dt.clone()), (h, w))?;
            trace.depth_feature = Some(g.shape(fd));
            Some(fd)
        } else {
            None
        };

        let (f_p, e_d) = match &self.cge {
            Some(cge) => {
                let pvt = self.backbones.encode_rgb(g, x)?;
                trace.pvt_pyramid = pvt.iter().map(|&v| g.shape(v)).collect();
                let out = cge.forward(g, &pvt, f_depth)?;
                trace.cge_rgb_counts = out.rgb_counts.clone();
                trace.cge_depth_count = out.depth_count;
                trace.cge_unified_count = out.unified_count;
                trace.f_p = Some(g.shape(out.f_p));
                // Without the graph block the decoder sees the raw depth feature.
                let e_d = if cge.cfg.use_depth { out.e_d } else { f_depth };
                (Some(out.f_p), e_d)
            }
            None => (None, f_depth),
        };
        trace.e_d = e_d.map(|v| g.shape(v));

        let s4 = sam[3];
        let anchor = match (&self.ssag, f_p) {
            (Some(ssag), Some(fp)) => {
                let out = ssag.forward(g, fp, s4)?;
                trace.ssag_joint_count = Some(out.joint_count);
                trace.ssag_kept = Some(out.kept);
                out.f4_int
            }
            (Some(_), None) => return Err(Error::Config("anchor generation needs F_p".into())),
            (None, Some(fp)) => g.add(s4, fp),
            (None, None) => s4,
        };
        trace.anchor = g.shape(anchor);

        let csp = self.csp.forward(g, anchor, &sam[..3])?;
        trace.csp_messages = EDGES
            .iter()
            .zip(&csp.messages)
            .map(|(&(a, b), &m)| (a, b, g.shape(m)))
            .collect();
        trace.levels = csp.levels.iter().map(|&v| g.shape(v)).collect();

        let main = self.decoder.forward(g, csp.levels[0], e_d, (h, w))?;
        let sides = self.sides.forward(g, &csp.levels[1..], (h, w));
        trace.main = g.shape(main);
        trace.sides = sides.iter().map(|&v| g.shape(v)).collect();
        Ok(ForwardOutput { main, sides, trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_builds_and_runs() {
        let img = Tensor::from_fn(&[1, 3, 64, 64], |i| ((i % 97) as f64) / 97.0);
        let dep = Tensor::from_fn(&[1, 1, 64, 64], |i| ((i % 13) as f64) / 13.0);
        for v in Variant::matrix() {
            let cfg = RunConfig {
                variant: v.clone(),
                input_size: 64,
                embed_dim: 8,
                heads: 2,
                ..RunConfig::default()
            };
            let (m, ps) = Model::new(&cfg).unwrap();
            let g = Graph::with_params(&ps);
            let out = m.forward(&g, &img, Some(&dep)).unwrap_or_else(|e| panic!("{v}: {e}"));
            assert_eq!(g.shape(out.main), vec![1, 1, 64, 64], "{v}");
            assert_eq!(out.sides.len(), 3);
        }
    }
}
