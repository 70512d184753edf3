//! Anchor-guided refinement: the global anchor built from `F_p` and the
//! deepest SAM-branch level, then pushed down the pyramid along top-down
//! edges.

use rand_chacha::ChaCha8Rng;

use crate::attention::MultiHeadAttention;
use crate::autograd::{Graph, Var};
use crate::cge::build_unified_set;
use crate::error::{contract, Error, Result};
use crate::graph_ops::{
    nodes_to_map, project_to_nodes, unpool, GraphPool, Modality, NodeSet, SourceLevel, UnpoolFill,
};
use crate::nn::{Conv2d, Linear, ParamStore};

#[derive(Clone, Debug)]
pub struct SsagConfig {
    pub dim: usize,
    pub heads: usize,
    pub ratio: f64,
    pub pooling: bool,
    pub attention: bool,
    pub fill: UnpoolFill,
}

#[derive(Clone, Debug)]
pub struct Ssag {
    pub cfg: SsagConfig,
    pub proj_fp: Linear,
    pub proj_s4: Linear,
    pub pool: Option<GraphPool>,
    pub attention: Option<MultiHeadAttention>,
}

#[derive(Clone, Debug)]
pub struct SsagOutput {
    pub f4_int: Var,
    pub joint_count: usize,
    /// Nodes entering attention.
    pub kept: usize,
    /// Positions of the `S4` nodes inside the joint set.
    pub s4_range: std::ops::Range<usize>,
}

impl Ssag {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cfg: SsagConfig,
        s4_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = cfg.dim;
        if s4_channels != d {
            return Err(Error::Config(format!("S4 needs {d} channels for the residual, got {s4_channels}")));
        }
        Ok(Ssag {
            proj_fp: Linear::new(ps, &format!("{name}.proj_fp"), d, d, true, rng),
            proj_s4: Linear::new(ps, &format!("{name}.proj_s4"), s4_channels, d, true, rng),
            pool: if cfg.pooling {
                Some(GraphPool::new(ps, &format!("{name}.pool"), d, cfg.ratio, rng)?)
            } else {
                None
            },
            attention: if cfg.attention {
                Some(MultiHeadAttention::new(ps, &format!("{name}.mhsa"), d, cfg.heads, rng)?)
            } else {
                None
            },
            cfg,
        })
    }

    pub fn zero_attention_output(&self, ps: &mut ParamStore) {
        if let Some(a) = &self.attention {
            a.zero_output(ps);
        }
    }

    pub fn zero_projections(&self, ps: &mut ParamStore) {
        self.proj_fp.set_zero(ps);
        self.proj_s4.set_zero(ps);
    }

    pub fn forward(&self, g: &Graph, f_p: Var, s4: Var) -> Result<SsagOutput> {
        let (sf, ss) = (g.shape(f_p), g.shape(s4));
        if sf.len() != 4 || ss.len() != 4 || sf[0] != ss[0] || sf[2..] != ss[2..] {
            return Err(contract!("F_p {sf:?} and S4 {ss:?} must share batch and spatial shape"));
        }
        if ss[1] != self.cfg.dim {
            return Err(contract!("S4 has {} channels, anchor needs {}", ss[1], self.cfg.dim));
        }
        let g_fp = project_to_nodes(g, f_p, &self.proj_fp, Modality::Rgb, SourceLevel::Joint)?;
        let g_s4 = project_to_nodes(g, s4, &self.proj_s4, Modality::Rgb, SourceLevel::Level(4))?;
        let spatial = g_s4.spatial;
        let s4_range = g_fp.count..g_fp.count + g_s4.count;
        let joint = build_unified_set(g, &[g_fp, g_s4], None)?;
        let joint = NodeSet { spatial: None, ..joint };

        let (pooled, record) = match &self.pool {
            Some(p) => {
                let (ns, r) = p.pool(g, &joint)?;
                (ns, Some(r))
            }
            None => (joint.clone(), None),
        };
        let kept = pooled.count;
        let attended = match &self.attention {
            Some(a) => NodeSet {
                features: a.forward(g, pooled.features),
                ..pooled
            },
            None => pooled,
        };
        let restored = match &record {
            Some(r) => unpool(g, &attended, r, self.cfg.fill)?,
            None => attended,
        };
        let s_feat = NodeSet {
            features: g.narrow(restored.features, 1, s4_range.start, s4_range.len()),
            tags: restored.tags[s4_range.clone()].to_vec(),
            levels: restored.levels[s4_range.clone()].to_vec(),
            spatial,
            count: s4_range.len(),
            dim: restored.dim,
        };
        let map = nodes_to_map(g, &s_feat)?;
        Ok(SsagOutput {
            f4_int: g.add(map, s4),
            joint_count: joint.count,
            kept,
            s4_range,
        })
    }
}

/// How each shallower level receives information from deeper ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CspMode {
    /// All six top-down edges.
    Edges,
    /// No messages; each level is fused from its own nodes only.
    NoEdges,
    /// The raw anchor, upsampled, concatenated with each level.
    Direct,
    /// No propagation at all: `F_i` is the projected `S_i`.
    Off,
}

/// The six directed edges, deeper level first.
pub const EDGES: [(usize, usize); 6] = [(4, 3), (4, 2), (4, 1), (3, 2), (3, 1), (2, 1)];

#[derive(Clone, Debug)]
pub struct Fusion {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl Fusion {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Fusion {
            conv1: Conv2d::same3(ps, &format!("{name}.conv1"), cin, d, rng),
            conv2: Conv2d::same3(ps, &format!("{name}.conv2"), d, d, rng),
        }
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        let h = g.silu(self.conv1.forward(g, x));
        self.conv2.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct Csp {
    pub mode: CspMode,
    pub dim: usize,
    /// 1×1 projections for `S1, S2, S3, F4_int`.
    pub proj: Vec<Conv2d>,
    /// Indexed like [`EDGES`].
    pub edges: Vec<Conv2d>,
    /// Fusion blocks for levels 1..3.
    pub fusion: Vec<Fusion>,
}

#[derive(Clone, Debug)]
pub struct CspOutput {
    /// `F1..F4`, finest first.
    pub levels: Vec<Var>,
    /// Edge messages indexed like [`EDGES`], when built.
    pub messages: Vec<Var>,
}

impl Csp {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        mode: CspMode,
        s_channels: [usize; 3],
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut proj: Vec<Conv2d> = (0..3)
            .map(|i| Conv2d::pointwise(ps, &format!("{name}.proj{}", i + 1), s_channels[i], d, rng))
            .collect();
        let mut edges = Vec::new();
        let mut fusion = Vec::new();
        match mode {
            CspMode::Edges => {
                proj.push(Conv2d::pointwise(ps, &format!("{name}.proj4"), d, d, rng));
                for (a, b) in EDGES {
                    edges.push(Conv2d::pointwise(ps, &format!("{name}.edge{a}{b}"), d, d, rng));
                }
                for i in 0..3 {
                    // own nodes plus one message from every deeper level
                    let cin = d * (4 - i);
                    fusion.push(Fusion::new(ps, &format!("{name}.fuse{}", i + 1), cin, d, rng));
                }
            }
            CspMode::NoEdges => {
                for i in 0..3 {
                    fusion.push(Fusion::new(ps, &format!("{name}.fuse{}", i + 1), d, d, rng));
                }
            }
            CspMode::Direct => {
                for i in 0..3 {
                    fusion.push(Fusion::new(ps, &format!("{name}.fuse{}", i + 1), 2 * d, d, rng));
                }
            }
            CspMode::Off => {}
        }
        Csp {
            mode,
            dim: d,
            proj,
            edges,
            fusion,
        }
    }

    pub fn edge_index(from: usize, to: usize) -> usize {
        EDGES
            .iter()
            .position(|&e| e == (from, to))
            .expect("edges only run from deeper to shallower levels")
    }

    pub fn forward(&self, g: &Graph, f4_int: Var, s: &[Var]) -> Result<CspOutput> {
        if s.len() < 3 {
            return Err(contract!("need S1..S3, got {} maps", s.len()));
        }
        let s4 = g.shape(f4_int);
        for (i, &si) in s[..3].iter().enumerate() {
            let sh = g.shape(si);
            let f = 1 << (3 - i);
            if sh[2] != s4[2] * f || sh[3] != s4[3] * f {
                return Err(contract!("level {} is {:?}, expected {}x the anchor {:?}", i + 1, sh, f, s4));
            }
        }
        let mut nodes: Vec<Var> = (0..3).map(|i| self.proj[i].forward(g, s[i])).collect();
        let mut messages = Vec::new();
        let mut levels = Vec::with_capacity(4);
        match self.mode {
            CspMode::Off => levels.extend(nodes.iter().copied()),
            CspMode::NoEdges => {
                for i in 0..3 {
                    levels.push(self.fusion[i].forward(g, nodes[i]));
                }
            }
            CspMode::Direct => {
                for i in 0..3 {
                    let up = g.upsample2x(f4_int, 3 - i);
                    levels.push(self.fusion[i].forward(g, g.concat(&[nodes[i], up], 1)));
                }
            }
            CspMode::Edges => {
                nodes.push(self.proj[3].forward(g, f4_int));
                for (e, &(a, b)) in EDGES.iter().enumerate() {
                    let msg = self.edges[e].forward(g, nodes[a - 1]);
                    messages.push(g.upsample2x(msg, a - b));
                }
                for lvl in 1..=3 {
                    let mut parts = vec![nodes[lvl - 1]];
                    for from in (lvl + 1..=4).rev() {
                        parts.push(messages[Self::edge_index(from, lvl)]);
                    }
                    levels.push(self.fusion[lvl - 1].forward(g, g.concat(&parts, 1)));
                }
            }
        }
        levels.push(f4_int);
        Ok(CspOutput { levels, messages })
    }
}
