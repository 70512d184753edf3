//! Cross-modal graph enhancement.
//!
//! Each RGB pyramid level and the depth feature are projected to node sets,
//! Top-K pooled with their own ratio, concatenated into one typed node set,
//! refined by heterogeneous graph attention, split back by origin, unpooled
//! and reshaped. The four enhanced RGB levels are folded into a single map
//! `F_p` at the coarsest resolution; the depth branch yields `E_d`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::MultiHeadAttention;
use crate::autograd::{Graph, Var};
use crate::error::{contract, Result};
use crate::graph_ops::{
    nodes_to_map, project_to_nodes, unpool, GraphPool, Modality, NodeSet, PoolRecord,
    SourceLevel, UnpoolFill,
};
use crate::nn::{Conv2d, Linear, ParamStore};
use crate::tensor::Tensor;

/// How `F_p` is formed from the enhanced levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpMode {
    /// Average-pool every level to level-4 size, project each, and sum.
    #[default]
    Aggregate,
    /// Use enhanced level 4 alone.
    Level4,
}

/// Structural choice for the enhancement block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgeMode {
    /// Pool → heterogeneous attention → unpool.
    Graph {
        pooling: bool,
        /// `false` routes every node through one shared map (type-insensitive graph).
        typed: bool,
    },
    /// Per-level concatenation of RGB and resized depth features, then a 1×1 conv.
    SimpleFusion,
    /// Projections only; no cross-modal interaction.
    Bypass,
}

#[derive(Clone, Debug)]
pub struct CgeConfig {
    pub dim: usize,
    pub heads: usize,
    pub rgb_channels: [usize; 4],
    pub depth_channels: usize,
    pub rgb_ratios: [f64; 4],
    pub depth_ratio: f64,
    /// Number of stacked attention layers; 0 removes attention.
    pub hga_stack: usize,
    pub mode: CgeMode,
    pub use_depth: bool,
    pub fill: UnpoolFill,
    pub fp_mode: FpMode,
}

/// One heterogeneous graph attention layer: `X' = X + MHSA([φ_rgb(X_rgb), φ_depth(X_depth)])`.
#[derive(Clone, Debug)]
pub struct HgaLayer {
    pub phi_rgb: Linear,
    /// `None` for the type-insensitive variant.
    pub phi_depth: Option<Linear>,
    pub attention: MultiHeadAttention,
}

impl HgaLayer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        typed: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(HgaLayer {
            phi_rgb: Linear::new(ps, &format!("{name}.phi_rgb"), dim, dim, true, rng),
            phi_depth: typed
                .then(|| Linear::new(ps, &format!("{name}.phi_depth"), dim, dim, true, rng)),
            attention: MultiHeadAttention::new(ps, &format!("{name}.mhsa"), dim, heads, rng)?,
        })
    }

    pub fn forward(&self, g: &Graph, x: &NodeSet) -> NodeSet {
        let rgb = self.phi_rgb.forward(g, x.features);
        let has_depth = x.tags.contains(&Modality::Depth);
        let mixed = match (&self.phi_depth, has_depth) {
            (Some(phi_depth), true) => {
                let depth = phi_depth.forward(g, x.features);
                let m = x.depth_mask();
                let not_m = m.map(|v| 1.0 - v);
                g.add(
                    g.mul(rgb, g.constant(not_m)),
                    g.mul(depth, g.constant(m)),
                )
            }
            _ => rgb,
        };
        let update = self.attention.forward(g, mixed);
        NodeSet {
            features: g.add(x.features, update),
            ..x.clone()
        }
    }
}

/// Applies a stack of HGA layers.
pub fn hga(g: &Graph, x: &NodeSet, layers: &[HgaLayer]) -> NodeSet {
    layers.iter().fold(x.clone(), |acc, l| l.forward(g, &acc))
}

/// Concatenates pooled sets in the order `[level1, level2, level3, level4, depth]`.
pub fn build_unified_set(g: &Graph, rgb: &[NodeSet], depth: Option<&NodeSet>) -> Result<NodeSet> {
    let mut parts: Vec<&NodeSet> = rgb.iter().collect();
    if let Some(d) = depth {
        parts.push(d);
    }
    let Some(first) = parts.first() else {
        return Err(contract!("no node sets to unify"));
    };
    let dim = first.dim;
    let mut tags = Vec::new();
    let mut levels = Vec::new();
    for p in &parts {
        if p.dim != dim {
            return Err(contract!("node dim mismatch: {} vs {dim}", p.dim));
        }
        if p.count == 0 {
            return Err(contract!("cannot unify an empty node set"));
        }
        tags.extend_from_slice(&p.tags);
        levels.extend_from_slice(&p.levels);
    }
    let feats: Vec<Var> = parts.iter().map(|p| p.features).collect();
    let features = g.concat(&feats, 1);
    Ok(NodeSet {
        features,
        count: tags.len(),
        tags,
        levels,
        spatial: None,
        dim,
    })
}

/// Splits a unified set back into consecutive pieces of the given sizes.
pub fn split_unified(g: &Graph, x: &NodeSet, counts: &[usize]) -> Result<Vec<NodeSet>> {
    if counts.iter().sum::<usize>() != x.count {
        return Err(contract!("split sizes {counts:?} do not sum to {}", x.count));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(counts.len());
    for &c in counts {
        out.push(NodeSet {
            features: g.narrow(x.features, 1, start, c),
            tags: x.tags[start..start + c].to_vec(),
            levels: x.levels[start..start + c].to_vec(),
            spatial: None,
            count: c,
            dim: x.dim,
        });
        start += c;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CgeOutput {
    /// `[b, d, h4, w4]`
    pub f_p: Var,
    /// `[b, d, h4, w4]`; absent without depth.
    pub e_d: Option<Var>,
    /// Enhanced level maps, finest first.
    pub enhanced_levels: Vec<Var>,
    /// Size of the attention node set, when a graph was built.
    pub unified_count: Option<usize>,
    pub rgb_counts: Vec<usize>,
    pub depth_count: Option<usize>,
    pub records: Vec<PoolRecord>,
}

#[derive(Clone, Debug)]
pub struct Cge {
    pub cfg: CgeConfig,
    pub level_proj: Vec<Linear>,
    pub depth_proj: Option<Linear>,
    pub level_pool: Vec<GraphPool>,
    pub depth_pool: Option<GraphPool>,
    pub layers: Vec<HgaLayer>,
    pub fuse: Vec<Conv2d>,
    pub aggregate: Vec<Conv2d>,
}

impl Cge {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: CgeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.dim;
        let level_proj = (0..4)
            .map(|i| Linear::new(ps, &format!("{name}.proj{}", i + 1), cfg.rgb_channels[i], d, true, rng))
            .collect();
        let depth_proj = cfg
            .use_depth
            .then(|| Linear::new(ps, &format!("{name}.proj_depth"), cfg.depth_channels, d, true, rng));
        let mut level_pool = Vec::new();
        let mut depth_pool = None;
        let mut layers = Vec::new();
        let mut fuse = Vec::new();
        match cfg.mode {
            CgeMode::Graph { pooling, typed } => {
                if pooling {
                    for i in 0..4 {
                        level_pool.push(GraphPool::new(
                            ps,
                            &format!("{name}.pool{}", i + 1),
                            d,
                            cfg.rgb_ratios[i],
                            rng,
                        )?);
                    }
                    if cfg.use_depth {
                        depth_pool = Some(GraphPool::new(
                            ps,
                            &format!("{name}.pool_depth"),
                            d,
                            cfg.depth_ratio,
                            rng,
                        )?);
                    }
                }
                for l in 0..cfg.hga_stack {
                    layers.push(HgaLayer::new(
                        ps,
                        &format!("{name}.hga{l}"),
                        d,
                        cfg.heads,
                        typed && cfg.use_depth,
                        rng,
                    )?);
                }
            }
            CgeMode::SimpleFusion => {
                let cin = if cfg.use_depth { 2 * d } else { d };
                for i in 0..4 {
                    fuse.push(Conv2d::pointwise(ps, &format!("{name}.fuse{}", i + 1), cin, d, rng));
                }
            }
            CgeMode::Bypass => {}
        }
        let aggregate = match cfg.fp_mode {
            FpMode::Aggregate => (0..4)
                .map(|i| Conv2d::pointwise(ps, &format!("{name}.agg{}", i + 1), d, d, rng))
                .collect(),
            FpMode::Level4 => Vec::new(),
        };
        Ok(Cge {
            cfg,
            level_proj,
            depth_proj,
            level_pool,
            depth_pool,
            layers,
            fuse,
            aggregate,
        })
    }

    /// Zeroes every attention output projection (residual identity).
    pub fn zero_attention_outputs(&self, ps: &mut ParamStore) {
        for l in &self.layers {
            l.attention.zero_output(ps);
        }
    }

    pub fn forward(&self, g: &Graph, pyramid: &[Var], f_depth: Option<Var>) -> Result<CgeOutput> {
        if pyramid.len() != 4 {
            return Err(contract!("expected 4 pyramid levels, got {}", pyramid.len()));
        }
        if self.cfg.use_depth && f_depth.is_none() {
            return Err(crate::Error::Input("depth feature required but missing".into()));
        }
        let f_depth = if self.cfg.use_depth { f_depth } else { None };
        let level_sets = pyramid
            .iter()
            .enumerate()
            .map(|(i, &fm)| {
                project_to_nodes(g, fm, &self.level_proj[i], Modality::Rgb, SourceLevel::Level(i as u8 + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let depth_set = match (f_depth, &self.depth_proj) {
            (Some(fd), Some(p)) => Some(project_to_nodes(g, fd, p, Modality::Depth, SourceLevel::Depth)?),
            _ => None,
        };

        let mut out = match self.cfg.mode {
            CgeMode::Graph { pooling, .. } => self.graph_path(g, &level_sets, depth_set.as_ref(), pooling)?,
            CgeMode::SimpleFusion => {
                let depth_map = depth_set.as_ref().map(|d| nodes_to_map(g, d)).transpose()?;
                let mut levels = Vec::new();
                for (i, ns) in level_sets.iter().enumerate() {
                    let m = nodes_to_map(g, ns)?;
                    let joined = match depth_map {
                        Some(dm) => {
                            let (h, w) = ns.spatial.unwrap();
                            g.concat(&[m, g.resize(dm, h, w)], 1)
                        }
                        None => m,
                    };
                    levels.push(self.fuse[i].forward(g, joined));
                }
                partial(levels, depth_map, &level_sets, depth_set.as_ref())
            }
            CgeMode::Bypass => {
                let levels = level_sets.iter().map(|ns| nodes_to_map(g, ns)).collect::<Result<Vec<_>>>()?;
                let depth_map = depth_set.as_ref().map(|d| nodes_to_map(g, d)).transpose()?;
                partial(levels, depth_map, &level_sets, depth_set.as_ref())
            }
        };
        out.f_p = self.fold_levels(g, &out.enhanced_levels)?;
        Ok(out)
    }

    fn graph_path(
        &self,
        g: &Graph,
        level_sets: &[NodeSet],
        depth_set: Option<&NodeSet>,
        pooling: bool,
    ) -> Result<CgeOutput> {
        let mut records = Vec::new();
        let mut pooled_levels = Vec::new();
        for (i, ns) in level_sets.iter().enumerate() {
            if pooling {
                let (p, r) = self.level_pool[i].pool(g, ns)?;
                pooled_levels.push(p);
                records.push(r);
            } else {
                pooled_levels.push(ns.clone());
            }
        }
        let pooled_depth = match depth_set {
            Some(ds) if pooling => {
                let (p, r) = self.depth_pool.as_ref().expect("depth pool").pool(g, ds)?;
                records.push(r);
                Some(p)
            }
            Some(ds) => Some(ds.clone()),
            None => None,
        };
        let unified = build_unified_set(g, &pooled_levels, pooled_depth.as_ref())?;
        let refined = hga(g, &unified, &self.layers);
        let mut counts: Vec<usize> = pooled_levels.iter().map(|p| p.count).collect();
        if let Some(d) = &pooled_depth {
            counts.push(d.count);
        }
        let parts = split_unified(g, &refined, &counts)?;

        let restore = |part: &NodeSet, idx: usize, original: &NodeSet| -> Result<Var> {
            let ns = if pooling {
                unpool(g, part, &records[idx], self.cfg.fill)?
            } else {
                NodeSet {
                    spatial: original.spatial,
                    ..part.clone()
                }
            };
            nodes_to_map(g, &ns)
        };
        let mut levels = Vec::new();
        for i in 0..4 {
            levels.push(restore(&parts[i], i, &level_sets[i])?);
        }
        let e_d = match depth_set {
            Some(ds) => Some(restore(&parts[4], 4, ds)?),
            None => None,
        };
        Ok(CgeOutput {
            f_p: levels[3],
            e_d,
            enhanced_levels: levels,
            unified_count: Some(unified.count),
            rgb_counts: counts[..4].to_vec(),
            depth_count: pooled_depth.map(|d| d.count),
            records,
        })
    }

    fn fold_levels(&self, g: &Graph, levels: &[Var]) -> Result<Var> {
        match self.cfg.fp_mode {
            FpMode::Level4 => Ok(levels[3]),
            FpMode::Aggregate => {
                let target = g.shape(levels[3]);
                let mut acc: Option<Var> = None;
                for (i, &lv) in levels.iter().enumerate() {
                    let s = g.shape(lv);
                    if !s[2].is_multiple_of(target[2]) || s[2] / target[2] != s[3] / target[3] {
                        return Err(contract!("level {} shape {s:?} not a multiple of level 4", i + 1));
                    }
                    let down = g.avg_pool(lv, s[2] / target[2]);
                    let proj = self.aggregate[i].forward(g, down);
                    acc = Some(match acc {
                        Some(a) => g.add(a, proj),
                        None => proj,
                    });
                }
                Ok(acc.expect("four levels"))
            }
        }
    }
}

fn partial(
    levels: Vec<Var>,
    e_d: Option<Var>,
    level_sets: &[NodeSet],
    depth_set: Option<&NodeSet>,
) -> CgeOutput {
    CgeOutput {
        f_p: levels[3],
        e_d,
        enhanced_levels: levels,
        unified_count: None,
        rgb_counts: level_sets.iter().map(|n| n.count).collect(),
        depth_count: depth_set.map(|d| d.count),
        records: Vec::new(),
    }
}

/// A `[1, n, d]` node tensor helper used by tests and examples.
pub fn node_tensor(n: usize, d: usize, f: impl FnMut(usize) -> f64) -> Tensor {
    Tensor::from_fn(&[1, n, d], f)
}
