//! Node sets over feature maps, learnable Top-K graph pooling, and the
//! index-restoring unpooling that inverts it.
//!
//! A feature map `[b, c, h, w]` becomes a node set `[b, h*w, d]` in row-major
//! pixel order. Pooling scores every node with `s = <x, θ> / ‖θ‖`, keeps the
//! `k = max(1, ⌈r·N⌉)` best (lower index wins ties), and gates the kept
//! features by `tanh(s)` so that θ is trained through the selection.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, RowIndex, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Rgb = 0,
    Depth = 1,
}

/// Where a node came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceLevel {
    /// Pyramid level 1..=4 (1 = finest).
    Level(u8),
    Depth,
    /// Nodes built by concatenating sets of different origin.
    Joint,
}

/// Node features `[batch, count, dim]` plus per-node metadata.
#[derive(Clone, Debug)]
pub struct NodeSet {
    pub features: Var,
    pub tags: Vec<Modality>,
    pub levels: Vec<SourceLevel>,
    /// `(h, w)` of the map the set was flattened from, if any.
    pub spatial: Option<(usize, usize)>,
    pub count: usize,
    pub dim: usize,
}

impl NodeSet {
    pub fn from_features(
        g: &Graph,
        features: Var,
        modality: Modality,
        level: SourceLevel,
        spatial: Option<(usize, usize)>,
    ) -> Self {
        let s = g.shape(features);
        assert_eq!(s.len(), 3, "node features must be [b, n, d], got {s:?}");
        NodeSet {
            features,
            tags: vec![modality; s[1]],
            levels: vec![level; s[1]],
            spatial,
            count: s[1],
            dim: s[2],
        }
    }

    /// Tag vector as a `[1, n, 1]` 0/1 tensor (1 = depth).
    pub fn depth_mask(&self) -> Tensor {
        Tensor::from_fn(&[1, self.count, 1], |i| match self.tags[i] {
            Modality::Rgb => 0.0,
            Modality::Depth => 1.0,
        })
    }
}

/// `k = max(1, ⌈r·N⌉)`, robust to `r·N` landing a hair above an integer.
pub fn pooled_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

pub fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("pooling ratio {ratio} outside (0, 1]")))
    }
}

/// `[b, c, h, w]` → `[b, h*w, c]`, row-major over pixels.
pub fn flatten_map(g: &Graph, fm: Var) -> Var {
    let s = g.shape(fm);
    let p = g.permute(fm, &[0, 2, 3, 1]);
    g.reshape(p, &[s[0], s[2] * s[3], s[1]])
}

/// Pointwise-projects a feature map into a node set.
pub fn project_to_nodes(
    g: &Graph,
    fm: Var,
    proj: &Linear,
    modality: Modality,
    level: SourceLevel,
) -> Result<NodeSet> {
    let v = g.value(fm);
    if v.ndim() != 4 {
        return Err(contract!("feature map must be 4-d, got {:?}", v.shape()));
    }
    if !v.is_finite() {
        return Err(Error::Input("feature map contains non-finite values".into()));
    }
    let (_, c, h, w) = v.dims4();
    if c != proj.in_dim {
        return Err(contract!("projection expects {} channels, map has {c}", proj.in_dim));
    }
    let flat = flatten_map(g, fm);
    let feats = proj.forward(g, flat);
    Ok(NodeSet::from_features(g, feats, modality, level, Some((h, w))))
}

/// Row-major inverse of [`flatten_map`]: `[b, h*w, d]` → `[b, d, h, w]`.
pub fn nodes_to_map(g: &Graph, ns: &NodeSet) -> Result<Var> {
    let (h, w) = ns
        .spatial
        .ok_or_else(|| contract!("node set has no spatial shape"))?;
    if ns.count != h * w {
        return Err(contract!(
            "{} nodes cannot fill a {h}x{w} map",
            ns.count
        ));
    }
    let b = g.shape(ns.features)[0];
    let r = g.reshape(ns.features, &[b, h, w, ns.dim]);
    Ok(g.permute(r, &[0, 3, 1, 2]))
}

/// `s_i = <x_i, θ> / ‖θ‖₂`, shape `[b, n]`.
pub fn score_nodes(g: &Graph, ns: &NodeSet, theta: Var) -> Result<Var> {
    let tv = g.value(theta);
    if tv.numel() != ns.dim {
        return Err(contract!("θ has {} entries, nodes have dim {}", tv.numel(), ns.dim));
    }
    if tv.data().iter().all(|&t| t == 0.0) {
        return Err(Error::DegenerateScorer);
    }
    let norm = g.sqrt(g.sum(g.square(theta)));
    let col = g.reshape(theta, &[ns.dim, 1]);
    let raw = g.matmul(ns.features, col);
    let b = g.shape(raw)[0];
    let raw = g.reshape(raw, &[b, ns.count]);
    Ok(g.div(raw, norm))
}

/// What [`unpool`] needs to put pooled nodes back.
#[derive(Clone, Debug)]
pub struct PoolRecord {
    /// Ascending retained indices, one list per batch item.
    pub retained: RowIndex,
    pub original_count: usize,
    /// Pre-gating features `[b, original_count, d]`.
    pub original_features: Var,
    pub original_tags: Vec<Modality>,
    pub original_levels: Vec<SourceLevel>,
    pub spatial: Option<(usize, usize)>,
    /// Smallest gap between the k-th and (k+1)-th score over the batch;
    /// infinite when every node is kept.
    pub boundary_margin: f64,
}

impl PoolRecord {
    pub fn k(&self) -> usize {
        self.retained[0].len()
    }
}

/// Indices of the `k` largest scores, ties to the lower index, returned ascending,
/// together with the score gap at the selection boundary.
pub fn select_top_k(scores: &[f64], k: usize) -> (Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let margin = if k < scores.len() {
        scores[order[k - 1]] - scores[order[k]]
    } else {
        f64::INFINITY
    };
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    (kept, margin)
}

/// Top-K pooling with tanh gating.
pub fn topk_pool(g: &Graph, ns: &NodeSet, ratio: f64, theta: Var) -> Result<(NodeSet, PoolRecord)> {
    check_ratio(ratio)?;
    if ns.count == 0 {
        return Err(contract!("cannot pool an empty node set"));
    }
    let k = pooled_count(ns.count, ratio);
    let scores = score_nodes(g, ns, theta)?;
    let sv = g.value(scores);
    let b = sv.shape()[0];
    let mut retained = Vec::with_capacity(b);
    let mut margin = f64::INFINITY;
    for row in sv.data().chunks(ns.count) {
        let (kept, m) = select_top_k(row, k);
        margin = margin.min(m);
        retained.push(kept);
    }
    let retained: RowIndex = Rc::new(retained);
    let picked = g.gather_rows(ns.features, retained.clone());
    let picked_scores = g.gather_rows(scores, retained.clone());
    let gate = g.reshape(g.tanh(picked_scores), &[b, k, 1]);
    let pooled = g.mul(picked, gate);

    let first = &retained[0];
    let out = NodeSet {
        features: pooled,
        tags: first.iter().map(|&i| ns.tags[i]).collect(),
        levels: first.iter().map(|&i| ns.levels[i]).collect(),
        spatial: None,
        count: k,
        dim: ns.dim,
    };
    let rec = PoolRecord {
        retained,
        original_count: ns.count,
        original_features: ns.features,
        original_tags: ns.tags.clone(),
        original_levels: ns.levels.clone(),
        spatial: ns.spatial,
        boundary_margin: margin,
    };
    Ok((out, rec))
}

/// What dropped slots hold after unpooling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnpoolFill {
    /// The original pre-pooling features.
    #[default]
    Passthrough,
    Zero,
}

pub fn unpool(g: &Graph, pooled: &NodeSet, rec: &PoolRecord, fill: UnpoolFill) -> Result<NodeSet> {
    if pooled.count != rec.k() {
        return Err(contract!(
            "pooled set has {} nodes but record retained {}",
            pooled.count,
            rec.k()
        ));
    }
    let base = match fill {
        UnpoolFill::Passthrough => rec.original_features,
        UnpoolFill::Zero => g.constant(Tensor::zeros(&g.shape(rec.original_features))),
    };
    let features = g.scatter_rows(base, pooled.features, rec.retained.clone());
    Ok(NodeSet {
        features,
        tags: rec.original_tags.clone(),
        levels: rec.original_levels.clone(),
        spatial: rec.spatial,
        count: rec.original_count,
        dim: pooled.dim,
    })
}

/// A scoring vector bound to a fixed pooling ratio.
#[derive(Clone, Debug)]
pub struct GraphPool {
    pub theta: ParamId,
    pub ratio: f64,
}

impl GraphPool {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        ratio: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        use rand::Rng;
        check_ratio(ratio)?;
        let bound = (3.0 / dim as f64).sqrt();
        let theta = ps.add(
            format!("{name}.theta"),
            Tensor::from_fn(&[dim], |_| rng.random_range(-bound..=bound)),
        );
        Ok(GraphPool { theta, ratio })
    }

    pub fn pool(&self, g: &Graph, ns: &NodeSet) -> Result<(NodeSet, PoolRecord)> {
        topk_pool(g, ns, self.ratio, g.param(self.theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn nodes(g: &Graph, b: usize, n: usize, d: usize, seed: u64) -> NodeSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&[b, n, d], |_| rng.random_range(-1.0..1.0));
        NodeSet::from_features(g, g.input(t), Modality::Rgb, SourceLevel::Level(1), None)
    }

    #[test]
    fn pooled_count_examples() {
        assert_eq!(pooled_count(10, 0.5), 5);
        assert_eq!(pooled_count(10, 0.7), 7);
        assert_eq!(pooled_count(1024, 0.2), 205);
        assert_eq!(pooled_count(256, 0.4), 103);
        assert_eq!(pooled_count(64, 0.6), 39);
        assert_eq!(pooled_count(16, 0.8), 13);
        assert_eq!(pooled_count(16, 0.5), 8);
        assert_eq!(pooled_count(32, 0.7), 23);
        assert_eq!(pooled_count(3, 0.01), 1);
    }

    #[test]
    fn score_examples() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let ns = NodeSet::from_features(&g, x, Modality::Rgb, SourceLevel::Depth, None);
        let theta = g.constant(Tensor::from_vec(&[2], vec![2.0, 0.0]));
        let s = score_nodes(&g, &ns, theta).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0]);
        let zero = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(score_nodes(&g, &ns, zero), Err(Error::DegenerateScorer)));
    }

    #[test]
    fn top_k_order_statistics_and_ties() {
        assert_eq!(select_top_k(&[0.9, 0.1, 0.5], 2).0, vec![0, 2]);
        assert_eq!(select_top_k(&[0.3, 0.3, 0.3, 0.1], 2).0, vec![0, 1]);
        let (_, m) = select_top_k(&[0.9, 0.1, 0.5], 2);
        assert!((m - 0.4).abs() < 1e-15);
    }

    #[test]
    fn pool_rejects_bad_ratio() {
        let g = Graph::new();
        let ns = nodes(&g, 1, 4, 3, 0);
        let th = g.constant(Tensor::ones(&[3]));
        assert!(matches!(topk_pool(&g, &ns, 0.0, th), Err(Error::Config(_))));
        assert!(matches!(topk_pool(&g, &ns, 1.5, th), Err(Error::Config(_))));
    }

    #[test]
    fn full_retention_gates_every_node() {
        let g = Graph::new();
        let ns = nodes(&g, 2, 6, 3, 1);
        let th = g.constant(Tensor::from_vec(&[3], vec![0.3, -0.2, 0.9]));
        let (pooled, rec) = topk_pool(&g, &ns, 1.0, th).unwrap();
        assert_eq!(rec.retained[0], (0..6).collect::<Vec<_>>());
        let s = g.value(score_nodes(&g, &ns, th).unwrap());
        let x = g.value(ns.features);
        let p = g.value(pooled.features);
        for i in 0..x.numel() {
            let gate = s.data()[i / 3].tanh();
            assert_eq!(p.data()[i], x.data()[i] * gate);
        }
        let up = unpool(&g, &pooled, &rec, UnpoolFill::Passthrough).unwrap();
        assert_eq!(*g.value(up.features), *p);
    }

    #[test]
    fn unpool_index_placement() {
        let g = Graph::new();
        let orig = g.constant(Tensor::from_vec(&[1, 4, 1], vec![10.0, 11.0, 12.0, 13.0]));
        let enhanced = g.constant(Tensor::from_vec(&[1, 2, 1], vec![-1.0, -2.0]));
        let rec = PoolRecord {
            retained: Rc::new(vec![vec![1, 3]]),
            original_count: 4,
            original_features: orig,
            original_tags: vec![Modality::Rgb; 4],
            original_levels: vec![SourceLevel::Depth; 4],
            spatial: None,
            boundary_margin: 1.0,
        };
        let pooled = NodeSet::from_features(&g, enhanced, Modality::Rgb, SourceLevel::Depth, None);
        let out = unpool(&g, &pooled, &rec, UnpoolFill::Passthrough).unwrap();
        assert_eq!(g.value(out.features).data(), &[10.0, -1.0, 12.0, -2.0]);
        let zero = unpool(&g, &pooled, &rec, UnpoolFill::Zero).unwrap();
        assert_eq!(g.value(zero.features).data(), &[0.0, -1.0, 0.0, -2.0]);

        let wrong = NodeSet::from_features(
            &g,
            g.constant(Tensor::zeros(&[1, 3, 1])),
            Modality::Rgb,
            SourceLevel::Depth,
            None,
        );
        assert!(matches!(
            unpool(&g, &wrong, &rec, UnpoolFill::Passthrough),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn project_flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamStore::new();
        let proj = Linear::new(&mut ps, "p", 5, 5, true, &mut rng);
        proj.set_identity(&mut ps);
        let g = Graph::with_params(&ps);
        let map = Tensor::from_fn(&[2, 5, 4, 4], |i| (i as f64 * 0.3).sin());
        let fm = g.constant(map.clone());
        let ns = project_to_nodes(&g, fm, &proj, Modality::Rgb, SourceLevel::Level(4)).unwrap();
        assert_eq!(ns.count, 16);
        assert_eq!(ns.dim, 5);
        // node j is the channel vector at pixel j
        let f = g.value(ns.features);
        for j in 0..16 {
            for c in 0..5 {
                assert_eq!(f.at(&[1, j, c]), map.at(&[1, c, j / 4, j % 4]));
            }
        }
        let back = nodes_to_map(&g, &ns).unwrap();
        assert_eq!(*g.value(back), map);
    }

    #[test]
    fn nodes_to_map_count_mismatch() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 15, 2]));
        let ns = NodeSet::from_features(&g, x, Modality::Rgb, SourceLevel::Level(1), Some((4, 4)));
        assert!(matches!(nodes_to_map(&g, &ns), Err(Error::Contract(_))));
    }

    #[test]
    fn projection_rejects_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamStore::new();
        let proj = Linear::new(&mut ps, "p", 1, 2, true, &mut rng);
        let g = Graph::with_params(&ps);
        let fm = g.constant(Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, f64::NAN]));
        assert!(matches!(
            project_to_nodes(&g, fm, &proj, Modality::Rgb, SourceLevel::Level(1)),
            Err(Error::Input(_))
        ));
    }
}
