//! Runs cross-modal graph enhancement on a random pyramid and reports
//! node budgets and how far depth moves the fused map.
//!
//! cargo run --release --example cross_modal_enhancement

use dganet::autograd::Graph;
use dganet::cge::{Cge, CgeConfig, CgeMode, FpMode};
use dganet::graph_ops::UnpoolFill;
use dganet::nn::ParamStore;
use dganet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = CgeConfig {
        dim: 16,
        heads: 2,
        rgb_channels: [8, 16, 24, 32],
        depth_channels: 16,
        rgb_ratios: [0.2, 0.4, 0.6, 0.8],
        depth_ratio: 0.5,
        hga_stack: 2,
        mode: CgeMode::Graph { pooling: true, typed: true },
        use_depth: true,
        fill: UnpoolFill::Passthrough,
        fp_mode: FpMode::Aggregate,
    };
    let mut ps = ParamStore::new();
    let cge = Cge::new(&mut ps, "cge", cfg, &mut rng)?;

    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let pyramid = [rand(&[1, 8, 16, 16]), rand(&[1, 16, 8, 8]), rand(&[1, 24, 4, 4]), rand(&[1, 32, 2, 2])];
    let depth = rand(&[1, 16, 2, 2]);

    let g = Graph::with_params(&ps);
    let levels: Vec<_> = pyramid.iter().map(|t| g.constant(t.clone())).collect();
    let with = cge.forward(&g, &levels, Some(g.constant(depth.clone())))?;
    let flipped = cge.forward(&g, &levels, Some(g.constant(depth.map(|v| -v))))?;
    println!("rgb nodes kept per level: {:?}", with.rgb_counts);
    println!("depth nodes kept: {:?}", with.depth_count);
    println!("unified set: {:?}", with.unified_count);
    for (i, v) in with.enhanced_levels.iter().enumerate() {
        println!("enhanced level {}: {:?}", i + 1, g.shape(*v));
    }
    let shift = g.value(with.f_p).max_abs_diff(&g.value(flipped.f_p));
    println!("F_p shape {:?}, max change when depth is negated: {shift:.4}", g.shape(with.f_p));
    Ok(())
}
