//! Builds the semantic anchor from a fused map and the deepest prior
//! prior level (already at the embedding width), then propagates it through the pyramid in every mode.
//!
//! cargo run --release --example anchor_refinement

use dganet::agr::{Csp, CspMode, Ssag, SsagConfig};
use dganet::autograd::Graph;
use dganet::graph_ops::UnpoolFill;
use dganet::nn::ParamStore;
use dganet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 16;
    let cfg = SsagConfig {
        dim,
        heads: 2,
        ratio: 0.7,
        pooling: true,
        attention: true,
        fill: UnpoolFill::Passthrough,
    };
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let f_p = rand(&[1, dim, 4, 4]);
    let s: Vec<Tensor> = [(4, 32), (8, 16), (12, 8), (dim, 4)].iter().map(|&(c, n)| rand(&[1, c, n, n])).collect();

    let mut seed = ChaCha8Rng::seed_from_u64(4);
    for mode in [CspMode::Edges, CspMode::NoEdges, CspMode::Direct, CspMode::Off] {
        let mut ps = ParamStore::new();
        let ssag = Ssag::new(&mut ps, "ssag", cfg.clone(), dim, &mut seed)?;
        let csp = Csp::new(&mut ps, "csp", mode, [4, 8, 12], dim, &mut seed);
        let g = Graph::with_params(&ps);
        let anchor = ssag.forward(&g, g.constant(f_p.clone()), g.constant(s[3].clone()))?;
        let sv: Vec<_> = s[..3].iter().map(|t| g.constant(t.clone())).collect();
        let out = csp.forward(&g, anchor.f4_int, &sv)?;
        let shapes: Vec<_> = out.levels.iter().map(|v| g.shape(*v)[2]).collect();
        println!(
            "{mode:?}: joint {} kept {}  level sides {:?}  messages {}",
            anchor.joint_count,
            anchor.kept,
            shapes,
            out.messages.len()
        );
    }
    Ok(())
}
