//! Projects a feature map to nodes, keeps the top half by score and
//! scatters them back.
//!
//! cargo run --example graph_pooling

use dganet::autograd::Graph;
use dganet::graph_ops::{nodes_to_map, project_to_nodes, unpool, GraphPool, Modality, SourceLevel, UnpoolFill};
use dganet::nn::{Linear, ParamStore};
use dganet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamStore::new();
    let proj = Linear::new(&mut ps, "proj", 3, 4, true, &mut rng);
    let pool = GraphPool::new(&mut ps, "pool", 4, 0.5, &mut rng)?;

    let g = Graph::with_params(&ps);
    let map = Tensor::from_fn(&[1, 3, 3, 3], |i| (i as f64 * 1.7).sin());
    let nodes = project_to_nodes(&g, g.constant(map), &proj, Modality::Rgb, SourceLevel::Level(1))?;
    let (pooled, rec) = pool.pool(&g, &nodes)?;
    println!("{} nodes -> {} kept: {:?}", nodes.count, pooled.count, rec.retained[0]);
    println!("score gap at the cut: {:.4}", rec.boundary_margin);

    for fill in [UnpoolFill::Passthrough, UnpoolFill::Zero] {
        let back = unpool(&g, &pooled, &rec, fill)?;
        let m = g.value(nodes_to_map(&g, &back)?);
        println!("{fill:?} unpool, channel 0:");
        for r in 0..3 {
            let row: Vec<String> = (0..3).map(|c| format!("{:7.3}", m.at(&[0, 0, r, c]))).collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
