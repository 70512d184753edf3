//! Boundary weights and the structure loss on a toy square.
//!
//! cargo run --example losses

use dganet::autograd::Graph;
use dganet::heads::{boundary_weights, total_loss, LossMode};
use dganet::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    let n = 48;
    let gt = Tensor::from_fn(&[1, 1, n, n], |i| {
        let (r, c) = (i / n, i % n);
        if (12..36).contains(&r) && (12..36).contains(&c) { 1.0 } else { 0.0 }
    });
    let w = boundary_weights(&gt);
    println!("weight at centre {:.3}, at edge {:.3}, far away {:.3}", w.at(&[0, 0, 24, 24]), w.at(&[0, 0, 24, 12]), w.at(&[0, 0, 2, 2]));

    let g = Graph::new();
    for confidence in [0.0, 1.0, 3.0, 8.0] {
        let logits = g.constant(gt.map(|v| if v > 0.5 { confidence } else { -confidence }));
        for mode in [LossMode::Weighted, LossMode::Plain] {
            let lt = total_loss(&g, logits, &[logits, logits, logits], &gt, mode)?;
            let terms: Vec<String> = lt.terms.iter().take(2).map(|(k, v)| format!("{k} {:.4}", g.value(*v).item())).collect();
            println!("logit ±{confidence} {mode:?}: total {:.4}  {}", g.value(lt.total).item(), terms.join("  "));
        }
    }
    Ok(())
}
