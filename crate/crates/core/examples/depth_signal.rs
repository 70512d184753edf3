//! Trains the full model and the depth-free variant on the same synthetic
//! set and seeds, then compares training-set loss.
//!
//! cargo run --release --example depth_signal -- [seeds] [steps] [lr] [embed_dim] [size]

use dganet::config::{RunConfig, Variant};
use dganet::data::generate;
use dganet::train::{dataset_loss, train};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let seeds: u64 = arg(0, "5").parse()?;
    let steps: usize = arg(1, "200").parse()?;
    let lr: f64 = arg(2, "1e-3").parse()?;
    let dim: usize = arg(3, "32").parse()?;
    let size: usize = arg(4, "64").parse()?;

    let samples = generate(64, size, 2024)?;
    let mut wins = 0;
    for seed in 0..seeds {
        let mut losses = Vec::new();
        for variant in [Variant::Full, Variant::NoDepth] {
            let cfg = RunConfig {
                variant,
                input_size: size,
                embed_dim: dim,
                lr,
                seed,
                epochs: usize::MAX,
                max_steps: steps,
                ..RunConfig::default()
            };
            let t = train(&cfg, &samples)?;
            losses.push(dataset_loss(&t.model, &t.params, &samples, 8)?);
        }
        let win = losses[0] < losses[1];
        wins += win as usize;
        println!("seed {seed}: full {:.4}  w/o Depth {:.4}  {}", losses[0], losses[1], if win { "full" } else { "w/o Depth" });
    }
    println!("full lower in {wins}/{seeds} seeds");
    Ok(())
}
