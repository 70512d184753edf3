//! Trains a few variants briefly on synthetic data and prints the table.
//!
//! cargo run --release --example ablation -- [variants] [steps]

use dganet::ablate::run_ablation;
use dganet::config::{parse_variant_list, RunConfig, Variant};
use dganet::data::generate;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variants = parse_variant_list(args.first().map(String::as_str).unwrap_or("B,B+CGE,B+AGR,full"))?;
    let steps: usize = args.get(1).map_or(Ok(60), |s| s.parse())?;
    let base = RunConfig {
        variant: Variant::Full,
        input_size: 64,
        embed_dim: 16,
        heads: 2,
        lr: 1e-3,
        batch: 4,
        epochs: usize::MAX,
        max_steps: steps,
        ..RunConfig::default()
    };
    let train_set = generate(16, 64, 0)?;
    let test_set = generate(8, 64, 1)?;
    let table = run_ablation(&variants, &base, &train_set, &test_set)?;
    print!("{}", table.to_text());
    Ok(())
}
