//! Overfits the full model on a handful of synthetic scenes and reports
//! train-set MAE and weighted F-measure.
//!
//! cargo run --release --example train_overfit -- [steps] [lr] [embed_dim] [size]

use std::time::Instant;

use dganet::config::RunConfig;
use dganet::data::generate;
use dganet::metrics::{mae, weighted_fmeasure};
use dganet::train::{predict_samples, Trainer};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let steps: usize = arg(0, "200").parse()?;
    let lr: f64 = arg(1, "2e-3").parse()?;
    let dim: usize = arg(2, "64").parse()?;
    let size: usize = arg(3, "128").parse()?;

    let samples = generate(8, size, 1)?;
    let cfg = RunConfig {
        input_size: size,
        embed_dim: dim,
        lr,
        epochs: usize::MAX,
        max_steps: steps,
        ..RunConfig::default()
    };
    let mut trainer = Trainer::new(&cfg)?;
    let t0 = Instant::now();
    let report_every = (steps / 10).max(1);
    for chunk_end in (report_every..=steps).step_by(report_every) {
        trainer.model.cfg.max_steps = chunk_end;
        trainer.fit(&samples)?;
        let last = trainer.history.steps.last().expect("steps ran");
        println!("step {:4}  loss {:.4}  {:.1}s", last.step + 1, last.total, t0.elapsed().as_secs_f64());
    }
    let preds = predict_samples(&trainer.model, &trainer.params, &samples, 4)?;
    let (mut m, mut f) = (0.0, 0.0);
    for (p, s) in preds.iter().zip(&samples) {
        m += mae(p, &s.mask)?;
        f += weighted_fmeasure(p, &s.mask)?;
    }
    let n = samples.len() as f64;
    println!("train MAE {:.4}  wFm {:.4}", m / n, f / n);
    Ok(())
}
