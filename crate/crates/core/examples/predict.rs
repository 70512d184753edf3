//! Trains a tiny model, saves it, and predicts a mask for a fresh
//! synthetic image written to disk.
//!
//! cargo run --release --example predict -- [out_dir]

use std::path::PathBuf;

use dganet::config::RunConfig;
use dganet::data::{synth_sample, generate, write_dataset};
use dganet::predict::predict_files;
use dganet::train::{save_checkpoint, train};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "predict_demo".into()));
    let cfg = RunConfig {
        input_size: 64,
        embed_dim: 16,
        heads: 2,
        lr: 1e-3,
        batch: 4,
        epochs: usize::MAX,
        max_steps: 80,
        ..RunConfig::default()
    };
    let t = train(&cfg, &generate(8, 64, 0)?)?;
    let ckpt = out.join("model.ckpt");
    std::fs::create_dir_all(&out)?;
    save_checkpoint(&ckpt, &cfg, &t.params)?;

    let fresh = synth_sample(999, 64)?;
    write_dataset(std::slice::from_ref(&fresh), &out.join("input"))?;
    let img = out.join("input/images").join(format!("{}.png", fresh.id));
    let dep = out.join("input/depths").join(format!("{}.png", fresh.id));
    for p in predict_files(&ckpt, &img, Some(&dep), &out.join("pred.png"), true)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
