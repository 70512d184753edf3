use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dganet::ablate::run_ablation;
use dganet::config::{parse_variant_list, RunConfig};
use dganet::data::{generate, read_dataset, write_dataset, Sample};
use dganet::metrics::{evaluate_pair_dir, EMode};
use dganet::predict::predict_files;
use dganet::train::{dataset_loss, save_checkpoint, train};

#[derive(Parser)]
#[command(name = "dganet", version, about = "Depth-guided graph segmentation on synthetic camouflage scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one configuration and write a checkpoint and loss history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// E-measure binarization: adaptive, mean or max.
        #[arg(long, default_value = "adaptive")]
        emode: String,
    },
    /// Train and score several variants under one budget.
    Ablate {
        /// Comma-separated variant names, e.g. "B,full,r_i=[0.2,0.2,0.2,0.2]".
        #[arg(long)]
        variants: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset with `train/` and `test/` subsets, or a flat dataset split 80/20.
        /// Synthesized when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict a mask for one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the three side predictions.
        #[arg(long)]
        sides: bool,
    },
}

fn ablation_data(dir: Option<&Path>, cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let Some(dir) = dir else {
        return Ok((
            generate(64, cfg.input_size, cfg.seed)?,
            generate(16, cfg.input_size, cfg.seed.wrapping_add(1))?,
        ));
    };
    if dir.join("train").is_dir() && dir.join("test").is_dir() {
        return Ok((read_dataset(&dir.join("train"))?, read_dataset(&dir.join("test"))?));
    }
    let mut all = read_dataset(dir)?;
    if all.len() < 2 {
        bail!("{} needs at least two samples to split", dir.display());
    }
    let test = all.split_off((all.len() * 4 / 5).max(1));
    Ok((all, test))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, count, size, seed } => {
            let samples = generate(count, size, seed)?;
            write_dataset(&samples, &out)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            let samples = read_dataset(&data)?;
            let t = train(&cfg, &samples)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            save_checkpoint(&out.join("model.ckpt"), &cfg, &t.params)?;
            std::fs::write(out.join("history.json"), serde_json::to_string_pretty(&t.history)?)?;
            t.history.write_csv(&out.join("history.csv"))?;
            std::fs::write(out.join("config.txt"), cfg.to_kv())?;
            let loss = dataset_loss(&t.model, &t.params, &samples, cfg.batch)?;
            println!(
                "{} steps, {} parameters, train loss {loss:.4}; checkpoint in {}",
                t.history.steps.len(),
                t.params.num_scalars(),
                out.display()
            );
        }
        Command::Eval { pred, gt, report, emode } => {
            let mode = match emode.as_str() {
                "adaptive" => EMode::Adaptive,
                "mean" => EMode::Mean,
                "max" => EMode::Max,
                other => bail!("unknown E-measure mode `{other}`"),
            };
            let r = evaluate_pair_dir(&pred, &gt, mode)?;
            r.write_json(&report)?;
            let a = &r.aggregate;
            println!(
                "{} images, {} errors: MAE {:.4}  wFm {:.4}  Em {:.4}  Sm {:.4}",
                r.per_image.len(),
                r.errors.len(),
                a.mae,
                a.wfm,
                a.em,
                a.sm
            );
        }
        Command::Ablate { variants, config, out, data } => {
            let variants = parse_variant_list(&variants)?;
            let cfg = RunConfig::load(&config)?;
            let (train_set, test_set) = ablation_data(data.as_deref(), &cfg)?;
            let table = run_ablation(&variants, &cfg, &train_set, &test_set)?;
            table.write(&out)?;
            print!("{}", table.to_text());
        }
        Command::Predict { ckpt, image, depth, out, sides } => {
            for p in predict_files(&ckpt, &image, depth.as_deref(), &out, sides)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
