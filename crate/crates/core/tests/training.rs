use std::process::Command;

use dganet::ablate::run_ablation;
use dganet::autograd::Graph;
use dganet::backbone::SAM_PREFIX;
use dganet::config::{parse_variant_list, RunConfig, Variant};
use dganet::data::{generate, write_dataset, Batch, Sample};
use dganet::imageio::{read_png, write_png, Raster};
use dganet::model::Model;
use dganet::predict::predict_files;
use dganet::tensor::Tensor;
use dganet::train::{load_checkpoint, save_checkpoint, train, Trainer};
use dganet::Error;

fn small(variant: Variant) -> RunConfig {
    RunConfig {
        variant,
        input_size: 64,
        embed_dim: 16,
        heads: 2,
        lr: 1e-3,
        batch: 2,
        epochs: 1,
        ..RunConfig::default()
    }
}

fn batch(samples: &[Sample]) -> Batch {
    let refs: Vec<&Sample> = samples.iter().collect();
    Batch::from_samples(&refs)
}

#[test]
fn same_seed_same_history() {
    let data = generate(4, 64, 1).unwrap();
    let cfg = RunConfig { epochs: 2, ..small(Variant::Full) };
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.steps.len(), 4);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = generate(4, 64, 2).unwrap();
    let cfg = RunConfig { lr: 0.0, ..small(Variant::Full) };
    let (_, before) = Model::new(&cfg).unwrap();
    let t = train(&cfg, &data).unwrap();
    for ((_, a), (_, b)) in before.iter().zip(t.params.iter()) {
        assert_eq!(a.value(), b.value(), "{}", a.name);
    }
}

#[test]
fn frozen_encoder_stays_put() {
    let data = generate(4, 64, 3).unwrap();
    for freeze in [true, false] {
        let cfg = RunConfig { freeze_sam: freeze, ..small(Variant::Full) };
        let (_, before) = Model::new(&cfg).unwrap();
        let t = train(&cfg, &data).unwrap();
        let mut sam_changed = false;
        let mut other_changed = false;
        for ((_, a), (_, b)) in before.iter().zip(t.params.iter()) {
            let changed = a.value() != b.value();
            if a.name.starts_with(&format!("{SAM_PREFIX}.")) {
                sam_changed |= changed;
            } else {
                other_changed |= changed;
            }
        }
        assert_eq!(sam_changed, !freeze);
        assert!(other_changed);
    }
}

#[test]
fn non_finite_loss_names_the_first_term() {
    let data = generate(2, 64, 4).unwrap();
    let mut t = Trainer::new(&small(Variant::Full)).unwrap();
    let bias = t.model.decoder.out.bias;
    t.params.set(bias, Tensor::full(t.params.get(bias).shape(), f64::NAN));
    match t.step(&batch(&data), 0) {
        Err(Error::NonFinite { step, term }) => assert_eq!((step, term.as_str()), (0, "bce(P_m)")),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn checkpoint_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(2, 64, 5).unwrap();
    let cfg = small(Variant::Full);
    let t = train(&cfg, &data).unwrap();
    let path = tmp.path().join("m.ckpt");
    save_checkpoint(&path, &cfg, &t.params).unwrap();
    let (model, params) = load_checkpoint(&path).unwrap();
    assert_eq!(model.cfg, cfg);
    let b = batch(&data);
    let run = |m: &Model, p: &dganet::nn::ParamStore| {
        let g = Graph::with_params(p);
        let out = m.forward(&g, &b.images, Some(&b.depths)).unwrap();
        (*g.value(out.main)).clone()
    };
    assert!(run(&t.model, &t.params).max_abs_diff(&run(&model, &params)) < 1e-7);

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn rgb_only_variant_needs_no_depth() {
    let data = generate(2, 64, 6).unwrap();
    let (model, ps) = Model::new(&small(Variant::NoDepth)).unwrap();
    let g = Graph::with_params(&ps);
    let out = model.forward(&g, &batch(&data).images, None).unwrap();
    assert_eq!(g.shape(out.main), vec![2, 1, 64, 64]);
    let (full, ps) = Model::new(&small(Variant::Full)).unwrap();
    let g = Graph::with_params(&ps);
    assert!(full.forward(&g, &batch(&data).images, None).is_err());
}

#[test]
fn small_overfit_halves_the_loss() {
    let data = generate(4, 64, 7).unwrap();
    let cfg = RunConfig {
        batch: 4,
        epochs: 200,
        max_steps: 200,
        ..small(Variant::Full)
    };
    let t = train(&cfg, &data).unwrap();
    let totals = t.history.totals();
    assert_eq!(totals.len(), 200);
    let last = totals[totals.len() - 1];
    assert!(last < 0.5 * totals[0], "loss {} -> {last}", totals[0]);
}

#[test]
fn ablation_rows_follow_input_order() {
    let train_set = generate(2, 64, 8).unwrap();
    let test_set = generate(2, 64, 9).unwrap();
    let variants = parse_variant_list("B,full").unwrap();
    let table = run_ablation(&variants, &small(Variant::Full), &train_set, &test_set).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["B", "full"]);
    for r in &table.rows {
        assert!([r.sm, r.wfm, r.em, r.mae, r.train_loss].iter().all(|v| v.is_finite()));
    }
    let tmp = tempfile::tempdir().unwrap();
    table.write(tmp.path()).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("ablation.txt")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with('B'));
    assert!(tmp.path().join("ablation.json").exists());

    assert!(matches!(parse_variant_list("full,w/o Everything"), Err(Error::Config(_))));
}

#[test]
fn config_file_round_trip() {
    let cfg = RunConfig {
        variant: Variant::RgbRatios([0.2, 0.4, 0.4, 0.8]),
        seed: 11,
        ..small(Variant::Full)
    };
    assert_eq!(RunConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    let commented = "variant = full\ninput_size = 128   # multiple of 32\nheads = 4\nrgb_ratios = [0.2,0.4,0.6,0.8]\n\
                     lr = 0.00005\nmax_steps = 0  # no cap\nunpool_fill = passthrough\nloss_mode = weighted\n\
                     fp_mode = aggregate\nfreeze_sam = false\naugment = false\n";
    assert_eq!(RunConfig::parse(commented).unwrap(), RunConfig::default());
    assert!(RunConfig::parse("no_such_key = 1").is_err());
    assert!(RunConfig::parse("epochs = 0").is_err());
    assert!(RunConfig::parse("variant = w/o Everything").is_err());
}

#[test]
fn predict_writes_input_sized_deterministic_pngs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(Variant::Full);
    let (_, params) = Model::new(&cfg).unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    save_checkpoint(&ckpt, &cfg, &params).unwrap();
    // deliberately not the model's input size
    let (h, w) = (48, 80);
    let img = Tensor::from_fn(&[3, h, w], |i| ((i * 7) % 255) as f64 / 255.0);
    let dep = Tensor::from_fn(&[1, h, w], |i| (i % w) as f64 / w as f64);
    write_png(&tmp.path().join("img.png"), &Raster::from_unit(&img, 8).unwrap()).unwrap();
    write_png(&tmp.path().join("dep.png"), &Raster::from_unit(&dep, 16).unwrap()).unwrap();
    let out = tmp.path().join("out").join("pred.png");
    let written = predict_files(&ckpt, &tmp.path().join("img.png"), Some(&tmp.path().join("dep.png")), &out, true).unwrap();
    assert_eq!(written.len(), 4);
    for p in &written {
        let r = read_png(p).unwrap();
        assert_eq!((r.height, r.width, r.channels, r.bit_depth), (h, w, 1, 8));
    }
    let first = std::fs::read(&out).unwrap();
    predict_files(&ckpt, &tmp.path().join("img.png"), Some(&tmp.path().join("dep.png")), &out, false).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn command_line_pipeline() {
    let exe = env!("CARGO_BIN_EXE_dganet");
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s);
    let run = |args: &[&str]| {
        let out = Command::new(exe).args(args).env("RUST_LOG", "warn").output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let data = p("data");
    run(&["gen-data", "--out", data.to_str().unwrap(), "--count", "3", "--size", "64", "--seed", "2"]);
    std::fs::write(p("cfg.txt"), "input_size = 64\nembed_dim = 8\nheads = 2\nepochs = 1\nbatch = 3\n").unwrap();
    run(&["train", "--config", p("cfg.txt").to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", p("run").to_str().unwrap()]);
    for f in ["model.ckpt", "history.json", "history.csv", "config.txt"] {
        assert!(p("run").join(f).exists(), "{f}");
    }
    let pred = p("pred").join("00000.png");
    run(&[
        "predict",
        "--ckpt",
        p("run/model.ckpt").to_str().unwrap(),
        "--image",
        data.join("images/00000.png").to_str().unwrap(),
        "--depth",
        data.join("depths/00000.png").to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    run(&[
        "eval",
        "--pred",
        p("pred").to_str().unwrap(),
        "--gt",
        data.join("masks").to_str().unwrap(),
        "--report",
        p("report.json").to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("report.json")).unwrap()).unwrap();
    assert_eq!(report["per_image"].as_array().unwrap().len(), 1);
    assert_eq!(report["errors"].as_array().unwrap().len(), 2);

    let out = Command::new(exe)
        .args(["ablate", "--variants", "full,bogus", "--config", p("cfg.txt").to_str().unwrap(), "--out", p("abl").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!p("abl").exists());
}

#[test]
fn written_dataset_trains_from_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(2, 64, 10).unwrap();
    write_dataset(&data, tmp.path()).unwrap();
    let back = dganet::data::read_dataset(tmp.path()).unwrap();
    assert!(train(&small(Variant::Baseline), &back).is_ok());
}
