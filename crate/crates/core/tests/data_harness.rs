use dganet::data::{augment, augment_with, generate, read_dataset, synth_sample, write_dataset, AugmentParams};
use dganet::Error;
use proptest::prelude::*;

#[test]
fn same_seed_same_sample() {
    let a = synth_sample(42, 64).unwrap();
    let b = synth_sample(42, 64).unwrap();
    assert_eq!(a.image.data(), b.image.data());
    assert_eq!(a.depth.data(), b.depth.data());
    assert_eq!(a.mask.data(), b.mask.data());
    assert!(matches!(synth_sample(1, 100), Err(Error::Config(_))));
}

#[test]
fn camouflage_property_over_a_hundred_seeds() {
    let samples: Vec<_> = (0..100).map(|s| synth_sample(s, 128).unwrap()).collect();
    for s in &samples {
        let f = s.foreground_fraction();
        assert!((0.01..=0.6).contains(&f), "seed {} fraction {f}", s.seed);
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
    let n = samples.len() as f64;
    let rgb = samples.iter().map(|s| s.rgb_contrast()).sum::<f64>() / n;
    let depth = samples.iter().map(|s| s.depth_contrast()).sum::<f64>() / n;
    assert!(rgb < 0.1, "rgb contrast {rgb}");
    assert!(depth > 0.2, "depth contrast {depth}");
}

#[test]
fn identity_augmentation_is_a_no_op() {
    let s = synth_sample(3, 64).unwrap();
    let a = augment_with(&s, &AugmentParams::identity());
    assert_eq!(a.image.data(), s.image.data());
    assert_eq!(a.depth.data(), s.depth.data());
    assert_eq!(a.mask.data(), s.mask.data());
}

#[test]
fn augmentation_keeps_masks_binary_and_mostly_intact() {
    let s = synth_sample(5, 64).unwrap();
    let before = s.mask.sum();
    for seed in 0..100 {
        let a = augment(&s, seed);
        assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a.size(), s.size());
        let change = (a.mask.sum() - before).abs() / before;
        assert!(change < 0.5, "seed {seed}: foreground changed by {change}");
        assert_eq!(augment(&s, seed).image.data(), a.image.data());
    }
}

#[test]
fn dataset_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = generate(3, 64, 9).unwrap();
    write_dataset(&samples, tmp.path()).unwrap();
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    let back = read_dataset(tmp.path()).unwrap();
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!((&a.id, a.seed), (&b.id, b.seed));
        assert_eq!(a.mask.data(), b.mask.data());
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
        assert!(a.depth.max_abs_diff(&b.depth) <= 0.5 / 65535.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quarter_turns_compose_to_identity(seed in 0u64..1000) {
        let s = synth_sample(seed, 32).unwrap();
        let turn = AugmentParams { quarter_turns: 1, ..AugmentParams::identity() };
        let mut a = s.clone();
        for _ in 0..4 {
            a = augment_with(&a, &turn);
        }
        prop_assert_eq!(a.mask.data(), s.mask.data());
        prop_assert_eq!(a.depth.data(), s.depth.data());
        prop_assert_eq!(a.image.data(), s.image.data());
    }
}
