mod common;

use dganet::autograd::Graph;
use dganet::heads::{boundary_weights, total_loss, weighted_bce, weighted_iou, LossMode, MaskDecoder, SideHeads};
use dganet::nn::ParamStore;
use dganet::tensor::Tensor;
use dganet::Error;
use proptest::prelude::*;

use common::*;

fn masks(seed: u64, b: usize, h: usize, w: usize) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_vec(&[b, 1, h, w], (0..b).flat_map(|_| random_mask(&mut r, h, w)).collect())
}

fn eval(logits: &Tensor, gt: &Tensor, mode: LossMode) -> (f64, f64) {
    let g = Graph::new();
    let l = g.constant(logits.clone());
    (
        g.value(weighted_bce(&g, l, gt, mode).unwrap()).item(),
        g.value(weighted_iou(&g, l, gt, mode).unwrap()).item(),
    )
}

#[test]
fn weights_match_window_sum() {
    let gt = masks(1, 2, 40, 36);
    let w = boundary_weights(&gt);
    for i in 0..2 {
        let plane = &gt.data()[i * 1440..(i + 1) * 1440];
        let want = weights_oracle(plane, 40, 36);
        for (a, b) in w.data()[i * 1440..(i + 1) * 1440].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn losses_match_direct_summation() {
    for seed in 0..10 {
        let gt = masks(seed, 3, 8, 8);
        let mut r = rng(100 + seed);
        let logits = uniform(&mut r, &[3, 1, 8, 8], -4.0, 4.0);
        for (mode, weighted) in [(LossMode::Weighted, true), (LossMode::Plain, false)] {
            let (bce, iou) = eval(&logits, &gt, mode);
            let (ob, oi) = loss_oracle(logits.data(), gt.data(), 3, 8, 8, weighted);
            assert!((bce - ob).abs() < 1e-9, "bce {bce} vs {ob}");
            assert!((iou - oi).abs() < 1e-9, "iou {iou} vs {oi}");
        }
    }
}

#[test]
fn total_is_the_sum_of_eight_named_terms() {
    let gt = masks(3, 2, 16, 16);
    let mut r = rng(4);
    let preds: Vec<Tensor> = (0..4).map(|_| uniform(&mut r, &[2, 1, 16, 16], -3.0, 3.0)).collect();
    let g = Graph::new();
    let vars: Vec<_> = preds.iter().map(|t| g.constant(t.clone())).collect();
    let lt = total_loss(&g, vars[0], &vars[1..], &gt, LossMode::Weighted).unwrap();
    let names: Vec<&str> = lt.terms.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["bce(P_m)", "iou(P_m)", "bce(P_2)", "iou(P_2)", "bce(P_3)", "iou(P_3)", "bce(P_4)", "iou(P_4)"]
    );
    let mut oracle = 0.0;
    for p in &preds {
        let (b, i) = loss_oracle(p.data(), gt.data(), 2, 16, 16, true);
        oracle += b + i;
    }
    let total = g.value(lt.total).item();
    let summed: f64 = lt.terms.iter().map(|(_, v)| g.value(*v).item()).sum();
    assert!((total - oracle).abs() < 1e-9);
    assert_eq!(total, summed);
}

#[test]
fn perfect_predictions_give_near_zero_total() {
    let gt = masks(5, 1, 32, 32);
    let logits = gt.map(|v| if v > 0.5 { 30.0 } else { -30.0 });
    let g = Graph::new();
    let l = g.constant(logits);
    let lt = total_loss(&g, l, &[l, l, l], &gt, LossMode::Weighted).unwrap();
    assert!(g.value(lt.total).item() < 1e-4);
}

#[test]
fn non_binary_ground_truth_is_an_input_error() {
    let g = Graph::new();
    let l = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
    let gt = Tensor::full(&[1, 1, 4, 4], 0.5);
    assert!(matches!(weighted_bce(&g, l, &gt, LossMode::Weighted), Err(Error::Input(_))));
}

#[test]
fn heads_shapes_and_independence() {
    let mut r = rng(6);
    let mut ps = ParamStore::new();
    let sides = SideHeads::new(&mut ps, 8, &mut r);
    let dec = MaskDecoder::new(&mut ps, 8, true, &mut r);
    assert_eq!(sides.heads.len(), 3);
    let ids: Vec<_> = sides.heads.iter().flat_map(|h| [h.weight, h.bias]).collect();
    for (i, a) in ids.iter().enumerate() {
        assert!(ids[i + 1..].iter().all(|b| b != a));
    }
    for h in &sides.heads {
        h.set_zero(&mut ps);
    }
    let g = Graph::with_params(&ps);
    let levels: Vec<_> = [16, 8, 4]
        .iter()
        .map(|&s| g.constant(uniform(&mut r, &[1, 8, s, s], -1.0, 1.0)))
        .collect();
    for p in sides.forward(&g, &levels, (128, 128)) {
        let v = g.value(p);
        assert_eq!(v.shape(), &[1, 1, 128, 128]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    let f1 = g.constant(uniform(&mut r, &[1, 8, 32, 32], -1.0, 1.0));
    let ed = g.constant(uniform(&mut r, &[1, 8, 4, 4], -1.0, 1.0));
    let zero = g.constant(Tensor::zeros(&[1, 8, 4, 4]));
    let a = g.value(dec.forward(&g, f1, Some(ed), (128, 128)).unwrap());
    let b = g.value(dec.forward(&g, f1, Some(zero), (128, 128)).unwrap());
    assert_eq!(a.shape(), &[1, 1, 128, 128]);
    assert!(a.max_abs_diff(&b) > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bounds_and_monotone_toward_ground_truth(seed in any::<u64>(), t in 0.05f64..0.95) {
        let gt = masks(seed, 1, 12, 12);
        let mut r = rng(seed ^ 1);
        let probs = uniform(&mut r, &[1, 1, 12, 12], 0.02, 0.98);
        let logit = |p: &Tensor| p.map(|v| (v / (1.0 - v)).ln());
        let closer = probs.zip_map(&gt, |p, g| p + t * (g - p));
        let (b0, i0) = eval(&logit(&probs), &gt, LossMode::Weighted);
        let (b1, i1) = eval(&logit(&closer), &gt, LossMode::Weighted);
        prop_assert!(b0 >= 0.0 && b1 >= 0.0);
        prop_assert!((0.0..=1.0).contains(&i0) && (0.0..=1.0).contains(&i1));
        prop_assert!(b1 <= b0 + 1e-12);
        prop_assert!(i1 <= i0 + 1e-12);
    }
}
