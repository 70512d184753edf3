//! Mask decoder, side heads, and the boundary-weighted BCE + IoU objective.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{Conv2d, ParamStore};
use crate::tensor::Tensor;

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;
/// Side of the mean-pool window used for boundary weights.
pub const WEIGHT_WINDOW: usize = 31;

#[derive(Clone, Debug)]
pub struct MaskDecoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub out: Conv2d,
    pub uses_depth: bool,
}

impl MaskDecoder {
    pub fn new(ps: &mut ParamStore, d: usize, uses_depth: bool, rng: &mut ChaCha8Rng) -> Self {
        let cin = if uses_depth { 2 * d } else { d };
        MaskDecoder {
            conv1: Conv2d::same3(ps, "decoder.conv1", cin, d, rng),
            conv2: Conv2d::same3(ps, "decoder.conv2", d, d, rng),
            out: Conv2d::pointwise(ps, "decoder.out", d, 1, rng),
            uses_depth,
        }
    }

    /// Logits `[b, 1, out_h, out_w]`.
    pub fn forward(&self, g: &Graph, f1: Var, e_d: Option<Var>, out_hw: (usize, usize)) -> Result<Var> {
        let s1 = g.shape(f1);
        let x = match (self.uses_depth, e_d) {
            (true, Some(e)) => {
                let se = g.shape(e);
                if se[0] != s1[0] || se[1] != s1[1] {
                    return Err(contract!("E_d {se:?} does not match F1 {s1:?}"));
                }
                g.concat(&[f1, g.resize(e, s1[2], s1[3])], 1)
            }
            (false, _) => f1,
            (true, None) => return Err(contract!("decoder expects a depth embedding")),
        };
        let h = g.silu(self.conv1.forward(g, x));
        let h = g.silu(self.conv2.forward(g, h));
        let logits = self.out.forward(g, h);
        Ok(g.resize(logits, out_hw.0, out_hw.1))
    }
}

/// Independent 1×1 heads on `F2`, `F3`, `F4`.
#[derive(Clone, Debug)]
pub struct SideHeads {
    pub heads: Vec<Conv2d>,
}

impl SideHeads {
    pub fn new(ps: &mut ParamStore, d: usize, rng: &mut ChaCha8Rng) -> Self {
        SideHeads {
            heads: (2..=4)
                .map(|i| Conv2d::pointwise(ps, &format!("side{i}"), d, 1, rng))
                .collect(),
        }
    }

    /// Logits for levels 2..4, each resized to `out_hw`.
    pub fn forward(&self, g: &Graph, levels: &[Var], out_hw: (usize, usize)) -> Vec<Var> {
        self.heads
            .iter()
            .zip(levels)
            .map(|(h, &f)| g.resize(h.forward(g, f), out_hw.0, out_hw.1))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    #[default]
    Weighted,
    Plain,
}

pub fn check_binary(gt: &Tensor) -> Result<()> {
    if gt.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::Input("ground truth must contain only 0 and 1".into()))
    }
}

/// `1 + 5·|meanpool(G) − G|` over `[b, 1, h, w]` masks. The pool is a
/// stride-1 box of side 31 with zero padding, divided by the full window area.
pub fn boundary_weights(gt: &Tensor) -> Tensor {
    let (b, c, h, w) = gt.dims4();
    let r = WEIGHT_WINDOW / 2;
    let area = (WEIGHT_WINDOW * WEIGHT_WINDOW) as f64;
    let mut out = Tensor::zeros(gt.shape());
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for plane in 0..b * c {
        let src = &gt.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += src[y * w + x];
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                    + sat[y0 * (w + 1) + x0];
                dst[y * w + x] = 1.0 + 5.0 * (s / area - src[y * w + x]).abs();
            }
        }
    }
    out
}

fn loss_weights(gt: &Tensor, mode: LossMode) -> Tensor {
    match mode {
        LossMode::Weighted => boundary_weights(gt),
        LossMode::Plain => Tensor::ones(gt.shape()),
    }
}

fn clamped_probs(g: &Graph, logits: Var) -> Var {
    g.clamp(g.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
}

fn check_pair(g: &Graph, logits: Var, gt: &Tensor) -> Result<()> {
    let s = g.shape(logits);
    if s != gt.shape() || s.len() != 4 {
        return Err(contract!("logits {s:?} vs ground truth {:?}", gt.shape()));
    }
    check_binary(gt)
}

/// Weighted BCE per image, averaged over the batch.
pub fn weighted_bce(g: &Graph, logits: Var, gt: &Tensor, mode: LossMode) -> Result<Var> {
    check_pair(g, logits, gt)?;
    let w = loss_weights(gt, mode);
    let wsum = image_sums(&w);
    let p = clamped_probs(g, logits);
    let gv = g.constant(gt.clone());
    let pos = g.mul(gv, g.ln(p));
    let neg = g.mul(g.rsub_scalar(1.0, gv), g.ln(g.rsub_scalar(1.0, p)));
    let bce = g.neg(g.add(pos, neg));
    let per = g.div(g.sum_axes(g.mul(g.constant(w), bce), &[1, 2, 3]), g.constant(wsum));
    Ok(g.mean(per))
}

/// Weighted soft IoU loss per image, averaged over the batch.
pub fn weighted_iou(g: &Graph, logits: Var, gt: &Tensor, mode: LossMode) -> Result<Var> {
    check_pair(g, logits, gt)?;
    let w = g.constant(loss_weights(gt, mode));
    let p = clamped_probs(g, logits);
    let gv = g.constant(gt.clone());
    let inter = g.sum_axes(g.mul(w, g.mul(p, gv)), &[1, 2, 3]);
    let union = g.sum_axes(g.mul(w, g.add(p, gv)), &[1, 2, 3]);
    let ratio = g.div(g.add_scalar(inter, 1.0), g.add_scalar(g.sub(union, inter), 1.0));
    Ok(g.mean(g.rsub_scalar(1.0, ratio)))
}

fn image_sums(t: &Tensor) -> Tensor {
    let b = t.shape()[0];
    let per = t.numel() / b;
    Tensor::from_vec(
        &[b, 1, 1, 1],
        t.data().chunks(per).map(|c| c.iter().sum()).collect(),
    )
}

/// Named loss terms; `total` is their plain sum.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub terms: Vec<(String, Var)>,
}

/// `bce + iou` on the main prediction and on each side prediction.
pub fn total_loss(g: &Graph, main: Var, sides: &[Var], gt: &Tensor, mode: LossMode) -> Result<LossTerms> {
    let mut terms = Vec::with_capacity(2 + 2 * sides.len());
    let names = std::iter::once("P_m".to_string()).chain((2..).map(|i| format!("P_{i}")));
    for (logits, name) in std::iter::once(main).chain(sides.iter().copied()).zip(names) {
        terms.push((format!("bce({name})"), weighted_bce(g, logits, gt, mode)?));
        terms.push((format!("iou({name})"), weighted_iou(g, logits, gt, mode)?));
    }
    let total = terms
        .iter()
        .map(|(_, v)| *v)
        .reduce(|a, b| g.add(a, b))
        .expect("at least one term");
    Ok(LossTerms { total, terms })
}
