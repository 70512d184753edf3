//! Reference implementations written from the definitions, without the
//! shortcuts the library takes, plus a finite-difference gradient checker.
#![allow(dead_code)]

use dganet::autograd::Graph;
use dganet::nn::{ParamId, ParamStore};
use dganet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = f64::EPSILON;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Indices whose rank is below `k`, where rank counts strictly better nodes
/// (higher score, or equal score at a lower index).
pub fn topk_oracle(scores: &[f64], k: usize) -> Vec<usize> {
    (0..scores.len())
        .filter(|&i| {
            let better = (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count();
            better < k
        })
        .collect()
}

pub fn score_oracle(x: &[f64], theta: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
    dot / theta.iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// Random binary mask with a few rectangles, never empty or full.
pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    loop {
        let mut m = vec![0.0; h * w];
        for _ in 0..rng.random_range(1..4) {
            let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
            let (y1, x1) = (rng.random_range(y0..h) + 1, rng.random_range(x0..w) + 1);
            for y in y0..y1 {
                for x in x0..x1 {
                    m[y * w + x] = 1.0;
                }
            }
        }
        let s: f64 = m.iter().sum();
        if s > 0.0 && s < (h * w) as f64 {
            return m;
        }
    }
}

/// Mix of soft noise, near-binary and exact-copy predictions.
pub fn random_pred(rng: &mut ChaCha8Rng, gt: &[f64]) -> Vec<f64> {
    match rng.random_range(0..3) {
        0 => gt.iter().map(|_| rng.random_range(0.0..1.0)).collect(),
        1 => gt
            .iter()
            .map(|&g| (g * 0.7 + rng.random_range(0.0..0.3f64)).clamp(0.0, 1.0))
            .collect(),
        _ => gt
            .iter()
            .map(|&g| if rng.random_bool(0.15) { 1.0 - g } else { g })
            .collect(),
    }
}

pub fn mae_oracle(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - g[i]).abs();
    }
    s / p.len() as f64
}

/// Weighted F-measure, literal transcription: brute-force distance transform
/// (lowest row-major index on ties), zero-padded 7×7 Gaussian with σ = 5.
pub fn wfm_oracle(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let fg: Vec<usize> = (0..h * w).filter(|&i| g[i] == 1.0).collect();
    if fg.is_empty() {
        return 0.0;
    }
    let mut dist = vec![0.0; h * w];
    let mut near = vec![0; h * w];
    for i in 0..h * w {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let mut best = f64::INFINITY;
        for &j in &fg {
            let (yy, xx) = ((j / w) as f64, (j % w) as f64);
            let d = ((y - yy).powi(2) + (x - xx).powi(2)).sqrt();
            if d < best {
                best = d;
                near[i] = j;
            }
        }
        dist[i] = best;
    }
    let e: Vec<f64> = (0..h * w).map(|i| (p[i] - g[i]).abs()).collect();
    let et: Vec<f64> = (0..h * w).map(|i| if g[i] == 1.0 { e[i] } else { e[near[i]] }).collect();

    let mut k = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (a, row) in k.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let r2 = (a as f64 - 3.0).powi(2) + (b as f64 - 3.0).powi(2);
            *v = (-r2 / 50.0).exp();
            total += *v;
        }
    }
    let mut ea = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for a in -3..=3isize {
                for b in -3..=3isize {
                    let (yy, xx) = (y + a, x + b);
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        s += k[(a + 3) as usize][(b + 3) as usize] / total * et[(yy * w as isize + xx) as usize];
                    }
                }
            }
            ea[(y * w as isize + x) as usize] = s;
        }
    }
    let mut ew = vec![0.0; h * w];
    for i in 0..h * w {
        let fgi = g[i] == 1.0;
        let m = if fgi && ea[i] < e[i] { ea[i] } else { e[i] };
        let b = if fgi { 1.0 } else { 2.0 - (0.5f64.ln() / 5.0 * dist[i]).exp() };
        ew[i] = m * b;
    }
    let sum_fg: f64 = (0..h * w).filter(|&i| g[i] == 1.0).map(|i| ew[i]).sum();
    let sum_bg: f64 = (0..h * w).filter(|&i| g[i] != 1.0).map(|i| ew[i]).sum();
    let n_fg = fg.len() as f64;
    let tpw = n_fg - sum_fg;
    let r = 1.0 - sum_fg / n_fg;
    let pr = tpw / (EPS + tpw + sum_bg);
    2.0 * r * pr / (EPS + r + pr)
}

/// Adaptive E-measure; per-pixel enhanced alignment, summed and divided by N.
pub fn em_oracle(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let th = (2.0 * p.iter().sum::<f64>() / n).min(1.0);
    let fm: Vec<f64> = p.iter().map(|&v| if v >= th { 1.0 } else { 0.0 }).collect();
    let sg: f64 = g.iter().sum();
    let enhanced: Vec<f64> = if sg == 0.0 {
        fm.iter().map(|f| 1.0 - f).collect()
    } else if sg == n {
        fm.clone()
    } else {
        let mf = fm.iter().sum::<f64>() / n;
        let mg = sg / n;
        (0..p.len())
            .map(|i| {
                let (af, ag) = (fm[i] - mf, g[i] - mg);
                let align = 2.0 * ag * af / (ag * ag + af * af + EPS);
                (align + 1.0).powi(2) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn object(vals: &[f64]) -> f64 {
    let x = mean(vals);
    let sd = if vals.len() > 1 {
        (vals.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sd + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len() as f64;
    let (x, y) = (mean(p), mean(g));
    let sx = p.iter().map(|a| (a - x).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sy = g.iter().map(|b| (b - y).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure, α = 0.5, quadrants split at the rounded 1-based centroid.
pub fn sm_oracle(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let y = mean(g);
    if y == 0.0 {
        return 1.0 - mean(p);
    }
    if y == 1.0 {
        return mean(p);
    }
    let fg: Vec<f64> = (0..p.len()).filter(|&i| g[i] == 1.0).map(|i| p[i]).collect();
    let bg: Vec<f64> = (0..p.len()).filter(|&i| g[i] == 0.0).map(|i| 1.0 - p[i]).collect();
    let so = y * object(&fg) + (1.0 - y) * object(&bg);

    let total: f64 = g.iter().sum();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for r in 0..h {
        for c in 0..w {
            cx += g[r * w + c] * (c + 1) as f64;
            cy += g[r * w + c] * (r + 1) as f64;
        }
    }
    let (cx, cy) = ((cx / total).round() as usize, (cy / total).round() as usize);
    let quad = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                a.push(p[r * w + c]);
                b.push(g[r * w + c]);
            }
        }
        let wt = ((r1 - r0) * (c1 - c0)) as f64 / (h * w) as f64;
        (wt, ssim(&a, &b))
    };
    let parts = [quad(0, cy, 0, cx), quad(0, cy, cx, w), quad(cy, h, 0, cx), quad(cy, h, cx, w)];
    // The last weight is the complement of the other three.
    let w4 = 1.0 - parts[0].0 - parts[1].0 - parts[2].0;
    let sr = parts[0].0 * parts[0].1 + parts[1].0 * parts[1].1 + parts[2].0 * parts[2].1 + w4 * parts[3].1;
    (0.5 * so + 0.5 * sr).max(0.0)
}

/// Per-pixel boundary weights by direct window summation.
pub fn weights_oracle(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for a in -15..=15isize {
                for b in -15..=15isize {
                    let (yy, xx) = (y + a, x + b);
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        s += g[(yy * w as isize + xx) as usize];
                    }
                }
            }
            let i = (y * w as isize + x) as usize;
            out[i] = 1.0 + 5.0 * (s / 961.0 - g[i]).abs();
        }
    }
    out
}

/// (bce, iou) per image from logits, averaged over images.
pub fn loss_oracle(logits: &[f64], gt: &[f64], b: usize, h: usize, w: usize, weighted: bool) -> (f64, f64) {
    let (mut bce, mut iou) = (0.0, 0.0);
    for i in 0..b {
        let l = &logits[i * h * w..(i + 1) * h * w];
        let g = &gt[i * h * w..(i + 1) * h * w];
        let wt = if weighted { weights_oracle(g, h, w) } else { vec![1.0; h * w] };
        let (mut num, mut den, mut inter, mut union) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..h * w {
            let p = (1.0 / (1.0 + (-l[j]).exp())).clamp(1e-7, 1.0 - 1e-7);
            num += wt[j] * -(g[j] * p.ln() + (1.0 - g[j]) * (1.0 - p).ln());
            den += wt[j];
            inter += wt[j] * p * g[j];
            union += wt[j] * (p + g[j]);
        }
        bce += num / den;
        iou += 1.0 - (inter + 1.0) / (union - inter + 1.0);
    }
    (bce / b as f64, iou / b as f64)
}

/// Something to differentiate: a loss over parameters and free inputs.
pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that two tiny values
/// that agree in absolute terms do not count as a mismatch.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares analytic gradients with central differences at `h` over up to
/// `max_coords` randomly chosen coordinates of the listed parameters and inputs.
///
/// `loss` builds a fresh graph from the parameters and returns the scalar loss
/// value and, when `grad` is set, the analytic gradients of every listed
/// parameter and input.
#[allow(clippy::type_complexity)]
pub fn check_gradients(
    ps: &mut ParamStore,
    params: &[ParamId],
    inputs: &mut [Tensor],
    h: f64,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
    loss: &dyn Fn(&ParamStore, &[Tensor], bool) -> (f64, Vec<Tensor>, Vec<Tensor>),
) -> GradCheck {
    let (_, pgrads, igrads) = loss(ps, inputs, true);
    // (is_param, which, flat index)
    let mut coords: Vec<(bool, usize, usize)> = Vec::new();
    for (k, &id) in params.iter().enumerate() {
        coords.extend((0..ps.get(id).numel()).map(|j| (true, k, j)));
    }
    for (k, t) in inputs.iter().enumerate() {
        coords.extend((0..t.numel()).map(|j| (false, k, j)));
    }
    while coords.len() > max_coords {
        let i = rng.random_range(0..coords.len());
        coords.swap_remove(i);
    }
    let mut worst: f64 = 0.0;
    for &(is_param, k, j) in &coords {
        let bump = |ps: &mut ParamStore, inputs: &mut [Tensor], delta: f64| {
            if is_param {
                ps.get_mut(params[k]).data_mut()[j] += delta;
            } else {
                inputs[k].data_mut()[j] += delta;
            }
        };
        bump(ps, inputs, h);
        let up = loss(ps, inputs, false).0;
        bump(ps, inputs, -2.0 * h);
        let down = loss(ps, inputs, false).0;
        bump(ps, inputs, h);
        let numeric = (up - down) / (2.0 * h);
        let analytic = if is_param { pgrads[k].data()[j] } else { igrads[k].data()[j] };
        worst = worst.max(rel_err(analytic, numeric));
    }
    GradCheck {
        worst,
        checked: coords.len(),
    }
}

/// Analytic gradients of `loss` (already on `g`) for the given params and inputs.
pub fn collect_grads(
    g: &Graph,
    loss: dganet::autograd::Var,
    params: &[ParamId],
    inputs: &[dganet::autograd::Var],
    ps: &ParamStore,
) -> (Vec<Tensor>, Vec<Tensor>) {
    let grads = g.backward(loss);
    let p = params
        .iter()
        .map(|&id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(ps.get(id).shape())))
        .collect();
    let i = inputs
        .iter()
        .map(|&v| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(&g.shape(v))))
        .collect();
    (p, i)
}

/// Fixed random readout weights so a loss depends on every output element.
pub fn readout(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

pub fn all_param_ids(ps: &ParamStore) -> Vec<ParamId> {
    ps.ids().collect()
}
