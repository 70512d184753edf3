//! MAE, weighted F-measure, E-measure and S-measure for `[h, w]` prediction
//! maps in `[0, 1]` against binary ground truth, plus directory evaluation.
//!
//! The formulas follow the reference MATLAB toolkits. Deviations forced by
//! ambiguity are noted on each function.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{read_gray, read_mask};
use crate::tensor::Tensor;

/// MATLAB `eps`.
pub const EPS: f64 = f64::EPSILON;

fn check(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    if pred.ndim() != 2 || pred.shape() != gt.shape() {
        return Err(Error::Input(format!(
            "prediction {:?} and ground truth {:?} must be equal 2-d grids",
            pred.shape(),
            gt.shape()
        )));
    }
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input("ground truth must be binary".into()));
    }
    Ok((pred.shape()[0], pred.shape()[1]))
}

pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check(pred, gt)?;
    let n = pred.numel() as f64;
    Ok(pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g).abs()).sum::<f64>() / n)
}

/// Exact Euclidean distance to the nearest foreground pixel and that pixel's
/// row-major index. Ties go to the smallest index. Returns `None` when there
/// is no foreground.
pub fn distance_transform(fg: &[bool], h: usize, w: usize) -> Option<(Vec<f64>, Vec<usize>)> {
    if !fg.iter().any(|&v| v) {
        return None;
    }
    // Per column: nearest foreground row for every row, preferring the upper one.
    let mut col_row = vec![usize::MAX; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if fg[y * w + x] {
                last = Some(y);
            }
            if let Some(r) = last {
                col_row[y * w + x] = r;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if fg[y * w + x] {
                next = Some(y);
            }
            if let Some(r) = next {
                let cur = col_row[y * w + x];
                if cur == usize::MAX || r - y < y - cur {
                    col_row[y * w + x] = r;
                }
            }
        }
    }
    let mut dist = vec![0.0; h * w];
    let mut idx = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = (u64::MAX, usize::MAX);
            for xc in 0..w {
                let r = col_row[y * w + xc];
                if r == usize::MAX {
                    continue;
                }
                let dx = x.abs_diff(xc) as u64;
                let dy = y.abs_diff(r) as u64;
                let cand = (dx * dx + dy * dy, r * w + xc);
                if cand < best {
                    best = cand;
                }
            }
            dist[y * w + x] = (best.0 as f64).sqrt();
            idx[y * w + x] = best.1;
        }
    }
    Some((dist, idx))
}

/// `fspecial('gaussian', 7, 5)`.
pub fn gaussian_kernel() -> [[f64; 7]; 7] {
    let sigma: f64 = 5.0;
    let mut k = [[0.0; 7]; 7];
    let mut max: f64 = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            max = max.max(*v);
        }
    }
    let mut sum = 0.0;
    for v in k.iter_mut().flatten() {
        if *v < EPS * max {
            *v = 0.0;
        }
        sum += *v;
    }
    for v in k.iter_mut().flatten() {
        *v /= sum;
    }
    k
}

/// Weighted F-measure with `β² = 1`. Empty ground truth yields `0` and sets
/// the flag.
pub fn weighted_fmeasure_flagged(pred: &Tensor, gt: &Tensor) -> Result<(f64, bool)> {
    let (h, w) = check(pred, gt)?;
    let fg: Vec<bool> = gt.data().iter().map(|&v| v == 1.0).collect();
    let Some((dst, idxt)) = distance_transform(&fg, h, w) else {
        return Ok((0.0, true));
    };
    let e: Vec<f64> = pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g).abs()).collect();
    let et: Vec<f64> = (0..h * w).map(|i| if fg[i] { e[i] } else { e[idxt[i]] }).collect();
    let k = gaussian_kernel();
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (ky, row) in k.iter().enumerate() {
                let yy = y as isize + ky as isize - 3;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (kx, kv) in row.iter().enumerate() {
                    let xx = x as isize + kx as isize - 3;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    s += kv * et[yy as usize * w + xx as usize];
                }
            }
            ea[y * w + x] = s;
        }
    }
    let (mut tp_err, mut fp, mut n_fg) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        let min_e_ea = if fg[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        let b = if fg[i] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * dst[i]).exp() };
        let ew = min_e_ea * b;
        if fg[i] {
            tp_err += ew;
            n_fg += 1.0;
        } else {
            fp += ew;
        }
    }
    let tp = n_fg - tp_err;
    let r = 1.0 - tp_err / n_fg;
    let p = tp / (EPS + tp + fp);
    Ok((2.0 * r * p / (EPS + r + p), false))
}

pub fn weighted_fmeasure(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (v, empty) = weighted_fmeasure_flagged(pred, gt)?;
    if empty {
        log::warn!("weighted F-measure undefined for empty ground truth; reporting 0");
    }
    Ok(v)
}

/// How the E-measure binarizes the prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EMode {
    /// Threshold `min(2·mean(pred), 1)`.
    #[default]
    Adaptive,
    /// Mean over thresholds `0, 1/255, …, 1`.
    Mean,
    /// Max over the same thresholds.
    Max,
}

/// Enhanced alignment score of a binary map against binary ground truth.
/// The sum is divided by the pixel count so that a perfect match scores 1.
fn e_binary(fm: &[bool], gt: &[f64]) -> f64 {
    let n = gt.len() as f64;
    let (mut c11, mut c10, mut c01, mut c00) = (0.0, 0.0, 0.0, 0.0);
    for (&f, &g) in fm.iter().zip(gt) {
        match (f, g == 1.0) {
            (true, true) => c11 += 1.0,
            (true, false) => c10 += 1.0,
            (false, true) => c01 += 1.0,
            (false, false) => c00 += 1.0,
        }
    }
    let n_gt = c11 + c01;
    let n_fm = c11 + c10;
    if n_gt == 0.0 {
        return (n - n_fm) / n;
    }
    if n_gt == n {
        return n_fm / n;
    }
    let (mg, mf) = (n_gt / n, n_fm / n);
    let enhanced = |f: f64, g: f64| {
        let (a, b) = (g - mg, f - mf);
        let align = 2.0 * a * b / (a * a + b * b + EPS);
        (align + 1.0) * (align + 1.0) / 4.0
    };
    (c11 * enhanced(1.0, 1.0) + c10 * enhanced(1.0, 0.0) + c01 * enhanced(0.0, 1.0) + c00 * enhanced(0.0, 0.0)) / n
}

pub fn e_measure_with(pred: &Tensor, gt: &Tensor, mode: EMode) -> Result<f64> {
    check(pred, gt)?;
    let binarize = |th: f64| -> Vec<bool> { pred.data().iter().map(|&p| p >= th).collect() };
    Ok(match mode {
        EMode::Adaptive => {
            let th = (2.0 * pred.data().iter().sum::<f64>() / pred.numel() as f64).min(1.0);
            e_binary(&binarize(th), gt.data())
        }
        EMode::Mean | EMode::Max => {
            let scores = (0..256).map(|i| e_binary(&binarize(i as f64 / 255.0), gt.data()));
            if mode == EMode::Mean {
                scores.sum::<f64>() / 256.0
            } else {
                scores.fold(f64::MIN, f64::max)
            }
        }
    })
}

pub fn e_measure(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    e_measure_with(pred, gt, EMode::Adaptive)
}

/// Structure measure with `α = 0.5`.
pub fn s_measure(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (h, w) = check(pred, gt)?;
    let (p, g) = (pred.data(), gt.data());
    let y = g.iter().sum::<f64>() / g.len() as f64;
    let q = if y == 0.0 {
        1.0 - p.iter().sum::<f64>() / p.len() as f64
    } else if y == 1.0 {
        p.iter().sum::<f64>() / p.len() as f64
    } else {
        0.5 * s_object(p, g) + 0.5 * s_region(p, g, h, w)
    };
    Ok(q.max(0.0))
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let sd = if n > 1.0 {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + sd + EPS)
}

fn s_object(p: &[f64], g: &[f64]) -> f64 {
    let u = g.iter().sum::<f64>() / g.len() as f64;
    let fg = p.iter().zip(g).filter(|(_, &gv)| gv == 1.0).map(|(&pv, _)| pv);
    let bg = p.iter().zip(g).filter(|(_, &gv)| gv == 0.0).map(|(&pv, _)| 1.0 - pv);
    u * object_score(fg) + (1.0 - u) * object_score(bg)
}

/// 1-based centroid, rounded half away from zero.
fn centroid(g: &[f64], h: usize, w: usize) -> (usize, usize) {
    let total: f64 = g.iter().sum();
    if total == 0.0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            sx += g[y * w + x] * (x + 1) as f64;
            sy += g[y * w + x] * (y + 1) as f64;
        }
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

fn block(v: &[f64], w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    rows.flat_map(|y| cols.clone().map(move |x| v[y * w + x])).collect()
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    if p.is_empty() {
        return 0.0;
    }
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        sx += (a - x) * (a - x);
        sy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let denom = n - 1.0 + EPS;
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
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

fn s_region(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(g, h, w);
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let quads = [
        (0..cy, 0..cx, w1),
        (0..cy, cx..w, w2),
        (cy..h, 0..cx, w3),
        (cy..h, cx..w, w4),
    ];
    quads
        .into_iter()
        .map(|(rows, cols, wt)| {
            wt * ssim(&block(p, w, rows.clone(), cols.clone()), &block(g, w, rows, cols))
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub mae: f64,
    pub wfm: f64,
    pub em: f64,
    pub sm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mae: f64,
    pub wfm: f64,
    pub em: f64,
    pub sm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalError {
    pub id: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
    pub errors: Vec<EvalError>,
    /// Ids whose ground truth had no foreground (weighted F reported as 0).
    #[serde(default)]
    pub empty_gt: Vec<String>,
}

pub fn evaluate_pair(id: &str, pred: &Tensor, gt: &Tensor, mode: EMode) -> Result<(ImageMetrics, bool)> {
    let (wfm, empty) = weighted_fmeasure_flagged(pred, gt)?;
    Ok((
        ImageMetrics {
            id: id.to_string(),
            mae: mae(pred, gt)?,
            wfm,
            em: e_measure_with(pred, gt, mode)?,
            sm: s_measure(pred, gt)?,
        },
        empty,
    ))
}

impl MetricReport {
    pub fn from_results(results: Vec<(ImageMetrics, bool)>, errors: Vec<EvalError>) -> Self {
        let n = results.len() as f64;
        let mut agg = Aggregate::default();
        let mut empty_gt = Vec::new();
        for (m, empty) in &results {
            agg.mae += m.mae;
            agg.wfm += m.wfm;
            agg.em += m.em;
            agg.sm += m.sm;
            if *empty {
                empty_gt.push(m.id.clone());
            }
        }
        if n > 0.0 {
            agg.mae /= n;
            agg.wfm /= n;
            agg.em /= n;
            agg.sm /= n;
        }
        MetricReport {
            per_image: results.into_iter().map(|(m, _)| m).collect(),
            aggregate: agg,
            errors,
            empty_gt,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Scores every `*.png` in `pred_dir` against the same-named mask in
/// `gt_dir`, in filename order. Unmatched or unreadable files become error
/// entries and are left out of the aggregate.
pub fn evaluate_pair_dir(pred_dir: &Path, gt_dir: &Path, mode: EMode) -> Result<MetricReport> {
    let preds = png_stems(pred_dir)?;
    let gts = png_stems(gt_dir)?;
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for id in preds.union(&gts) {
        if !preds.contains(id) {
            errors.push(EvalError {
                id: id.clone(),
                message: "missing prediction".into(),
            });
            continue;
        }
        if !gts.contains(id) {
            errors.push(EvalError {
                id: id.clone(),
                message: "missing ground truth".into(),
            });
            continue;
        }
        let file = format!("{id}.png");
        let scored = read_gray(&pred_dir.join(&file))
            .and_then(|p| Ok((p, read_mask(&gt_dir.join(&file))?)))
            .and_then(|(p, g)| evaluate_pair(id, &p, &g, mode));
        match scored {
            Ok(r) => results.push(r),
            Err(e) => errors.push(EvalError {
                id: id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(MetricReport::from_results(results, errors))
}
