//! Synthetic camouflage scenes, augmentation, and on-disk datasets.
//!
//! The object shares the background's texture family and differs from it
//! mostly in depth, so colour alone is a weak segmentation cue.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio::{read_gray, read_mask, read_png, write_gray8, write_png, Raster};
use crate::tensor::{resize_bilinear, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub seed: u64,
    /// `[3, h, w]` in `[0, 1]`
    pub image: Tensor,
    /// `[h, w]` in `[0, 1]`
    pub depth: Tensor,
    /// `[h, w]` with values in `{0, 1}`
    pub mask: Tensor,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.mask.shape()[0], self.mask.shape()[1])
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.numel() as f64
    }

    /// Mean over channels of |mean colour inside − mean colour outside|.
    pub fn rgb_contrast(&self) -> f64 {
        let hw = self.mask.numel();
        (0..3)
            .map(|c| {
                let ch = &self.image.data()[c * hw..(c + 1) * hw];
                region_gap(ch, self.mask.data())
            })
            .sum::<f64>()
            / 3.0
    }

    /// |mean depth inside − mean depth outside|.
    pub fn depth_contrast(&self) -> f64 {
        region_gap(self.depth.data(), self.mask.data())
    }
}

fn region_gap(v: &[f64], mask: &[f64]) -> f64 {
    let (mut a, mut na, mut b, mut nb) = (0.0, 0.0f64, 0.0, 0.0f64);
    for (&x, &m) in v.iter().zip(mask) {
        if m > 0.5 {
            a += x;
            na += 1.0;
        } else {
            b += x;
            nb += 1.0;
        }
    }
    (a / na.max(1.0) - b / nb.max(1.0)).abs()
}

pub fn check_size(size: usize) -> Result<()> {
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::Config(format!("sample size {size} is not a positive multiple of 32")));
    }
    Ok(())
}

/// Bilinearly upsampled uniform noise in `[-1, 1]` from a `cells × cells` grid.
fn value_noise(rng: &mut ChaCha8Rng, cells: usize, size: usize) -> Vec<f64> {
    let grid = Tensor::from_fn(&[1, 1, cells, cells], |_| rng.random_range(-1.0..1.0));
    resize_bilinear(&grid, size, size).into_data()
}

/// Parameters of one texture family: gratings with colour directions plus value noise.
struct TextureFamily {
    base: [f64; 3],
    gratings: Vec<([f64; 3], f64, f64, f64)>,
    noise_amp: f64,
    noise_cells: usize,
}

impl TextureFamily {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let base = [0.0; 3].map(|_: f64| rng.random_range(0.3..0.6));
        let gratings = (0..4)
            .map(|_| {
                let amp = rng.random_range(0.03..0.07);
                let tint = [0.0; 3].map(|_: f64| amp * rng.random_range(0.6..1.0));
                let freq = rng.random_range(3.0..12.0);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                (tint, freq, angle.cos(), angle.sin())
            })
            .collect();
        TextureFamily {
            base,
            gratings,
            noise_amp: rng.random_range(0.04..0.08),
            noise_cells: 16,
        }
    }

    /// One realization: fresh phases and noise, shared statistics.
    fn render(&self, rng: &mut ChaCha8Rng, size: usize, shift: f64) -> Tensor {
        let phases: Vec<f64> = self
            .gratings
            .iter()
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let noise: Vec<Vec<f64>> = (0..3).map(|_| value_noise(rng, self.noise_cells, size)).collect();
        let n = size as f64;
        Tensor::from_fn(&[3, size, size], |i| {
            let c = i / (size * size);
            let px = i % (size * size);
            let (y, x) = ((px / size) as f64 / n, (px % size) as f64 / n);
            let mut v = self.base[c] + shift + self.noise_amp * noise[c][px];
            for ((tint, f, cx, cy), ph) in self.gratings.iter().zip(&phases) {
                v += tint[c] * (std::f64::consts::TAU * f * (x * cx + y * cy) + ph).sin();
            }
            v.clamp(0.0, 1.0)
        })
    }
}

fn blob_mask(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let n_blobs = rng.random_range(1..=3usize);
    let n = size as f64;
    let mut mask = vec![0.0; size * size];
    for _ in 0..n_blobs {
        let cx = rng.random_range(0.25..0.75) * n;
        let cy = rng.random_range(0.25..0.75) * n;
        let r0 = rng.random_range(0.1..0.22) * n / (n_blobs as f64).sqrt();
        let noise = value_noise(rng, 6, size);
        for y in 0..size {
            for x in 0..size {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                if 1.0 - d / r0 + 0.35 * noise[y * size + x] > 0.0 {
                    mask[y * size + x] = 1.0;
                }
            }
        }
    }
    mask
}

/// Deterministic scene for `seed`: 1 to 3 noisy blobs whose texture matches
/// the background and whose depth sits at least 0.3 in front of it.
pub fn synth_sample(seed: u64, size: usize) -> Result<Sample> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = loop {
        let m = blob_mask(&mut rng, size);
        let frac = m.iter().sum::<f64>() / m.len() as f64;
        if (0.01..=0.6).contains(&frac) {
            break m;
        }
    };
    let family = TextureFamily::draw(&mut rng);
    let bg = family.render(&mut rng, size, 0.0);
    let shift = rng.random_range(0.02..0.06) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let fg = family.render(&mut rng, size, shift);
    let hw = size * size;
    let image = Tensor::from_fn(&[3, size, size], |i| {
        if mask[i % hw] > 0.5 { fg.data()[i] } else { bg.data()[i] }
    });

    let base = rng.random_range(0.15..0.3);
    let (gx, gy) = (rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12));
    let offset = rng.random_range(0.35..0.5);
    let jitter = Normal::new(0.0, 0.01).expect("valid sigma");
    let n = size as f64;
    let depth = Tensor::from_fn(&[size, size], |i| {
        let (y, x) = ((i / size) as f64 / n - 0.5, (i % size) as f64 / n - 0.5);
        let plane = base + gx * x + gy * y + jitter.sample(&mut rng);
        let v = if mask[i] > 0.5 { plane + offset } else { plane };
        v.clamp(0.0, 1.0)
    });
    Ok(Sample {
        id: format!("s{seed:08}"),
        seed,
        image,
        depth,
        mask: Tensor::from_vec(&[size, size], mask),
    })
}

/// `count` samples with per-sample seeds derived from `seed`.
pub fn generate(count: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let s = rng.next_u64() >> 1;
            let mut sample = synth_sample(s, size)?;
            sample.id = format!("{i:05}");
            Ok(sample)
        })
        .collect()
}

/// One draw of augmentation parameters. Each transform is skipped with
/// probability one half.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub quarter_turns: usize,
    /// Radians.
    pub angle: f64,
    /// Crop area fraction and the crop's top-left corner as a fraction of the free margin.
    pub crop: Option<(f64, f64, f64)>,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            quarter_turns: 0,
            angle: 0.0,
            crop: None,
            brightness: 0.0,
            contrast: 1.0,
        }
    }

    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::identity();
        if rng.random_bool(0.5) {
            p.quarter_turns = rng.random_range(1..4);
        }
        if rng.random_bool(0.5) {
            p.angle = rng.random_range(-15.0f64..15.0).to_radians();
        }
        if rng.random_bool(0.5) {
            p.crop = Some((rng.random_range(0.8..1.0), rng.random(), rng.random()));
        }
        if rng.random_bool(0.5) {
            p.brightness = rng.random_range(-0.1..0.1);
            p.contrast = rng.random_range(0.9..1.1);
        }
        p
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

fn reflect(x: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let p = 2.0 * (n - 1) as f64;
    let r = x.rem_euclid(p);
    if r > (n - 1) as f64 { p - r } else { r }
}

fn sample_bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y, x) = (reflect(y, h), reflect(x, w));
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| plane[r * w + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Exact clockwise quarter turns of a square `[c, n, n]` stack.
fn rot90(t: &Tensor, turns: usize) -> Tensor {
    let (c, n) = (t.shape()[0], t.shape()[1]);
    let mut cur = t.clone();
    for _ in 0..turns % 4 {
        cur = Tensor::from_fn(&[c, n, n], |i| {
            let (ch, y, x) = (i / (n * n), (i / n) % n, i % n);
            cur.data()[ch * n * n + (n - 1 - x) * n + y]
        });
    }
    cur
}

/// Small rotation about the centre followed by a crop resized back to full
/// size; reflection padding outside the source.
fn warp(t: &Tensor, angle: f64, crop: Option<(f64, f64, f64)>) -> Tensor {
    let (c, h, w) = t.dims3();
    let (scale, oy, ox) = match crop {
        Some((area, fy, fx)) => {
            let side = area.sqrt();
            (side, fy * (1.0 - side) * h as f64, fx * (1.0 - side) * w as f64)
        }
        None => (1.0, 0.0, 0.0),
    };
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sn, cs) = angle.sin_cos();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, v, u) = (i / (h * w), (i / w) % h, i % w);
        let y = oy + (v as f64 + 0.5) * scale - 0.5;
        let x = ox + (u as f64 + 0.5) * scale - 0.5;
        let (dy, dx) = (y - cy, x - cx);
        let sy = cy + cs * dy - sn * dx;
        let sx = cx + sn * dy + cs * dx;
        sample_bilinear(&t.data()[ch * h * w..(ch + 1) * h * w], h, w, sy, sx)
    })
}

pub fn augment_with(s: &Sample, p: &AugmentParams) -> Sample {
    if p.is_identity() {
        return s.clone();
    }
    let (h, w) = s.size();
    let depth = s.depth.reshape(&[1, h, w]);
    let mask = s.mask.reshape(&[1, h, w]);
    let geo = |t: &Tensor| {
        let mut r = if h == w { rot90(t, p.quarter_turns) } else { t.clone() };
        if p.angle != 0.0 || p.crop.is_some() {
            r = warp(&r, p.angle, p.crop);
        }
        r
    };
    let mut image = geo(&s.image);
    if p.brightness != 0.0 || p.contrast != 1.0 {
        let mean = image.sum() / image.numel() as f64;
        image = image.map(|v| ((v - mean) * p.contrast + mean + p.brightness).clamp(0.0, 1.0));
    }
    Sample {
        id: s.id.clone(),
        seed: s.seed,
        image,
        depth: geo(&depth).into_reshaped(&[h, w]),
        mask: geo(&mask)
            .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
            .into_reshaped(&[h, w]),
    }
}

pub fn augment(s: &Sample, seed: u64) -> Sample {
    augment_with(s, &AugmentParams::draw(seed))
}

/// A stacked minibatch: images `[b, 3, h, w]`, depths and masks `[b, 1, h, w]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub depths: Tensor,
    pub masks: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Self {
        let (h, w) = samples[0].size();
        let depths: Vec<Tensor> = samples.iter().map(|s| s.depth.reshape(&[1, h, w])).collect();
        let masks: Vec<Tensor> = samples.iter().map(|s| s.mask.reshape(&[1, h, w])).collect();
        let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
        Batch {
            images: Tensor::stack(&images),
            depths: Tensor::stack(&depths),
            masks: Tensor::stack(&masks),
        }
    }
}

const MANIFEST: &str = "manifest.txt";

/// Writes `dir/{images,depths,masks}/ID.png` and a manifest of `id seed` lines.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    for sub in ["images", "depths", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::new();
    for s in samples {
        let (h, w) = s.size();
        let file = format!("{}.png", s.id);
        write_png(&dir.join("images").join(&file), &Raster::from_unit(&s.image, 8)?)?;
        write_png(
            &dir.join("depths").join(&file),
            &Raster::from_unit(&s.depth.reshape(&[1, h, w]), 16)?,
        )?;
        write_gray8(&dir.join("masks").join(&file), &s.mask)?;
        writeln!(manifest, "{} {}", s.id, s.seed).expect("string write");
    }
    let p = dir.join(MANIFEST);
    std::fs::write(&p, manifest).map_err(|e| Error::io(&p, e))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(seed)) = (parts.next(), parts.next()) else {
            return Err(Error::Input(format!("{}:{}: expected `id seed`", p.display(), lineno + 1)));
        };
        let seed = seed
            .parse()
            .map_err(|_| Error::Input(format!("{}:{}: bad seed {seed}", p.display(), lineno + 1)))?;
        let file = format!("{id}.png");
        let image = read_png(&dir.join("images").join(&file))?;
        if image.channels != 3 {
            return Err(Error::Input(format!("image {id} is not RGB")));
        }
        let sample = Sample {
            id: id.to_string(),
            seed,
            image: image.to_unit(),
            depth: read_gray(&dir.join("depths").join(&file))?,
            mask: read_mask(&dir.join("masks").join(&file))?,
        };
        if sample.depth.shape() != sample.mask.shape()
            || sample.image.shape()[1..] != *sample.mask.shape()
        {
            return Err(Error::Input(format!("sample {id} has mismatched sizes")));
        }
        out.push(sample);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{} lists no samples", p.display())));
    }
    Ok(out)
}
