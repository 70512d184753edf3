//! PNG reading and writing for 8/16-bit grayscale and RGB rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded pixels, interleaved, one `u16` per sample regardless of bit depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub samples: Vec<u16>,
}

impl Raster {
    pub fn max_value(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }

    /// Planar `[c, h, w]` tensor scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Tensor {
        let (c, h, w) = (self.channels, self.height, self.width);
        let m = self.max_value();
        Tensor::from_fn(&[c, h, w], |i| {
            let (ch, px) = (i / (h * w), i % (h * w));
            self.samples[px * c + ch] as f64 / m
        })
    }

    /// Quantizes a `[c, h, w]` tensor in `[0, 1]` (values are clamped).
    pub fn from_unit(t: &Tensor, bit_depth: u8) -> Result<Self> {
        let (c, h, w) = t.dims3();
        if c != 1 && c != 3 {
            return Err(Error::Input(format!("cannot store {c} channels as PNG")));
        }
        let m = ((1u32 << bit_depth) - 1) as f64;
        let mut samples = vec![0u16; c * h * w];
        for ch in 0..c {
            for px in 0..h * w {
                let v = t.data()[ch * h * w + px].clamp(0.0, 1.0);
                samples[px * c + ch] = (v * m).round() as u16;
            }
        }
        Ok(Raster {
            width: w,
            height: h,
            channels: c,
            bit_depth,
            samples,
        })
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads a PNG; palette and sub-byte images are expanded and alpha is dropped.
pub fn read_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (src_ch, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(png_err(path, "palette not expanded")),
    };
    let bit_depth = match info.bit_depth {
        BitDepth::Eight => 8,
        BitDepth::Sixteen => 16,
        other => return Err(png_err(path, format!("unsupported bit depth {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut samples = Vec::with_capacity(w * h * keep);
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..keep {
                let s = x * src_ch + c;
                samples.push(if bit_depth == 8 {
                    row[s] as u16
                } else {
                    u16::from_be_bytes([row[2 * s], row[2 * s + 1]])
                });
            }
        }
    }
    Ok(Raster {
        width: w,
        height: h,
        channels: keep,
        bit_depth,
        samples,
    })
}

pub fn write_png(path: &Path, r: &Raster) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), r.width as u32, r.height as u32);
    enc.set_color(if r.channels == 3 { ColorType::Rgb } else { ColorType::Grayscale });
    enc.set_depth(if r.bit_depth == 16 { BitDepth::Sixteen } else { BitDepth::Eight });
    let bytes: Vec<u8> = if r.bit_depth == 16 {
        r.samples.iter().flat_map(|v| v.to_be_bytes()).collect()
    } else {
        r.samples.iter().map(|&v| v as u8).collect()
    };
    let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
    w.write_image_data(&bytes).map_err(|e| png_err(path, e))?;
    w.finish().map_err(|e| png_err(path, e))
}

/// Writes a `[h, w]` or `[1, h, w]` map in `[0, 1]` as 8-bit grayscale.
pub fn write_gray8(path: &Path, t: &Tensor) -> Result<()> {
    let t = as_planar(t);
    write_png(path, &Raster::from_unit(&t, 8)?)
}

fn as_planar(t: &Tensor) -> Tensor {
    match t.ndim() {
        2 => t.reshape(&[1, t.shape()[0], t.shape()[1]]),
        _ => t.clone(),
    }
}

/// Reads a grayscale PNG as a `[h, w]` map in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Tensor> {
    let r = read_png(path)?;
    if r.channels != 1 {
        return Err(png_err(path, "expected a single-channel image"));
    }
    let t = r.to_unit();
    Ok(t.into_reshaped(&[r.height, r.width]))
}

/// Reads a mask, binarized at 128 on the 8-bit scale.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let r = read_png(path)?;
    if r.channels != 1 {
        return Err(png_err(path, "expected a single-channel mask"));
    }
    let thr = if r.bit_depth == 16 { 128u16 * 257 } else { 128 };
    Ok(Tensor::from_vec(
        &[r.height, r.width],
        r.samples.iter().map(|&v| if v >= thr { 1.0 } else { 0.0 }).collect(),
    ))
}
