//! Single-image inference from a checkpoint.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{read_gray, read_png, write_gray8};
use crate::tensor::{resize_bilinear, Tensor};
use crate::train::{load_checkpoint, predict_batch};

fn fit(t: &Tensor, c: usize, h: usize, w: usize, size: usize) -> Tensor {
    let t = t.reshape(&[1, c, h, w]);
    if h == size && w == size {
        t
    } else {
        resize_bilinear(&t, size, size)
    }
}

fn back(t: &Tensor, h: usize, w: usize) -> Tensor {
    let (th, tw) = (t.shape()[0], t.shape()[1]);
    if (th, tw) == (h, w) {
        return t.clone();
    }
    resize_bilinear(&t.reshape(&[1, 1, th, tw]), h, w).into_reshaped(&[h, w])
}

/// Writes the main probability map to `out` as 8-bit grayscale at the input
/// image's size. With `sides`, also writes `<stem>_side{2,3,4}.png` next to it.
/// Returns every path written.
pub fn predict_files(ckpt: &Path, image: &Path, depth: Option<&Path>, out: &Path, sides: bool) -> Result<Vec<PathBuf>> {
    let (model, params) = load_checkpoint(ckpt)?;
    let raster = read_png(image)?;
    if raster.channels != 3 {
        return Err(Error::Input(format!("{} is not an RGB image", image.display())));
    }
    let (h, w) = (raster.height, raster.width);
    let size = model.input_size();
    let img = fit(&raster.to_unit(), 3, h, w, size);
    let dep = match (model.uses_depth(), depth) {
        (true, Some(p)) => {
            let d = read_gray(p)?;
            if d.shape() != [h, w] {
                return Err(Error::Input(format!(
                    "depth is {:?} but image is {h}x{w}",
                    d.shape()
                )));
            }
            Some(fit(&d, 1, h, w, size))
        }
        (true, None) => return Err(Error::Input("this model needs a depth map".into())),
        (false, _) => None,
    };
    let pred = predict_batch(&model, &params, &img, dep.as_ref())?
        .pop()
        .expect("one image");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut written = vec![out.to_path_buf()];
    write_gray8(out, &back(&pred.main, h, w))?;
    if sides {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pred");
        for (i, s) in pred.sides.iter().enumerate() {
            let p = out.with_file_name(format!("{stem}_side{}.png", i + 2));
            write_gray8(&p, &back(s, h, w))?;
            written.push(p);
        }
    }
    Ok(written)
}
