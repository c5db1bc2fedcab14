//! Crop-and-resize preprocessing around the previous target estimate, and
//! the inverse paste-back into full-image coordinates.

use llb_core::{kernels, Tensor};

use crate::config::{CropScaleMode, PipelineConfig};
use crate::error::{Error, Result};

/// Inclusive-coordinate bounding box of mask values >= `thr`.
pub fn mask_bbox(values: &Tensor, thr: f64) -> Option<(usize, usize, usize, usize)> {
    let (h, w) = (values.shape()[0], values.shape()[1]);
    let mut x0 = w;
    let mut y0 = h;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if values.at2(y, x) >= thr {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    any.then_some((x0, y0, x1, y1))
}

/// Source box (exclusive end), the resize target, and whether the crop fell
/// back to the full image. The mapping is invertible via [`paste_back`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropTransform {
    pub src: (usize, usize, usize, usize), // x0, y0, x1, y1 (exclusive)
    pub target: (usize, usize),            // width, height
    pub fallback: bool,
}

/// Grow the previous-estimate box about its center (area or side scaling per
/// config), clamp per-axis to the image.
fn scaled_box(
    prev: (usize, usize, usize, usize),
    cfg: &PipelineConfig,
    img_w: usize,
    img_h: usize,
) -> (usize, usize, usize, usize) {
    let (bx0, by0, bx1, by1) = prev;
    let side_mul = match cfg.crop_scale_mode {
        CropScaleMode::Area => cfg.crop_scale.sqrt(),
        CropScaleMode::Side => cfg.crop_scale,
    };
    let cx = (bx0 + bx1 + 1) as f64 / 2.0;
    let cy = (by0 + by1 + 1) as f64 / 2.0;
    let hw = (bx1 - bx0 + 1) as f64 * side_mul / 2.0;
    let hh = (by1 - by0 + 1) as f64 * side_mul / 2.0;
    let x0 = (cx - hw).round().max(0.0) as usize;
    let y0 = (cy - hh).round().max(0.0) as usize;
    let x1 = ((cx + hw).round() as usize).min(img_w).max(x0 + 1);
    let y1 = ((cy + hh).round() as usize).min(img_h).max(y0 + 1);
    (x0.min(img_w - 1), y0.min(img_h - 1), x1, y1)
}

fn slice_region(t: &Tensor, src: (usize, usize, usize, usize)) -> Tensor {
    let (x0, y0, x1, y1) = src;
    let (w, c) = (t.shape()[1], t.shape()[2]);
    let d = t.data();
    let (bw, bh) = (x1 - x0, y1 - y0);
    let mut out = Vec::with_capacity(bh * bw * c);
    for y in y0..y1 {
        out.extend_from_slice(&d[(y * w + x0) * c..(y * w + x1) * c]);
    }
    Tensor::from_vec(&[bh, bw, c], out)
}

/// Crop a `[H, W, C]` tensor with the transform's geometry and resize to the
/// work resolution. Masks go through as `[H, W, 1]`.
pub fn apply_transform(t: &Tensor, ct: &CropTransform) -> Tensor {
    let flat2d = t.shape().len() == 2;
    let shaped;
    let t3 = if flat2d {
        shaped = t.reshape(&[t.shape()[0], t.shape()[1], 1]);
        &shaped
    } else {
        t
    };
    let region = slice_region(t3, ct.src);
    let (tw, th) = ct.target;
    let resized = kernels::resize_bilinear(&region, th, tw);
    if flat2d {
        resized.reshape(&[th, tw])
    } else {
        resized
    }
}

/// Build the crop for one frame. `prev_box` is the inclusive bounding box of
/// the previous target estimate; a missing box (empty or degenerate previous
/// mask) falls back to the full image with the fallback flag set.
pub fn crop_resize(
    frame_pixels: &Tensor,
    prev_box: Option<(usize, usize, usize, usize)>,
    cfg: &PipelineConfig,
) -> (Tensor, CropTransform) {
    let (h, w) = (frame_pixels.shape()[0], frame_pixels.shape()[1]);
    let (src, fallback) = match prev_box {
        Some(b) => (scaled_box(b, cfg, w, h), false),
        None => ((0, 0, w, h), true),
    };
    let ct = CropTransform { src, target: (cfg.work_width, cfg.work_height), fallback };
    (apply_transform(frame_pixels, &ct), ct)
}

/// Inverse of `crop_resize` for a `[h, w]` patch map: bilinear resize back
/// into the source box, zeros everywhere else.
pub fn paste_back(
    patch: &Tensor,
    ct: &CropTransform,
    image_size: (usize, usize),
) -> Result<Tensor> {
    let (ih, iw) = image_size;
    let (x0, y0, x1, y1) = ct.src;
    if x1 > iw || y1 > ih || x0 >= x1 || y0 >= y1 {
        return Err(Error::RejectedInput(format!(
            "transform box {:?} does not fit image {iw}x{ih}",
            ct.src
        )));
    }
    if patch.shape() != [ct.target.1, ct.target.0] {
        return Err(Error::RejectedInput(format!(
            "patch {:?} does not match transform target {:?}",
            patch.shape(),
            ct.target
        )));
    }
    let p3 = patch.reshape(&[patch.shape()[0], patch.shape()[1], 1]);
    let (bh, bw) = (y1 - y0, x1 - x0);
    let resized = kernels::resize_bilinear(&p3, bh, bw);
    let mut out = vec![0.0; ih * iw];
    for by in 0..bh {
        for bx in 0..bw {
            out[(y0 + by) * iw + (x0 + bx)] = resized.at3(by, bx, 0);
        }
    }
    Ok(Tensor::from_vec(&[ih, iw], out))
}
