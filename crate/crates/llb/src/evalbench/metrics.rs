//! Region (J) and boundary (F) measures for binary masks.

use llb_core::Tensor;

use crate::error::{Error, Result};

fn require_binary(name: &str, m: &Tensor) -> Result<()> {
    if m.shape().len() != 2 {
        return Err(Error::RejectedInput(format!("{name} must be [H, W]")));
    }
    if !m.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(Error::RejectedInput(format!(
            "{name} must be binary; binarize before scoring"
        )));
    }
    Ok(())
}

/// Intersection over union. Two empty masks count as a perfect match.
pub fn jaccard(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    require_binary("pred", pred)?;
    require_binary("gt", gt)?;
    if pred.shape() != gt.shape() {
        return Err(Error::RejectedInput("mask shapes differ".into()));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (a, b) in pred.data().iter().zip(gt.data().iter()) {
        let (a, b) = (*a == 1.0, *b == 1.0);
        inter += (a && b) as u64;
        union += (a || b) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Boundary pixels: mask pixels with a background 4-neighbor, counting the
/// outside of the image as background.
fn boundary_pixels(m: &Tensor) -> Vec<(usize, usize)> {
    let (h, w) = (m.shape()[0], m.shape()[1]);
    let at = |y: isize, x: isize| -> bool {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            return false;
        }
        m.at2(y as usize, x as usize) == 1.0
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if m.at2(y, x) != 1.0 {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            if !at(yi - 1, xi) || !at(yi + 1, xi) || !at(yi, xi - 1) || !at(yi, xi + 1) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Euclidean dilation of a boundary set by `tol` pixels, as a lookup map.
fn dilate(points: &[(usize, usize)], h: usize, w: usize, tol: usize) -> Vec<bool> {
    let mut map = vec![false; h * w];
    let t = tol as isize;
    let t2 = (tol * tol) as isize;
    for &(y, x) in points {
        for dy in -t..=t {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            for dx in -t..=t {
                if dy * dy + dx * dx > t2 {
                    continue;
                }
                let xx = x as isize + dx;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                map[yy as usize * w + xx as usize] = true;
            }
        }
    }
    map
}

/// DAVIS-style contour measure: precision/recall of boundary pixels within
/// `tolerance_px`, combined as 2PR/(P+R).
pub fn boundary_f(pred: &Tensor, gt: &Tensor, tolerance_px: usize) -> Result<f64> {
    require_binary("pred", pred)?;
    require_binary("gt", gt)?;
    if pred.shape() != gt.shape() {
        return Err(Error::RejectedInput("mask shapes differ".into()));
    }
    let (h, w) = (pred.shape()[0], pred.shape()[1]);
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    if pb.is_empty() && gb.is_empty() {
        return Ok(1.0);
    }
    if pb.is_empty() || gb.is_empty() {
        return Ok(0.0);
    }
    let gt_zone = dilate(&gb, h, w, tolerance_px);
    let pred_zone = dilate(&pb, h, w, tolerance_px);
    let precision =
        pb.iter().filter(|&&(y, x)| gt_zone[y * w + x]).count() as f64 / pb.len() as f64;
    let recall =
        gb.iter().filter(|&&(y, x)| pred_zone[y * w + x]).count() as f64 / gb.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Default boundary tolerance: 0.8% of the image diagonal, at least 1px.
pub fn default_tolerance(h: usize, w: usize) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    (0.008 * diag).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Tensor {
        Tensor::from_fn(&[h, w], |i| {
            let (y, x) = (i / w, i % w);
            if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn jaccard_identical_and_disjoint() {
        let a = rect_mask(8, 8, 1, 4, 1, 4);
        let b = rect_mask(8, 8, 5, 7, 5, 7);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_one_of_three_union_cells() {
        // 2x2 grid: pred {(0,0),(0,1)}, gt {(0,1),(1,1)} -> union 3, inter 1
        let pred = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 0.0]);
        let gt = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]);
        assert!((jaccard(&pred, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_rejects_soft_masks() {
        let soft = Tensor::full(&[2, 2], 0.5);
        let hard = Tensor::zeros(&[2, 2]);
        assert!(jaccard(&soft, &hard).is_err());
    }

    #[test]
    fn jaccard_both_empty_is_one() {
        let z = Tensor::zeros(&[4, 4]);
        assert_eq!(jaccard(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn jaccard_is_symmetric() {
        let a = rect_mask(10, 10, 2, 7, 1, 6);
        let b = rect_mask(10, 10, 4, 9, 3, 9);
        assert_eq!(jaccard(&a, &b).unwrap(), jaccard(&b, &a).unwrap());
    }

    #[test]
    fn boundary_identical_is_one() {
        let a = rect_mask(20, 20, 4, 15, 5, 16);
        assert_eq!(boundary_f(&a, &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn boundary_far_apart_is_zero() {
        let a = rect_mask(40, 40, 2, 6, 2, 6);
        let b = rect_mask(40, 40, 30, 36, 30, 36);
        assert_eq!(boundary_f(&a, &b, 2).unwrap(), 0.0);
    }

    #[test]
    fn boundary_one_px_shift_within_tolerance_two() {
        let a = rect_mask(20, 20, 5, 15, 5, 15);
        let b = rect_mask(20, 20, 5, 15, 6, 16);
        assert_eq!(boundary_f(&a, &b, 2).unwrap(), 1.0);
    }

    #[test]
    fn boundary_is_symmetric() {
        let a = rect_mask(24, 24, 3, 14, 2, 12);
        let b = rect_mask(24, 24, 6, 20, 4, 18);
        let ab = boundary_f(&a, &b, 3).unwrap();
        let ba = boundary_f(&b, &a, 3).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn both_empty_boundary_is_one() {
        let z = Tensor::zeros(&[6, 6]);
        assert_eq!(boundary_f(&z, &z, 2).unwrap(), 1.0);
    }

    #[test]
    fn translation_leaves_scores_unchanged_away_from_borders() {
        let a = rect_mask(32, 32, 8, 14, 9, 15);
        let b = rect_mask(32, 32, 10, 16, 12, 18);
        let a2 = rect_mask(32, 32, 12, 18, 13, 19);
        let b2 = rect_mask(32, 32, 14, 20, 16, 22);
        assert!((jaccard(&a, &b).unwrap() - jaccard(&a2, &b2).unwrap()).abs() < 1e-12);
        let t = 2;
        assert!((boundary_f(&a, &b, t).unwrap() - boundary_f(&a2, &b2, t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn tolerance_scales_with_diagonal() {
        assert_eq!(default_tolerance(128, 128), 2);
        assert_eq!(default_tolerance(480, 832), 8);
        assert_eq!(default_tolerance(8, 8), 1);
    }
}
