//! Raw compute kernels behind the tape ops.
//!
//! Shape conventions: activations `[H, W, C]`, token matrices `[rows, C]`,
//! convolution weights `[K, K, Cin, Cout]`. All kernels parallelize over
//! disjoint output rows (see `par`), so they are deterministic regardless of
//! thread count.

use crate::par;
use crate::tensor::Tensor;

pub fn conv2d_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// 2-D convolution (cross-correlation), zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (h, wid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, cin_w, cout) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    assert_eq!(w.shape()[1], k, "kernel must be square");
    assert_eq!(cin, cin_w, "conv channel mismatch: input {cin}, kernel {cin_w}");
    let oh = conv2d_out_dim(h, k, stride, pad);
    let ow = conv2d_out_dim(wid, k, stride, pad);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; oh * ow * cout];
    par::fill_rows(&mut out, ow * cout, |oy, row| {
        for ox in 0..ow {
            let acc = &mut row[ox * cout..(ox + 1) * cout];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= wid as isize {
                        continue;
                    }
                    let xb = (iy as usize * wid + ix as usize) * cin;
                    let wb = (ky * k + kx) * cin * cout;
                    for c in 0..cin {
                        let xv = xd[xb + c];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &wd[wb + c * cout..wb + (c + 1) * cout];
                        for (d, wv) in wrow.iter().enumerate() {
                            acc[d] += xv * wv;
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(&[oh, ow, cout], out)
}

/// Gradient of `conv2d` w.r.t. its input, given the output gradient.
pub fn conv2d_input_grad(
    gout: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    h: usize,
    wid: usize,
) -> Tensor {
    let (oh, ow, cout) = (gout.shape()[0], gout.shape()[1], gout.shape()[2]);
    let (k, cin) = (w.shape()[0], w.shape()[2]);
    assert_eq!(w.shape()[3], cout);
    let gd = gout.data();
    let wd = w.data();
    let mut gx = vec![0.0; h * wid * cin];
    par::fill_rows(&mut gx, wid * cin, |y, row| {
        for x in 0..wid {
            let acc = &mut row[x * cin..(x + 1) * cin];
            for ky in 0..k {
                let oy_num = y as isize + pad as isize - ky as isize;
                if oy_num < 0 || oy_num % stride as isize != 0 {
                    continue;
                }
                let oy = (oy_num / stride as isize) as usize;
                if oy >= oh {
                    continue;
                }
                for kx in 0..k {
                    let ox_num = x as isize + pad as isize - kx as isize;
                    if ox_num < 0 || ox_num % stride as isize != 0 {
                        continue;
                    }
                    let ox = (ox_num / stride as isize) as usize;
                    if ox >= ow {
                        continue;
                    }
                    let gb = (oy * ow + ox) * cout;
                    let wb = (ky * k + kx) * cin * cout;
                    for c in 0..cin {
                        let wrow = &wd[wb + c * cout..wb + (c + 1) * cout];
                        let gs = &gd[gb..gb + cout];
                        let mut s = 0.0;
                        for d in 0..cout {
                            s += gs[d] * wrow[d];
                        }
                        acc[c] += s;
                    }
                }
            }
        }
    });
    Tensor::from_vec(&[h, wid, cin], gx)
}

/// Gradient of `conv2d` w.r.t. its weights: correlation of the input with the
/// output gradient. Also used as a forward op by the few-shot learner.
pub fn conv2d_weight_grad(x: &Tensor, gout: &Tensor, k: usize, stride: usize, pad: usize) -> Tensor {
    let (h, wid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow, cout) = (gout.shape()[0], gout.shape()[1], gout.shape()[2]);
    debug_assert_eq!(oh, conv2d_out_dim(h, k, stride, pad));
    debug_assert_eq!(ow, conv2d_out_dim(wid, k, stride, pad));
    let xd = x.data();
    let gd = gout.data();
    let mut gw = vec![0.0; k * k * cin * cout];
    // one row per (ky, kx, c) triple
    par::fill_rows(&mut gw, cout, |r, row| {
        let c = r % cin;
        let kx = (r / cin) % k;
        let ky = r / (cin * k);
        for oy in 0..oh {
            let iy = (oy * stride + ky) as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for ox in 0..ow {
                let ix = (ox * stride + kx) as isize - pad as isize;
                if ix < 0 || ix >= wid as isize {
                    continue;
                }
                let xv = xd[(iy as usize * wid + ix as usize) * cin + c];
                if xv == 0.0 {
                    continue;
                }
                let gb = (oy * ow + ox) * cout;
                for d in 0..cout {
                    row[d] += xv * gd[gb + d];
                }
            }
        }
    });
    Tensor::from_vec(&[k, k, cin, cout], gw)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ka) = (a.shape()[0], a.shape()[1]);
    let (kb, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(ka, kb, "matmul inner dims differ: {ka} vs {kb}");
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    par::fill_rows(&mut out, n, |i, row| {
        let arow = &ad[i * ka..(i + 1) * ka];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for (j, bv) in brow.iter().enumerate() {
                row[j] += av * bv;
            }
        }
    });
    Tensor::from_vec(&[m, n], out)
}

pub fn transpose2(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![0.0; m * n];
    par::fill_rows(&mut out, m, |j, row| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = ad[i * n + j];
        }
    });
    Tensor::from_vec(&[n, m], out)
}

/// Row-wise softmax of a `[rows, C]` matrix (max-subtracted).
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![0.0; m * n];
    par::fill_rows(&mut out, n, |i, row| {
        let src = &ad[i * n..(i + 1) * n];
        let mx = src.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut z = 0.0;
        for (j, &x) in src.iter().enumerate() {
            let e = (x - mx).exp();
            row[j] = e;
            z += e;
        }
        let inv = 1.0 / z;
        for v in row.iter_mut() {
            *v *= inv;
        }
    });
    Tensor::from_vec(&[m, n], out)
}

fn channel_stats(x: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let c = *x.shape().last().expect("instnorm needs a channel axis");
    let rows = x.numel() / c;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    for r in 0..rows {
        let src = &xd[r * c..(r + 1) * c];
        for (j, &v) in src.iter().enumerate() {
            mean[j] += v;
        }
    }
    let inv_rows = 1.0 / rows as f64;
    for m in mean.iter_mut() {
        *m *= inv_rows;
    }
    let mut var = vec![0.0; c];
    for r in 0..rows {
        let src = &xd[r * c..(r + 1) * c];
        for (j, &v) in src.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v * inv_rows + eps).sqrt())
        .collect();
    (mean, inv_std)
}

/// Per-channel normalization over all leading (spatial/token) positions.
pub fn instnorm(x: &Tensor, eps: f64) -> Tensor {
    let c = *x.shape().last().unwrap();
    let (mean, inv_std) = channel_stats(x, eps);
    let xd = x.data();
    let mut out = vec![0.0; x.numel()];
    par::fill_rows(&mut out, c, |r, row| {
        let src = &xd[r * c..(r + 1) * c];
        for j in 0..c {
            row[j] = (src[j] - mean[j]) * inv_std[j];
        }
    });
    Tensor::from_vec(x.shape(), out)
}

pub fn instnorm_backward(x: &Tensor, gout: &Tensor, eps: f64) -> Tensor {
    let c = *x.shape().last().unwrap();
    let rows = x.numel() / c;
    let (mean, inv_std) = channel_stats(x, eps);
    let xd = x.data();
    let gd = gout.data();
    // per-channel mean of dy and of dy * y
    let mut mean_g = vec![0.0; c];
    let mut mean_gy = vec![0.0; c];
    for r in 0..rows {
        let xs = &xd[r * c..(r + 1) * c];
        let gs = &gd[r * c..(r + 1) * c];
        for j in 0..c {
            let y = (xs[j] - mean[j]) * inv_std[j];
            mean_g[j] += gs[j];
            mean_gy[j] += gs[j] * y;
        }
    }
    let inv_rows = 1.0 / rows as f64;
    for j in 0..c {
        mean_g[j] *= inv_rows;
        mean_gy[j] *= inv_rows;
    }
    let mut gx = vec![0.0; x.numel()];
    par::fill_rows(&mut gx, c, |r, row| {
        let xs = &xd[r * c..(r + 1) * c];
        let gs = &gd[r * c..(r + 1) * c];
        for j in 0..c {
            let y = (xs[j] - mean[j]) * inv_std[j];
            row[j] = inv_std[j] * (gs[j] - mean_g[j] - y * mean_gy[j]);
        }
    });
    Tensor::from_vec(x.shape(), gx)
}

#[inline]
fn bilinear_coords(o: usize, scale: f64, limit: usize) -> (usize, usize, f64) {
    // half-pixel centers; exact identity when scale == 1
    let s = (o as f64 + 0.5) * scale - 0.5;
    let s = s.max(0.0);
    let i0 = (s.floor() as usize).min(limit - 1);
    let i1 = (i0 + 1).min(limit - 1);
    let frac = (s - i0 as f64).clamp(0.0, 1.0);
    (i0, i1, frac)
}

/// Bilinear resize of `[H, W, C]` to `[oh, ow, C]`.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * c];
    par::fill_rows(&mut out, ow * c, |oy, row| {
        let (y0, y1, fy) = bilinear_coords(oy, sy, h);
        for ox in 0..ow {
            let (x0, x1, fx) = bilinear_coords(ox, sx, w);
            let b00 = (y0 * w + x0) * c;
            let b01 = (y0 * w + x1) * c;
            let b10 = (y1 * w + x0) * c;
            let b11 = (y1 * w + x1) * c;
            let dst = &mut row[ox * c..(ox + 1) * c];
            for j in 0..c {
                let top = xd[b00 + j] * (1.0 - fx) + xd[b01 + j] * fx;
                let bot = xd[b10 + j] * (1.0 - fx) + xd[b11 + j] * fx;
                dst[j] = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    Tensor::from_vec(&[oh, ow, c], out)
}

/// Adjoint of `resize_bilinear`: scatters the output gradient back with the
/// same interpolation weights. Sequential; the racy scatter is not worth
/// parallelizing at the sizes we touch.
pub fn resize_bilinear_backward(gout: &Tensor, h: usize, w: usize) -> Tensor {
    let (oh, ow, c) = (gout.shape()[0], gout.shape()[1], gout.shape()[2]);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let gd = gout.data();
    let mut gx = vec![0.0; h * w * c];
    for oy in 0..oh {
        let (y0, y1, fy) = bilinear_coords(oy, sy, h);
        for ox in 0..ow {
            let (x0, x1, fx) = bilinear_coords(ox, sx, w);
            let src = &gd[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            for j in 0..c {
                let g = src[j];
                gx[(y0 * w + x0) * c + j] += g * w00;
                gx[(y0 * w + x1) * c + j] += g * w01;
                gx[(y1 * w + x0) * c + j] += g * w10;
                gx[(y1 * w + x1) * c + j] += g * w11;
            }
        }
    }
    Tensor::from_vec(&[h, w, c], gx)
}
