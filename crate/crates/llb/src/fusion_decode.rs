//! Gated adaptive fusion of the two branch outputs, the segmentation
//! decoder, and multi-object soft aggregation.

use llb_core::{Ctx, Rng, Tensor, Var};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::params::{conv_init, Bound, ParamStore};

pub const AGG_EPS: f64 = 1e-5;

pub fn init_params(store: &mut ParamStore, cfg: &PipelineConfig, rng: &mut Rng) {
    let d = cfg.head_dim_d;
    // gate hidden width equals D
    for gate in ["afm.g1", "afm.g2"] {
        store.insert(&format!("{gate}.c0.w"), conv_init(1, d, d, rng));
        store.insert(&format!("{gate}.c0.b"), Tensor::zeros(&[d]));
        store.insert(&format!("{gate}.c1.w"), conv_init(1, d, d, rng));
        store.insert(&format!("{gate}.c1.b"), Tensor::zeros(&[d]));
    }
    // decoder: stride 16 -> 8 -> 4 with skip concatenation, then 1 logit channel
    let (s8c, s4c) = (cfg.backbone_widths[2], cfg.backbone_widths[1]);
    store.insert("dec.c0.w", conv_init(3, d, 32, rng));
    store.insert("dec.c0.b", Tensor::zeros(&[32]));
    store.insert("dec.c1.w", conv_init(3, 32 + s8c, 16, rng));
    store.insert("dec.c1.b", Tensor::zeros(&[16]));
    store.insert("dec.c2.w", conv_init(3, 16 + s4c, 8, rng));
    store.insert("dec.c2.b", Tensor::zeros(&[8]));
    store.insert("dec.out.w", conv_init(1, 8, 1, rng));
    store.insert("dec.out.b", Tensor::zeros(&[1]));
}

/// Two-layer perceptron gate: 1x1 conv, ReLU, 1x1 conv, sigmoid. Outputs lie
/// strictly inside (0, 1).
pub fn gate_map(ctx: &Ctx, bound: &Bound, prefix: &str, feat: &Var) -> Var {
    let h = ctx.relu(&ctx.add_chan(
        &ctx.conv2d(feat, bound.var(&format!("{prefix}.c0.w")), 1, 0),
        bound.var(&format!("{prefix}.c0.b")),
    ));
    let z = ctx.add_chan(
        &ctx.conv2d(&h, bound.var(&format!("{prefix}.c1.w")), 1, 0),
        bound.var(&format!("{prefix}.c1.b")),
    );
    ctx.sigmoid(&z)
}

/// Fusion core shared by the gated and override paths:
/// `E_tar = g1 (.) e1s + g2 (.) e2s`.
pub fn fuse_with_gates(ctx: &Ctx, e1s: &Var, e2s: &Var, g1: &Var, g2: &Var) -> Result<Var> {
    if e1s.shape() != e2s.shape() || g1.shape() != e1s.shape() || g2.shape() != e2s.shape() {
        return Err(Error::RejectedInput(format!(
            "fusion shapes disagree: {:?} {:?} {:?} {:?}",
            e1s.shape(),
            e2s.shape(),
            g1.shape(),
            g2.shape()
        )));
    }
    Ok(ctx.add(&ctx.mul(g1, e1s), &ctx.mul(g2, e2s)))
}

/// Adaptive fusion: each branch is reweighed elementwise by a sigmoid gate
/// computed from that branch's own feature, then the two are summed.
pub fn afm_fuse(ctx: &Ctx, bound: &Bound, e1s: &Var, e2s: &Var) -> Result<Var> {
    if e1s.shape() != e2s.shape() {
        return Err(Error::RejectedInput(format!(
            "afm_fuse shapes differ: {:?} vs {:?}",
            e1s.shape(),
            e2s.shape()
        )));
    }
    let g1 = gate_map(ctx, bound, "afm.g1", e1s);
    let g2 = gate_map(ctx, bound, "afm.g2", e2s);
    fuse_with_gates(ctx, e1s, e2s, &g1, &g2)
}

/// Ablation baseline: direct pixel-wise summation.
pub fn plain_sum(ctx: &Ctx, e1s: &Var, e2s: &Var) -> Result<Var> {
    if e1s.shape() != e2s.shape() {
        return Err(Error::RejectedInput(format!(
            "plain_sum shapes differ: {:?} vs {:?}",
            e1s.shape(),
            e2s.shape()
        )));
    }
    Ok(ctx.add(e1s, e2s))
}

fn conv_bias(ctx: &Ctx, bound: &Bound, name: &str, x: &Var, pad: usize) -> Var {
    let y = ctx.conv2d(x, bound.var(&format!("{name}.w")), 1, pad);
    ctx.add_chan(&y, bound.var(&format!("{name}.b")))
}

/// Decode the fused target feature to full-resolution logits: two 2x
/// upsampling stages with skip concatenation (strides 8 and 4), then a final
/// bilinear upsample to the image size. Output is `[H_img, W_img]`.
pub fn decode_segmentation(
    ctx: &Ctx,
    bound: &Bound,
    e_tar: &Var,
    skips: &[Var],
    image_size: (usize, usize),
) -> Result<Var> {
    if skips.len() != 2 {
        return Err(Error::Config(format!(
            "decoder needs skip features at strides 8 and 4, got {}",
            skips.len()
        )));
    }
    let (ih, iw) = image_size;
    let (h16, w16) = (e_tar.shape()[0], e_tar.shape()[1]);
    let s8 = &skips[0];
    let s4 = &skips[1];
    if s8.shape()[0] != 2 * h16 || s4.shape()[0] != 4 * h16 {
        return Err(Error::Config(format!(
            "skip dims {:?}/{:?} do not match fused feature {:?}",
            s8.shape(),
            s4.shape(),
            e_tar.shape()
        )));
    }
    let d0 = ctx.relu(&conv_bias(ctx, bound, "dec.c0", e_tar, 1));
    let u8 = ctx.resize_bilinear(&d0, 2 * h16, 2 * w16);
    let d1 = ctx.relu(&conv_bias(ctx, bound, "dec.c1", &ctx.concat_last(&u8, s8), 1));
    let u4 = ctx.resize_bilinear(&d1, 4 * h16, 4 * w16);
    let d2 = ctx.relu(&conv_bias(ctx, bound, "dec.c2", &ctx.concat_last(&u4, s4), 1));
    let logit = conv_bias(ctx, bound, "dec.out", &d2, 0);
    let full = ctx.resize_bilinear(&logit, ih, iw);
    Ok(ctx.reshape(&full, &[ih, iw]))
}

/// Merge independent per-object probability maps into one per-pixel
/// categorical distribution over background + n objects using odds
/// normalization. Index 0 of the result is the background.
#[allow(clippy::needless_range_loop)]
pub fn soft_aggregate(probs: &[Tensor]) -> Result<Vec<Tensor>> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("soft_aggregate needs at least one object".into()));
    }
    let shape = probs[0].shape().to_vec();
    for p in probs {
        if p.shape() != shape {
            return Err(Error::RejectedInput("probability map shapes differ".into()));
        }
    }
    let n = probs[0].numel();
    let clamped: Vec<Tensor> = probs
        .iter()
        .map(|p| p.map(|v| v.clamp(AGG_EPS, 1.0 - AGG_EPS)))
        .collect();
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; probs.len() + 1];
    for i in 0..n {
        let mut p0 = 1.0;
        for p in &clamped {
            p0 *= 1.0 - p.at(i);
        }
        let mut odds = Vec::with_capacity(probs.len() + 1);
        odds.push(p0 / (1.0 - p0));
        for p in &clamped {
            let v = p.at(i);
            odds.push(v / (1.0 - v));
        }
        let total: f64 = odds.iter().sum();
        for (k, o) in odds.iter().enumerate() {
            out[k][i] = o / total;
        }
    }
    Ok(out
        .into_iter()
        .map(|v| Tensor::from_vec(&shape, v))
        .collect())
}
