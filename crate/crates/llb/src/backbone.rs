//! Pluggable feature extractor. The default is a four-stage stride-2 CNN
//! exposing stride-4/8/16 features, with a 1x1 reduction to the working
//! channel width C at stride 16.

use llb_core::{Ctx, Rng, Tensor, Var};

use crate::config::PipelineConfig;
use crate::params::{conv_init, Bound, ParamStore};

pub struct BackboneFeatures {
    pub s4: Var,  // [H/4,  W/4,  widths[1]]
    pub s8: Var,  // [H/8,  W/8,  widths[2]]
    pub s16: Var, // [H/16, W/16, C]
}

pub fn init_params(store: &mut ParamStore, cfg: &PipelineConfig, rng: &mut Rng) {
    let [w1, w2, w3, w4] = cfg.backbone_widths;
    store.insert("backbone.s1.w", conv_init(3, 3, w1, rng));
    store.insert("backbone.s1.b", Tensor::zeros(&[w1]));
    store.insert("backbone.s2.w", conv_init(3, w1, w2, rng));
    store.insert("backbone.s2.b", Tensor::zeros(&[w2]));
    store.insert("backbone.s3.w", conv_init(3, w2, w3, rng));
    store.insert("backbone.s3.b", Tensor::zeros(&[w3]));
    store.insert("backbone.s4.w", conv_init(3, w3, w4, rng));
    store.insert("backbone.s4.b", Tensor::zeros(&[w4]));
    store.insert("backbone.reduce.w", conv_init(1, w4, cfg.channels_c, rng));
    store.insert("backbone.reduce.b", Tensor::zeros(&[cfg.channels_c]));
}

fn stage(ctx: &Ctx, bound: &Bound, name: &str, x: &Var, stride: usize, pad: usize) -> Var {
    let y = ctx.conv2d(x, bound.var(&format!("{name}.w")), stride, pad);
    ctx.relu(&ctx.add_chan(&y, bound.var(&format!("{name}.b"))))
}

/// Extract multi-scale features from an `[H, W, 3]` image tensor.
pub fn forward(ctx: &Ctx, bound: &Bound, frame: &Var) -> BackboneFeatures {
    let t2 = stage(ctx, bound, "backbone.s1", frame, 2, 1);
    let s4 = stage(ctx, bound, "backbone.s2", &t2, 2, 1);
    let s8 = stage(ctx, bound, "backbone.s3", &s4, 2, 1);
    let t16 = stage(ctx, bound, "backbone.s4", &s8, 2, 1);
    let s16 = ctx.add_chan(
        &ctx.conv2d(&t16, bound.var("backbone.reduce.w"), 1, 0),
        bound.var("backbone.reduce.b"),
    );
    BackboneFeatures { s4, s8, s16 }
}
