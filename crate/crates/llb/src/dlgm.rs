//! Discriminative label generation: encodes a background-filtered frame into
//! two complementary target encodings (transduction value E1, induction
//! label E2) plus strictly positive position weights, and provides the
//! cosine complementarity loss that keeps E1 and E2 apart.

use llb_core::{Ctx, Rng, Tensor, Var};

use crate::config::{LabelEncoderKind, LabelInput, PipelineConfig};
use crate::datamodel::{Bff, FeatureMap, Mask};
use crate::error::{Error, Result};
use crate::params::{conv_init, Bound, ParamStore};
use crate::transduction::{init_attn_block, self_attn_block, AttnBlock};

/// Floor added to the softplus-mapped weight head; keeps W > 0 everywhere.
const WEIGHT_FLOOR: f64 = 0.01;

/// The two target encodings and position weights, all D channels at the
/// backbone stride.
#[derive(Clone)]
pub struct TargetEncodingPair {
    pub e1: FeatureMap,
    pub e2: FeatureMap,
    pub weights: FeatureMap,
}

pub fn init_params(store: &mut ParamStore, cfg: &PipelineConfig, rng: &mut Rng) {
    let h = cfg.label_hidden;
    let d = cfg.head_dim_d;
    let trunk_out = match cfg.label_encoder {
        LabelEncoderKind::TinyCnn => {
            store.insert("dlgm.c1.w", conv_init(3, 3, h, rng));
            store.insert("dlgm.c1.b", Tensor::zeros(&[h]));
            store.insert("dlgm.c2.w", conv_init(3, h, h, rng));
            store.insert("dlgm.c2.b", Tensor::zeros(&[h]));
            store.insert("dlgm.c3.w", conv_init(3, h, h, rng));
            store.insert("dlgm.c3.b", Tensor::zeros(&[h]));
            store.insert("dlgm.c4.w", conv_init(3, h, 2 * h, rng));
            store.insert("dlgm.c4.b", Tensor::zeros(&[2 * h]));
            store.insert("dlgm.c5.w", conv_init(3, 2 * h, 2 * h, rng));
            store.insert("dlgm.c5.b", Tensor::zeros(&[2 * h]));
            2 * h
        }
        LabelEncoderKind::TinyTransformer => {
            store.insert("dlgm.patch.w", conv_init(16, 3, h, rng));
            store.insert("dlgm.patch.b", Tensor::zeros(&[h]));
            init_attn_block(store, "dlgm.blk0", h, rng);
            init_attn_block(store, "dlgm.blk1", h, rng);
            h
        }
    };
    store.insert("dlgm.head_e1.w", conv_init(3, trunk_out, d, rng));
    store.insert("dlgm.head_e1.b", Tensor::zeros(&[d]));
    store.insert("dlgm.head_e2.w", conv_init(3, trunk_out, d, rng));
    store.insert("dlgm.head_e2.b", Tensor::zeros(&[d]));
    // weight head starts at exactly W = 1: softplus(b) = 1 - floor
    let w_bias = (1.0 - WEIGHT_FLOOR).exp_m1().ln();
    store.insert("dlgm.head_w.w", Tensor::zeros(&[3, 3, trunk_out, d]));
    store.insert("dlgm.head_w.b", Tensor::full(&[d], w_bias));
}

/// Assemble the encoder input for the configured ablation axis: the BFF
/// itself, or the binarized mask replicated across the three input channels.
pub fn encoder_input(cfg: &PipelineConfig, bff: &Bff, mask: &Mask) -> Tensor {
    match cfg.label_input {
        LabelInput::Bff => bff.pixels.clone(),
        LabelInput::Mask => {
            let md = mask.values.data();
            let thr = cfg.bff_threshold;
            Tensor::from_fn(bff.pixels.shape(), |i| {
                if md[i / 3] >= thr {
                    1.0
                } else {
                    0.0
                }
            })
        }
    }
}

fn conv_bias(ctx: &Ctx, bound: &Bound, name: &str, x: &Var, stride: usize, pad: usize) -> Var {
    let y = ctx.conv2d(x, bound.var(&format!("{name}.w")), stride, pad);
    ctx.add_chan(&y, bound.var(&format!("{name}.b")))
}

/// Encode one label-encoder input into (E1, E2, W) at stride 16.
pub fn encode_labels(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    input: &Var,
) -> Result<TargetEncodingPair> {
    let shape = input.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::RejectedInput(format!(
            "label encoder expects [H, W, 3], got {shape:?}"
        )));
    }
    if !shape[0].is_multiple_of(16) || !shape[1].is_multiple_of(16) {
        return Err(Error::RejectedInput(format!(
            "label encoder input {}x{} is not a multiple of the output stride 16",
            shape[0], shape[1]
        )));
    }
    let (gh, gw) = (shape[0] / 16, shape[1] / 16);
    let trunk = match cfg.label_encoder {
        LabelEncoderKind::TinyCnn => {
            let mut t = input.clone();
            for name in ["dlgm.c1", "dlgm.c2", "dlgm.c3", "dlgm.c4"] {
                t = ctx.relu(&conv_bias(ctx, bound, name, &t, 2, 1));
            }
            ctx.relu(&conv_bias(ctx, bound, "dlgm.c5", &t, 1, 1))
        }
        LabelEncoderKind::TinyTransformer => {
            let patches = conv_bias(ctx, bound, "dlgm.patch", input, 16, 0);
            let h = cfg.label_hidden;
            let mut tokens = ctx.reshape(&patches, &[gh * gw, h]);
            for prefix in ["dlgm.blk0", "dlgm.blk1"] {
                let block = AttnBlock::from_bound(bound, prefix);
                tokens = self_attn_block(ctx, &block, &tokens, cfg.attn_heads)?;
            }
            ctx.reshape(&tokens, &[gh, gw, h])
        }
    };

    let e1 = conv_bias(ctx, bound, "dlgm.head_e1", &trunk, 1, 1);
    let e2 = conv_bias(ctx, bound, "dlgm.head_e2", &trunk, 1, 1);
    let w_raw = conv_bias(ctx, bound, "dlgm.head_w", &trunk, 1, 1);
    let weights = ctx.offset(&ctx.softplus(&w_raw), WEIGHT_FLOOR);

    for (name, t) in [("e1", &e1), ("e2", &e2), ("weights", &weights)] {
        if !t.value().all_finite() {
            return Err(Error::NumericFault(format!("label encoder output {name}")));
        }
    }
    Ok(TargetEncodingPair {
        e1: FeatureMap::new(e1, 16),
        e2: FeatureMap::new(e2, 16),
        weights: FeatureMap::new(weights, 16),
    })
}

/// Mean over spatial positions of |cos(e1[p,:], e2[p,:])|. Zero-norm
/// positions contribute exactly 0: the denominator is floored at 1e-8.
pub fn complement_loss(ctx: &Ctx, e1: &Var, e2: &Var) -> Result<Var> {
    if e1.shape() != e2.shape() {
        return Err(Error::RejectedInput(format!(
            "complement_loss shapes differ: {:?} vs {:?}",
            e1.shape(),
            e2.shape()
        )));
    }
    let dots = ctx.sum_last(&ctx.mul(e1, e2));
    let s1 = ctx.sum_last(&ctx.mul(e1, e1));
    let s2 = ctx.sum_last(&ctx.mul(e2, e2));
    // sqrt(s1*s2 + 1e-16) >= 1e-8, and stays differentiable at zero norm
    let denom = ctx.sqrt(&ctx.offset(&ctx.mul(&s1, &s2), 1e-16));
    let cos = ctx.div(&dots, &denom);
    Ok(ctx.mean_all(&ctx.abs(&cos)))
}
