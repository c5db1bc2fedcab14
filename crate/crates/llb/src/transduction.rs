//! Transformer transduction branch: one self-attention encoder block over
//! the memory features and one decoder block (self-attention plus a
//! cross-attention readout) that pulls target encodings into the current
//! frame.

use llb_core::{Ctx, Var};

use crate::config::PipelineConfig;
use crate::datamodel::{FeatureMap, MemoryBank};
use crate::error::{Error, Result};
use crate::params::{linear_init, Bound, ParamStore};

const NORM_EPS: f64 = 1e-5;

/// Scaled dot-product attention. Rows of the attention matrix are
/// probability vectors; the temperature is `1/sqrt(width of q)`.
pub fn attention(ctx: &Ctx, q: &Var, k: &Var, v: &Var) -> Result<Var> {
    if k.shape()[0] == 0 {
        return Err(Error::EmptyInput("attention requires at least one key".into()));
    }
    if q.shape()[1] != k.shape()[1] {
        return Err(Error::RejectedInput(format!(
            "query width {} does not match key width {}",
            q.shape()[1],
            k.shape()[1]
        )));
    }
    if k.shape()[0] != v.shape()[0] {
        return Err(Error::RejectedInput("key/value row counts differ".into()));
    }
    let scale = 1.0 / (q.shape()[1] as f64).sqrt();
    let scores = ctx.scale(&ctx.matmul(q, &ctx.transpose(k)), scale);
    let weights = ctx.softmax_rows(&scores);
    Ok(ctx.matmul(&weights, v))
}

/// Attention row weights alone (for invariant checks).
pub fn attention_weights(ctx: &Ctx, q: &Var, k: &Var) -> Result<Var> {
    if k.shape()[0] == 0 {
        return Err(Error::EmptyInput("attention requires at least one key".into()));
    }
    let scale = 1.0 / (q.shape()[1] as f64).sqrt();
    let scores = ctx.scale(&ctx.matmul(q, &ctx.transpose(k)), scale);
    Ok(ctx.softmax_rows(&scores))
}

/// Heads act on disjoint column groups of q/k/v and are re-concatenated.
pub(crate) fn multi_head_attention(
    ctx: &Ctx,
    q: &Var,
    k: &Var,
    v: &Var,
    heads: usize,
) -> Result<Var> {
    let qc = q.shape()[1];
    let vc = v.shape()[1];
    assert!(qc.is_multiple_of(heads) && vc.is_multiple_of(heads), "heads must divide widths");
    let (dq, dv) = (qc / heads, vc / heads);
    let mut out: Option<Var> = None;
    for h in 0..heads {
        let qh = ctx.slice_cols(q, h * dq, dq);
        let kh = ctx.slice_cols(k, h * dq, dq);
        let vh = ctx.slice_cols(v, h * dv, dv);
        let oh = attention(ctx, &qh, &kh, &vh)?;
        out = Some(match out {
            None => oh,
            Some(acc) => ctx.concat_last(&acc, &oh),
        });
    }
    Ok(out.expect("heads >= 1"))
}

/// Parameter handles for one self-attention block.
pub(crate) struct AttnBlock<'a> {
    pub wq: &'a Var,
    pub wk: &'a Var,
    pub wv: &'a Var,
    pub wo: &'a Var,
    pub gamma: &'a Var,
    pub beta: &'a Var,
}

impl<'a> AttnBlock<'a> {
    pub fn from_bound(bound: &'a Bound, prefix: &str) -> Self {
        AttnBlock {
            wq: bound.var(&format!("{prefix}.wq")),
            wk: bound.var(&format!("{prefix}.wk")),
            wv: bound.var(&format!("{prefix}.wv")),
            wo: bound.var(&format!("{prefix}.wo")),
            gamma: bound.var(&format!("{prefix}.gamma")),
            beta: bound.var(&format!("{prefix}.beta")),
        }
    }
}

pub(crate) fn init_attn_block(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut llb_core::Rng) {
    store.insert(&format!("{prefix}.wq"), linear_init(width, width, rng));
    store.insert(&format!("{prefix}.wk"), linear_init(width, width, rng));
    store.insert(&format!("{prefix}.wv"), linear_init(width, width, rng));
    store.insert(&format!("{prefix}.wo"), linear_init(width, width, rng));
    store.insert(&format!("{prefix}.gamma"), llb_core::Tensor::full(&[width], 1.0));
    store.insert(&format!("{prefix}.beta"), llb_core::Tensor::zeros(&[width]));
}

/// Self-attention + residual + instance normalization (post-norm), then a
/// learned per-channel affine.
pub(crate) fn self_attn_block(
    ctx: &Ctx,
    p: &AttnBlock<'_>,
    x: &Var,
    heads: usize,
) -> Result<Var> {
    let q = ctx.matmul(x, p.wq);
    let k = ctx.matmul(x, p.wk);
    let v = ctx.matmul(x, p.wv);
    let att = multi_head_attention(ctx, &q, &k, &v, heads)?;
    let o = ctx.matmul(&att, p.wo);
    let y = ctx.instnorm(&ctx.add(x, &o), NORM_EPS);
    Ok(ctx.add_chan(&ctx.mul_chan(&y, p.gamma), p.beta))
}

/// Memory tokens after the encoder block, paired with the flattened target
/// encodings they key into.
pub struct EncodedMemory {
    pub m_sa: Var,    // [N*H*W, C]
    pub e1_flat: Var, // [N*H*W, D]
    pub frame_indices: Vec<usize>,
    pub spatial: (usize, usize),
}

pub fn init_params(store: &mut ParamStore, cfg: &PipelineConfig, rng: &mut llb_core::Rng) {
    let c = cfg.channels_c;
    let d = cfg.head_dim_d;
    init_attn_block(store, "trans.enc", c, rng);
    init_attn_block(store, "trans.dec", c, rng);
    store.insert("trans.cross.wq", linear_init(c, c, rng));
    store.insert("trans.cross.wk", linear_init(c, c, rng));
    store.insert("trans.cross.out", linear_init(d, d, rng));
}

/// Flatten all memory features to `[N*H*W, C]` tokens and run the encoder
/// self-attention block jointly over them.
pub fn encode_memory(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    bank: &MemoryBank,
) -> Result<EncodedMemory> {
    if bank.is_empty() {
        return Err(Error::EmptyInput("memory bank is empty".into()));
    }
    let (h, w) = bank.entries()[0].feature.spatial();
    let c = bank.entries()[0].feature.channels();
    let mut m_flat: Option<Var> = None;
    let mut e1_flat: Option<Var> = None;
    let mut frame_indices = Vec::with_capacity(bank.len());
    for entry in bank.entries() {
        let enc = entry.encodings.as_ref().ok_or_else(|| {
            Error::RejectedInput(format!("memory entry {} has no encodings", entry.frame_index))
        })?;
        let feat = ctx.reshape(&entry.feature.data, &[h * w, c]);
        let e1 = ctx.reshape(&enc.e1.data, &[h * w, cfg.head_dim_d]);
        m_flat = Some(match m_flat {
            None => feat,
            Some(acc) => ctx.concat_rows(&acc, &feat),
        });
        e1_flat = Some(match e1_flat {
            None => e1,
            Some(acc) => ctx.concat_rows(&acc, &e1),
        });
        frame_indices.push(entry.frame_index);
    }
    let m_flat = m_flat.unwrap();
    let block = AttnBlock::from_bound(bound, "trans.enc");
    let m_sa = self_attn_block(ctx, &block, &m_flat, cfg.attn_heads)?;
    Ok(EncodedMemory {
        m_sa,
        e1_flat: e1_flat.unwrap(),
        frame_indices,
        spatial: (h, w),
    })
}

/// Current-frame readout: self-attention block, then cross-attention with
/// the encoded memory as keys and the target encodings as values, producing
/// the target-aware feature at D channels.
pub fn decode_current(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    x: &FeatureMap,
    mem: &EncodedMemory,
) -> Result<FeatureMap> {
    let (h, w) = x.spatial();
    let c = x.channels();
    if c != mem.m_sa.shape()[1] {
        return Err(Error::RejectedInput(format!(
            "current feature channels {} do not match memory width {}",
            c,
            mem.m_sa.shape()[1]
        )));
    }
    let x_flat = ctx.reshape(&x.data, &[h * w, c]);
    let block = AttnBlock::from_bound(bound, "trans.dec");
    let x_sa = self_attn_block(ctx, &block, &x_flat, cfg.attn_heads)?;
    let q = ctx.matmul(&x_sa, bound.var("trans.cross.wq"));
    let k = ctx.matmul(&mem.m_sa, bound.var("trans.cross.wk"));
    let read = multi_head_attention(ctx, &q, &k, &mem.e1_flat, cfg.attn_heads)?;
    let out = if cfg.cross_output_proj {
        ctx.matmul(&read, bound.var("trans.cross.out"))
    } else {
        read
    };
    Ok(FeatureMap::new(ctx.reshape(&out, &[h, w, cfg.head_dim_d]), x.stride))
}
