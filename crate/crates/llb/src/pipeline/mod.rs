//! End-to-end offline training over mini-sequences and the online inference
//! engine, plus crop geometry and checkpointing.

pub mod checkpoint;
pub mod geometry;
pub mod infer;

use std::collections::HashMap;

use llb_core::{Ctx, Rng, Tensor, Var};

use crate::backbone::{self, BackboneFeatures};
use crate::config::PipelineConfig;
use crate::datamodel::{
    binarize, make_bff, FeatureMap, Frame, Mask, MemoryBank, MemoryEntry, VideoSequence,
};
use crate::dlgm;
use crate::error::{Error, Result};
use crate::fusion_decode;
use crate::induction::{self, TargetModelState};
use crate::params::{Adam, Bound, ParamStore};
use crate::transduction;

/// Model parameters plus the configuration they were built for.
pub struct Model {
    pub cfg: PipelineConfig,
    pub params: ParamStore,
}

impl Model {
    /// Initialize all module parameters from the config seed. Each module
    /// gets a forked stream so ablation toggles do not shift the others.
    pub fn init(cfg: PipelineConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = Rng::seed(cfg.seed ^ 0x11b);
        let mut store = ParamStore::new();
        backbone::init_params(&mut store, &cfg, &mut rng.fork());
        dlgm::init_params(&mut store, &cfg, &mut rng.fork());
        transduction::init_params(&mut store, &cfg, &mut rng.fork());
        fusion_decode::init_params(&mut store, &cfg, &mut rng.fork());
        Ok(Model { cfg, params: store })
    }

    /// Verify the parameter set matches what the current config requires.
    /// Catches eval-time ablation overrides that would need parameters the
    /// checkpoint was never trained with (e.g. switching the label encoder).
    pub fn check_params(&self) -> Result<()> {
        let reference = Model::init(self.cfg.clone())?;
        for (name, t) in reference.params.iter() {
            match self.params.try_get(name) {
                None => {
                    return Err(Error::Config(format!(
                        "checkpoint has no parameter '{name}' required by this \
                         configuration; train a checkpoint with it instead"
                    )))
                }
                Some(have) if have.shape() != t.shape() => {
                    return Err(Error::Config(format!(
                        "parameter '{name}' has shape {:?}, configuration needs {:?}",
                        have.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// One frame through both branches, fusion, and the decoder.
/// Returns full-resolution logits for the patch the features came from.
pub fn predict_frame(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    bank: &MemoryBank,
    tau: &TargetModelState,
    feats: &BackboneFeatures,
    image_size: (usize, usize),
) -> Result<Var> {
    let mem = transduction::encode_memory(ctx, bound, cfg, bank)?;
    let x16 = FeatureMap::new(feats.s16.clone(), 16);
    let e1s = transduction::decode_current(ctx, bound, cfg, &x16, &mem)?;
    let e2s = induction::infer_e2star(ctx, tau, &feats.s16)?;
    let e_tar = if cfg.use_afm {
        fusion_decode::afm_fuse(ctx, bound, &e1s.data, &e2s)?
    } else {
        fusion_decode::plain_sum(ctx, &e1s.data, &e2s)?
    };
    fusion_decode::decode_segmentation(
        ctx,
        bound,
        &e_tar,
        &[feats.s8.clone(), feats.s4.clone()],
        image_size,
    )
}

/// Encode one (frame, mask) pair into a memory entry; the complementarity
/// loss term for the produced encoding pair is returned alongside.
fn encode_entry(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    frame: &Frame,
    mask: &Mask,
    feature: Var,
) -> Result<(MemoryEntry, Var)> {
    let bff = make_bff(frame, mask, cfg.bff_threshold)?;
    let enc_input = ctx.leaf(dlgm::encoder_input(cfg, &bff, mask));
    let enc = dlgm::encode_labels(ctx, bound, cfg, &enc_input)?;
    let cos = dlgm::complement_loss(ctx, &enc.e1.data, &enc.e2.data)?;
    let entry = MemoryEntry {
        feature: FeatureMap::new(feature, 16),
        bff,
        encodings: Some(enc),
        frame_index: frame.frame_index,
    };
    Ok((entry, cos))
}

pub struct StepLosses {
    pub seg: Var,
    pub cos: Var,
    pub total: Var,
}

impl StepLosses {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            seg: self.seg.value().at(0),
            cos: self.cos.value().at(0),
            total: self.total.value().at(0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub seg: f64,
    pub cos: f64,
    pub total: f64,
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Build a memory entry from a work-resolution patch and its mask expressed
/// in full-image coordinates (the mask is carried through the same crop).
#[allow(clippy::too_many_arguments)]
pub(crate) fn encode_patch_entry(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    patch: &Tensor,
    full_mask: &Tensor,
    ct: &geometry::CropTransform,
    feature: Var,
    frame_index: usize,
    object_id: u32,
) -> Result<(MemoryEntry, Var)> {
    let patch_pixels = patch.map(|v| v.clamp(0.0, 1.0));
    let patch_mask = geometry::apply_transform(full_mask, ct).map(|v| v.clamp(0.0, 1.0));
    let frame = Frame::new(patch_pixels, frame_index)?;
    let mask = Mask::new(patch_mask, object_id, false)?;
    encode_entry(ctx, bound, cfg, &frame, &mask, feature)
}

/// One training mini-sequence: memory init from frame 0 with the short
/// inner-loop schedule, then per subsequent frame predict / accumulate
/// losses / append the prediction to memory / update the target model.
/// Gradients flow through the whole unroll; frame 0 never contributes a
/// segmentation loss term.
pub fn train_step(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    seq: &[(Frame, Mask)],
) -> Result<StepLosses> {
    if seq.len() < 2 {
        return Err(Error::RejectedInput(format!(
            "mini-sequence needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let image_size = (seq[0].0.height(), seq[0].0.width());
    let mut bank = MemoryBank::new(cfg.memory_capacity.max(seq.len()), true);
    let mut cos_terms: Vec<Var> = Vec::new();
    let mut seg_terms: Vec<Var> = Vec::new();

    let (frame0, mask0) = &seq[0];
    let feats0 = backbone::forward(ctx, bound, &ctx.leaf(frame0.pixels.clone()));
    let (entry0, cos0) = encode_entry(ctx, bound, cfg, frame0, mask0, feats0.s16)?;
    bank.insert(entry0)?;
    cos_terms.push(cos0);
    let zero_tau = TargetModelState::zeros(ctx, cfg.kernel_k, cfg.channels_c, cfg.head_dim_d);
    let mut tau = induction::learn_from_memory(
        ctx,
        &bank,
        &zero_tau,
        cfg.iters_train_init,
        cfg.lambda,
        cfg.curvature_eps,
    )?
    .state;

    for (frame, gt) in &seq[1..] {
        let feats = backbone::forward(ctx, bound, &ctx.leaf(frame.pixels.clone()));
        let logits = predict_frame(ctx, bound, cfg, &bank, &tau, &feats, image_size)?;
        seg_terms.push(ctx.bce_with_logits(&logits, &gt.values));

        // the prediction enters memory binarized; the threshold is a step,
        // so this path is detached from the logits
        let prob = logits.value().map(sigmoid_scalar);
        let pred_mask = Mask::new(binarize(&prob, 0.5), gt.object_id, false)?;
        let (entry, cos) = encode_entry(ctx, bound, cfg, frame, &pred_mask, feats.s16)?;
        bank.insert(entry)?;
        cos_terms.push(cos);
        tau = induction::learn_from_memory(
            ctx,
            &bank,
            &tau,
            cfg.iters_train_update,
            cfg.lambda,
            cfg.curvature_eps,
        )?
        .state;
    }

    let mut seg = seg_terms[0].clone();
    for t in &seg_terms[1..] {
        seg = ctx.add(&seg, t);
    }
    seg = ctx.scale(&seg, 1.0 / seg_terms.len() as f64);
    let mut cos = cos_terms[0].clone();
    for t in &cos_terms[1..] {
        cos = ctx.add(&cos, t);
    }
    cos = ctx.scale(&cos, 1.0 / cos_terms.len() as f64);
    let total = ctx.add(&seg, &ctx.scale(&cos, cfg.w_cos));
    Ok(StepLosses { seg, cos, total })
}

/// Map a sampled mini-sequence into crop space, mirroring the inference
/// preprocessing: frame 0 is cropped about its own annotation, later frames
/// about the previous frame's annotation (the teacher-forced stand-in for
/// the previous estimate). Masks are binarized after the resample.
pub fn prepare_crops(seq: &[(Frame, Mask)], cfg: &PipelineConfig) -> Result<Vec<(Frame, Mask)>> {
    let mut out = Vec::with_capacity(seq.len());
    for (t, (frame, mask)) in seq.iter().enumerate() {
        let anchor = &seq[t.saturating_sub(1)].1;
        let prev_box = geometry::mask_bbox(&anchor.values, cfg.bff_threshold);
        let (patch, ct) = geometry::crop_resize(&frame.pixels, prev_box, cfg);
        let patch_mask = binarize(
            &geometry::apply_transform(&mask.values, &ct),
            cfg.bff_threshold,
        );
        out.push((
            Frame::new(patch.map(|v| v.clamp(0.0, 1.0)), frame.frame_index)?,
            Mask::new(patch_mask, mask.object_id, mask.is_ground_truth)?,
        ));
    }
    Ok(out)
}

/// Pick one training mini-sequence: a video, an object, and Q sorted
/// distinct frame indices where that object is annotated.
fn sample_mini_sequence(
    data: &[VideoSequence],
    cfg: &PipelineConfig,
    rng: &mut Rng,
) -> Result<Vec<(Frame, Mask)>> {
    for _attempt in 0..64 {
        let video = &data[rng.below(data.len())];
        if video.masks.is_empty() {
            continue;
        }
        let obj = rng.below(video.masks.len());
        let annotated: Vec<usize> = (0..video.frames.len())
            .filter(|&t| video.masks[obj].get(t).is_some_and(|m| m.is_some()))
            .collect();
        if annotated.len() < cfg.seq_len_q {
            continue;
        }
        let mut pool = annotated;
        let mut picked = Vec::with_capacity(cfg.seq_len_q);
        for _ in 0..cfg.seq_len_q {
            let i = rng.below(pool.len());
            picked.push(pool.swap_remove(i));
        }
        picked.sort_unstable();
        return Ok(picked
            .into_iter()
            .map(|t| {
                (
                    video.frames[t].clone(),
                    video.masks[obj][t].clone().expect("annotated frame"),
                )
            })
            .collect());
    }
    Err(Error::DataLoad(
        "no video has enough annotated frames for a mini-sequence".into(),
    ))
}

pub struct TrainTrace {
    pub per_step: Vec<LossBreakdown>,
}

/// Offline training: Adam over batches of mini-sequences.
pub fn train(
    model: &mut Model,
    data: &[VideoSequence],
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainTrace> {
    if data.is_empty() {
        return Err(Error::DataLoad("training set is empty".into()));
    }
    let cfg = model.cfg.clone();
    let mut rng = Rng::seed(cfg.seed ^ 0x7a41);
    let mut opt = Adam::new(cfg.lr);
    let mut per_step = Vec::with_capacity(cfg.train_steps);
    for step in 0..cfg.train_steps {
        let ctx = Ctx::train();
        let bound = Bound::bind(&ctx, &model.params);
        let mut step_losses: Vec<StepLosses> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let seq = prepare_crops(&sample_mini_sequence(data, &cfg, &mut rng)?, &cfg)?;
            step_losses.push(train_step(&ctx, &bound, &cfg, &seq)?);
        }
        let mut loss = step_losses[0].total.clone();
        for t in &step_losses[1..] {
            loss = ctx.add(&loss, &t.total);
        }
        loss = ctx.scale(&loss, 1.0 / step_losses.len() as f64);
        let grads = ctx.backward(&loss);
        let by_name: HashMap<String, Tensor> = bound.grads(&model.params, &grads);
        opt.step(&mut model.params, &by_name);

        let n = step_losses.len() as f64;
        let breakdown = LossBreakdown {
            seg: step_losses.iter().map(|t| t.seg.value().at(0)).sum::<f64>() / n,
            cos: step_losses.iter().map(|t| t.cos.value().at(0)).sum::<f64>() / n,
            total: loss.value().at(0),
        };
        progress(step, &breakdown);
        per_step.push(breakdown);
    }
    Ok(TrainTrace { per_step })
}
