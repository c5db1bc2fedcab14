//! Online inference: per-object memory banks and target models, crop-based
//! preprocessing, T-interval memory sampling, and soft aggregation across
//! objects.

use llb_core::{Ctx, Tensor};

use crate::backbone;
use crate::config::PipelineConfig;
use crate::datamodel::{Frame, Mask, MemoryBank};
use crate::error::{Error, Result};
use crate::fusion_decode::soft_aggregate;
use crate::induction::{self, TargetModelState};
use crate::params::{Bound, ParamStore};
use crate::pipeline::geometry::{crop_resize, mask_bbox, paste_back, CropTransform};
use crate::pipeline::{encode_patch_entry, predict_frame};

struct ObjectState {
    object_id: u32,
    bank: MemoryBank,
    tau: TargetModelState,
    prev_box: Option<(usize, usize, usize, usize)>,
    fallback_used: bool,
}

pub struct InferenceOutput {
    pub object_ids: Vec<u32>,
    /// `masks[t][o]`: binary mask of object `o` at frame `t`. Frame 0 echoes
    /// the given annotations.
    pub masks: Vec<Vec<Mask>>,
    /// Memory frame indices after processing each frame (object 0's bank).
    pub memory_trace: Vec<Vec<usize>>,
    /// Whether any full-image crop fallback was taken.
    pub fallback_used: bool,
}

/// Crop one frame for an object, run the backbone, and predict a
/// full-image probability map for it.
fn predict_object(
    ctx: &Ctx,
    bound: &Bound,
    cfg: &PipelineConfig,
    state: &ObjectState,
    frame: &Frame,
) -> Result<(Tensor, CropTransform, backbone::BackboneFeatures, Tensor)> {
    let (patch, ct) = crop_resize(&frame.pixels, state.prev_box, cfg);
    let feats = backbone::forward(ctx, bound, &ctx.leaf(patch.clone()));
    let logits = predict_frame(
        ctx,
        bound,
        cfg,
        &state.bank,
        &state.tau,
        &feats,
        (cfg.work_height, cfg.work_width),
    )?;
    let prob_patch = logits.value().map(crate::pipeline::sigmoid_scalar);
    let prob_full = paste_back(&prob_patch, &ct, (frame.height(), frame.width()))?;
    Ok((prob_full, ct, feats, patch))
}

/// Segment a full sequence given first-frame annotations. Objects are
/// processed independently; per-frame results are merged by soft
/// aggregation and the per-pixel argmax.
pub fn infer_sequence(
    params: &ParamStore,
    cfg: &PipelineConfig,
    frames: &[Frame],
    first_masks: &[Mask],
) -> Result<InferenceOutput> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("inference needs at least one frame".into()));
    }
    if first_masks.is_empty() {
        return Err(Error::EmptyInput(
            "inference needs at least one first-frame object mask".into(),
        ));
    }
    let ctx = Ctx::eval();
    let bound = Bound::bind(&ctx, params);
    let image_size = (frames[0].height(), frames[0].width());

    // per-object init from frame 0
    let mut objects: Vec<ObjectState> = Vec::with_capacity(first_masks.len());
    for mask in first_masks {
        if mask.values.shape() != [image_size.0, image_size.1] {
            return Err(Error::RejectedInput(
                "first-frame mask does not match frame size".into(),
            ));
        }
        let prev_box = mask_bbox(&mask.values, cfg.bff_threshold);
        let (patch, ct) = crop_resize(&frames[0].pixels, prev_box, cfg);
        let feats = backbone::forward(&ctx, &bound, &ctx.leaf(patch.clone()));
        let (entry, _) = encode_patch_entry(
            &ctx,
            &bound,
            cfg,
            &patch,
            &mask.values,
            &ct,
            feats.s16,
            0,
            mask.object_id,
        )?;
        let mut bank = MemoryBank::new(cfg.memory_capacity, true);
        bank.insert(entry)?;
        let zero = TargetModelState::zeros(&ctx, cfg.kernel_k, cfg.channels_c, cfg.head_dim_d);
        let tau = induction::learn_from_memory(
            &ctx,
            &bank,
            &zero,
            cfg.iters_infer_init,
            cfg.lambda,
            cfg.curvature_eps,
        )?
        .state;
        objects.push(ObjectState {
            object_id: mask.object_id,
            bank,
            tau,
            prev_box,
            fallback_used: prev_box.is_none(),
        });
    }

    let mut all_masks: Vec<Vec<Mask>> = Vec::with_capacity(frames.len());
    all_masks.push(first_masks.to_vec());
    let mut memory_trace = vec![objects[0].bank.frame_indices()];

    for (t, frame) in frames.iter().enumerate().skip(1) {
        // per-object probability maps in full-image coordinates
        let mut probs: Vec<Tensor> = Vec::with_capacity(objects.len());
        let mut transforms: Vec<CropTransform> = Vec::with_capacity(objects.len());
        let mut patches: Vec<Tensor> = Vec::with_capacity(objects.len());
        let mut features: Vec<backbone::BackboneFeatures> = Vec::with_capacity(objects.len());
        for state in &objects {
            let (prob, ct, feats, patch) = predict_object(&ctx, &bound, cfg, state, frame)?;
            probs.push(prob);
            transforms.push(ct);
            patches.push(patch);
            features.push(feats);
        }

        let dist = soft_aggregate(&probs)?;
        let n_px = image_size.0 * image_size.1;
        let mut frame_masks: Vec<Vec<f64>> = vec![vec![0.0; n_px]; objects.len()];
        #[allow(clippy::needless_range_loop)]
        for p in 0..n_px {
            let mut best = 0usize;
            let mut best_v = dist[0].at(p);
            for (k, d) in dist.iter().enumerate().skip(1) {
                if d.at(p) > best_v {
                    best_v = d.at(p);
                    best = k;
                }
            }
            if best > 0 {
                frame_masks[best - 1][p] = 1.0;
            }
        }
        let frame_masks: Vec<Mask> = frame_masks
            .into_iter()
            .zip(objects.iter())
            .map(|(vals, st)| {
                Mask::new(
                    Tensor::from_vec(&[image_size.0, image_size.1], vals),
                    st.object_id,
                    false,
                )
            })
            .collect::<Result<_>>()?;

        // update previous estimates
        for (state, mask) in objects.iter_mut().zip(frame_masks.iter()) {
            state.prev_box = mask_bbox(&mask.values, 0.5);
            if state.prev_box.is_none() {
                state.fallback_used = true;
            }
        }

        // sample every T-th frame into memory and refresh the target model
        if t % cfg.sample_interval_t == 0 {
            for (o, state) in objects.iter_mut().enumerate() {
                let (entry, _) = encode_patch_entry(
                    &ctx,
                    &bound,
                    cfg,
                    &patches[o],
                    &frame_masks[o].values,
                    &transforms[o],
                    features[o].s16.clone(),
                    t,
                    state.object_id,
                )?;
                state.bank.insert(entry)?;
                state.tau = induction::learn_from_memory(
                    &ctx,
                    &state.bank,
                    &state.tau,
                    cfg.iters_infer_update,
                    cfg.lambda,
                    cfg.curvature_eps,
                )?
                .state;
            }
        }

        memory_trace.push(objects[0].bank.frame_indices());
        all_masks.push(frame_masks);
    }

    Ok(InferenceOutput {
        object_ids: objects.iter().map(|s| s.object_id).collect(),
        masks: all_masks,
        memory_trace,
        fallback_used: objects.iter().any(|s| s.fallback_used),
    })
}

/// Expected memory index set after frame `t`: the pinned first frame plus
/// every multiple of T up to t, truncated to capacity.
pub fn expected_memory_indices(t: usize, interval: usize, capacity: usize) -> Vec<usize> {
    let mut indices = vec![0usize];
    let mut k = interval;
    while k <= t {
        indices.push(k);
        if indices.len() > capacity {
            indices.remove(1);
        }
        k += interval;
    }
    indices
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_indices_rule() {
        assert_eq!(expected_memory_indices(5, 5, 20), vec![0, 5]);
        assert_eq!(expected_memory_indices(4, 5, 20), vec![0]);
        assert_eq!(expected_memory_indices(23, 5, 20), vec![0, 5, 10, 15, 20]);
        // truncation keeps the pinned first frame
        assert_eq!(expected_memory_indices(30, 5, 4), vec![0, 20, 25, 30]);
    }
}
