//! Evaluation harness and the structured report it emits.

use serde::Serialize;

use crate::config::{LabelEncoderKind, LabelInput, PipelineConfig};
use crate::datamodel::{Mask, VideoSequence};
use crate::error::{Error, Result};
use crate::evalbench::metrics::{boundary_f, default_tolerance, jaccard};
use crate::pipeline::infer::infer_sequence;
use crate::pipeline::Model;

#[derive(Debug, Clone, Serialize)]
pub struct AblationTag {
    pub use_dlgm: bool,
    pub use_afm: bool,
    pub label_input: LabelInput,
    pub label_encoder: LabelEncoderKind,
}

impl AblationTag {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        AblationTag {
            use_dlgm: cfg.label_input == LabelInput::Bff
                && cfg.label_encoder == LabelEncoderKind::TinyTransformer,
            use_afm: cfg.use_afm,
            label_input: cfg.label_input,
            label_encoder: cfg.label_encoder,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceScore {
    pub name: String,
    pub num_objects: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    /// Object-averaged per-frame traces (frames scored, i.e. all but the first).
    pub per_frame_j: Vec<f64>,
    pub per_frame_f: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub sequences: Vec<SequenceScore>,
    pub warnings: Vec<String>,
    pub ablation: AblationTag,
    /// Canonical config snapshot the scores were produced with.
    pub config: String,
}

/// Score one sequence's predictions against its ground truth. Frame 0 is the
/// given annotation and is never scored; later frames are scored where
/// ground truth exists.
pub fn score_sequence(
    predictions: &[Vec<Mask>],
    video: &VideoSequence,
    tolerance_px: usize,
) -> Result<SequenceScore> {
    let n_obj = video.num_objects();
    let mut per_object_j = vec![Vec::new(); n_obj];
    let mut per_object_f = vec![Vec::new(); n_obj];
    let mut per_frame_j = Vec::new();
    let mut per_frame_f = Vec::new();
    for t in 1..video.frames.len() {
        let mut frame_j = Vec::new();
        let mut frame_f = Vec::new();
        for o in 0..n_obj {
            let Some(gt) = video.masks[o].get(t).and_then(|m| m.as_ref()) else {
                continue;
            };
            let pred = predictions
                .get(t)
                .and_then(|masks| masks.iter().find(|m| m.object_id == gt.object_id))
                .ok_or_else(|| {
                    Error::RejectedInput(format!(
                        "no prediction for object {} at frame {t}",
                        gt.object_id
                    ))
                })?;
            let pred_bin = crate::datamodel::binarize(&pred.values, 0.5);
            let j = jaccard(&pred_bin, &gt.values)?;
            let f = boundary_f(&pred_bin, &gt.values, tolerance_px)?;
            per_object_j[o].push(j);
            per_object_f[o].push(f);
            frame_j.push(j);
            frame_f.push(f);
        }
        if !frame_j.is_empty() {
            per_frame_j.push(frame_j.iter().sum::<f64>() / frame_j.len() as f64);
            per_frame_f.push(frame_f.iter().sum::<f64>() / frame_f.len() as f64);
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let obj_j: Vec<f64> = per_object_j.iter().filter(|v| !v.is_empty()).map(|v| mean(v)).collect();
    let obj_f: Vec<f64> = per_object_f.iter().filter(|v| !v.is_empty()).map(|v| mean(v)).collect();
    if obj_j.is_empty() {
        return Err(Error::RejectedInput(format!(
            "sequence {} has no scorable frames",
            video.name
        )));
    }
    let j = mean(&obj_j);
    let f = mean(&obj_f);
    Ok(SequenceScore {
        name: video.name.clone(),
        num_objects: n_obj,
        j,
        f,
        jf: (j + f) / 2.0,
        per_frame_j,
        per_frame_f,
    })
}

/// Run inference over every sequence and aggregate scores: per object over
/// frames, then per sequence over objects, then the dataset mean over
/// sequences. Sequences without a usable first-frame annotation are skipped
/// with a warning record.
pub fn evaluate(model: &Model, dataset: &[VideoSequence]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::DataLoad("evaluation dataset is empty".into()));
    }
    model.check_params()?;
    let mut sequences = Vec::new();
    let mut warnings = Vec::new();
    for video in dataset {
        let first: Vec<Mask> = video
            .first_masks()
            .into_iter()
            .flatten()
            .filter(|m| m.area() > 0.0)
            .cloned()
            .collect();
        if first.is_empty() {
            warnings.push(format!(
                "{}: missing or empty first-frame annotation, skipped",
                video.name
            ));
            continue;
        }
        let out = infer_sequence(&model.params, &model.cfg, &video.frames, &first)?;
        let tol = default_tolerance(video.frames[0].height(), video.frames[0].width());
        match score_sequence(&out.masks, video, tol) {
            Ok(score) => sequences.push(score),
            Err(e) => warnings.push(format!("{}: {e}", video.name)),
        }
    }
    let mean = |f: fn(&SequenceScore) -> f64, xs: &[SequenceScore]| {
        xs.iter().map(f).sum::<f64>() / xs.len().max(1) as f64
    };
    Ok(EvalReport {
        mean_j: mean(|s| s.j, &sequences),
        mean_f: mean(|s| s.f, &sequences),
        mean_jf: mean(|s| s.jf, &sequences),
        sequences,
        warnings,
        ablation: AblationTag::from_config(&model.cfg),
        config: model.cfg.to_canonical_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalbench::synth::{gen_synthetic, SyntheticConfig};

    fn tiny_video() -> VideoSequence {
        gen_synthetic(&SyntheticConfig {
            width: 48,
            height: 48,
            length: 4,
            num_distractors: 0,
            seed: 3,
            ..Default::default()
        })
    }

    fn gt_predictions(video: &VideoSequence) -> Vec<Vec<Mask>> {
        (0..video.frames.len())
            .map(|t| {
                video
                    .masks
                    .iter()
                    .map(|track| track[t].clone().unwrap())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn oracle_predictions_score_perfectly() {
        let video = tiny_video();
        let preds = gt_predictions(&video);
        let score = score_sequence(&preds, &video, 2).unwrap();
        assert_eq!(score.j, 1.0);
        assert_eq!(score.f, 1.0);
        assert_eq!(score.jf, 1.0);
    }

    #[test]
    fn all_background_predictions_score_zero_j() {
        let video = tiny_video();
        let preds: Vec<Vec<Mask>> = (0..video.frames.len())
            .map(|_| {
                video
                    .masks
                    .iter()
                    .map(|track| {
                        let oid = track[0].as_ref().unwrap().object_id;
                        Mask::new(
                            llb_core::Tensor::zeros(&[48, 48]),
                            oid,
                            false,
                        )
                        .unwrap()
                    })
                    .collect()
            })
            .collect();
        let score = score_sequence(&preds, &video, 2).unwrap();
        assert_eq!(score.j, 0.0);
    }

    #[test]
    fn report_mean_is_hand_average() {
        // three sequences scored with the oracle and mixed predictions
        let videos: Vec<VideoSequence> = (0..3)
            .map(|i| {
                gen_synthetic(&SyntheticConfig {
                    width: 48,
                    height: 48,
                    length: 3,
                    num_distractors: 0,
                    seed: 10 + i,
                    ..Default::default()
                })
            })
            .collect();
        let scores: Vec<SequenceScore> = videos
            .iter()
            .map(|v| score_sequence(&gt_predictions(v), v, 2).unwrap())
            .collect();
        let hand_j = scores.iter().map(|s| s.j).sum::<f64>() / scores.len() as f64;
        let hand_jf = scores.iter().map(|s| s.jf).sum::<f64>() / scores.len() as f64;
        assert!((hand_j - 1.0).abs() < 1e-12);
        assert!((hand_jf - 1.0).abs() < 1e-12);
        for s in &scores {
            assert_eq!(s.jf, (s.j + s.f) / 2.0);
        }
    }
}
