//! Online few-shot learner: a linear convolutional target model fitted to
//! memory samples by steepest descent with an exact line search on the
//! weighted ridge objective
//!
//!   L(tau) = 1/2 sum_i ||W_i (.) (T_tau(m_i) - G_i)||^2 + lambda/2 ||tau||^2.
//!
//! Every step is built from tape ops, so the whole unroll is differentiable
//! with respect to the labels, weights, and features it consumes.

use llb_core::{Ctx, Tensor, Var};

use crate::datamodel::MemoryBank;
use crate::error::{Error, Result};

/// Linear target model parameters: a `[K, K, C, D]` convolution kernel.
#[derive(Clone)]
pub struct TargetModelState {
    pub tau: Var,
    pub kernel: usize,
}

impl TargetModelState {
    pub fn zeros(ctx: &Ctx, k: usize, c: usize, d: usize) -> Self {
        TargetModelState { tau: ctx.leaf(Tensor::zeros(&[k, k, c, d])), kernel: k }
    }
}

/// One training sample for the learner: a C-channel feature map, its
/// D-channel label encoding, and strictly positive position weights.
pub struct LearnerSample {
    pub feature: Var, // [H, W, C]
    pub label: Var,   // [H, W, D]
    pub weight: Var,  // [H, W, D]
}

impl LearnerSample {
    fn check(&self) -> Result<()> {
        let (fh, fw) = (self.feature.shape()[0], self.feature.shape()[1]);
        if self.label.shape()[0] != fh
            || self.label.shape()[1] != fw
            || self.weight.shape() != self.label.shape()
        {
            return Err(Error::RejectedInput(
                "learner sample spatial dims disagree".into(),
            ));
        }
        Ok(())
    }
}

/// Samples assembled from a memory bank (feature, E2 label, position weights).
pub fn samples_from_memory(bank: &MemoryBank) -> Result<Vec<LearnerSample>> {
    if bank.is_empty() {
        return Err(Error::EmptyInput("learner needs a nonempty memory".into()));
    }
    bank.entries()
        .iter()
        .map(|entry| {
            let enc = entry.encodings.as_ref().ok_or_else(|| {
                Error::RejectedInput(format!(
                    "memory entry {} has no label encodings",
                    entry.frame_index
                ))
            })?;
            Ok(LearnerSample {
                feature: entry.feature.data.clone(),
                label: enc.e2.data.clone(),
                weight: enc.weights.data.clone(),
            })
        })
        .collect()
}

/// Apply the target model: same-size K x K convolution, linear in both the
/// kernel and the feature.
pub fn target_model_apply(ctx: &Ctx, tau: &Var, feature: &Var) -> Result<Var> {
    let k = tau.shape()[0];
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("target model kernel K={k} must be odd")));
    }
    if feature.shape()[2] != tau.shape()[2] {
        return Err(Error::RejectedInput(format!(
            "feature channels {} do not match target model C={}",
            feature.shape()[2],
            tau.shape()[2]
        )));
    }
    Ok(ctx.conv2d(feature, tau, 1, (k - 1) / 2))
}

/// Alias used on the current frame: E2* = T_tau(X).
pub fn infer_e2star(ctx: &Ctx, state: &TargetModelState, feature: &Var) -> Result<Var> {
    target_model_apply(ctx, &state.tau, feature)
}

/// Exact objective value.
pub fn loss_eval(ctx: &Ctx, tau: &Var, samples: &[LearnerSample], lambda: f64) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("loss_eval needs samples".into()));
    }
    let mut total: Option<Var> = None;
    for s in samples {
        s.check()?;
        let pred = target_model_apply(ctx, tau, &s.feature)?;
        let wr = ctx.mul(&s.weight, &ctx.sub(&pred, &s.label));
        let term = ctx.scale(&ctx.dot(&wr, &wr), 0.5);
        total = Some(match total {
            None => term,
            Some(acc) => ctx.add(&acc, &term),
        });
    }
    let mut loss = total.unwrap();
    if lambda != 0.0 {
        let reg = ctx.scale(&ctx.dot(tau, tau), 0.5 * lambda);
        loss = ctx.add(&loss, &reg);
    }
    Ok(loss)
}

pub struct SdStepOutcome {
    pub tau: Var,
    pub loss_before: f64,
    pub alpha: f64,
}

/// One steepest-descent step with the exact quadratic line search:
/// alpha = <g,g> / <g,Ag>, tau' = tau - alpha g. Returns tau unchanged with
/// alpha = 0 at (near-)stationarity or vanishing curvature.
pub fn sd_step(
    ctx: &Ctx,
    tau: &Var,
    samples: &[LearnerSample],
    lambda: f64,
    curvature_eps: f64,
) -> Result<SdStepOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("sd_step needs samples".into()));
    }
    let k = tau.shape()[0];
    let pad = (k - 1) / 2;

    // gradient: sum_i CWG(m_i, w_i^2 (.) (T_tau(m_i) - g_i)) + lambda tau
    // the squared weight appears because the residual is weighted inside the norm
    let mut grad: Option<Var> = None;
    let mut loss_before = 0.0;
    for s in samples {
        s.check()?;
        let pred = target_model_apply(ctx, tau, &s.feature)?;
        let wr = ctx.mul(&s.weight, &ctx.sub(&pred, &s.label));
        loss_before += 0.5 * llb_core::par::dot(wr.value().data(), wr.value().data());
        let wwr = ctx.mul(&s.weight, &wr);
        let term = ctx.conv2d_weight_grad(&s.feature, &wwr, k, pad);
        grad = Some(match grad {
            None => term,
            Some(acc) => ctx.add(&acc, &term),
        });
    }
    let mut grad = grad.unwrap();
    if lambda != 0.0 {
        grad = ctx.add(&grad, &ctx.scale(tau, lambda));
        loss_before += 0.5 * lambda * llb_core::par::dot(tau.value().data(), tau.value().data());
    }
    if !grad.value().all_finite() {
        return Err(Error::NumericFault("steepest descent gradient".into()));
    }

    // curvature along the gradient direction: Ag = sum_i CWG(m_i, w_i^2 (.) T_g(m_i)) + lambda g
    let mut ag: Option<Var> = None;
    for s in samples {
        let tg = target_model_apply(ctx, &grad, &s.feature)?;
        let wwtg = ctx.mul(&s.weight, &ctx.mul(&s.weight, &tg));
        let term = ctx.conv2d_weight_grad(&s.feature, &wwtg, k, pad);
        ag = Some(match ag {
            None => term,
            Some(acc) => ctx.add(&acc, &term),
        });
    }
    let mut ag = ag.unwrap();
    if lambda != 0.0 {
        ag = ctx.add(&ag, &ctx.scale(&grad, lambda));
    }

    let gg = ctx.dot(&grad, &grad);
    let gag = ctx.dot(&grad, &ag);
    if gag.value().at(0) <= curvature_eps || gg.value().at(0) == 0.0 {
        return Ok(SdStepOutcome { tau: tau.clone(), loss_before, alpha: 0.0 });
    }
    let alpha = ctx.div(&gg, &gag);
    let tau_next = ctx.sub(tau, &ctx.scale_var(&grad, &alpha));
    Ok(SdStepOutcome { tau: tau_next, loss_before, alpha: alpha.value().at(0) })
}

pub struct LearnOutcome {
    pub state: TargetModelState,
    /// Objective value before each step, plus the final value.
    pub losses: Vec<f64>,
}

/// Run `n_iters` steepest-descent steps from `tau_init` over the samples.
/// The unroll stays on the tape, so gradients flow back into labels,
/// weights, and features.
pub fn learn(
    ctx: &Ctx,
    samples: &[LearnerSample],
    tau_init: &TargetModelState,
    n_iters: usize,
    lambda: f64,
    curvature_eps: f64,
) -> Result<LearnOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("learn needs a nonempty memory".into()));
    }
    let mut tau = tau_init.tau.clone();
    let mut losses = Vec::with_capacity(n_iters + 1);
    for _ in 0..n_iters {
        let step = sd_step(ctx, &tau, samples, lambda, curvature_eps)?;
        losses.push(step.loss_before);
        tau = step.tau;
    }
    let final_loss = loss_eval(ctx, &tau, samples, lambda)?.value().at(0);
    losses.push(final_loss);
    Ok(LearnOutcome {
        state: TargetModelState { tau, kernel: tau_init.kernel },
        losses,
    })
}

/// Learner convenience over a memory bank.
pub fn learn_from_memory(
    ctx: &Ctx,
    bank: &MemoryBank,
    tau_init: &TargetModelState,
    n_iters: usize,
    lambda: f64,
    curvature_eps: f64,
) -> Result<LearnOutcome> {
    let samples = samples_from_memory(bank)?;
    learn(ctx, &samples, tau_init, n_iters, lambda, curvature_eps)
}
