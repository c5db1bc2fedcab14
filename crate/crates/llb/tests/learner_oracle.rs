//! The unrolled learner against independent oracles: the closed-form
//! weighted ridge solution and a planted-solution recovery check.

mod common;

use common::{rel_frobenius, RidgeInstance};
use llb::induction::{learn, LearnerSample, TargetModelState};
use llb_core::{Ctx, Rng, Tensor};

fn samples_of(ctx: &Ctx, inst: &RidgeInstance) -> Vec<LearnerSample> {
    (0..inst.features.len())
        .map(|s| LearnerSample {
            feature: ctx.leaf(inst.features[s].clone()),
            label: ctx.leaf(inst.labels[s].clone()),
            weight: ctx.leaf(inst.weights[s].clone()),
        })
        .collect()
}

#[test]
fn learn_converges_to_closed_form_ridge() {
    let mut rng = Rng::seed(400);
    for trial in 0..4 {
        let lambda = [0.01, 0.1, 1.0][trial % 3];
        let inst = RidgeInstance::random(3, 2, 12, 2, lambda, &mut rng);
        let oracle = inst.closed_form();
        let ctx = Ctx::eval();
        let samples = samples_of(&ctx, &inst);
        let init = TargetModelState::zeros(&ctx, 1, inst.c, inst.d);
        let out = learn(&ctx, &samples, &init, 200, lambda, 1e-12).unwrap();
        let err = rel_frobenius(out.state.tau.value(), &oracle);
        assert!(err < 1e-3, "trial {trial}: rel error {err}");
    }
}

#[test]
fn learn_recovers_planted_solution() {
    let mut rng = Rng::seed(77);
    let c = 3;
    let d = 2;
    let positions = 16;
    // well-conditioned planted instance: labels generated by a known tau
    let tau_star = Tensor::from_fn(&[1, 1, c, d], |_| rng.uniform(-1.0, 1.0));
    let feature = Tensor::from_fn(&[1, positions, c], |_| rng.uniform(-1.0, 1.0));
    let mut labels = vec![0.0; positions * d];
    for p in 0..positions {
        for dd in 0..d {
            for cc in 0..c {
                labels[p * d + dd] += feature.at(p * c + cc) * tau_star.at(cc * d + dd);
            }
        }
    }
    let ctx = Ctx::eval();
    let samples = vec![LearnerSample {
        feature: ctx.leaf(feature),
        label: ctx.leaf(Tensor::from_vec(&[1, positions, d], labels)),
        weight: ctx.leaf(Tensor::full(&[1, positions, d], 1.0)),
    }];
    let init = TargetModelState::zeros(&ctx, 1, c, d);
    let out = learn(&ctx, &samples, &init, 200, 0.0, 1e-14).unwrap();
    let final_loss = *out.losses.last().unwrap();
    assert!(final_loss < 1e-8, "planted-solution residual {final_loss}");
    assert!(rel_frobenius(out.state.tau.value(), &tau_star) < 1e-4);
}

#[test]
fn unrolled_learn_gradient_matches_finite_differences() {
    // 2-iteration unroll, gradient of a scalar functional of tau w.r.t. the
    // labels, checked by central differences
    let mut rng = Rng::seed(9);
    let inst = RidgeInstance::random(2, 2, 6, 1, 0.1, &mut rng);
    let probe = Tensor::from_fn(&[1, 1, 2, 2], |_| rng.uniform(-1.0, 1.0));

    let eval_scalar = |labels: &Tensor| -> f64 {
        let ctx = Ctx::eval();
        let samples = vec![LearnerSample {
            feature: ctx.leaf(inst.features[0].clone()),
            label: ctx.leaf(labels.clone()),
            weight: ctx.leaf(inst.weights[0].clone()),
        }];
        let init = TargetModelState::zeros(&ctx, 1, 2, 2);
        let out = learn(&ctx, &samples, &init, 2, inst.lambda, 1e-12).unwrap();
        llb_core::par::dot(out.state.tau.value().data(), probe.data())
    };

    let ctx = Ctx::train();
    let label_var = ctx.leaf(inst.labels[0].clone());
    let samples = vec![LearnerSample {
        feature: ctx.leaf(inst.features[0].clone()),
        label: label_var.clone(),
        weight: ctx.leaf(inst.weights[0].clone()),
    }];
    let init = TargetModelState::zeros(&ctx, 1, 2, 2);
    let out = learn(&ctx, &samples, &init, 2, inst.lambda, 1e-12).unwrap();
    let scalar = ctx.dot(&out.state.tau, &ctx.constant(probe.clone()));
    let grads = ctx.backward(&scalar);
    let analytic = grads.of(&label_var);

    let h = 1e-5;
    let base = inst.labels[0].clone();
    let mut max_rel = 0.0f64;
    let scale = analytic.max_abs().max(1e-9);
    for i in 0..base.numel() {
        let mut plus = base.data().to_vec();
        let mut minus = base.data().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fd = (eval_scalar(&Tensor::from_vec(base.shape(), plus))
            - eval_scalar(&Tensor::from_vec(base.shape(), minus)))
            / (2.0 * h);
        max_rel = max_rel.max((analytic.at(i) - fd).abs() / scale);
    }
    assert!(max_rel < 1e-2, "unrolled label gradient rel err {max_rel}");
}
