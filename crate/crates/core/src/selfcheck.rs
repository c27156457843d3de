//! Executable invariants of the training engine.
//!
//! Every check builds small random instances from a seed, so a failure is
//! reproducible from its name and seed alone.

use std::fmt;

use crate::bilevel::{
    lower_loss, lower_step, omega_grad_closed_form, omega_hypergradient, omega_step, unlabeled_term, upper_loss,
    LabeledBatch, Optimizer,
};
use crate::error::Result;
use crate::model::{init_model, normalize_attractor_input, AttractorNorm, Dense, Mlp, ModelDims, ModelState, Params};
use crate::numcore::{central_difference, cross_entropy, relative_error, Matrix, Rng};
use crate::pseudo::{assign_pseudo_labels, PseudoBatch, PseudoLabelMode};

/// `max |a − b| / max(max |a|, max |b|)`, and 0 when both are zero.
pub fn scaled_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// A small model with one step's worth of batches.
#[derive(Debug, Clone)]
pub struct Instance {
    pub state: ModelState,
    pub batch: LabeledBatch,
    pub pseudo: PseudoBatch,
    pub balanced: LabeledBatch,
    pub alpha: f64,
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("sizes agree")
}

fn random_one_hot(rows: usize, k: usize, rng: &mut Rng) -> (Vec<usize>, Matrix) {
    let labels: Vec<usize> = (0..rows).map(|_| rng.below(k)).collect();
    let mut t = Matrix::zeros(rows, k);
    for (i, &l) in labels.iter().enumerate() {
        t[(i, l)] = 1.0;
    }
    (labels, t)
}

/// Random instance with input dim, classes, attractor width, and batch
/// sizes all at most 4, 4, 4, and 6. The attractor starts from random
/// weights everywhere so every block of its Jacobian is exercised.
pub fn random_instance(rng: &mut Rng) -> Instance {
    let k = 2 + rng.below(3);
    let d = 1 + rng.below(4);
    let dims = ModelDims {
        input_dim: d,
        hidden: if rng.below(2) == 0 { vec![] } else { vec![1 + rng.below(4)] },
        feature_dim: 1 + rng.below(4),
        num_classes: k,
        attractor_hidden: 1 + rng.below(4),
    };
    let norm = if rng.below(2) == 0 {
        AttractorNorm::SoftmaxInput
    } else {
        AttractorNorm::L2Input
    };
    let mut state = init_model(&dims, norm, rng).expect("valid dims");
    state.omega = Mlp::glorot(&[k, dims.attractor_hidden, k], rng);
    state.omega.layers[1].bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
    state.phi.bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());

    let n = 1 + rng.below(6);
    let (labels, _) = random_one_hot(n, k, rng);
    let batch = LabeledBatch::new(random_matrix(n, d, 1.0, rng), &labels, k);

    let m = rng.below(7);
    let x_weak = random_matrix(m, d, 1.0, rng);
    let x_strong = random_matrix(m, d, 1.0, rng);
    let (_, targets) = random_one_hot(m, k, rng);
    let weights = (0..m).map(|_| if rng.below(3) == 0 { 0.0 } else { 0.5 + rng.uniform() }).collect();
    let pseudo = PseudoBatch {
        x_weak,
        x_strong,
        targets,
        weights,
    };

    let per = 1 + rng.below(2);
    let bal_labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, per)).collect();
    let balanced = LabeledBatch::new(random_matrix(k * per, d, 1.0, rng), &bal_labels, k);

    Instance {
        state,
        batch,
        pseudo,
        balanced,
        alpha: rng.uniform_in(0.05, 0.5),
    }
}

/// The attractor hypergradient through the production path: lower step,
/// upper loss at the updated model, backward-on-backward.
pub fn unrolled_omega_grad(inst: &Instance) -> Result<Mlp> {
    let mut state = inst.state.clone();
    let lower = lower_loss(&inst.batch, &inst.pseudo, &state)?;
    let cache = lower_step(&mut state, lower, inst.alpha, &mut Optimizer::Sgd, &mut Optimizer::Sgd);
    let upper = upper_loss(&inst.balanced, &state)?;
    omega_hypergradient(&cache, &upper.phi_grad)
}

/// Disagreement between the unrolled and the explicit-Jacobian gradient.
pub fn closed_form_error(inst: &Instance) -> Result<f64> {
    let unrolled = unrolled_omega_grad(inst)?;
    let closed = omega_grad_closed_form(&inst.batch, &inst.pseudo, &inst.balanced, &inst.state, inst.alpha)?;
    Ok(scaled_error(&unrolled.to_flat(), &closed.to_flat()))
}

/// Central differences of `ω ↦ L_bal(θ', φ − α·g_φ(ω))` against the
/// unrolled gradient, with `θ'` held at its value for the unperturbed `ω`.
pub fn composite_fd_error(inst: &Instance) -> Result<f64> {
    let analytic = unrolled_omega_grad(inst)?.to_flat();
    let base = lower_loss(&inst.batch, &inst.pseudo, &inst.state)?;
    let mut theta_next = inst.state.theta.clone();
    theta_next.axpy(-inst.alpha, &base.grads.theta);
    let numeric = central_difference(
        |w| {
            let mut s = inst.state.clone();
            s.omega.set_flat(w);
            let g = lower_loss(&inst.batch, &inst.pseudo, &s).expect("finite instance").grads.phi;
            s.theta = theta_next.clone();
            s.phi.axpy(-inst.alpha, &g);
            upper_loss(&inst.balanced, &s).expect("finite instance").loss
        },
        &inst.state.omega.to_flat(),
        1e-5,
    );
    Ok(scaled_error(&analytic, &numeric))
}

/// The lower loss with the attractor inputs frozen at their values for the
/// current model, which is the function the analytic gradients describe.
fn frozen_lower_loss(inst: &Instance, state: &ModelState, frozen: &[Matrix; 2]) -> f64 {
    let term = |x: &Matrix, targets: &Matrix, weights: &[f64], u: &Matrix| -> f64 {
        if x.rows() == 0 {
            return 0.0;
        }
        let z = state.theta.forward(x).expect("shapes");
        let mut logits = state.phi.forward(&z).expect("shapes");
        logits.add_assign(&state.omega.forward(u).expect("shapes"));
        cross_entropy(&logits, targets, weights).expect("finite").loss
    };
    term(&inst.batch.x, &inst.batch.targets, &vec![1.0; inst.batch.len()], &frozen[0])
        + term(&inst.pseudo.x_strong, &inst.pseudo.targets, &inst.pseudo.weights, &frozen[1])
}

fn attractor_input(state: &ModelState, x: &Matrix) -> Matrix {
    let s = state.phi.forward(&state.theta.forward(x).expect("shapes")).expect("shapes");
    normalize_attractor_input(&s, state.norm)
}

/// Relative error of the lower-loss gradients per block `(θ, φ, ω)`.
pub fn lower_grad_fd_errors(inst: &Instance) -> Result<[f64; 3]> {
    let grads = lower_loss(&inst.batch, &inst.pseudo, &inst.state)?.grads;
    let frozen = [
        attractor_input(&inst.state, &inst.batch.x),
        attractor_input(&inst.state, &inst.pseudo.x_strong),
    ];
    let eps = 1e-6;
    let theta = central_difference(
        |w| {
            let mut s = inst.state.clone();
            s.theta.set_flat(w);
            frozen_lower_loss(inst, &s, &frozen)
        },
        &inst.state.theta.to_flat(),
        eps,
    );
    let phi = central_difference(
        |w| {
            let mut s = inst.state.clone();
            s.phi.set_flat(w);
            frozen_lower_loss(inst, &s, &frozen)
        },
        &inst.state.phi.to_flat(),
        eps,
    );
    let omega = central_difference(
        |w| {
            let mut s = inst.state.clone();
            s.omega.set_flat(w);
            frozen_lower_loss(inst, &s, &frozen)
        },
        &inst.state.omega.to_flat(),
        eps,
    );
    Ok([
        relative_error(&grads.theta.to_flat(), &theta),
        relative_error(&grads.phi.to_flat(), &phi),
        relative_error(&grads.omega.to_flat(), &omega),
    ])
}

/// Relative error of the balanced-loss classifier gradient.
pub fn upper_grad_fd_error(inst: &Instance) -> Result<f64> {
    let analytic = upper_loss(&inst.balanced, &inst.state)?.phi_grad.to_flat();
    let numeric = central_difference(
        |w| {
            let mut s = inst.state.clone();
            s.phi.set_flat(w);
            upper_loss(&inst.balanced, &s).expect("finite").loss
        },
        &inst.state.phi.to_flat(),
        1e-6,
    );
    Ok(relative_error(&analytic, &numeric))
}

/// Relative error of the weighted cross-entropy logit gradient.
pub fn cross_entropy_fd_error(rng: &mut Rng) -> Result<f64> {
    let rows = 1 + rng.below(6);
    let k = 2 + rng.below(4);
    let logits = random_matrix(rows, k, 2.0, rng);
    let mut targets = random_matrix(rows, k, 1.0, rng).map(f64::exp);
    for i in 0..rows {
        let sum: f64 = targets.row(i).iter().sum();
        targets.row_mut(i).iter_mut().for_each(|v| *v /= sum);
    }
    let weights: Vec<f64> = (0..rows).map(|_| rng.uniform()).collect();
    let analytic = cross_entropy(&logits, &targets, &weights)?.grad;
    let numeric = central_difference(
        |w| {
            let l = Matrix::from_vec(rows, k, w.to_vec()).expect("sizes");
            cross_entropy(&l, &targets, &weights).expect("finite").loss
        },
        logits.data(),
        1e-6,
    );
    Ok(relative_error(analytic.data(), &numeric))
}

/// Makes every unlabeled row fall below `tau` and returns whether the
/// unlabeled term's gradients are all `+0.0` and the lower loss equals the
/// labeled term exactly.
pub fn masked_batch_is_inert(inst: &Instance) -> Result<bool> {
    let mut inst = inst.clone();
    if inst.pseudo.is_empty() {
        return Ok(true);
    }
    let logits = inst.state.forward_train(&inst.pseudo.x_weak)?.logits;
    let (targets, weights) = assign_pseudo_labels(&logits, 1.0 + f64::EPSILON, 1.0, PseudoLabelMode::Hard)?;
    inst.pseudo.targets = targets;
    inst.pseudo.weights = weights;
    let (loss, grads) = unlabeled_term(&inst.pseudo, &inst.state)?;
    let zero = |p: Vec<f64>| p.iter().all(|v| v.to_bits() == 0);
    let inert = loss == 0.0 && zero(grads.theta.to_flat()) && zero(grads.phi.to_flat()) && zero(grads.omega.to_flat());

    let full = lower_loss(&inst.batch, &inst.pseudo, &inst.state)?;
    let empty = PseudoBatch {
        x_weak: Matrix::zeros(0, inst.state.dims.input_dim),
        x_strong: Matrix::zeros(0, inst.state.dims.input_dim),
        targets: Matrix::zeros(0, inst.state.num_classes()),
        weights: vec![],
    };
    let labeled_only = lower_loss(&inst.batch, &empty, &inst.state)?;
    Ok(inert && full.loss == labeled_only.loss && full.grads == labeled_only.grads)
}

/// With the attractor output layer zeroed, training and test logits agree
/// exactly; perturbing `ω` leaves test logits unchanged; an `ω` step leaves
/// `θ` and `φ` bitwise unchanged.
pub fn residual_identities_hold(inst: &Instance, rng: &mut Rng) -> Result<bool> {
    let mut state = inst.state.clone();
    let out = state.omega.layers.len() - 1;
    state.omega.layers[out] = Dense::zeros(state.omega.layers[out].input_dim(), state.num_classes());
    let x = &inst.batch.x;
    let same_at_zero = state.forward_train(x)?.logits == state.forward_eval(x, false)?;

    let before = state.forward_eval(x, false)?;
    let before_ema = state.forward_eval(x, true)?;
    let mut flat = state.omega.to_flat();
    flat.iter_mut().for_each(|v| *v += rng.normal());
    state.omega.set_flat(&flat);
    let eval_untouched = state.forward_eval(x, false)? == before && state.forward_eval(x, true)? == before_ema;

    let mut s = inst.state.clone();
    let lower = lower_loss(&inst.batch, &inst.pseudo, &s)?;
    let cache = lower_step(&mut s, lower, inst.alpha, &mut Optimizer::Sgd, &mut Optimizer::Sgd);
    let upper = upper_loss(&inst.balanced, &s)?;
    let (theta, phi) = (s.theta.clone(), s.phi.clone());
    omega_step(&mut s, &cache, &upper.phi_grad, 1.0)?;
    let isolated = s.theta == theta && s.phi == phi;
    Ok(same_at_zero && eval_untouched && isolated)
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn worst<F: FnMut(&mut Rng) -> Result<f64>>(seed: u64, trials: usize, mut f: F) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut w = 0.0f64;
    for _ in 0..trials {
        w = w.max(f(&mut rng)?);
    }
    Ok(w)
}

fn tolerance_check(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: err <= tol,
        detail: format!("worst error {err:.3e} (tolerance {tol:.0e})"),
    }
}

/// Runs the whole invariant suite from `seed`.
pub fn run_all(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        tolerance_check("cross-entropy gradient", worst(seed, trials, cross_entropy_fd_error)?, 1e-5),
    ];
    let mut lower = [0.0f64; 3];
    let mut rng = Rng::new(seed);
    for _ in 0..trials {
        let e = lower_grad_fd_errors(&random_instance(&mut rng))?;
        for (w, v) in lower.iter_mut().zip(e) {
            *w = w.max(v);
        }
    }
    out.push(tolerance_check("extractor gradient", lower[0], 1e-5));
    out.push(tolerance_check("classifier gradient", lower[1], 1e-5));
    out.push(tolerance_check("attractor gradient", lower[2], 1e-5));
    out.push(tolerance_check(
        "balanced-loss gradient",
        worst(seed, trials, |r| upper_grad_fd_error(&random_instance(r)))?,
        1e-5,
    ));
    out.push(tolerance_check(
        "hypergradient vs finite differences",
        worst(seed, trials, |r| composite_fd_error(&random_instance(r)))?,
        1e-5,
    ));
    out.push(tolerance_check(
        "hypergradient vs closed form",
        worst(seed, trials.max(100), |r| closed_form_error(&random_instance(r)))?,
        1e-6,
    ));

    let mut rng = Rng::new(seed);
    let mut masked = true;
    let mut residual = true;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        masked &= masked_batch_is_inert(&inst)?;
        residual &= residual_identities_hold(&inst, &mut rng)?;
    }
    out.push(CheckResult {
        name: "masked rows are inert",
        passed: masked,
        detail: format!("{trials} instances"),
    });
    out.push(CheckResult {
        name: "residual identities",
        passed: residual,
        detail: format!("{trials} instances"),
    });
    Ok(out)
}
