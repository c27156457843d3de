//! Explicit-Jacobian form of the attractor hypergradient.
//!
//! Everything here is built from dense per-sample Jacobians rather than
//! backward passes, so it serves as an independent reference for
//! [`omega_hypergradient`](super::omega_hypergradient).

use crate::error::Result;
use crate::model::{Mlp, ModelState, Params};
use crate::numcore::{softmax, Matrix};
use crate::pseudo::PseudoBatch;

use super::steps::{lower_loss, upper_loss, LabeledBatch};

/// `∂Δf(u)/∂ω` as a K×|ω| matrix, columns in `Mlp::to_flat` order
/// (W1, b1, W2, b2). Requires a one-hidden-layer attractor.
pub fn attractor_jacobian(omega: &Mlp, u: &[f64]) -> Matrix {
    assert_eq!(omega.layers.len(), 2, "attractor must have exactly one hidden layer");
    let (l1, l2) = (&omega.layers[0], &omega.layers[1]);
    let k = l1.input_dim();
    let h = l1.output_dim();
    assert_eq!(u.len(), k);
    let pre: Vec<f64> = (0..h)
        .map(|j| l1.bias[j] + (0..k).map(|l| l1.weight[(j, l)] * u[l]).sum::<f64>())
        .collect();
    let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();

    let b1_at = h * k;
    let w2_at = b1_at + h;
    let b2_at = w2_at + k * h;
    let mut jac = Matrix::zeros(k, omega.num_params());
    for out in 0..k {
        for j in 0..h {
            jac[(out, w2_at + out * h + j)] = act[j];
            if pre[j] > 0.0 {
                let w = l2.weight[(out, j)];
                jac[(out, b1_at + j)] = w;
                for l in 0..k {
                    jac[(out, j * k + l)] = w * u[l];
                }
            }
        }
        jac[(out, b2_at + out)] = 1.0;
    }
    jac
}

/// `∂p/∂φ` for `p = softmax(z Wᵀ + b + c)` with `c` constant, as a
/// K×|φ| matrix in `Dense::to_flat` order.
fn classifier_jacobian(p: &[f64], z: &[f64]) -> Matrix {
    let k = p.len();
    let f = z.len();
    let mut jac = Matrix::zeros(k, k * f + k);
    for a in 0..k {
        for c in 0..k {
            let d = if a == c { p[a] * (1.0 - p[a]) } else { -p[a] * p[c] };
            for l in 0..f {
                jac[(a, c * f + l)] = d * z[l];
            }
            jac[(a, k * f + c)] = d;
        }
    }
    jac
}

/// Attractor gradient of the balanced loss after one SGD lower step,
/// assembled as `−alpha · Σ_i c_i (∂Δf_i/∂ω)ᵀ G_i`.
///
/// `G_i = (∂p_i/∂φ) v` where `v` is the balanced-batch classifier gradient
/// at the updated parameters, and `c_i` is the sample's weight in the lower
/// loss (`1/n` labeled, `λ_i/m` unlabeled). Taking `ω ← ω − η·(result)`
/// is the update `Δω = +η·α·Σ_i c_i G_i ∂Δf_i/∂ω`.
pub fn omega_grad_closed_form(
    batch: &LabeledBatch,
    pseudo: &PseudoBatch,
    balanced: &LabeledBatch,
    state: &ModelState,
    alpha: f64,
) -> Result<Mlp> {
    let lower = lower_loss(batch, pseudo, state)?;
    let mut next = state.clone();
    next.theta.axpy(-alpha, &lower.grads.theta);
    next.phi.axpy(-alpha, &lower.grads.phi);
    let v = upper_loss(balanced, &next)?.phi_grad.to_flat();

    let mut acc = vec![0.0; state.omega.num_params()];
    let mut accumulate = |x: &Matrix, weights: &[f64]| -> Result<()> {
        if x.rows() == 0 {
            return Ok(());
        }
        let z = state.theta.forward(x)?;
        let s = state.phi.forward(&z)?;
        let fwd = state.forward_train(x)?;
        let p = softmax(&fwd.logits)?;
        let n = x.rows() as f64;
        for (i, &w) in weights.iter().enumerate() {
            let c = w / n;
            if c == 0.0 {
                continue;
            }
            let jp = classifier_jacobian(p.row(i), z.row(i));
            let g: Vec<f64> = jp.iter_rows().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let u = crate::model::normalize_attractor_input(&Matrix::from_rows(&[s.row(i)]), state.norm);
            let jd = attractor_jacobian(&state.omega, u.row(0));
            for (out, gk) in g.iter().enumerate() {
                for (a, &d) in acc.iter_mut().zip(jd.row(out)) {
                    *a += c * gk * d;
                }
            }
        }
        Ok(())
    };
    accumulate(&batch.x, &vec![1.0; batch.len()])?;
    accumulate(&pseudo.x_strong, &pseudo.weights)?;

    let mut grad = state.omega.zeros_like();
    grad.set_flat(&acc.iter().map(|a| -alpha * a).collect::<Vec<_>>());
    Ok(grad)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::central_difference;
    use crate::model::Dense;
    use crate::numcore::Rng;

    #[test]
    fn attractor_jacobian_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let omega = Mlp::glorot(&[3, 4, 3], &mut rng);
        let u = [0.2, 0.5, 0.3];
        let jac = attractor_jacobian(&omega, &u);
        for out in 0..3 {
            let numeric = central_difference(
                |w| {
                    let mut o = omega.clone();
                    o.set_flat(w);
                    o.forward(&Matrix::from_rows(&[u])).unwrap()[(0, out)]
                },
                &omega.to_flat(),
                1e-6,
            );
            for (a, n) in jac.row(out).iter().zip(&numeric) {
                assert!((a - n).abs() < 1e-8, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn classifier_jacobian_matches_finite_differences() {
        let z = [0.7, -1.2];
        let mut rng = Rng::new(2);
        let phi = Dense::glorot(2, 3, &mut rng);
        let probs = |d: &Dense| softmax(&d.forward(&Matrix::from_rows(&[z])).unwrap()).unwrap();
        let jac = classifier_jacobian(probs(&phi).row(0), &z);
        for a in 0..3 {
            let numeric = central_difference(
                |w| {
                    let mut d = phi.clone();
                    d.set_flat(w);
                    probs(&d)[(0, a)]
                },
                &phi.to_flat(),
                1e-6,
            );
            for (x, n) in jac.row(a).iter().zip(&numeric) {
                assert!((x - n).abs() < 1e-9);
            }
        }
    }
}
