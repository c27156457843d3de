use super::matrix::dot;
use super::Matrix;
use crate::error::{Error, Result};

/// Inputs to `ln` are clamped here so a vanishing probability yields a large
/// finite loss instead of `-inf`.
pub const LOG_FLOOR: f64 = 1e-300;

pub fn log_clamped(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Row softmax with max-subtraction.
pub fn softmax(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_finite() {
        return Err(Error::NonFiniteLogits);
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_row(out.row_mut(i));
    }
    Ok(out)
}

/// In-place softmax of one row. The caller guarantees finite input.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `J r` for the softmax Jacobian `J = diag(p) - p pᵀ` at probabilities `p`.
pub fn softmax_vjp_row(p: &[f64], r: &[f64], out: &mut [f64]) {
    let pr = dot(p, r);
    for ((o, &pk), &rk) in out.iter_mut().zip(p).zip(r) {
        *o = pk * (rk - pr);
    }
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Matrix,
    pub probs: Matrix,
}

/// Weighted mean cross-entropy over rows.
///
/// `loss = (1/B) Σ_i w_i · (−Σ_k t_ik ln p_ik)`, and the logit gradient of row
/// `i` is `w_i (p_i − t_i) / B`. Rows with zero weight get an exact `+0.0`
/// gradient.
pub fn cross_entropy(logits: &Matrix, targets: &Matrix, weights: &[f64]) -> Result<CrossEntropy> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "cross_entropy",
            expected: format!("{:?}", logits.shape()),
            got: format!("{:?}", targets.shape()),
        });
    }
    if weights.len() != logits.rows() {
        return Err(Error::Shape {
            op: "cross_entropy",
            expected: format!("{} weights", logits.rows()),
            got: format!("{} weights", weights.len()),
        });
    }
    for (row, t) in targets.iter_rows().enumerate() {
        let sum: f64 = t.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::TargetNotDistribution { row, sum });
        }
    }
    let probs = softmax(logits)?;
    let batch = logits.rows();
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate().take(batch) {
        if w == 0.0 {
            continue;
        }
        let p = probs.row(i);
        let t = targets.row(i);
        let mut h = 0.0;
        for (&pk, &tk) in p.iter().zip(t) {
            if tk != 0.0 {
                h -= tk * log_clamped(pk);
            }
        }
        total += w * h;
        for ((g, &pk), &tk) in grad.row_mut(i).iter_mut().zip(p).zip(t) {
            *g = w * (pk - tk) / batch as f64;
        }
    }
    let loss = if batch == 0 { 0.0 } else { total / batch as f64 };
    Ok(CrossEntropy { loss, grad, probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_cases() {
        let p = softmax(&Matrix::from_rows(&[[0.0, 0.0]])).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        let p = softmax(&Matrix::from_rows(&[[5.0, 5.0, 5.0]])).unwrap();
        for &v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_reference_values() {
        // exp(k-3)/Σ for k = 1,2,3, evaluated in an external calculator.
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        let p = softmax(&Matrix::from_rows(&[[1.0, 2.0, 3.0]])).unwrap();
        for (a, b) in p.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let err = softmax(&Matrix::from_rows(&[[f64::NAN, 0.0]])).unwrap_err();
        assert_eq!(err.to_string(), "non-finite logits");
        assert!(softmax(&Matrix::from_rows(&[[f64::INFINITY, 0.0]])).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let ce = cross_entropy(
            &Matrix::from_rows(&[[30.0, -30.0]]),
            &Matrix::from_rows(&[[1.0, 0.0]]),
            &[1.0],
        )
        .unwrap();
        assert!(ce.loss.abs() < 1e-9);
    }

    #[test]
    fn zero_weights_mask_everything() {
        let ce = cross_entropy(
            &Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]),
            &Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
            &[0.0, 0.0],
        )
        .unwrap();
        assert_eq!(ce.loss, 0.0);
        assert!(ce.grad.data().iter().all(|g| g.to_bits() == 0));
    }

    #[test]
    fn reference_loss_and_gradient() {
        // −ln softmax([1,2,3])_2 = ln(e^-2 + e^-1 + 1), computed externally.
        let ce = cross_entropy(
            &Matrix::from_rows(&[[1.0, 2.0, 3.0]]),
            &Matrix::from_rows(&[[0.0, 0.0, 1.0]]),
            &[1.0],
        )
        .unwrap();
        assert!((ce.loss - 0.4076059644443804).abs() < 1e-14);
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219 - 1.0];
        for (a, b) in ce.grad.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_distribution_targets() {
        let err = cross_entropy(
            &Matrix::from_rows(&[[1.0, 2.0]]),
            &Matrix::from_rows(&[[0.5, 0.6]]),
            &[1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::TargetNotDistribution { row: 0, .. }));
    }

    #[test]
    fn log_floor_keeps_loss_finite() {
        let ce = cross_entropy(
            &Matrix::from_rows(&[[800.0, -800.0]]),
            &Matrix::from_rows(&[[0.0, 1.0]]),
            &[1.0],
        )
        .unwrap();
        assert!(ce.loss.is_finite());
        assert!((ce.loss - (-LOG_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_vjp_matches_explicit_jacobian() {
        let p = [0.2, 0.3, 0.5];
        let r = [1.0, -2.0, 0.5];
        let mut out = [0.0; 3];
        softmax_vjp_row(&p, &r, &mut out);
        for k in 0..3 {
            let mut e = 0.0;
            for j in 0..3 {
                let jkj = if k == j { p[k] - p[k] * p[j] } else { -p[k] * p[j] };
                e += jkj * r[j];
            }
            assert!((out[k] - e).abs() < 1e-15);
        }
    }
}
