//! Confidence-masked pseudo-labels and the two-view feature augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{softmax, Matrix, Rng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PseudoLabelMode {
    /// One-hot argmax labels.
    #[default]
    Hard,
    /// `p^(1/T)` renormalized per row.
    Sharpen { temperature: f64 },
}

/// Unlabeled batch ready for the lower-level loss.
#[derive(Debug, Clone)]
pub struct PseudoBatch {
    pub x_weak: Matrix,
    pub x_strong: Matrix,
    pub targets: Matrix,
    /// Per-row loss weight, `lambda_u` when confident and 0 otherwise.
    pub weights: Vec<f64>,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn num_confident(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Weak and strong views: `x` plus independent isotropic Gaussian noise at
/// the two scales.
pub fn augment(x: &Matrix, sigma_weak: f64, sigma_strong: f64, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    if !(0.0 <= sigma_weak && sigma_weak < sigma_strong) {
        return Err(Error::Config(format!(
            "need 0 <= sigma_weak < sigma_strong, got {sigma_weak} and {sigma_strong}"
        )));
    }
    let noisy = |sigma: f64, rng: &mut Rng| {
        let mut m = x.clone();
        if sigma > 0.0 {
            m.data_mut().iter_mut().for_each(|v| *v += sigma * rng.normal());
        }
        m
    };
    let weak = noisy(sigma_weak, rng);
    let strong = noisy(sigma_strong, rng);
    Ok((weak, strong))
}

/// Targets and mask weights from logits of the weak view.
///
/// A row gets weight `lambda_u` iff its max softmax probability is at least
/// `tau`. Hard targets take the argmax, ties to the lowest class index.
pub fn assign_pseudo_labels(
    logits_weak: &Matrix,
    tau: f64,
    lambda_u: f64,
    mode: PseudoLabelMode,
) -> Result<(Matrix, Vec<f64>)> {
    let probs = softmax(logits_weak)?;
    let mut targets = Matrix::zeros(probs.rows(), probs.cols());
    let mut weights = Vec::with_capacity(probs.rows());
    for (i, p) in probs.iter_rows().enumerate() {
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        weights.push(if p[best] >= tau { lambda_u } else { 0.0 });
        let t = targets.row_mut(i);
        match mode {
            PseudoLabelMode::Hard => t[best] = 1.0,
            PseudoLabelMode::Sharpen { temperature } => {
                if temperature == 1.0 {
                    t.copy_from_slice(p);
                } else {
                    // Work in log space: p^(1/T) underflows for small T.
                    let logs: Vec<f64> = p.iter().map(|&v| crate::numcore::log_clamped(v) / temperature).collect();
                    t.copy_from_slice(&logs);
                    crate::numcore::softmax_row(t);
                }
            }
        }
    }
    Ok((targets, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits_with_max_prob(p: f64) -> Matrix {
        // Two classes: softmax([ln p, ln(1−p)]) = [p, 1−p].
        Matrix::from_rows(&[[p.ln(), (1.0 - p).ln()]])
    }

    #[test]
    fn confident_row_kept() {
        let (t, w) = assign_pseudo_labels(&logits_with_max_prob(0.96), 0.95, 1.0, PseudoLabelMode::Hard).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(t.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn unconfident_row_masked() {
        let (_, w) = assign_pseudo_labels(&logits_with_max_prob(0.5), 0.95, 1.0, PseudoLabelMode::Hard).unwrap();
        assert_eq!(w, vec![0.0]);
    }

    #[test]
    fn unit_temperature_is_identity() {
        let l = Matrix::from_rows(&[[0.3, -1.0, 2.0]]);
        let (t, _) = assign_pseudo_labels(&l, 0.0, 1.0, PseudoLabelMode::Sharpen { temperature: 1.0 }).unwrap();
        assert_eq!(t, softmax(&l).unwrap());
    }

    #[test]
    fn low_temperature_approaches_one_hot() {
        let l = Matrix::from_rows(&[[2.0, 0.5, 1.0]]);
        let (t, _) = assign_pseudo_labels(&l, 0.0, 1.0, PseudoLabelMode::Sharpen { temperature: 0.01 }).unwrap();
        assert!(t[(0, 0)] >= 0.999);
        assert!((t.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ties_go_low() {
        let (t, _) = assign_pseudo_labels(&Matrix::from_rows(&[[1.0, 1.0]]), 0.0, 1.0, PseudoLabelMode::Hard).unwrap();
        assert_eq!(t.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn zero_weak_noise_keeps_input() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let (w, s) = augment(&x, 0.0, 0.5, &mut Rng::new(0)).unwrap();
        assert_eq!(w, x);
        assert_ne!(s, x);
        assert!(augment(&x, 0.5, 0.5, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn augment_is_deterministic() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let a = augment(&x, 0.1, 0.5, &mut Rng::new(3)).unwrap();
        let b = augment(&x, 0.1, 0.5, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strong_noise_scale() {
        let n = 10_000;
        let x = Matrix::zeros(n, 2);
        let (_, s) = augment(&x, 0.1, 0.7, &mut Rng::new(12)).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| s[(i, j)]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var.sqrt() / 0.7 - 1.0).abs() < 0.03);
        }
    }
}
