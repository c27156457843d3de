use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

use super::Dataset;

/// Isotropic unit-variance Gaussian classes with means on a sphere of radius
/// `separation`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Matrix,
}

impl GaussianMixture {
    /// Mean directions are standard-normal draws normalized to unit length.
    pub fn new(num_classes: usize, dim: usize, separation: f64, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {dim}")));
        }
        if !(separation >= 0.0) {
            return Err(Error::Config(format!("separation must be >= 0, got {separation}")));
        }
        let mut means = Matrix::zeros(num_classes, dim);
        for k in 0..num_classes {
            let row = means.row_mut(k);
            let mut norm = 0.0;
            while norm < 1e-12 {
                row.iter_mut().for_each(|v| *v = rng.normal());
                norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            row.iter_mut().for_each(|v| *v *= separation / norm);
        }
        Ok(Self { means })
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    /// Exactly `counts[k]` rows of class `k`, grouped by class, all labeled.
    pub fn sample(&self, counts: &[usize], rng: &mut Rng) -> Result<Dataset> {
        if counts.len() != self.num_classes() {
            return Err(Error::Shape {
                op: "GaussianMixture::sample",
                expected: format!("{} counts", self.num_classes()),
                got: format!("{} counts", counts.len()),
            });
        }
        let n: usize = counts.iter().sum();
        let dim = self.dim();
        let mut features = Matrix::zeros(n, dim);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                for (x, &mu) in features.row_mut(row).iter_mut().zip(self.means.row(k)) {
                    *x = mu + rng.normal();
                }
                labels.push(k);
                row += 1;
            }
        }
        Dataset::labeled(features, labels, self.num_classes())
    }
}

/// One-shot mixture: place means from `rng`, then sample `counts`.
pub fn synth_gaussian_mixture(
    num_classes: usize,
    dim: usize,
    separation: f64,
    counts: &[usize],
    rng: &mut Rng,
) -> Result<Dataset> {
    GaussianMixture::new(num_classes, dim, separation, rng)?.sample(counts, rng)
}
