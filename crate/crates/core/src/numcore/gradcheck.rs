/// Central-difference gradient of `f` at `point`.
pub fn central_difference<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + eps;
            let plus = f(&x);
            x[i] = point[i] - eps;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `max_i |a_i − n_i| / max(1, |a_i|, |n_i|)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of `f`.
///
/// `f` returns the value and the analytic gradient; only the value is used
/// at the perturbed points. `eps` is clamped into `[1e-8, 1e-3]`.
pub fn grad_check<F>(f: F, point: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let eps = eps.clamp(1e-8, 1e-3);
    let (_, analytic) = f(point);
    let numeric = central_difference(|x| f(x).0, point, eps);
    relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{cross_entropy, Matrix, Rng};

    #[test]
    fn quadratic() {
        let err = grad_check(|x| (x[0] * x[0], vec![2.0 * x[0]]), &[3.0], 1e-5);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function() {
        let numeric = central_difference(|_| 4.2, &[1.0, -2.0], 1e-5);
        assert_eq!(numeric, vec![0.0, 0.0]);
        assert_eq!(grad_check(|_| (4.2, vec![0.0, 0.0]), &[1.0, -2.0], 1e-5), 0.0);
    }

    #[test]
    fn cross_entropy_at_random_point() {
        let mut rng = Rng::new(11);
        let (b, k) = (4, 5);
        let logits: Vec<f64> = (0..b * k).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let mut targets = Matrix::zeros(b, k);
        for i in 0..b {
            targets[(i, rng.below(k))] = 1.0;
        }
        let weights: Vec<f64> = (0..b).map(|_| rng.uniform()).collect();
        let f = |x: &[f64]| {
            let ce = cross_entropy(&Matrix::from_vec(b, k, x.to_vec()).unwrap(), &targets, &weights).unwrap();
            (ce.loss, ce.grad.into_data())
        };
        assert!(grad_check(f, &logits, 1e-5) < 1e-6);
    }
}
