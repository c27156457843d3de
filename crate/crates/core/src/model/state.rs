use serde::{Deserialize, Serialize};

use super::layers::{Dense, Mlp, MlpCache, Params};
use crate::error::{Error, Result};
use crate::numcore::{softmax_row, Matrix, Rng};

pub const DEFAULT_ATTRACTOR_HIDDEN: usize = 256;

/// How classifier logits are normalized before entering the attractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorNorm {
    #[default]
    SoftmaxInput,
    /// Row-wise L2 normalization; an all-zero row maps to zero.
    L2Input,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub input_dim: usize,
    /// Widths of the extractor's hidden layers; may be empty.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_attractor_hidden")]
    pub attractor_hidden: usize,
}

fn default_attractor_hidden() -> usize {
    DEFAULT_ATTRACTOR_HIDDEN
}

impl ModelDims {
    pub fn extractor_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend_from_slice(&self.hidden);
        s.push(self.feature_dim);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.extractor_sizes();
        if all.contains(&0) || self.attractor_hidden == 0 {
            return Err(Error::Config(format!("all model dimensions must be >= 1: {self:?}")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Parameters of the three networks plus EMA shadows of extractor and classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub dims: ModelDims,
    pub norm: AttractorNorm,
    /// Number of lower-level steps applied so far.
    pub step: u64,
    pub theta: Mlp,
    pub phi: Dense,
    pub omega: Mlp,
    pub ema_theta: Mlp,
    pub ema_phi: Dense,
}

/// Gradients with the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub theta: Mlp,
    pub phi: Dense,
    pub omega: Mlp,
}

impl ModelGrads {
    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            theta: state.theta.zeros_like(),
            phi: state.phi.zeros_like(),
            omega: state.omega.zeros_like(),
        }
    }

    pub fn add(&mut self, other: &ModelGrads) {
        self.theta.axpy(1.0, &other.theta);
        self.phi.axpy(1.0, &other.phi);
        self.omega.axpy(1.0, &other.omega);
    }
}

/// Intermediates of the biased training forward pass.
#[derive(Debug, Clone)]
pub struct TrainForward {
    /// `s + Δf(u)`.
    pub logits: Matrix,
    /// Features `z = f_θ(x)`.
    pub features: Matrix,
    /// Plain classifier logits `s = φ(z)`.
    pub class_logits: Matrix,
    /// Normalized, gradient-stopped attractor input.
    pub attractor_input: Matrix,
    pub extractor_cache: MlpCache,
    pub attractor_cache: MlpCache,
}

/// Glorot init for extractor, classifier, and attractor hidden layer; the
/// attractor output layer starts at zero so `Δf ≡ 0`.
pub fn init_model(dims: &ModelDims, norm: AttractorNorm, rng: &mut Rng) -> Result<ModelState> {
    dims.validate()?;
    let theta = Mlp::glorot(&dims.extractor_sizes(), rng);
    let phi = Dense::glorot(dims.feature_dim, dims.num_classes, rng);
    let hidden = Dense::glorot(dims.num_classes, dims.attractor_hidden, rng);
    let omega = Mlp {
        layers: vec![hidden, Dense::zeros(dims.attractor_hidden, dims.num_classes)],
    };
    Ok(ModelState {
        dims: dims.clone(),
        norm,
        step: 0,
        ema_theta: theta.clone(),
        ema_phi: phi.clone(),
        theta,
        phi,
        omega,
    })
}

pub fn normalize_attractor_input(class_logits: &Matrix, norm: AttractorNorm) -> Matrix {
    let mut u = class_logits.clone();
    for i in 0..u.rows() {
        let row = u.row_mut(i);
        match norm {
            AttractorNorm::SoftmaxInput => softmax_row(row),
            AttractorNorm::L2Input => {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    row.iter_mut().for_each(|v| *v /= n);
                } else {
                    row.fill(0.0);
                }
            }
        }
    }
    u
}

impl ModelState {
    pub fn num_classes(&self) -> usize {
        self.dims.num_classes
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dims.input_dim {
            return Err(Error::Shape {
                op: "model forward",
                expected: format!("{} input columns", self.dims.input_dim),
                got: format!("{} columns", x.cols()),
            });
        }
        Ok(())
    }

    pub fn forward_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.theta.forward(x)
    }

    /// Biased training path `s + Δf(stopgrad(normalize(s)))`.
    pub fn forward_train(&self, x: &Matrix) -> Result<TrainForward> {
        self.check_input(x)?;
        let (features, extractor_cache) = self.theta.forward_cached(x)?;
        let class_logits = self.phi.forward(&features)?;
        let attractor_input = normalize_attractor_input(&class_logits, self.norm);
        let (delta, attractor_cache) = self.omega.forward_cached(&attractor_input)?;
        let mut logits = class_logits.clone();
        logits.add_assign(&delta);
        Ok(TrainForward {
            logits,
            features,
            class_logits,
            attractor_input,
            extractor_cache,
            attractor_cache,
        })
    }

    /// Backpropagates `grad_logits` through a [`TrainForward`]. The attractor
    /// input is a constant here, so the classifier sees `grad_logits` unchanged.
    pub fn backward_train(&self, fwd: &TrainForward, grad_logits: &Matrix) -> Result<ModelGrads> {
        let (omega, _) = self.omega.backward(&fwd.attractor_cache, grad_logits, false)?;
        let phi = self.phi.param_grad(&fwd.features, grad_logits)?;
        let dz = self.phi.input_grad(grad_logits)?;
        let (theta, _) = self.theta.backward(&fwd.extractor_cache, &dz, false)?;
        Ok(ModelGrads { theta, phi, omega })
    }

    /// Test-time logits `φ(f_θ(x))`; the attractor is never read.
    pub fn forward_eval(&self, x: &Matrix, use_ema: bool) -> Result<Matrix> {
        self.check_input(x)?;
        let (theta, phi) = if use_ema {
            (&self.ema_theta, &self.ema_phi)
        } else {
            (&self.theta, &self.phi)
        };
        phi.forward(&theta.forward(x)?)
    }

    /// `shadow ← decay·shadow + (1−decay)·param` for extractor and classifier.
    pub fn ema_update(&mut self, decay: f64) {
        assert!((0.0..=1.0).contains(&decay), "EMA decay must lie in [0, 1]");
        fn blend<P: Params>(shadow: &mut P, param: &P, decay: f64) {
            let mut s = shadow.to_flat();
            for (sv, pv) in s.iter_mut().zip(param.to_flat()) {
                *sv = decay * *sv + (1.0 - decay) * pv;
            }
            shadow.set_flat(&s);
        }
        blend(&mut self.ema_theta, &self.theta, decay);
        blend(&mut self.ema_phi, &self.phi, decay);
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let k = self.dims.num_classes;
        let ok = self.theta.sizes() == self.dims.extractor_sizes()
            && self.ema_theta.sizes() == self.theta.sizes()
            && self.phi.input_dim() == self.dims.feature_dim
            && self.phi.output_dim() == k
            && self.ema_phi.weight.shape() == self.phi.weight.shape()
            && self.omega.sizes() == vec![k, self.dims.attractor_hidden, k]
            && self.theta.layers.iter().chain(&self.ema_theta.layers).chain(&self.omega.layers)
                .chain([&self.phi, &self.ema_phi])
                .all(|l| l.bias.len() == l.output_dim());
        if !ok {
            return Err(Error::Checkpoint("parameter shapes disagree with dims".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{cross_entropy, grad_check};

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden: vec![5],
            feature_dim: 4,
            num_classes: 3,
            attractor_hidden: 4,
        }
    }

    fn random_x(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).unwrap()
    }

    #[test]
    fn residual_identity_at_init() {
        let mut rng = Rng::new(1);
        let s = init_model(&dims(), AttractorNorm::SoftmaxInput, &mut rng).unwrap();
        let x = random_x(&mut rng, 6, 3);
        let train = s.forward_train(&x).unwrap();
        assert_eq!(train.logits, s.forward_eval(&x, false).unwrap());
        assert_eq!(train.logits, train.class_logits);
        assert_eq!(s.forward_eval(&x, true).unwrap(), s.forward_eval(&x, false).unwrap());
    }

    #[test]
    fn default_attractor_width() {
        let d: ModelDims = serde_json::from_str(
            r#"{"input_dim":2,"feature_dim":2,"num_classes":2}"#,
        )
        .unwrap();
        assert_eq!(d.attractor_hidden, 256);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&dims(), AttractorNorm::L2Input, &mut Rng::new(4)).unwrap();
        let b = init_model(&dims(), AttractorNorm::L2Input, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_ignores_attractor() {
        let mut rng = Rng::new(2);
        let mut s = init_model(&dims(), AttractorNorm::SoftmaxInput, &mut rng).unwrap();
        let x = random_x(&mut rng, 5, 3);
        let before = s.forward_eval(&x, false).unwrap();
        let noise: Vec<f64> = (0..s.omega.num_params()).map(|_| rng.normal() * 10.0).collect();
        s.omega.set_flat(&noise);
        assert_eq!(before, s.forward_eval(&x, false).unwrap());
        assert_ne!(s.forward_train(&x).unwrap().logits, before);
    }

    #[test]
    fn l2_norm_of_zero_row_is_zero() {
        let s = Matrix::from_rows(&[[0.0, 0.0, 0.0], [3.0, 0.0, 4.0]]);
        let u = normalize_attractor_input(&s, AttractorNorm::L2Input);
        assert_eq!(u.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(u.row(1), &[0.6, 0.0, 0.8]);
    }

    #[test]
    fn shape_mismatch() {
        let s = init_model(&dims(), AttractorNorm::SoftmaxInput, &mut Rng::new(0)).unwrap();
        assert!(s.forward_eval(&Matrix::zeros(2, 4), false).is_err());
        assert!(s.forward_train(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn ema_limits() {
        let mut rng = Rng::new(3);
        let mut s = init_model(&dims(), AttractorNorm::SoftmaxInput, &mut rng).unwrap();
        let shifted: Vec<f64> = s.phi.to_flat().iter().map(|v| v + 1.0).collect();
        s.phi.set_flat(&shifted);
        let old = s.ema_phi.clone();
        s.ema_update(1.0);
        assert_eq!(s.ema_phi, old);
        s.ema_update(0.0);
        assert_eq!(s.ema_phi, s.phi);
    }

    #[test]
    fn ema_geometric_recursion() {
        let mut s = init_model(&dims(), AttractorNorm::SoftmaxInput, &mut Rng::new(3)).unwrap();
        let n = s.phi.num_params();
        s.ema_phi.set_flat(&vec![0.0; n]);
        s.phi.set_flat(&vec![1.0; n]);
        s.ema_update(0.999);
        s.ema_update(0.999);
        for v in s.ema_phi.to_flat() {
            assert!((v - (1.0 - 0.999f64.powi(2))).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_sized_forward() {
        // d=2, K=2, H=2, identity extractor, all weights chosen by hand.
        let dims = ModelDims {
            input_dim: 2,
            hidden: vec![],
            feature_dim: 2,
            num_classes: 2,
            attractor_hidden: 2,
        };
        let mut s = init_model(&dims, AttractorNorm::L2Input, &mut Rng::new(0)).unwrap();
        s.theta.layers[0] = Dense {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        };
        s.phi = Dense {
            weight: Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]),
            bias: vec![0.5, 0.0],
        };
        s.omega.layers[0] = Dense {
            weight: Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]),
            bias: vec![0.0, -2.0],
        };
        s.omega.layers[1] = Dense {
            weight: Matrix::from_rows(&[[2.0, 1.0], [0.0, 3.0]]),
            bias: vec![0.1, 0.2],
        };
        // x = (1, 1): s = (1+2+0.5, −1) = (3.5, −1); ‖s‖ = sqrt(13.25)
        // u = s/‖s‖; h = relu(u₀, u₀+u₁−2) = (u₀, 0)
        // Δ = (2u₀ + 0.1, 0.2); logits = (3.5 + 2u₀ + 0.1, −1 + 0.2)
        let x = Matrix::from_rows(&[[1.0, 1.0]]);
        let out = s.forward_train(&x).unwrap();
        let u0 = 3.5 / 13.25f64.sqrt();
        assert!((out.logits[(0, 0)] - (3.6 + 2.0 * u0)).abs() < 1e-14);
        assert!((out.logits[(0, 1)] - (-0.8)).abs() < 1e-14);
    }

    #[test]
    fn stop_gradient_contract() {
        // With u frozen at its current value, the loss is a function of phi
        // only through s; finite differences must agree with backward_train.
        let mut rng = Rng::new(9);
        let mut s = init_model(&dims(), AttractorNorm::SoftmaxInput, &mut rng).unwrap();
        let omega: Vec<f64> = (0..s.omega.num_params()).map(|_| rng.normal()).collect();
        s.omega.set_flat(&omega);
        let x = random_x(&mut rng, 4, 3);
        let mut t = Matrix::zeros(4, 3);
        for i in 0..4 {
            t[(i, i % 3)] = 1.0;
        }
        let fwd = s.forward_train(&x).unwrap();
        let frozen_delta = s.omega.forward(&fwd.attractor_input).unwrap();
        let f = |p: &[f64]| {
            let mut phi = s.phi.clone();
            phi.set_flat(p);
            let mut logits = phi.forward(&fwd.features).unwrap();
            logits.add_assign(&frozen_delta);
            let ce = cross_entropy(&logits, &t, &[1.0; 4]).unwrap();
            let g = phi.param_grad(&fwd.features, &ce.grad).unwrap();
            (ce.loss, g.to_flat())
        };
        let ce = cross_entropy(&fwd.logits, &t, &[1.0; 4]).unwrap();
        let engine = s.backward_train(&fwd, &ce.grad).unwrap();
        let (_, frozen_grad) = f(&s.phi.to_flat());
        assert_eq!(engine.phi.to_flat(), frozen_grad);
        assert!(grad_check(f, &s.phi.to_flat(), 1e-6) < 1e-6);
    }
}
