use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::{Matrix, Rng};

/// A block of trainable parameters that can be viewed as a flat vector.
pub trait Params: Clone {
    fn num_params(&self) -> usize;
    fn to_flat(&self) -> Vec<f64>;
    /// Overwrites parameters from `flat`, consumed in `to_flat` order.
    fn set_flat(&mut self, flat: &[f64]);
    fn zeros_like(&self) -> Self;
    /// `self += a · other`.
    fn axpy(&mut self, a: f64, other: &Self);

    fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Affine layer `y = x Wᵀ + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        layer
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.uniform_in(-limit, limit));
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul_nt(&self.weight)?;
        y.add_row_vector(&self.bias);
        Ok(y)
    }

    /// Parameter gradient for upstream `grad_out` at input `x`.
    pub fn param_grad(&self, x: &Matrix, grad_out: &Matrix) -> Result<Dense> {
        Ok(Dense {
            weight: grad_out.matmul_tn(x)?,
            bias: grad_out.sum_rows(),
        })
    }

    /// Gradient with respect to the layer input.
    pub fn input_grad(&self, grad_out: &Matrix) -> Result<Matrix> {
        grad_out.matmul(&self.weight)
    }
}

impl Params for Dense {
    fn num_params(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weight.data().to_vec();
        v.extend_from_slice(&self.bias);
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let nw = self.weight.data().len();
        self.weight.data_mut().copy_from_slice(&flat[..nw]);
        let nb = self.bias.len();
        self.bias.copy_from_slice(&flat[nw..nw + nb]);
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.input_dim(), self.output_dim())
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for (w, o) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *w += a * o;
        }
        for (b, o) in self.bias.iter_mut().zip(&other.bias) {
            *b += a * o;
        }
    }
}

/// Rectifier network: ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Inputs seen by each layer during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
}

impl MlpCache {
    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

impl Mlp {
    /// Glorot-initialized network with layer widths `sizes[0] → … → sizes[L]`.
    pub fn glorot(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        Self {
            layers: sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::output_dim));
        s
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h)?;
            if l < last {
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Backpropagates `grad_out`; the input gradient is computed only when
    /// `want_input_grad` is set.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix, want_input_grad: bool) -> Result<(Mlp, Option<Matrix>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        let mut input_grad = None;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            grads.push(layer.param_grad(x, &g)?);
            if l > 0 {
                let mut dx = layer.input_grad(&g)?;
                // x = relu(pre), so relu'(pre) = 1 exactly where x > 0.
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                }
                g = dx;
            } else if want_input_grad {
                input_grad = Some(layer.input_grad(&g)?);
            }
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, input_grad))
    }
}

impl Params for Mlp {
    fn num_params(&self) -> usize {
        self.layers.iter().map(Params::num_params).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.to_flat()).collect()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.num_params();
            l.set_flat(&flat[at..at + n]);
            at += n;
        }
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Params::zeros_like).collect(),
        }
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.axpy(a, o);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;

    #[test]
    fn identity_layer_passes_input() {
        let layer = Dense {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let net = Mlp { layers: vec![layer] };
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn empty_batch() {
        let net = Mlp::glorot(&[3, 4, 2], &mut Rng::new(0));
        assert_eq!(net.forward(&Matrix::zeros(0, 3)).unwrap().shape(), (0, 2));
    }

    #[test]
    fn glorot_range() {
        let l = Dense::glorot(10, 6, &mut Rng::new(1));
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= lim));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let net = Mlp::glorot(&[3, 5, 4, 2], &mut rng);
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let r = Matrix::from_vec(4, 2, (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
        // f(params) = <net(x), r>, whose gradient is backward(r).
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.set_flat(p);
            let (y, cache) = n.forward_cached(&x).unwrap();
            let v: f64 = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
            (v, n.backward(&cache, &r, false).unwrap().0.to_flat())
        };
        assert!(grad_check(f, &net.to_flat(), 1e-6) < 1e-6);
        // Input Jacobian-vector product.
        let fx = |xv: &[f64]| {
            let xm = Matrix::from_vec(4, 3, xv.to_vec()).unwrap();
            let (y, cache) = net.forward_cached(&xm).unwrap();
            let v: f64 = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
            (v, net.backward(&cache, &r, true).unwrap().1.unwrap().into_data())
        };
        assert!(grad_check(fx, x.data(), 1e-6) < 1e-6);
    }

    #[test]
    fn flat_round_trip() {
        let mut net = Mlp::glorot(&[2, 3, 2], &mut Rng::new(3));
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.num_params());
        let mut other = net.zeros_like();
        other.set_flat(&flat);
        assert_eq!(other, net);
        net.axpy(-1.0, &other);
        assert!(net.to_flat().iter().all(|&v| v == 0.0));
    }
}
