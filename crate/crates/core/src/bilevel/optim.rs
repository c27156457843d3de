use crate::model::Params;

use super::LowerOptimizer;

/// First-order update rule for one parameter block.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl Optimizer {
    pub fn new(kind: LowerOptimizer) -> Self {
        match kind {
            LowerOptimizer::Sgd => Optimizer::Sgd,
            LowerOptimizer::Adam { beta1, beta2, eps } => Optimizer::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn step<P: Params>(&mut self, params: &mut P, grad: &P, lr: f64) {
        match self {
            Optimizer::Sgd => params.axpy(-lr, grad),
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                let g = grad.to_flat();
                if m.is_empty() {
                    m.resize(g.len(), 0.0);
                    v.resize(g.len(), 0.0);
                }
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                let mut p = params.to_flat();
                for i in 0..g.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    p[i] -= lr * mhat / (vhat.sqrt() + *eps);
                }
                params.set_flat(&p);
            }
        }
    }
}
