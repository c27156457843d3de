use std::time::Instant;

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{Dense, MlpCache, Mlp, ModelGrads, ModelState, Params};
use crate::numcore::{cross_entropy, softmax_vjp_row, Matrix};
use crate::pseudo::PseudoBatch;

use super::Optimizer;

/// Inputs with one-hot targets.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub targets: Matrix,
}

impl LabeledBatch {
    pub fn new(x: Matrix, labels: &[usize], num_classes: usize) -> Self {
        assert_eq!(x.rows(), labels.len());
        let mut targets = Matrix::zeros(labels.len(), num_classes);
        for (i, &l) in labels.iter().enumerate() {
            targets[(i, l)] = 1.0;
        }
        Self { x, targets }
    }

    pub fn from_set(set: &LabeledSet, indices: &[usize]) -> Self {
        let labels: Vec<usize> = indices.iter().map(|&i| set.labels()[i]).collect();
        Self::new(set.features().select_rows(indices), &labels, set.num_classes())
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// Whether the training forward pass goes through the attractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractorPath {
    On,
    /// Logits are the plain classifier output and the attractor is never
    /// evaluated; its gradient is reported as zero.
    Off,
}

/// What the classifier gradient of one loss term needs to be differentiated
/// again with respect to `ω`.
#[derive(Debug, Clone)]
struct UnrollBlock {
    features: Matrix,
    probs: Matrix,
    /// `c_i` in `∂L/∂logits_i = c_i (p_i − t_i)`.
    coeffs: Vec<f64>,
    attractor: MlpCache,
}

#[derive(Debug, Clone)]
pub struct LowerLoss {
    pub loss: f64,
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub grads: ModelGrads,
    /// Wall-clock seconds spent in the backward passes.
    pub backward_secs: f64,
    blocks: Vec<UnrollBlock>,
}

/// The retained part of a lower step: enough to evaluate `∂φ'/∂ω`.
#[derive(Debug, Clone)]
pub struct UnrollCache {
    step: u64,
    alpha: f64,
    omega: Mlp,
    blocks: Vec<UnrollBlock>,
}

impl UnrollCache {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone)]
pub struct UpperLoss {
    pub loss: f64,
    /// `∂L_bal/∂φ` at the evaluated classifier.
    pub phi_grad: Dense,
}

struct Term {
    loss: f64,
    grads: ModelGrads,
    block: Option<UnrollBlock>,
    backward_secs: f64,
}

fn loss_term(state: &ModelState, x: &Matrix, targets: &Matrix, weights: &[f64], path: AttractorPath) -> Result<Term> {
    let batch = x.rows();
    match path {
        AttractorPath::On => {
            let fwd = state.forward_train(x)?;
            let ce = cross_entropy(&fwd.logits, targets, weights)?;
            let t0 = Instant::now();
            let grads = state.backward_train(&fwd, &ce.grad)?;
            let backward_secs = t0.elapsed().as_secs_f64();
            let coeffs = weights.iter().map(|&w| w / batch as f64).collect();
            Ok(Term {
                loss: ce.loss,
                grads,
                block: Some(UnrollBlock {
                    features: fwd.features,
                    probs: ce.probs,
                    coeffs,
                    attractor: fwd.attractor_cache,
                }),
                backward_secs,
            })
        }
        AttractorPath::Off => {
            let (features, ext_cache) = state.theta.forward_cached(x)?;
            let logits = state.phi.forward(&features)?;
            let ce = cross_entropy(&logits, targets, weights)?;
            let t0 = Instant::now();
            let phi = state.phi.param_grad(&features, &ce.grad)?;
            let dz = state.phi.input_grad(&ce.grad)?;
            let (theta, _) = state.theta.backward(&ext_cache, &dz, false)?;
            let backward_secs = t0.elapsed().as_secs_f64();
            Ok(Term {
                loss: ce.loss,
                grads: ModelGrads {
                    theta,
                    phi,
                    omega: state.omega.zeros_like(),
                },
                block: None,
                backward_secs,
            })
        }
    }
}

/// Biased training loss: mean labeled cross-entropy on `batch.x` plus the
/// mean over the unlabeled batch of `weight_i · H(x_strong_i, target_i)`.
pub fn lower_loss(batch: &LabeledBatch, pseudo: &PseudoBatch, state: &ModelState) -> Result<LowerLoss> {
    lower_loss_with(batch, pseudo, state, AttractorPath::On)
}

pub fn lower_loss_with(
    batch: &LabeledBatch,
    pseudo: &PseudoBatch,
    state: &ModelState,
    path: AttractorPath,
) -> Result<LowerLoss> {
    let ones = vec![1.0; batch.len()];
    let lab = loss_term(state, &batch.x, &batch.targets, &ones, path)?;
    let mut grads = lab.grads;
    let mut blocks: Vec<UnrollBlock> = lab.block.into_iter().collect();
    let mut backward_secs = lab.backward_secs;
    let mut unlabeled_loss = 0.0;
    if !pseudo.is_empty() {
        let unl = loss_term(state, &pseudo.x_strong, &pseudo.targets, &pseudo.weights, path)?;
        unlabeled_loss = unl.loss;
        grads.add(&unl.grads);
        blocks.extend(unl.block);
        backward_secs += unl.backward_secs;
    }
    Ok(LowerLoss {
        loss: lab.loss + unlabeled_loss,
        labeled_loss: lab.loss,
        unlabeled_loss,
        grads,
        backward_secs,
        blocks,
    })
}

/// The unlabeled term of the lower loss on its own.
pub fn unlabeled_term(pseudo: &PseudoBatch, state: &ModelState) -> Result<(f64, ModelGrads)> {
    if pseudo.is_empty() {
        return Ok((0.0, ModelGrads::zeros_like(state)));
    }
    let t = loss_term(state, &pseudo.x_strong, &pseudo.targets, &pseudo.weights, AttractorPath::On)?;
    Ok((t.loss, t.grads))
}

/// One lower-level step on `θ` and `φ`; `ω` is untouched.
///
/// Returns the cache that lets [`omega_step`] differentiate the classifier
/// update `φ' = φ − alpha·g_φ(ω)` with respect to `ω`. Under Adam the cache
/// still describes that plain gradient step, which is then a first-order
/// surrogate of the update actually applied.
pub fn lower_step(
    state: &mut ModelState,
    lower: LowerLoss,
    alpha: f64,
    theta_opt: &mut Optimizer,
    phi_opt: &mut Optimizer,
) -> UnrollCache {
    let omega = state.omega.clone();
    theta_opt.step(&mut state.theta, &lower.grads.theta, alpha);
    phi_opt.step(&mut state.phi, &lower.grads.phi, alpha);
    state.step += 1;
    UnrollCache {
        step: state.step,
        alpha,
        omega,
        blocks: lower.blocks,
    }
}

/// Mean cross-entropy of the plain network (no attractor) on a balanced batch.
pub fn upper_loss(balanced: &LabeledBatch, state: &ModelState) -> Result<UpperLoss> {
    let features = state.theta.forward(&balanced.x)?;
    let logits = state.phi.forward(&features)?;
    let ce = cross_entropy(&logits, &balanced.targets, &vec![1.0; balanced.len()])?;
    Ok(UpperLoss {
        loss: ce.loss,
        phi_grad: state.phi.param_grad(&features, &ce.grad)?,
    })
}

/// [`upper_loss`] with the extractor gradient as well.
pub fn upper_loss_full(balanced: &LabeledBatch, state: &ModelState) -> Result<(f64, Mlp, Dense)> {
    let (features, cache) = state.theta.forward_cached(&balanced.x)?;
    let logits = state.phi.forward(&features)?;
    let ce = cross_entropy(&logits, &balanced.targets, &vec![1.0; balanced.len()])?;
    let phi = state.phi.param_grad(&features, &ce.grad)?;
    let dz = state.phi.input_grad(&ce.grad)?;
    let (theta, _) = state.theta.backward(&cache, &dz, false)?;
    Ok((ce.loss, theta, phi))
}

/// `∇_ω L_bal = −alpha · (∂g_φ/∂ω)ᵀ v` with `v = ∂L_bal/∂φ` at `φ'`.
///
/// `⟨g_φ, v⟩ = Σ_i c_i ⟨p_i − t_i, r_i⟩` with `r_i = V_W z_i + v_b`, so its
/// derivative in the attractor output `Δ_i` is `c_i J_i r_i`
/// (`J_i` the softmax Jacobian). That is then pulled back through the
/// attractor with an ordinary backward pass.
pub fn omega_hypergradient(cache: &UnrollCache, upper_grad: &Dense) -> Result<Mlp> {
    let mut total = cache.omega.zeros_like();
    for block in &cache.blocks {
        let mut seed = block.features.matmul_nt(&upper_grad.weight)?;
        seed.add_row_vector(&upper_grad.bias);
        let mut jr = vec![0.0; seed.cols()];
        for i in 0..seed.rows() {
            let c = block.coeffs[i];
            let row = seed.row_mut(i);
            if c == 0.0 {
                row.fill(0.0);
                continue;
            }
            softmax_vjp_row(block.probs.row(i), row, &mut jr);
            for (o, &v) in row.iter_mut().zip(&jr) {
                *o = -cache.alpha * c * v;
            }
        }
        let (g, _) = cache.omega.backward(&block.attractor, &seed, false)?;
        total.axpy(1.0, &g);
    }
    Ok(total)
}

/// Moves `ω` by `−eta · ∇_ω L_bal` and returns the hypergradient.
///
/// Fails when `cache` does not come from the lower step that produced the
/// current model.
pub fn omega_step(state: &mut ModelState, cache: &UnrollCache, upper_grad: &Dense, eta: f64) -> Result<Mlp> {
    if cache.step != state.step {
        return Err(Error::StaleCache {
            cache_step: cache.step,
            model_step: state.step,
        });
    }
    let grad = omega_hypergradient(cache, upper_grad)?;
    state.omega.axpy(-eta, &grad);
    Ok(grad)
}
