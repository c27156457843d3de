use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::data::{balanced_batch, uniform_batch, BalancedBatchSpec, LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{ModelState, Params};
use crate::numcore::{Matrix, Rng, Stream};
use crate::pseudo::{assign_pseudo_labels, augment, PseudoBatch};

use super::steps::{lower_loss_with, lower_step, omega_step, upper_loss, upper_loss_full, AttractorPath, LabeledBatch};
use super::{schedule_rates, Mode, Optimizer, PseudoSource, TrainConfig};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub iter: u64,
    pub alpha: f64,
    pub eta: f64,
    pub lower_loss: f64,
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    /// Balanced loss at the updated model; absent when the mode has no
    /// upper level.
    pub upper_loss: Option<f64>,
    pub theta_grad_norm: f64,
    pub phi_grad_norm: f64,
    pub omega_grad_norm: f64,
    /// Fraction of the unlabeled batch that passed the confidence mask.
    pub mask_rate: f64,
    #[serde(skip)]
    pub lower_backward_secs: f64,
    #[serde(skip)]
    pub second_order_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub traces: Vec<StepTrace>,
}

/// Sequential training loop over one labeled and one unlabeled set.
///
/// Every source of randomness has its own stream of `config.seed`, so the
/// mode, the evaluation cadence, and the balanced sampler never shift each
/// other's draws.
pub struct Trainer<'a> {
    config: TrainConfig,
    labeled: &'a LabeledSet,
    unlabeled: &'a UnlabeledSet,
    state: ModelState,
    theta_opt: Optimizer,
    phi_opt: Optimizer,
    omega_opt: Optimizer,
    labeled_rng: Rng,
    unlabeled_rng: Rng,
    balanced_rng: Rng,
    augment_rng: Rng,
    balanced_spec: BalancedBatchSpec,
    traces: Vec<StepTrace>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, state: ModelState, labeled: &'a LabeledSet, unlabeled: &'a UnlabeledSet) -> Result<Self> {
        let k = state.num_classes();
        config.validate(k)?;
        state.validate()?;
        if labeled.num_classes() != k {
            return Err(Error::Config(format!("model has {k} classes, labeled data {}", labeled.num_classes())));
        }
        if labeled.is_empty() {
            return Err(Error::Config("labeled set is empty".into()));
        }
        for x in [labeled.features(), unlabeled.features()] {
            if x.rows() > 0 && x.cols() != state.dims.input_dim {
                return Err(Error::Shape {
                    op: "train",
                    expected: format!("{} feature columns", state.dims.input_dim),
                    got: format!("{}", x.cols()),
                });
            }
        }
        if config.mode.uses_balanced_batch() {
            if let Some(c) = labeled.class_counts().iter().position(|&n| n == 0) {
                return Err(Error::EmptyClass(c));
            }
        }
        let seed = config.seed;
        Ok(Self {
            balanced_spec: BalancedBatchSpec::new(config.balanced_size(k), k)?,
            theta_opt: Optimizer::new(config.lower_optimizer),
            phi_opt: Optimizer::new(config.lower_optimizer),
            omega_opt: Optimizer::new(config.lower_optimizer),
            labeled_rng: Rng::for_stream(seed, Stream::LabeledBatch),
            unlabeled_rng: Rng::for_stream(seed, Stream::UnlabeledBatch),
            balanced_rng: Rng::for_stream(seed, Stream::BalancedBatch),
            augment_rng: Rng::for_stream(seed, Stream::Augment),
            config,
            labeled,
            unlabeled,
            state,
            traces: Vec::new(),
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn traces(&self) -> &[StepTrace] {
        &self.traces
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            state: self.state,
            traces: self.traces,
        }
    }

    fn pseudo_batch(&mut self) -> Result<PseudoBatch> {
        let k = self.state.num_classes();
        let idx = uniform_batch(self.unlabeled.len(), self.config.batch_unlabeled, &mut self.unlabeled_rng);
        let x = self.unlabeled.features().select_rows(&idx);
        if x.rows() == 0 {
            let d = self.state.dims.input_dim;
            return Ok(PseudoBatch {
                x_weak: Matrix::zeros(0, d),
                x_strong: Matrix::zeros(0, d),
                targets: Matrix::zeros(0, k),
                weights: Vec::new(),
            });
        }
        let (x_weak, x_strong) = augment(&x, self.config.sigma_weak, self.config.sigma_strong, &mut self.augment_rng)?;
        let biased = self.config.mode.uses_attractor() && self.config.pseudo_source == PseudoSource::Biased;
        let logits = if biased {
            self.state.forward_train(&x_weak)?.logits
        } else {
            self.state.phi.forward(&self.state.theta.forward(&x_weak)?)?
        };
        let (targets, weights) =
            assign_pseudo_labels(&logits, self.config.tau, self.config.lambda_u, self.config.pseudo_mode)?;
        Ok(PseudoBatch {
            x_weak,
            x_strong,
            targets,
            weights,
        })
    }

    /// Runs one iteration and returns its trace. Non-finite logits or
    /// losses abort with [`Error::Diverged`] carrying the trace so far.
    pub fn step(&mut self) -> Result<&StepTrace> {
        let iter = self.state.step + 1;
        match self.step_inner() {
            Ok(()) => Ok(self.traces.last().expect("just pushed")),
            Err(Error::NonFiniteLogits) => Err(Error::Diverged {
                iter,
                dump: trace_csv_string(&self.traces)?,
            }),
            Err(e) => Err(e),
        }
    }

    fn step_inner(&mut self) -> Result<()> {
        let t = self.state.step + 1;
        let (alpha, eta) = schedule_rates(&self.config, t);
        let idx = uniform_batch(self.labeled.len(), self.config.batch_labeled, &mut self.labeled_rng);
        let batch = LabeledBatch::from_set(self.labeled, &idx);
        let pseudo = self.pseudo_batch()?;
        let balanced = if self.config.mode.uses_balanced_batch() {
            let idx = balanced_batch(self.labeled, self.balanced_spec, &mut self.balanced_rng)?;
            Some(LabeledBatch::from_set(self.labeled, &idx))
        } else {
            None
        };

        let path = if self.config.mode.uses_attractor() {
            AttractorPath::On
        } else {
            AttractorPath::Off
        };
        let mut lower = lower_loss_with(&batch, &pseudo, &self.state, path)?;
        let lower_backward_secs = lower.backward_secs;
        let mut trace = StepTrace {
            iter: t,
            alpha,
            eta,
            lower_loss: lower.loss,
            labeled_loss: lower.labeled_loss,
            unlabeled_loss: lower.unlabeled_loss,
            upper_loss: None,
            theta_grad_norm: 0.0,
            phi_grad_norm: 0.0,
            omega_grad_norm: 0.0,
            mask_rate: if pseudo.is_empty() {
                0.0
            } else {
                pseudo.num_confident() as f64 / pseudo.len() as f64
            },
            lower_backward_secs,
            second_order_secs: 0.0,
        };

        match self.config.mode {
            Mode::Baseline => {
                self.record_lower_norms(&mut trace, &lower);
                lower_step(&mut self.state, lower, alpha, &mut self.theta_opt, &mut self.phi_opt);
            }
            Mode::PlainAttractor => {
                self.record_lower_norms(&mut trace, &lower);
                trace.omega_grad_norm = lower.grads.omega.norm();
                let g_omega = lower.grads.omega.clone();
                lower_step(&mut self.state, lower, alpha, &mut self.theta_opt, &mut self.phi_opt);
                self.omega_opt.step(&mut self.state.omega, &g_omega, alpha);
            }
            Mode::SingleLevel { lambda } => {
                let balanced = balanced.as_ref().expect("balanced batch sampled");
                let (upper, g_theta, g_phi) = upper_loss_full(balanced, &self.state)?;
                trace.upper_loss = Some(upper);
                lower.grads.theta.axpy(lambda, &g_theta);
                lower.grads.phi.axpy(lambda, &g_phi);
                self.record_lower_norms(&mut trace, &lower);
                trace.omega_grad_norm = lower.grads.omega.norm();
                let g_omega = lower.grads.omega.clone();
                lower_step(&mut self.state, lower, alpha, &mut self.theta_opt, &mut self.phi_opt);
                self.omega_opt.step(&mut self.state.omega, &g_omega, alpha);
            }
            Mode::L2ac => {
                self.record_lower_norms(&mut trace, &lower);
                let cache = lower_step(&mut self.state, lower, alpha, &mut self.theta_opt, &mut self.phi_opt);
                let balanced = balanced.as_ref().expect("balanced batch sampled");
                let upper = upper_loss(balanced, &self.state)?;
                trace.upper_loss = Some(upper.loss);
                let t0 = Instant::now();
                let g_omega = omega_step(&mut self.state, &cache, &upper.phi_grad, eta)?;
                trace.second_order_secs = t0.elapsed().as_secs_f64();
                trace.omega_grad_norm = g_omega.norm();
            }
        }
        self.state.ema_update(self.config.ema_decay);

        let finite = trace.lower_loss.is_finite() && trace.upper_loss.is_none_or(f64::is_finite);
        self.traces.push(trace);
        if !finite {
            return Err(Error::Diverged {
                iter: t,
                dump: trace_csv_string(&self.traces)?,
            });
        }
        Ok(())
    }

    fn record_lower_norms(&self, trace: &mut StepTrace, lower: &super::LowerLoss) {
        trace.theta_grad_norm = lower.grads.theta.norm();
        trace.phi_grad_norm = lower.grads.phi.norm();
    }
}

/// Runs `config.iters` iterations from `state`.
pub fn train(config: &TrainConfig, state: ModelState, labeled: &LabeledSet, unlabeled: &UnlabeledSet) -> Result<TrainOutcome> {
    train_with(config, state, labeled, unlabeled, |_, _| Ok(()))
}

/// [`train`] with a callback after every iteration, given the iteration
/// number and the updated model.
pub fn train_with<F>(
    config: &TrainConfig,
    state: ModelState,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    mut after_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(u64, &ModelState) -> Result<()>,
{
    let mut trainer = Trainer::new(config.clone(), state, labeled, unlabeled)?;
    for _ in 0..config.iters {
        let iter = trainer.step()?.iter;
        after_step(iter, trainer.state())?;
    }
    Ok(trainer.into_outcome())
}

fn trace_csv_string(traces: &[StepTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_traces(&mut w, traces)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_traces<W: std::io::Write>(w: &mut csv::Writer<W>, traces: &[StepTrace]) -> Result<()> {
    w.write_record([
        "iter",
        "alpha",
        "eta",
        "lower_loss",
        "labeled_loss",
        "unlabeled_loss",
        "upper_loss",
        "theta_grad_norm",
        "phi_grad_norm",
        "omega_grad_norm",
        "mask_rate",
    ])?;
    for t in traces {
        w.write_record([
            t.iter.to_string(),
            fmt(t.alpha),
            fmt(t.eta),
            fmt(t.lower_loss),
            fmt(t.labeled_loss),
            fmt(t.unlabeled_loss),
            t.upper_loss.map(fmt).unwrap_or_default(),
            fmt(t.theta_grad_norm),
            fmt(t.phi_grad_norm),
            fmt(t.omega_grad_norm),
            fmt(t.mask_rate),
        ])?;
    }
    Ok(())
}

/// Per-iteration losses and gradient norms. Contains no timings, so equal
/// runs give byte-equal files.
pub fn write_trace_csv(path: impl AsRef<Path>, traces: &[StepTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_traces(&mut w, traces)?;
    w.flush()?;
    Ok(())
}

/// Wall-clock seconds of the lower backward and the second-order step.
pub fn write_timings_csv(path: impl AsRef<Path>, traces: &[StepTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "lower_backward_secs", "second_order_secs"])?;
    for t in traces {
        w.write_record([t.iter.to_string(), fmt(t.lower_backward_secs), fmt(t.second_order_secs)])?;
    }
    w.flush()?;
    Ok(())
}
