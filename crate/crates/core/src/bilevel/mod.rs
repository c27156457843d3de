//! The bi-level training engine.
//!
//! Each iteration takes a lower-level step on `(θ, φ)` against the biased
//! training loss, keeps enough of that step to differentiate `φ'` with
//! respect to `ω`, and then moves `ω` down the gradient of a class-balanced
//! loss evaluated at `(θ', φ')`. Only the classifier's gradient is unrolled;
//! `θ'` is treated as independent of `ω`.

mod closed_form;
mod config;
mod optim;
mod schedule;
mod steps;
mod trainer;

pub use closed_form::{attractor_jacobian, omega_grad_closed_form};
pub use config::{LowerOptimizer, Mode, PseudoSource, Schedule, TrainConfig};
pub use optim::Optimizer;
pub use schedule::schedule_rates;
pub use steps::{
    lower_loss, lower_loss_with, lower_step, omega_hypergradient, omega_step, unlabeled_term, upper_loss,
    upper_loss_full, AttractorPath, LabeledBatch, LowerLoss, UnrollCache, UpperLoss,
};
pub use trainer::{train, train_with, write_timings_csv, write_trace_csv, StepTrace, TrainOutcome, Trainer};
