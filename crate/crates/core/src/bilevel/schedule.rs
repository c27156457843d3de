use super::{Schedule, TrainConfig};

/// Learning rates `(alpha_t, eta_t)` for 1-based iteration `t`.
pub fn schedule_rates(config: &TrainConfig, t: u64) -> (f64, f64) {
    assert!(t >= 1, "iterations are counted from 1");
    match config.schedule {
        Schedule::Constant => (config.alpha, config.eta),
        Schedule::InverseDecay { c1, c2 } => (c1 / t as f64, c2 / (t as f64).sqrt()),
    }
}
