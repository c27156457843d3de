use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudo::PseudoLabelMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    /// Bi-level: `ω` follows the hypergradient of the balanced loss.
    L2ac,
    /// Plain pseudo-labeling; the attractor is never evaluated.
    Baseline,
    /// `(θ, φ, ω)` trained jointly on the biased training loss alone.
    PlainAttractor,
    /// `(θ, φ, ω)` trained jointly on `L + lambda · L_bal`.
    SingleLevel { lambda: f64 },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::L2ac => "l2ac",
            Mode::Baseline => "baseline",
            Mode::PlainAttractor => "plain_attractor",
            Mode::SingleLevel { .. } => "single_level",
        }
    }

    pub fn uses_attractor(&self) -> bool {
        !matches!(self, Mode::Baseline)
    }

    pub fn uses_balanced_batch(&self) -> bool {
        matches!(self, Mode::L2ac | Mode::SingleLevel { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Constant,
    /// `alpha_t = c1 / t`, `eta_t = c2 / sqrt(t)`.
    InverseDecay { c1: f64, c2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LowerOptimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl LowerOptimizer {
    pub fn adam() -> Self {
        LowerOptimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which logits produce pseudo-labels for the weak view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoSource {
    /// The attractor-augmented training path.
    #[default]
    Biased,
    /// The plain classifier, as used at test time.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Lower-level learning rate.
    pub alpha: f64,
    /// Attractor learning rate.
    pub eta: f64,
    pub tau: f64,
    pub lambda_u: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Size of the class-balanced batch; `None` means the largest multiple
    /// of K not above `batch_labeled`.
    pub batch_balanced: Option<usize>,
    pub iters: u64,
    pub ema_decay: f64,
    pub mode: Mode,
    pub schedule: Schedule,
    pub lower_optimizer: LowerOptimizer,
    pub pseudo_mode: PseudoLabelMode,
    pub pseudo_source: PseudoSource,
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 2e-3,
            eta: 1e-4,
            tau: 0.95,
            lambda_u: 1.0,
            batch_labeled: 64,
            batch_unlabeled: 64,
            batch_balanced: None,
            iters: 1000,
            ema_decay: 0.999,
            mode: Mode::L2ac,
            schedule: Schedule::Constant,
            lower_optimizer: LowerOptimizer::Sgd,
            pseudo_mode: PseudoLabelMode::Hard,
            pseudo_source: PseudoSource::Biased,
            sigma_weak: 0.1,
            sigma_strong: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn balanced_size(&self, num_classes: usize) -> usize {
        self.batch_balanced
            .unwrap_or_else(|| (self.batch_labeled / num_classes).max(1) * num_classes)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.lambda_u >= 0.0) {
            return bad(format!("lambda_u must be >= 0, got {}", self.lambda_u));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay));
        }
        if self.batch_labeled == 0 {
            return bad("batch_labeled must be positive".into());
        }
        let b = self.balanced_size(num_classes);
        if b == 0 || !b.is_multiple_of(num_classes) {
            return bad(format!("balanced batch {b} is not a positive multiple of {num_classes}"));
        }
        if !(0.0 <= self.sigma_weak && self.sigma_weak < self.sigma_strong) {
            return bad("need 0 <= sigma_weak < sigma_strong".into());
        }
        if let PseudoLabelMode::Sharpen { temperature } = self.pseudo_mode {
            if !(temperature > 0.0) {
                return bad("sharpening temperature must be > 0".into());
            }
        }
        if let Schedule::InverseDecay { c1, c2 } = self.schedule {
            if !(c1 > 0.0 && c2 >= 0.0) {
                return bad("schedule needs c1 > 0 and c2 >= 0".into());
            }
        }
        if let Mode::SingleLevel { lambda } = self.mode {
            if !(lambda >= 0.0) {
                return bad("single-level lambda must be >= 0".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.alpha, 2e-3);
        assert_eq!(c.eta, 1e-4);
        assert_eq!(c.tau, 0.95);
        assert_eq!(c.lambda_u, 1.0);
        assert_eq!(c.ema_decay, 0.999);
        c.validate(8).unwrap();
        assert_eq!(c.balanced_size(10), 60);
        assert_eq!(c.balanced_size(8), 64);
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig {
            batch_balanced: Some(10),
            ..TrainConfig::default()
        };
        assert!(c.validate(3).is_err());
        c.batch_balanced = None;
        c.alpha = 0.0;
        assert!(c.validate(3).is_err());
        c.alpha = 0.1;
        c.tau = 1.5;
        assert!(c.validate(3).is_err());
    }
}
