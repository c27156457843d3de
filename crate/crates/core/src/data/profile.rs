use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceKind {
    /// Geometric decay from class 0 (largest) to class K−1.
    Longtail,
    /// Head classes at `n1`, tail classes at `n1 / gamma`.
    Step,
    /// Longtail with the class order reversed.
    ReversedLongtail,
    Uniform,
}

/// Class-count recipe. `n1` is the size of the largest class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceProfile {
    pub kind: ImbalanceKind,
    pub gamma: f64,
    pub n1: usize,
    pub num_classes: usize,
}

impl ImbalanceProfile {
    pub fn new(kind: ImbalanceKind, gamma: f64, n1: usize, num_classes: usize) -> Result<Self> {
        let p = Self {
            kind,
            gamma,
            n1,
            num_classes,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidProfile(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidProfile(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.n1 == 0 {
            return Err(Error::InvalidProfile("n1 must be positive".into()));
        }
        Ok(())
    }

    pub fn counts(&self) -> Result<Vec<usize>> {
        class_counts(self)
    }
}

/// Per-class sample counts for `profile`.
///
/// Longtail: `counts[k] = max(1, floor(n1 / gamma^(k/(K−1))))`, so class 0
/// holds `n1` and the ratio between the ends is `gamma` up to flooring.
/// Step: the first `ceil(K/2)` classes hold `n1`, the rest
/// `max(1, floor(n1 / gamma))`.
pub fn class_counts(profile: &ImbalanceProfile) -> Result<Vec<usize>> {
    profile.validate()?;
    let k = profile.num_classes;
    let n1 = profile.n1 as f64;
    let longtail = || -> Vec<usize> {
        (0..k)
            .map(|c| {
                let decay = profile.gamma.powf(c as f64 / (k - 1) as f64);
                ((n1 / decay).floor() as usize).max(1)
            })
            .collect()
    };
    Ok(match profile.kind {
        ImbalanceKind::Longtail => longtail(),
        ImbalanceKind::ReversedLongtail => {
            let mut c = longtail();
            c.reverse();
            c
        }
        ImbalanceKind::Step => {
            let head = k.div_ceil(2);
            let tail = ((n1 / profile.gamma).floor() as usize).max(1);
            (0..k).map(|c| if c < head { profile.n1 } else { tail }).collect()
        }
        ImbalanceKind::Uniform => vec![profile.n1; k],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lt(n1: usize, gamma: f64, k: usize) -> ImbalanceProfile {
        ImbalanceProfile::new(ImbalanceKind::Longtail, gamma, n1, k).unwrap()
    }

    #[test]
    fn longtail_endpoints() {
        let c = class_counts(&lt(1500, 100.0, 10)).unwrap();
        assert_eq!(c[0], 1500);
        assert_eq!(c[9], 15);
        // floor(1500 · 100^(−4/9)) = floor(193.732…), evaluated externally.
        assert_eq!(c[4], 193);
        assert_eq!(c, vec![1500, 899, 539, 323, 193, 116, 69, 41, 25, 15]);
    }

    #[test]
    fn uniform_counts() {
        let p = ImbalanceProfile::new(ImbalanceKind::Uniform, 1.0, 150, 10).unwrap();
        assert_eq!(class_counts(&p).unwrap(), vec![150; 10]);
    }

    #[test]
    fn step_counts() {
        let p = ImbalanceProfile::new(ImbalanceKind::Step, 100.0, 1500, 10).unwrap();
        assert_eq!(class_counts(&p).unwrap(), [vec![1500; 5], vec![15; 5]].concat());
        let p = ImbalanceProfile::new(ImbalanceKind::Step, 10.0, 100, 5).unwrap();
        assert_eq!(class_counts(&p).unwrap(), vec![100, 100, 100, 10, 10]);
    }

    #[test]
    fn rejects_gamma_below_one() {
        assert!(ImbalanceProfile::new(ImbalanceKind::Longtail, 0.5, 10, 3).is_err());
        let bad = ImbalanceProfile {
            kind: ImbalanceKind::Longtail,
            gamma: 0.9,
            n1: 10,
            num_classes: 3,
        };
        assert!(class_counts(&bad).is_err());
    }

    #[test]
    fn tiny_classes_never_empty() {
        let c = class_counts(&lt(3, 1000.0, 6)).unwrap();
        assert!(c.iter().all(|&n| n >= 1));
    }

    proptest! {
        #[test]
        fn longtail_shape(n1 in 1usize..5000, gamma in 1.0f64..200.0, k in 2usize..20) {
            let c = class_counts(&lt(n1, gamma, k)).unwrap();
            prop_assert_eq!(c[0], n1);
            for w in c.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let last = c[k - 1] as f64;
            let ratio = c[0] as f64 / last;
            // Flooring only shrinks the smallest class, so the realized ratio
            // sits in [gamma, gamma·(1 + 1/last)).
            if n1 as f64 / gamma >= 1.0 {
                prop_assert!(ratio >= gamma * (1.0 - 1e-12));
                prop_assert!(ratio < gamma * (1.0 + 1.0 / last) + 1e-9);
            }
        }

        #[test]
        fn reversed_is_reverse(n1 in 1usize..5000, gamma in 1.0f64..200.0, k in 2usize..20) {
            let mut fwd = class_counts(&lt(n1, gamma, k)).unwrap();
            let rev = class_counts(&ImbalanceProfile::new(ImbalanceKind::ReversedLongtail, gamma, n1, k).unwrap()).unwrap();
            fwd.reverse();
            prop_assert_eq!(fwd, rev);
        }
    }
}
