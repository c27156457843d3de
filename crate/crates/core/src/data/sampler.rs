use crate::error::{Error, Result};
use crate::numcore::Rng;

use super::LabeledSet;

/// Size of a class-balanced batch: `per_class` rows from each of `num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalancedBatchSpec {
    batch_size: usize,
    num_classes: usize,
}

impl BalancedBatchSpec {
    pub fn new(batch_size: usize, num_classes: usize) -> Result<Self> {
        if num_classes == 0 || batch_size == 0 || !batch_size.is_multiple_of(num_classes) {
            return Err(Error::Config(format!(
                "balanced batch size {batch_size} is not a positive multiple of {num_classes} classes"
            )));
        }
        Ok(Self {
            batch_size,
            num_classes,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn per_class(&self) -> usize {
        self.batch_size / self.num_classes
    }
}

/// Exactly `per_class` row indices of every class, drawn with replacement
/// inside each class. Indices come out grouped by class.
pub fn balanced_batch(set: &LabeledSet, spec: BalancedBatchSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    if set.num_classes() != spec.num_classes {
        return Err(Error::Config(format!(
            "batch spec for {} classes, data has {}",
            spec.num_classes,
            set.num_classes()
        )));
    }
    let mut out = Vec::with_capacity(spec.batch_size);
    for class in 0..spec.num_classes {
        let rows = set.class_rows(class);
        if rows.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        for _ in 0..spec.per_class() {
            out.push(rows[rng.below(rows.len())]);
        }
    }
    Ok(out)
}

/// `size` indices drawn uniformly with replacement from `0..len`.
pub fn uniform_batch(len: usize, size: usize, rng: &mut Rng) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    (0..size).map(|_| rng.below(len)).collect()
}
