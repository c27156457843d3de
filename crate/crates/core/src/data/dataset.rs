use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Label value marking an unlabeled row.
pub const UNLABELED: i64 = -1;

/// Features plus observed labels (`-1` = unlabeled) and the hidden ground
/// truth, which only diagnostics may read.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<i64>,
    true_labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<i64>, true_labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || true_labels.len() != n {
            return Err(Error::Shape {
                op: "Dataset::new",
                expected: format!("{n} labels"),
                got: format!("{} labels, {} true labels", labels.len(), true_labels.len()),
            });
        }
        for (&l, &t) in labels.iter().zip(&true_labels) {
            if t >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: t as i64,
                    classes: num_classes,
                });
            }
            if l != UNLABELED && (l < 0 || l as usize >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: num_classes,
                });
            }
            if l != UNLABELED && l as usize != t {
                return Err(Error::Config(format!("observed label {l} disagrees with true label {t}")));
            }
        }
        Ok(Self {
            features,
            labels,
            true_labels,
            num_classes,
        })
    }

    /// A fully labeled dataset.
    pub fn labeled(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let observed = labels.iter().map(|&l| l as i64).collect();
        Self::new(features, observed, labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(|&l| l != UNLABELED)
    }

    /// Rows per true class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &t in &self.true_labels {
            h[t] += 1;
        }
        h
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The labeled rows, as the trainer sees them.
    pub fn labeled_view(&self) -> LabeledSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] != UNLABELED).collect();
        let labels = idx.iter().map(|&i| self.labels[i] as usize).collect();
        LabeledSet::new(self.features.select_rows(&idx), labels, self.num_classes)
    }

    /// Features only; ground truth is not reachable from the result.
    pub fn unlabeled_view(&self) -> UnlabeledSet {
        UnlabeledSet {
            features: self.features.clone(),
        }
    }
}

/// Labeled training rows with a per-class index for class-aware sampling.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Self {
        assert_eq!(features.rows(), labels.len());
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        Self {
            features,
            labels,
            num_classes,
            by_class,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }
}

/// Unlabeled training rows: features only.
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    features: Matrix,
}

impl UnlabeledSet {
    pub fn new(features: Matrix) -> Self {
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }
}

/// Draws `labeled_counts[k]` labeled and `unlabeled_counts[k]` unlabeled rows
/// of each class without overlap. Unlabeled rows keep their true labels.
pub fn split_labeled_unlabeled(
    full: &Dataset,
    labeled_counts: &[usize],
    unlabeled_counts: &[usize],
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    let k = full.num_classes();
    if labeled_counts.len() != k || unlabeled_counts.len() != k {
        return Err(Error::Shape {
            op: "split_labeled_unlabeled",
            expected: format!("{k} per-class counts"),
            got: format!("{} and {}", labeled_counts.len(), unlabeled_counts.len()),
        });
    }
    let mut pools = vec![Vec::new(); k];
    for (i, &t) in full.true_labels().iter().enumerate() {
        pools[t].push(i);
    }
    let mut lab = Vec::new();
    let mut unl = Vec::new();
    for (class, pool) in pools.iter_mut().enumerate() {
        let needed = labeled_counts[class] + unlabeled_counts[class];
        if needed > pool.len() {
            return Err(Error::InsufficientRows {
                class,
                needed,
                available: pool.len(),
            });
        }
        rng.shuffle(pool);
        lab.extend_from_slice(&pool[..labeled_counts[class]]);
        unl.extend_from_slice(&pool[labeled_counts[class]..needed]);
    }
    let labeled = full.select(&lab);
    let labeled = Dataset {
        labels: labeled.true_labels.iter().map(|&t| t as i64).collect(),
        ..labeled
    };
    let mut unlabeled = full.select(&unl);
    unlabeled.labels.fill(UNLABELED);
    Ok((labeled, unlabeled))
}
