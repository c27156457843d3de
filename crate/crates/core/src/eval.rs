//! Class-balanced metrics and diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::numcore::{softmax, Matrix};

/// Counts with rows indexed by true class and columns by predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape {
                op: "confusion matrix",
                expected: format!("{k}x{k}"),
                got: "ragged rows".into(),
            });
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Sums two matrices, as when merging disjoint shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes(), other.num_classes());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// `counts[k][k] / row_sum_k`; errors on the first class with no samples.
    pub fn recalls(&self) -> Result<Vec<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    Err(Error::EmptyClass(k))
                } else {
                    Ok(row[k] as f64 / n as f64)
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.num_classes();
        let mut header = vec!["true".to_string()];
        header.extend((0..k).map(|p| format!("pred_{p}")));
        w.write_record(&header)?;
        for (t, row) in self.counts.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn confusion(true_labels: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::Shape {
            op: "confusion",
            expected: format!("{} predictions", true_labels.len()),
            got: format!("{}", predicted.len()),
        });
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&t, &p) in true_labels.iter().zip(predicted) {
        for l in [t, p] {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l as i64,
                    classes: num_classes,
                });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Mean per-class recall.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let r = cm.recalls()?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Geometric mean of per-class recalls; exactly 0 when any recall is 0.
pub fn geometric_mean(cm: &ConfusionMatrix) -> Result<f64> {
    let r = cm.recalls()?;
    if r.contains(&0.0) {
        return Ok(0.0);
    }
    Ok((r.iter().map(|v| v.ln()).sum::<f64>() / r.len() as f64).exp())
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    (0..cm.num_classes()).map(|k| cm.get(k, k)).sum::<u64>() as f64 / total as f64
}

/// Per-class recall of hard pseudo-labels over the rows with positive
/// weight; `None` for a class with no such rows.
pub fn pseudo_label_recall(
    true_labels: &[usize],
    pseudo_labels: &[usize],
    weights: &[f64],
    num_classes: usize,
) -> Vec<Option<f64>> {
    let mut hit = vec![0u64; num_classes];
    let mut seen = vec![0u64; num_classes];
    for ((&t, &p), &w) in true_labels.iter().zip(pseudo_labels).zip(weights) {
        if w > 0.0 {
            seen[t] += 1;
            if p == t {
                hit[t] += 1;
            }
        }
    }
    hit.iter()
        .zip(&seen)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

/// Mean of the softmax rows.
pub fn predicted_distribution(logits: &Matrix) -> Result<Vec<f64>> {
    if logits.rows() == 0 {
        return Err(Error::Config("predicted distribution of an empty set".into()));
    }
    let mut sum = softmax(logits)?.sum_rows();
    let n = logits.rows() as f64;
    sum.iter_mut().for_each(|v| *v /= n);
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bacc: f64,
    pub gm: f64,
    pub acc: f64,
    pub per_class_recall: Vec<f64>,
    pub predicted_distribution: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_recall: Option<Vec<Option<f64>>>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, predicted_distribution: Vec<f64>) -> Result<Self> {
        Ok(Self {
            bacc: balanced_accuracy(cm)?,
            gm: geometric_mean(cm)?,
            acc: accuracy(cm),
            per_class_recall: cm.recalls()?,
            predicted_distribution,
            pseudo_recall: None,
        })
    }

    pub fn min_recall(&self) -> f64 {
        self.per_class_recall.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Field-wise mean of `reports`; pseudo-recall is dropped.
    pub fn average(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let mean_vec = |f: fn(&MetricsReport) -> &Vec<f64>| -> Vec<f64> {
            let mut acc = vec![0.0; f(first).len()];
            for r in reports {
                for (a, v) in acc.iter_mut().zip(f(r)) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / n).collect()
        };
        Some(MetricsReport {
            bacc: reports.iter().map(|r| r.bacc).sum::<f64>() / n,
            gm: reports.iter().map(|r| r.gm).sum::<f64>() / n,
            acc: reports.iter().map(|r| r.acc).sum::<f64>() / n,
            per_class_recall: mean_vec(|r| &r.per_class_recall),
            predicted_distribution: mean_vec(|r| &r.predicted_distribution),
            pseudo_recall: None,
        })
    }
}

/// Scores the test-time network on a fully labeled set.
pub fn evaluate(state: &ModelState, test: &Dataset, use_ema: bool) -> Result<(MetricsReport, ConfusionMatrix)> {
    let logits = state.forward_eval(test.features(), use_ema)?;
    let predicted = logits.argmax_rows();
    let cm = confusion(test.true_labels(), &predicted, test.num_classes())?;
    let report = MetricsReport::from_confusion(&cm, predicted_distribution(&logits)?)?;
    Ok((report, cm))
}

/// Keeps the most recent `capacity` reports.
#[derive(Debug, Clone)]
pub struct LastReports {
    capacity: usize,
    reports: std::collections::VecDeque<MetricsReport>,
}

impl LastReports {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            reports: Default::default(),
        }
    }

    pub fn push(&mut self, report: MetricsReport) {
        if self.reports.len() == self.capacity {
            self.reports.pop_front();
        }
        self.reports.push_back(report);
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn mean(&self) -> Option<MetricsReport> {
        MetricsReport::average(&self.reports.iter().cloned().collect::<Vec<_>>())
    }
}
