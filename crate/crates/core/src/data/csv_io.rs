use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

use super::{Dataset, UNLABELED};

/// Writes `d` feature columns `f0..`, then `label`, then `true_label`.
/// Features use 17 significant digits so a reload is bit-exact.
pub fn save_csv_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("true_label".into());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(data.dim() + 2);
    for (i, row) in data.features().iter_rows().enumerate() {
        record.clear();
        record.extend(row.iter().map(|v| format!("{v:.16e}")));
        record.push(data.labels()[i].to_string());
        record.push(data.true_labels()[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`save_csv_dataset`]. Errors carry the 1-based
/// line number of the offending row.
pub fn load_csv_dataset(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "label" || &header[cols - 1] != "true_label" {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: "header must end with `label,true_label` after at least one feature".into(),
        });
    }
    let dim = cols - 2;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse {
            path: path.to_owned(),
            line,
            msg,
        };
        if rec.len() != cols {
            return Err(err(format!("expected {cols} fields, found {}", rec.len())));
        }
        for j in 0..dim {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| err(format!("non-numeric feature `{}`", &rec[j])))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite feature `{}`", &rec[j])));
            }
            data.push(v);
        }
        let label: i64 = rec[dim]
            .trim()
            .parse()
            .map_err(|_| err(format!("non-numeric label `{}`", &rec[dim])))?;
        if label != UNLABELED && !(0..num_classes as i64).contains(&label) {
            return Err(err(format!("label {label} outside {{-1, 0..{}}}", num_classes - 1)));
        }
        let t: i64 = rec[dim + 1]
            .trim()
            .parse()
            .map_err(|_| err(format!("non-numeric true_label `{}`", &rec[dim + 1])))?;
        if !(0..num_classes as i64).contains(&t) {
            return Err(err(format!("true_label {t} outside 0..{}", num_classes - 1)));
        }
        if label != UNLABELED && label != t {
            return Err(err(format!("label {label} disagrees with true_label {t}")));
        }
        labels.push(label);
        truth.push(t as usize);
    }
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    Dataset::new(features, labels, truth, num_classes)
}
