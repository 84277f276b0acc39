//! Metrics, experiment configuration and the experiment runner.

pub mod config;
pub mod experiment;

use std::path::Path;

pub use config::{DataSource, ExperimentConfig, ExperimentKind, Summary};
pub use experiment::{run_experiment, run_experiment_file, Report};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram_sq_norm, Dictionary, GramMatrix};

/// Mean squared residual over positions `start_index..`.
pub fn mse(predictions: &[f64], targets: &[f64], start_index: usize) -> Result<f64> {
    check_dim(targets.len(), predictions.len())?;
    if start_index >= targets.len() {
        return Err(Error::Config(format!(
            "MSE start index {start_index} is past the end of {} values",
            targets.len()
        )));
    }
    let n = (targets.len() - start_index) as f64;
    Ok(predictions[start_index..]
        .iter()
        .zip(&targets[start_index..])
        .map(|(p, y)| (y - p) * (y - p))
        .sum::<f64>()
        / n)
}

/// Mean squared off-diagonal Gram entry, `(||K||_F^2 - N) / (N^2 - N)`.
pub fn gram_offdiag_energy(dict: &Dictionary, sigma_k: f64) -> Result<f64> {
    let n = dict.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "off-diagonal energy needs at least 2 centres, got {n}"
        )));
    }
    let nf = n as f64;
    Ok(((gram_sq_norm(dict, sigma_k)? - nf) / (nf * nf - nf)).clamp(0.0, 1.0))
}

/// Same quantity computed from the entries of a stored Gram matrix.
pub fn offdiag_energy_of(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "off-diagonal energy needs at least 2 centres, got {n}"
        )));
    }
    let mut sum = 0.0;
    for (j, row) in rows.iter().enumerate() {
        check_dim(n, row.len())?;
        sum += row
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, v)| v * v)
            .sum::<f64>();
    }
    Ok(sum / (n * n - n) as f64)
}

/// Contents of a predictions file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub index: Vec<usize>,
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn push(&mut self, index: usize, target: f64, prediction: f64) {
        self.index.push(index);
        self.target.push(target);
        self.prediction.push(prediction);
    }

    /// MSE over rows whose series index is at least `start_index`.
    pub fn mse_from(&self, start_index: usize) -> Result<f64> {
        let skip = self.index.iter().take_while(|&&i| i < start_index).count();
        mse(&self.prediction, &self.target, skip)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["index", "target", "prediction"])
            .map_err(|e| csv_err(path, e))?;
        for k in 0..self.len() {
            w.write_record([
                self.index[k].to_string(),
                self.target[k].to_string(),
                self.prediction[k].to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "target", "prediction"] {
            return Err(Error::Parse {
                path: path.into(),
                row: 1,
                message: "expected header `index,target,prediction`".into(),
            });
        }
        let mut out = Predictions::default();
        for (k, rec) in r.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let bad = |m: String| Error::Parse {
                path: path.into(),
                row,
                message: m,
            };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            let index = rec[0].trim().parse().map_err(|e| bad(format!("index: {e}")))?;
            let target: f64 = rec[1].trim().parse().map_err(|e| bad(format!("target: {e}")))?;
            let prediction: f64 = rec[2].trim().parse().map_err(|e| bad(format!("prediction: {e}")))?;
            out.push(index, target, prediction);
        }
        if out.is_empty() {
            return Err(Error::Empty("predictions file"));
        }
        Ok(out)
    }
}

pub fn write_gram(gram: &GramMatrix, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    for row in gram.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_gram(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.into(),
                row: k + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.into(),
            row,
            message: format!("{other:?}"),
        },
    }
}
