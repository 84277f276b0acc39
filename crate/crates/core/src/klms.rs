//! Kernel least-mean-squares filtering with novelty or coherence
//! sparsification, and seeding from a fitted model.

use serde::{Deserialize, Serialize};

use crate::data::EmbeddedDataset;
use crate::error::{check_dim, check_positive, Error, Result};
use crate::exec::Exec;
use crate::kernel::{gauss, sq_dist, Dictionary};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sparsifier {
    /// Admit when farther than `dist` from every centre and `|e| > err`.
    Novelty { dist: f64, err: f64 },
    /// Admit when the largest kernel value against the dictionary is at most `mu0`.
    Coherence { mu0: f64 },
    /// Admit every sample.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlmsState {
    dim: usize,
    centres: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma_k: f64,
    pub learning_rate: f64,
    pub sparsifier: Sparsifier,
    pub max_dict: Option<usize>,
    /// No centres are admitted; every sample moves all weights along the
    /// LMS gradient `e * k(x, D)` instead.
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub prediction: f64,
    pub error: f64,
    pub centre_added: bool,
}

impl KlmsState {
    /// Empty filter.
    pub fn new(dim: usize, sigma_k: f64, learning_rate: f64, sparsifier: Sparsifier) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("input dimension"));
        }
        check_positive("sigma_k", sigma_k)?;
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: learning_rate,
            });
        }
        Ok(KlmsState {
            dim,
            centres: Vec::new(),
            alpha: Vec::new(),
            sigma_k,
            learning_rate,
            sparsifier,
            max_dict: None,
            frozen: false,
        })
    }

    pub fn with_max_dict(mut self, max: usize) -> Self {
        self.max_dict = Some(max);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dict_size(&self) -> usize {
        self.alpha.len()
    }

    pub fn centre(&self, j: usize) -> &[f64] {
        &self.centres[j * self.dim..(j + 1) * self.dim]
    }

    fn centres(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.centres.chunks_exact(self.dim)
    }

    /// The current dictionary, or `None` while it is empty.
    pub fn dictionary(&self) -> Option<Dictionary> {
        (!self.centres.is_empty()).then(|| Dictionary::new(self.dim, self.centres.clone()).expect("valid centres"))
    }
}

pub fn klms_predict(state: &KlmsState, x: &[f64]) -> Result<f64> {
    check_dim(state.dim, x.len())?;
    Ok(state
        .alpha
        .iter()
        .zip(state.centres())
        .map(|(a, s)| a * gauss(sq_dist(x, s), state.sigma_k))
        .sum())
}

pub fn novelty_admit(state: &KlmsState, x: &[f64], error: f64, dist: f64, err: f64) -> bool {
    if state.dict_size() == 0 {
        return true;
    }
    let nearest = state
        .centres()
        .map(|s| sq_dist(x, s))
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    nearest > dist && error.abs() > err
}

pub fn coherence_admit(state: &KlmsState, x: &[f64], mu0: f64) -> bool {
    state
        .centres()
        .map(|s| gauss(sq_dist(x, s), state.sigma_k))
        .fold(f64::NEG_INFINITY, f64::max)
        <= mu0
}

/// One predict-then-update step on the pair `(x, y)`.
pub fn klms_step(state: &mut KlmsState, x: &[f64], y: f64) -> Result<StepResult> {
    let prediction = klms_predict(state, x)?;
    let error = y - prediction;
    let eta = state.learning_rate;

    if state.frozen {
        let sigma = state.sigma_k;
        for (a, s) in state.alpha.iter_mut().zip(state.centres.chunks_exact(state.dim)) {
            *a += eta * error * gauss(sq_dist(x, s), sigma);
        }
        return Ok(StepResult {
            prediction,
            error,
            centre_added: false,
        });
    }

    let room = state.max_dict.is_none_or(|m| state.dict_size() < m);
    let admit = room
        && match state.sparsifier {
            Sparsifier::Novelty { dist, err } => novelty_admit(state, x, error, dist, err),
            Sparsifier::Coherence { mu0 } => coherence_admit(state, x, mu0),
            Sparsifier::None => true,
        };
    if admit {
        state.centres.extend_from_slice(x);
        state.alpha.push(eta * error);
    } else if let Sparsifier::Coherence { .. } = state.sparsifier {
        let nearest = state
            .centres()
            .map(|s| sq_dist(x, s))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j);
        if let Some(j) = nearest {
            state.alpha[j] += eta * error;
        }
    }
    Ok(StepResult {
        prediction,
        error,
        centre_added: admit,
    })
}

/// Filter seeded with a fitted model's dictionary, weights and lengthscale.
pub fn from_pretrained(params: &ModelParams, learning_rate: f64, freeze_dict: bool) -> Result<KlmsState> {
    params.validate()?;
    let mut state = KlmsState::new(params.dim(), params.sigma_k, learning_rate, Sparsifier::None)?;
    state.centres = params.dictionary.as_slice().to_vec();
    state.alpha = params.alpha.clone();
    state.frozen = freeze_dict;
    Ok(state)
}

/// Runs the filter over every pair in order; returns one step result per pair.
pub fn run(state: &mut KlmsState, data: &EmbeddedDataset) -> Result<Vec<StepResult>> {
    data.inputs()
        .zip(data.targets())
        .map(|(x, &y)| klms_step(state, x, y))
        .collect()
}

/// Novelty distance threshold (with `err = 0`) whose final dictionary size
/// is closest to `target` after one pass over `data`. Larger thresholds
/// admit fewer centres.
pub fn calibrate_novelty(
    data: &EmbeddedDataset,
    sigma_k: f64,
    target: usize,
    iterations: usize,
) -> Result<(f64, usize)> {
    if target == 0 {
        return Err(Error::Config("target dictionary size must be positive".into()));
    }
    let size_at = |dist: f64| -> Result<usize> {
        let mut s = KlmsState::new(data.dim(), sigma_k, 1.0, Sparsifier::Novelty { dist, err: 0.0 })?;
        for x in data.inputs() {
            if novelty_admit(&s, x, 1.0, dist, 0.0) {
                s.centres.extend_from_slice(x);
                s.alpha.push(0.0);
            }
        }
        Ok(s.dict_size())
    };
    let spread = crate::inference::init::median_distance(data).unwrap_or(1.0);
    let (mut lo, mut hi) = (0.0f64, 10.0 * spread);
    let mut best = (hi, size_at(hi)?);
    let consider = |dist: f64, size: usize, best: &mut (f64, usize)| {
        let better = size.abs_diff(target) < best.1.abs_diff(target)
            || (size.abs_diff(target) == best.1.abs_diff(target) && dist > best.0);
        if better {
            *best = (dist, size);
        }
    };
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let size = size_at(mid)?;
        consider(mid, size, &mut best);
        if size == target {
            break;
        }
        if size > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Mean squared error of a filter started from `state` for each learning
/// rate, evaluated on pairs whose series index is at least `start_index`.
pub fn sweep_learning_rate(
    state: &KlmsState,
    data: &EmbeddedDataset,
    rates: &[f64],
    start_index: usize,
    exec: Exec,
) -> Result<Vec<(f64, f64)>> {
    exec.map(rates.len(), |k| {
        let mut s = state.clone();
        s.learning_rate = rates[k];
        let steps = run(&mut s, data)?;
        let skip = start_index.saturating_sub(data.first_target());
        let errs: Vec<f64> = steps.iter().skip(skip).map(|r| r.error * r.error).collect();
        if errs.is_empty() {
            return Err(Error::Config(format!(
                "MSE start index {start_index} leaves no evaluation pairs"
            )));
        }
        Ok((rates[k], errs.iter().sum::<f64>() / errs.len() as f64))
    })
    .into_iter()
    .collect()
}

/// `count` log-spaced rates from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}
