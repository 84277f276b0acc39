//! Time series sources, delay embedding and slicing.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("time series"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series value at index {i}")));
        }
        Ok(TimeSeries {
            name: name.into(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sub-series over `range`, keeping the name.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<TimeSeries> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::SeriesTooShort {
                len: self.len(),
                required: range.end,
            });
        }
        Ok(TimeSeries {
            name: self.name.clone(),
            values: self.values[range].to_vec(),
        })
    }
}

/// Input/target pairs from a delay embedding of order `dim`.
///
/// Pair `k` has input `y[o + k - dim .. o + k]` and target `y[o + k]` where
/// `o` is [`EmbeddedDataset::first_target`] in the source series.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    first_target: usize,
}

impl EmbeddedDataset {
    /// Builds a dataset from explicit rows; `inputs` is row-major.
    pub fn from_pairs(dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("embedding dimension"));
        }
        if inputs.len() != dim * targets.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * targets.len(),
                found: inputs.len(),
            });
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entry".into()));
        }
        Ok(EmbeddedDataset {
            dim,
            inputs,
            targets,
            first_target: dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn inputs(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.inputs.chunks_exact(self.dim)
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Index in the source series of the first target.
    pub fn first_target(&self) -> usize {
        self.first_target
    }

    /// Keeps the first `n` pairs.
    pub fn truncate(&mut self, n: usize) {
        self.targets.truncate(n);
        self.inputs.truncate(n * self.dim);
    }
}

/// Delay embedding of the whole series: `len - dim` pairs.
pub fn embed(series: &TimeSeries, dim: usize) -> Result<EmbeddedDataset> {
    embed_targets(series, dim, dim..series.len())
}

/// Pairs whose targets have series indices in `targets`; each input uses the
/// `dim` samples immediately before its target.
pub fn embed_targets(
    series: &TimeSeries,
    dim: usize,
    targets: std::ops::Range<usize>,
) -> Result<EmbeddedDataset> {
    if dim == 0 {
        return Err(Error::Empty("embedding dimension"));
    }
    let y = &series.values;
    if y.len() <= dim || targets.end > y.len() {
        return Err(Error::SeriesTooShort {
            len: y.len(),
            required: (dim + 1).max(targets.end),
        });
    }
    let start = targets.start.max(dim);
    if start >= targets.end {
        return Err(Error::SeriesTooShort {
            len: targets.end,
            required: dim + 1,
        });
    }
    let mut inputs = Vec::with_capacity((targets.end - start) * dim);
    for i in start..targets.end {
        inputs.extend_from_slice(&y[i - dim..i]);
    }
    Ok(EmbeddedDataset {
        dim,
        inputs,
        targets: y[start..targets.end].to_vec(),
        first_target: start,
    })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.into(),
                row: 1,
                message: format!("{other:?}"),
            },
        })?;
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.into(),
        row,
        message,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    let column = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["value"] => 0,
        ["t", "value"] => 1,
        other => {
            return Err(parse_err(
                1,
                format!("expected header `value` or `t,value`, found {other:?}"),
            ))
        }
    };
    let mut values = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        let field = record
            .get(column)
            .ok_or_else(|| parse_err(row, "missing value column".into()))?;
        let v: f64 = field
            .parse()
            .map_err(|_| parse_err(row, format!("cannot parse `{field}` as a number")))?;
        if !v.is_finite() {
            return Err(parse_err(row, format!("non-finite value `{field}`")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    TimeSeries::new(name, values)
}

pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("t,value\n");
    for (i, v) in series.values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Affine map applied by [`standardize`]; `raw = mean + std * z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

impl Scaling {
    pub fn forward(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// Zero mean, unit population standard deviation.
pub fn standardize(series: &TimeSeries) -> Result<(TimeSeries, Scaling)> {
    let n = series.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { len: n, required: 2 });
    }
    let rough = series.values.iter().sum::<f64>() / n as f64;
    // Second pass removes the rounding error of the first, so a constant
    // series recovers its value exactly.
    let mean = rough + series.values.iter().map(|v| v - rough).sum::<f64>() / n as f64;
    let var = series.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std.is_nan() || std < 1e-300 {
        return Err(Error::ConstantSeries);
    }
    let scaling = Scaling { mean, std };
    let values = series.values.iter().map(|&v| scaling.forward(v)).collect();
    Ok((
        TimeSeries {
            name: series.name.clone(),
            values,
        },
        scaling,
    ))
}

/// Consecutive slices `[k * stride, k * stride + width)`; a trailing partial
/// window is dropped.
pub fn windows(series: &TimeSeries, width: usize, stride: usize) -> Result<Vec<TimeSeries>> {
    if width == 0 || stride == 0 {
        return Err(Error::Config("window width and stride must be positive".into()));
    }
    if width > series.len() {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            required: width,
        });
    }
    Ok((0..)
        .map(|k| k * stride)
        .take_while(|start| start + width <= series.len())
        .map(|start| TimeSeries {
            name: series.name.clone(),
            values: series.values[start..start + width].to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub initial_state: [f64; 3],
}

impl Default for LorenzConfig {
    fn default() -> Self {
        LorenzConfig {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            n_steps: 1000,
            initial_state: [1.0, 1.0, 1.0],
        }
    }
}

fn lorenz_rhs(cfg: &LorenzConfig, [x, y, z]: [f64; 3]) -> [f64; 3] {
    [
        cfg.sigma * (y - x),
        x * (cfg.rho - z) - y,
        x * y - cfg.beta * z,
    ]
}

fn axpy(a: f64, x: [f64; 3], y: [f64; 3]) -> [f64; 3] {
    [y[0] + a * x[0], y[1] + a * x[1], y[2] + a * x[2]]
}

/// First channel of an RK4 integration of the Lorenz system. The first
/// sample is the initial state.
pub fn lorenz_generate(cfg: &LorenzConfig) -> Result<TimeSeries> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            value: cfg.dt,
        });
    }
    if cfg.n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let h = cfg.dt;
    let mut state = cfg.initial_state;
    let mut values = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Lorenz state at step {step}")));
        }
        values.push(state[0]);
        let k1 = lorenz_rhs(cfg, state);
        let k2 = lorenz_rhs(cfg, axpy(h / 2.0, k1, state));
        let k3 = lorenz_rhs(cfg, axpy(h / 2.0, k2, state));
        let k4 = lorenz_rhs(cfg, axpy(h, k3, state));
        for i in 0..3 {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    TimeSeries::new("lorenz-x", values)
}

/// Parameters of the synthetic wind-speed substitute: a mean level, two slow
/// sinusoids with seeded phases and AR(1) gusts.
///
/// The default slowest period matches a 270-sample pre-training segment, so
/// that segment sees the whole range of the slow cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindConfig {
    pub n_samples: usize,
    pub level: f64,
    pub amplitudes: [f64; 2],
    pub periods: [f64; 2],
    pub ar_coef: f64,
    pub innovation_std: f64,
}

impl Default for WindConfig {
    fn default() -> Self {
        WindConfig {
            n_samples: 2500,
            level: 8.0,
            amplitudes: [2.5, 1.5],
            periods: [270.0, 90.0],
            ar_coef: 0.9,
            innovation_std: 0.4,
        }
    }
}

pub fn wind_like(cfg: &WindConfig, seed: u64) -> Result<TimeSeries> {
    if cfg.n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    if cfg.ar_coef.is_nan() || cfg.ar_coef.abs() >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "ar_coef",
            value: cfg.ar_coef,
        });
    }
    for p in cfg.periods {
        if p.is_nan() || p <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "periods",
                value: p,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: [f64; 2] = [
        rand::Rng::gen_range(&mut rng, 0.0..2.0 * PI),
        rand::Rng::gen_range(&mut rng, 0.0..2.0 * PI),
    ];
    let stationary_std = cfg.innovation_std / (1.0 - cfg.ar_coef * cfg.ar_coef).sqrt();
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut gust = stationary_std * z0;
    let mut values = Vec::with_capacity(cfg.n_samples);
    for t in 0..cfg.n_samples {
        let tf = t as f64;
        let slow: f64 = (0..2)
            .map(|k| cfg.amplitudes[k] * (2.0 * PI * tf / cfg.periods[k] + phases[k]).sin())
            .sum();
        values.push(cfg.level + slow + gust);
        let eps: f64 = StandardNormal.sample(&mut rng);
        gust = cfg.ar_coef * gust + cfg.innovation_std * eps;
    }
    TimeSeries::new(format!("wind-like-{seed}"), values)
}
