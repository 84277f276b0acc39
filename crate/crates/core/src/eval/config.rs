//! Experiment configuration: a TOML file with one table per section, plus
//! dotted `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveConfig;
use crate::data::{LorenzConfig, WindConfig};
use crate::error::{Error, Result};
use crate::inference::{MapConfig, McmcConfig};
use crate::klms::Sparsifier;
use crate::model::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FitOffline,
    PretrainKlms,
    Klms,
    SweepLr,
    Adaptive,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FitOffline => "fit-offline",
            ExperimentKind::PretrainKlms => "pretrain-klms",
            ExperimentKind::Klms => "klms",
            ExperimentKind::SweepLr => "sweep-lr",
            ExperimentKind::Adaptive => "adaptive",
        }
    }

    /// Kinds whose result depends on a seed regardless of the data source.
    fn uses_rng(self) -> bool {
        matches!(
            self,
            ExperimentKind::FitOffline | ExperimentKind::PretrainKlms | ExperimentKind::Adaptive
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Lorenz,
    Wind,
    Csv,
}

/// Which summary of the posterior a fit reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Summary {
    Map,
    /// MAP fit followed by a chain started there; the chain mean is reported.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub standardize: bool,
    pub parallel: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: None,
            seed: None,
            output_dir: PathBuf::from("out"),
            standardize: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Lorenz,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub order: usize,
    pub dict_size: usize,
    pub summary: Summary,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            order: 5,
            dict_size: 5,
            summary: Summary::Map,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSection {
    /// Number of leading series samples used for training; the rest is held out.
    pub train_sizes: Vec<usize>,
}

impl Default for OfflineSection {
    fn default() -> Self {
        OfflineSection {
            train_sizes: vec![35, 60, 250],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub train_len: usize,
    pub freeze_dict: bool,
    pub calibrate_iters: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            train_len: 270,
            freeze_dict: true,
            calibrate_iters: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlmsSection {
    /// Fixed learning rate; when absent the rate minimising the MSE on the
    /// log grid is used.
    pub learning_rate: Option<f64>,
    /// Kernel lengthscale; when absent the median pairwise input distance.
    pub sigma_k: Option<f64>,
    pub sparsifier: Sparsifier,
    /// Calibrate the novelty distance so the dictionary ends at this size.
    pub target_dict: Option<usize>,
    pub max_dict: Option<usize>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub lr_count: usize,
    /// First series index included in the MSE.
    pub eval_start: usize,
}

impl Default for KlmsSection {
    fn default() -> Self {
        KlmsSection {
            learning_rate: None,
            sigma_k: None,
            sparsifier: Sparsifier::Novelty { dist: 0.5, err: 0.0 },
            target_dict: None,
            max_dict: None,
            lr_min: 1e-3,
            lr_max: 1e-1,
            lr_count: 9,
            eval_start: 270,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    pub rho: f64,
    pub window_len: usize,
    pub stride: usize,
    pub refine_iters: usize,
    pub n_samples: usize,
    pub n_burnin: usize,
    /// First series index included in the MSE; `0` means the end of the
    /// first window.
    pub eval_start: usize,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        let a = AdaptiveConfig::default();
        AdaptiveSection {
            rho: a.rho,
            window_len: a.window_len,
            stride: a.stride,
            refine_iters: a.refine_iters,
            n_samples: a.mcmc.n_samples,
            n_burnin: a.mcmc.n_burnin,
            eval_start: 0,
        }
    }
}

/// Fully resolved experiment configuration; echoed verbatim into reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub lorenz: LorenzConfig,
    pub wind: WindConfig,
    pub model: ModelSection,
    pub offline: OfflineSection,
    pub pretrain: PretrainSection,
    pub klms: KlmsSection,
    pub adaptive: AdaptiveSection,
    pub map: MapConfig,
    pub mcmc: McmcConfig,
    pub hyper: HyperParams,
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides` (`section.key=value`, the value in
    /// TOML syntax or a bare string) and validates the result.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment
            .kind
            .ok_or_else(|| Error::Config("experiment.kind is not set".into()))
    }

    /// Whether the run needs `experiment.seed`.
    pub fn needs_seed(&self) -> bool {
        self.experiment.kind.is_some_and(ExperimentKind::uses_rng) || self.data.source == DataSource::Wind
    }

    /// Copies the experiment seed into the inference sections and checks
    /// every field.
    fn resolve(mut self) -> Result<Self> {
        if self.needs_seed() && self.experiment.seed.is_none() {
            return Err(Error::Config(format!(
                "experiment.seed is required for `{}` runs and {} data",
                self.experiment.kind.map_or("this", ExperimentKind::name),
                format!("{:?}", self.data.source).to_lowercase()
            )));
        }
        if let Some(seed) = self.experiment.seed {
            self.map.seed = seed;
            self.mcmc.seed = seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return Err(Error::Config("data.path is required when data.source = \"csv\"".into()));
        }
        if self.model.order == 0 || self.model.dict_size == 0 {
            return Err(Error::Config("model.order and model.dict_size must be positive".into()));
        }
        if self.offline.train_sizes.is_empty() {
            return Err(Error::Config("offline.train_sizes is empty".into()));
        }
        let k = &self.klms;
        if !(k.lr_min > 0.0 && k.lr_max >= k.lr_min && k.lr_count > 0) {
            return Err(Error::Config(
                "klms.lr_min, klms.lr_max and klms.lr_count must describe a non-empty positive grid".into(),
            ));
        }
        if let Some(lr) = k.learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "klms.learning_rate",
                    value: lr,
                });
            }
        }
        if let Some(s) = k.sigma_k {
            crate::error::check_positive("klms.sigma_k", s)?;
        }
        self.map.validate()?;
        self.mcmc.validate()?;
        self.hyper.validate()?;
        self.adaptive_config().validate()
    }

    pub fn adaptive_config(&self) -> AdaptiveConfig {
        let a = &self.adaptive;
        AdaptiveConfig {
            order: self.model.order,
            dict_size: self.model.dict_size,
            rho: a.rho,
            window_len: a.window_len,
            stride: a.stride,
            refine_iters: a.refine_iters,
            mcmc: McmcConfig {
                n_samples: a.n_samples,
                n_burnin: a.n_burnin,
                ..self.mcmc.clone()
            },
            map: self.map.clone(),
            hyper: self.hyper,
        }
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
