//! Runs a configured experiment and writes its prediction, Gram and report
//! files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::config::{DataSource, ExperimentConfig, ExperimentKind, Summary};
use super::{gram_offdiag_energy, write_gram, Predictions};
use crate::adaptive::adaptive_run;
use crate::data::{embed, embed_targets, load_csv, lorenz_generate, standardize, wind_like, EmbeddedDataset, TimeSeries};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::inference::init::median_distance;
use crate::inference::{chain_mean, initial_params, map_fit_detailed, mcmc_sample_scaled};
use crate::kernel::{gram, Dictionary};
use crate::klms::{self, calibrate_novelty, from_pretrained, log_grid, sweep_learning_rate, KlmsState, Sparsifier};
use crate::model::{predict, ModelParams};

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub kind: ExperimentKind,
    pub mse: f64,
    pub dict_size: usize,
    /// `None` when the dictionary has fewer than two centres.
    pub gram_offdiag_energy: Option<f64>,
    pub runtime_seconds: f64,
    pub details: serde_json::Value,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// The configured series, standardized when `experiment.standardize` is set.
pub fn load_series(cfg: &ExperimentConfig) -> Result<TimeSeries> {
    let raw = match cfg.data.source {
        DataSource::Lorenz => lorenz_generate(&cfg.lorenz)?,
        DataSource::Wind => {
            let seed = cfg
                .experiment
                .seed
                .ok_or_else(|| Error::Config("experiment.seed is required for wind data".into()))?;
            wind_like(&cfg.wind, seed)?
        }
        DataSource::Csv => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.path is not set".into()))?;
            load_csv(path)?
        }
    };
    if cfg.experiment.standardize {
        Ok(standardize(&raw)?.0)
    } else {
        Ok(raw)
    }
}

pub fn run_experiment_file(path: &Path, overrides: &[String]) -> Result<Report> {
    run_experiment(&ExperimentConfig::load(path, overrides)?)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let started = Instant::now();
    let series = load_series(cfg)?;
    let out = &cfg.experiment.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let exec = if cfg.experiment.parallel {
        Exec::Parallel
    } else {
        Exec::Sequential
    };

    let mut report = match kind {
        ExperimentKind::FitOffline => fit_offline(cfg, &series, exec)?,
        ExperimentKind::PretrainKlms => pretrain_klms(cfg, &series, exec)?,
        ExperimentKind::Klms => standard_klms(cfg, &series, exec, false)?,
        ExperimentKind::SweepLr => standard_klms(cfg, &series, exec, true)?,
        ExperimentKind::Adaptive => adaptive(cfg, &series)?,
    };
    report.runtime_seconds = started.elapsed().as_secs_f64();
    let path = out.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::NonFinite(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    report.files.push(path);
    Ok(report)
}

/// Collects files written by one experiment.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn predictions(&mut self, name: &str, p: &Predictions) -> Result<()> {
        let path = self.dir.join(name);
        p.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn gram(&mut self, name: &str, dict: &Dictionary, sigma_k: f64) -> Result<()> {
        let path = self.dir.join(name);
        write_gram(&gram(dict, sigma_k)?, &path)?;
        self.files.push(path);
        Ok(())
    }

    fn rows(&mut self, name: &str, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = format!("{},{}\n", header[0], header[1]);
        for (a, b) in rows {
            text.push_str(&format!("{a},{b}\n"));
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

fn energy(dict: &Dictionary, sigma_k: f64) -> Option<f64> {
    gram_offdiag_energy(dict, sigma_k).ok()
}

fn report(
    cfg: &ExperimentConfig,
    mse: f64,
    dict: &Dictionary,
    sigma_k: f64,
    details: serde_json::Value,
    outputs: Outputs<'_>,
) -> Result<Report> {
    if !mse.is_finite() {
        return Err(Error::NonFinite("mean squared error".into()));
    }
    Ok(Report {
        kind: cfg.kind()?,
        mse,
        dict_size: dict.len(),
        gram_offdiag_energy: energy(dict, sigma_k),
        runtime_seconds: 0.0,
        details,
        config: cfg.clone(),
        files: outputs.files,
    })
}

fn model_predictions(params: &ModelParams, data: &EmbeddedDataset) -> Result<Predictions> {
    let mut p = Predictions::default();
    for (k, (x, &y)) in data.inputs().zip(data.targets()).enumerate() {
        p.push(data.first_target() + k, y, predict(params, x)?);
    }
    Ok(p)
}

fn filter_predictions(state: &mut KlmsState, data: &EmbeddedDataset) -> Result<Predictions> {
    let steps = klms::run(state, data)?;
    let mut p = Predictions::default();
    for (k, (s, &y)) in steps.iter().zip(data.targets()).enumerate() {
        p.push(data.first_target() + k, y, s.prediction);
    }
    Ok(p)
}

fn seed(cfg: &ExperimentConfig) -> u64 {
    cfg.experiment.seed.unwrap_or(0)
}

fn fit(cfg: &ExperimentConfig, train: &EmbeddedDataset, exec: Exec) -> Result<(ModelParams, serde_json::Value)> {
    let init = initial_params(train, cfg.model.dict_size, seed(cfg))?;
    let map = map_fit_detailed(&init, &cfg.hyper, train, &cfg.map, exec)?;
    let mut info = json!({
        "map_iterations": map.iterations,
        "map_converged": map.converged,
        "map_objective": map.objective,
    });
    let params = match cfg.model.summary {
        Summary::Map => map.params,
        Summary::Mean => {
            let chain = mcmc_sample_scaled(&map.params, &cfg.hyper, train, &cfg.mcmc, None, exec)?;
            info["acceptance_rate"] = json!(chain.acceptance_rate);
            chain_mean(&chain)?
        }
    };
    info["sigma_k"] = json!(params.sigma_k);
    info["sigma_eps"] = json!(params.sigma_eps);
    Ok((params, info))
}

fn fit_offline(cfg: &ExperimentConfig, series: &TimeSeries, exec: Exec) -> Result<Report> {
    let d = cfg.model.order;
    let all = embed(series, d)?;
    let sizes = &cfg.offline.train_sizes;
    let mut outputs = Outputs {
        dir: &cfg.experiment.output_dir,
        files: Vec::new(),
    };
    let mut runs = Vec::new();
    let mut last = None;
    for &t in sizes {
        if t >= series.len() {
            return Err(Error::SeriesTooShort {
                len: series.len(),
                required: t + 1,
            });
        }
        let train = embed_targets(series, d, 0..t)?;
        let (params, info) = fit(cfg, &train, exec)?;
        let preds = model_predictions(&params, &all)?;
        let mse = preds.mse_from(t)?;
        let subset: Vec<&[f64]> = all.inputs().take(cfg.model.dict_size).collect();
        let baseline = energy(&Dictionary::from_centres(&subset)?, params.sigma_k);
        let suffix = if sizes.len() == 1 {
            String::new()
        } else {
            format!("_{t}")
        };
        outputs.predictions(&format!("predictions{suffix}.csv"), &preds)?;
        outputs.gram(&format!("gram{suffix}.csv"), &params.dictionary, params.sigma_k)?;
        runs.push(json!({
            "train_size": t,
            "mse": mse,
            "gram_offdiag_energy": energy(&params.dictionary, params.sigma_k),
            "first_inputs_gram_offdiag_energy": baseline,
            "fit": info,
        }));
        last = Some((mse, params));
    }
    let (mse, params) = last.expect("train_sizes is non-empty");
    report(
        cfg,
        mse,
        &params.dictionary,
        params.sigma_k,
        json!({ "runs": runs }),
        outputs,
    )
}

fn best_rate(sweep: &[(f64, f64)]) -> Result<(f64, f64)> {
    sweep
        .iter()
        .copied()
        .filter(|(_, m)| m.is_finite())
        .fold(None, |best: Option<(f64, f64)>, r| match best {
            Some(b) if b.1 <= r.1 => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::NonFinite("every learning rate diverged".into()))
}

fn rate_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    log_grid(cfg.klms.lr_min, cfg.klms.lr_max, cfg.klms.lr_count)
}

/// Novelty-KLMS baseline over the whole series, optionally calibrated to a
/// target dictionary size.
fn baseline_state(cfg: &ExperimentConfig, all: &EmbeddedDataset, sigma_k: f64, target: Option<usize>) -> Result<(KlmsState, serde_json::Value)> {
    let mut info = json!({ "sigma_k": sigma_k });
    let sparsifier = match (cfg.klms.sparsifier, target) {
        (Sparsifier::Novelty { err, .. }, Some(t)) => {
            let (dist, size) = calibrate_novelty(all, sigma_k, t, cfg.pretrain.calibrate_iters)?;
            info["novelty_dist"] = json!(dist);
            info["calibrated_size"] = json!(size);
            Sparsifier::Novelty { dist, err }
        }
        (sp, _) => sp,
    };
    let mut state = KlmsState::new(all.dim(), sigma_k, 0.0, sparsifier)?;
    if let Some(m) = cfg.klms.max_dict {
        state = state.with_max_dict(m);
    }
    Ok((state, info))
}

fn pretrain_klms(cfg: &ExperimentConfig, series: &TimeSeries, exec: Exec) -> Result<Report> {
    let d = cfg.model.order;
    let tl = cfg.pretrain.train_len;
    let eval_start = cfg.klms.eval_start;
    if tl >= series.len() {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            required: tl + 1,
        });
    }
    let train = embed_targets(series, d, 0..tl)?;
    let tail = embed_targets(series, d, tl..series.len())?;
    let all = embed(series, d)?;
    let grid = rate_grid(cfg);

    let (params, fit_info) = fit(cfg, &train, exec)?;
    let mut pre = from_pretrained(&params, 0.0, cfg.pretrain.freeze_dict)?;
    if !cfg.pretrain.freeze_dict {
        pre.sparsifier = cfg.klms.sparsifier;
    }
    let pre_sweep = sweep_learning_rate(&pre, &tail, &grid, eval_start, exec)?;
    pre.learning_rate = match cfg.klms.learning_rate {
        Some(r) => r,
        None => best_rate(&pre_sweep)?.0,
    };
    let pre_preds = filter_predictions(&mut pre, &tail)?;
    let pre_mse = pre_preds.mse_from(eval_start)?;

    let sigma_std = cfg
        .klms
        .sigma_k
        .or_else(|| median_distance(&train))
        .unwrap_or(1.0);
    let target = cfg.klms.target_dict.or(Some(cfg.model.dict_size));
    let (mut std_state, mut std_info) = baseline_state(cfg, &all, sigma_std, target)?;
    let std_sweep = sweep_learning_rate(&std_state, &all, &grid, eval_start, exec)?;
    std_state.learning_rate = match cfg.klms.learning_rate {
        Some(r) => r,
        None => best_rate(&std_sweep)?.0,
    };
    let std_preds = filter_predictions(&mut std_state, &all)?;
    let std_mse = std_preds.mse_from(eval_start)?;
    let std_dict = std_state.dictionary();
    std_info["mse"] = json!(std_mse);
    std_info["learning_rate"] = json!(std_state.learning_rate);
    std_info["dict_size"] = json!(std_state.dict_size());
    std_info["gram_offdiag_energy"] = json!(std_dict.as_ref().and_then(|dd| energy(dd, sigma_std)));
    std_info["sweep"] = json!(std_sweep);

    let mut outputs = Outputs {
        dir: &cfg.experiment.output_dir,
        files: Vec::new(),
    };
    outputs.predictions("predictions.csv", &pre_preds)?;
    outputs.predictions("predictions_standard.csv", &std_preds)?;
    let pre_dict = pre.dictionary().ok_or(Error::Empty("pre-trained dictionary"))?;
    outputs.gram("gram.csv", &pre_dict, pre.sigma_k)?;
    if let Some(dd) = &std_dict {
        outputs.gram("gram_standard.csv", dd, sigma_std)?;
    }
    report(
        cfg,
        pre_mse,
        &pre_dict,
        pre.sigma_k,
        json!({
            "learning_rate": pre.learning_rate,
            "sweep": pre_sweep,
            "fit": fit_info,
            "standard": std_info,
        }),
        outputs,
    )
}

fn standard_klms(cfg: &ExperimentConfig, series: &TimeSeries, exec: Exec, sweep_only: bool) -> Result<Report> {
    let all = embed(series, cfg.model.order)?;
    let sigma_k = cfg.klms.sigma_k.or_else(|| median_distance(&all)).unwrap_or(1.0);
    let (mut state, mut info) = baseline_state(cfg, &all, sigma_k, cfg.klms.target_dict)?;
    let mut outputs = Outputs {
        dir: &cfg.experiment.output_dir,
        files: Vec::new(),
    };
    state.learning_rate = match cfg.klms.learning_rate {
        Some(r) if !sweep_only => r,
        _ => {
            let sweep = sweep_learning_rate(&state, &all, &rate_grid(cfg), cfg.klms.eval_start, exec)?;
            outputs.rows("sweep.csv", ["learning_rate", "mse"], &sweep)?;
            info["sweep"] = json!(sweep);
            best_rate(&sweep)?.0
        }
    };
    let preds = filter_predictions(&mut state, &all)?;
    let mse = preds.mse_from(cfg.klms.eval_start)?;
    info["learning_rate"] = json!(state.learning_rate);
    outputs.predictions("predictions.csv", &preds)?;
    let dict = match state.dictionary() {
        Some(dd) => {
            outputs.gram("gram.csv", &dd, sigma_k)?;
            dd
        }
        None => return Err(Error::Empty("KLMS dictionary")),
    };
    report(cfg, mse, &dict, sigma_k, info, outputs)
}

fn adaptive(cfg: &ExperimentConfig, series: &TimeSeries) -> Result<Report> {
    let acfg = cfg.adaptive_config();
    let run = adaptive_run(series, &acfg)?;
    let mut preds = Predictions::default();
    for (k, &p) in run.predictions.values.iter().enumerate() {
        let i = run.first_index + k;
        preds.push(i, series.values[i], p);
    }
    let start = match cfg.adaptive.eval_start {
        0 => run.first_index,
        s => s,
    };
    let mse = preds.mse_from(start)?;
    let last = &run.states.last().expect("at least one state").theta_online;
    let mut outputs = Outputs {
        dir: &cfg.experiment.output_dir,
        files: Vec::new(),
    };
    outputs.predictions("predictions.csv", &preds)?;
    outputs.gram("gram.csv", &last.dictionary, last.sigma_k)?;
    let mean_acc = if run.acceptance.is_empty() {
        0.0
    } else {
        run.acceptance.iter().sum::<f64>() / run.acceptance.len() as f64
    };
    report(
        cfg,
        mse,
        &last.dictionary,
        last.sigma_k,
        json!({
            "eval_start": start,
            "windows": run.states.len(),
            "mean_acceptance_rate": mean_acc,
            "sigma_k": last.sigma_k,
            "sigma_eps": last.sigma_eps,
        }),
        outputs,
    )
}
