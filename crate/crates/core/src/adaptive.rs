//! Fully adaptive operation: parameters are re-estimated on consecutive
//! windows and blended into a running estimate with a forgetting factor.
//!
//! For window `n` the running estimate is
//! `theta_online[n] = rho * theta_window[n] + (1 - rho) * theta_online[n - 1]`,
//! taken coordinate-wise in the unconstrained parameterisation; the first
//! window's MAP fit seeds the recursion.

use serde::{Deserialize, Serialize};

use crate::data::{embed_targets, TimeSeries};
use crate::error::{check_dim, Error, Result};
use crate::inference::{
    chain_map, initial_params, map_fit, map_fit_detailed, mcmc_sample_scaled, MapConfig, McmcConfig,
};
use crate::exec::Exec;
use crate::model::{expansion, from_unconstrained, to_unconstrained, HyperParams, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub order: usize,
    pub dict_size: usize,
    pub rho: f64,
    pub window_len: usize,
    /// Offset between consecutive window starts; `0` means `window_len`.
    pub stride: usize,
    /// Gradient-ascent iterations applied to each window's best draw; `0`
    /// uses the draw as is.
    pub refine_iters: usize,
    pub mcmc: McmcConfig,
    pub map: MapConfig,
    pub hyper: HyperParams,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            order: 5,
            dict_size: 10,
            rho: 0.9,
            window_len: 25,
            stride: 0,
            refine_iters: 0,
            mcmc: McmcConfig {
                n_samples: 100,
                n_burnin: 100,
                ..McmcConfig::default()
            },
            map: MapConfig::default(),
            hyper: HyperParams::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn stride(&self) -> usize {
        if self.stride == 0 {
            self.window_len
        } else {
            self.stride
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.dict_size == 0 {
            return Err(Error::Config("order and dict_size must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter {
                name: "rho",
                value: self.rho,
            });
        }
        if self.window_len <= self.order {
            return Err(Error::Config(format!(
                "window_len {} must exceed the order {}",
                self.window_len, self.order
            )));
        }
        self.mcmc.validate()?;
        self.map.validate()?;
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineState {
    pub theta_online: ModelParams,
    pub window_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRun {
    /// One-step-ahead predictions for series indices `first_index..`.
    pub predictions: TimeSeries,
    pub first_index: usize,
    pub states: Vec<OnlineState>,
    /// Post-burn-in acceptance rate of each window's chain (windows 2 onward).
    pub acceptance: Vec<f64>,
}

/// Convex combination `rho * window + (1 - rho) * prev` in unconstrained
/// coordinates.
pub fn blend(window: &ModelParams, prev: &ModelParams, rho: f64) -> Result<ModelParams> {
    check_dim(prev.n_centres(), window.n_centres())?;
    check_dim(prev.dim(), window.dim())?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter { name: "rho", value: rho });
    }
    let uw = to_unconstrained(window);
    let up = to_unconstrained(prev);
    let mixed: Vec<f64> = uw
        .iter()
        .zip(&up)
        .map(|(w, p)| rho * w + (1.0 - rho) * p)
        .collect();
    from_unconstrained(&mixed, window.n_centres(), window.dim())
}

fn predict_range(
    theta: &ModelParams,
    series: &TimeSeries,
    order: usize,
    range: std::ops::Range<usize>,
    out: &mut Vec<f64>,
) {
    let y = &series.values;
    for i in range {
        out.push(expansion(&theta.alpha, &theta.dictionary, theta.sigma_k, &y[i - order..i]));
    }
}

/// Sliding-window estimation over `series`.
///
/// Every sample after the first window is predicted with the estimate built
/// from earlier windows only.
pub fn adaptive_run(series: &TimeSeries, cfg: &AdaptiveConfig) -> Result<AdaptiveRun> {
    cfg.validate()?;
    let len = series.len();
    let width = cfg.window_len;
    if len < 2 * width {
        return Err(Error::SeriesTooShort {
            len,
            required: 2 * width,
        });
    }
    let stride = cfg.stride();
    let starts: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|s| s + width <= len)
        .collect();
    let in_window = |k: usize, e: Error| Error::Window {
        window: k + 1,
        source: Box::new(e),
    };

    let first = embed_targets(series, cfg.order, 0..width).map_err(|e| in_window(0, e))?;
    let init = initial_params(&first, cfg.dict_size, cfg.map.seed).map_err(|e| in_window(0, e))?;
    let mut theta = map_fit(&init, &cfg.hyper, &first, &cfg.map).map_err(|e| in_window(0, e))?;

    let mut states = vec![OnlineState {
        theta_online: theta.clone(),
        window_index: 0,
    }];
    let mut predictions = Vec::with_capacity(len - width);
    let mut predicted_to = width;
    let mut scales: Option<Vec<f64>> = None;
    let mut acceptance = Vec::new();

    for (k, &start) in starts.iter().enumerate().skip(1) {
        let end = start + width;
        if predicted_to < end {
            predict_range(&theta, series, cfg.order, predicted_to.max(start)..end, &mut predictions);
            predicted_to = end;
        }
        let data = embed_targets(series, cfg.order, start..end).map_err(|e| in_window(k, e))?;
        let mcmc = McmcConfig {
            seed: cfg.mcmc.seed.wrapping_add(k as u64),
            ..cfg.mcmc.clone()
        };
        let chain = mcmc_sample_scaled(&theta, &cfg.hyper, &data, &mcmc, scales.as_deref(), Exec::Sequential)
            .map_err(|e| in_window(k, e))?;
        let mut theta_window = chain_map(&chain).map_err(|e| in_window(k, e))?;
        if cfg.refine_iters > 0 {
            let refine = MapConfig {
                max_iters: cfg.refine_iters,
                restarts: 0,
                ..cfg.map.clone()
            };
            theta_window = map_fit_detailed(&theta_window, &cfg.hyper, &data, &refine, Exec::Sequential)
                .map_err(|e| in_window(k, e))?
                .params;
        }
        theta = blend(&theta_window, &theta, cfg.rho).map_err(|e| in_window(k, e))?;
        acceptance.push(chain.acceptance_rate);
        scales = Some(chain.proposal_scales);
        states.push(OnlineState {
            theta_online: theta.clone(),
            window_index: k,
        });
    }
    if predicted_to < len {
        predict_range(&theta, series, cfg.order, predicted_to..len, &mut predictions);
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("adaptive prediction".into()));
    }

    Ok(AdaptiveRun {
        predictions: TimeSeries {
            name: format!("{}-adaptive", series.name),
            values: predictions,
        },
        first_index: width,
        states,
        acceptance,
    })
}
