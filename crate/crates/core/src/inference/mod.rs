//! MAP estimation and posterior sampling for [`ModelParams`].

pub mod init;
pub mod mcmc;
pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddedDataset;
use crate::error::{check_positive, Error, Result};
use crate::exec::Exec;
use crate::model::{
    from_unconstrained, to_unconstrained, HyperParams, ModelParams, ParamMask, Posterior,
};

pub use init::initial_params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub max_iters: usize,
    /// Length of the first step along the normalised gradient.
    pub step_size: f64,
    pub grad_tol: f64,
    pub seed: u64,
    /// Extra starts with jittered centres; the best fit wins.
    pub restarts: usize,
    pub mask: ParamMask,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            max_iters: 3000,
            step_size: 0.1,
            grad_tol: 1e-6,
            seed: 0,
            restarts: 0,
            mask: ParamMask::all(),
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("map.step_size", self.step_size)?;
        check_positive("map.grad_tol", self.grad_tol)?;
        if self.max_iters == 0 {
            return Err(Error::Config("map.max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub n_burnin: usize,
    pub initial_proposal_scale: f64,
    pub adapt_target: f64,
    pub seed: u64,
    pub mask: ParamMask,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_samples: 1000,
            n_burnin: 1000,
            initial_proposal_scale: 0.05,
            adapt_target: 0.25,
            seed: 0,
            mask: ParamMask::all(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("mcmc.n_samples must be positive".into()));
        }
        check_positive("mcmc.initial_proposal_scale", self.initial_proposal_scale)?;
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::InvalidParameter {
                name: "mcmc.adapt_target",
                value: self.adapt_target,
            });
        }
        Ok(())
    }
}

/// Draws after burn-in, in order.
///
/// `log_post_values` are the unconstrained log-densities the sampler targets.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    pub draws: Vec<ModelParams>,
    pub log_post_values: Vec<f64>,
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub proposals: usize,
    /// Adapted proposal standard deviations over the free coordinates.
    pub proposal_scales: Vec<f64>,
}

impl McmcChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Outcome of a MAP fit with optimiser diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub params: ModelParams,
    /// Unconstrained log-posterior at `params`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iterate of the winning start.
    pub trace: Vec<f64>,
}

struct Shape {
    n: usize,
    d: usize,
}

impl optim::Objective for (Posterior<'_>, Shape) {
    fn value_and_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let (post, shape) = self;
        match from_unconstrained(u, shape.n, shape.d).and_then(|p| post.log_density(&p, true)) {
            Ok(ld) => (ld.unconstrained_value, ld.gradient.unwrap_or_default()),
            Err(_) => (f64::NEG_INFINITY, Vec::new()),
        }
    }
}

fn jitter_centres(params: &ModelParams, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = params.clone();
    let scale = 0.5 * params.sigma_k;
    for v in p.dictionary.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *v += scale * z;
    }
    p
}

/// Gradient-ascent MAP estimate starting from `init`.
pub fn map_fit(
    init: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
    cfg: &MapConfig,
) -> Result<ModelParams> {
    map_fit_detailed(init, hyper, data, cfg, Exec::default()).map(|f| f.params)
}

pub fn map_fit_detailed(
    init: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
    cfg: &MapConfig,
    exec: Exec,
) -> Result<MapFit> {
    cfg.validate()?;
    init.validate()?;
    let (n, d) = (init.n_centres(), init.dim());
    let free = cfg.mask.free_indices(n, d);
    let settings = optim::AscentSettings {
        max_iters: cfg.max_iters,
        step_size: cfg.step_size,
        grad_tol: cfg.grad_tol,
    };
    let run = |start: &ModelParams| -> Result<MapFit> {
        // Restarts already run in parallel; keep each fit's inner loop sequential.
        let inner = if cfg.restarts > 0 { Exec::Sequential } else { exec };
        let objective = (Posterior::new(data, *hyper).with_exec(inner), Shape { n, d });
        let r = optim::ascend(&objective, &to_unconstrained(start), &free, &settings)?;
        Ok(MapFit {
            params: from_unconstrained(&r.point, n, d)?,
            objective: r.value,
            iterations: r.iterations,
            converged: r.converged,
            trace: r.trace,
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<ModelParams> = std::iter::once(init.clone())
        .chain((0..cfg.restarts).map(|_| jitter_centres(init, rng.gen())))
        .collect();
    let fits = exec.map(starts.len(), |k| run(&starts[k]));
    let mut best: Option<MapFit> = None;
    for fit in fits {
        let fit = fit?;
        if best.as_ref().is_none_or(|b| fit.objective > b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Adaptive random-walk Metropolis started at `init`.
pub fn mcmc_sample(
    init: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
    cfg: &McmcConfig,
) -> Result<McmcChain> {
    mcmc_sample_scaled(init, hyper, data, cfg, None, Exec::default())
}

/// As [`mcmc_sample`], optionally starting from previously adapted proposal
/// scales (one per free coordinate).
pub fn mcmc_sample_scaled(
    init: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
    cfg: &McmcConfig,
    scales: Option<&[f64]>,
    exec: Exec,
) -> Result<McmcChain> {
    cfg.validate()?;
    init.validate()?;
    let (n, d) = (init.n_centres(), init.dim());
    let free = cfg.mask.free_indices(n, d);
    let post = Posterior::new(data, *hyper).with_exec(exec);
    let target = |u: &[f64]| post.unconstrained(u, n, d);
    let settings = mcmc::SamplerSettings {
        n_samples: cfg.n_samples,
        n_burnin: cfg.n_burnin,
        initial_proposal_scale: cfg.initial_proposal_scale,
        adapt_target: cfg.adapt_target,
        seed: cfg.seed,
    };
    let raw = mcmc::sample(&target, &to_unconstrained(init), &free, &settings, scales)?;
    let acceptance_rate = raw.acceptance_rate();
    let draws = raw
        .draws
        .iter()
        .map(|u| from_unconstrained(u, n, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(McmcChain {
        draws,
        log_post_values: raw.log_density,
        acceptance_rate,
        accepted: raw.accepted,
        proposals: raw.proposals,
        proposal_scales: raw.proposal_scales,
    })
}

/// Independent chains with seeds `cfg.seed, cfg.seed + 1, ...`, run
/// concurrently under `exec`.
pub fn mcmc_chains(
    init: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
    cfg: &McmcConfig,
    n_chains: usize,
    exec: Exec,
) -> Result<Vec<McmcChain>> {
    exec.map(n_chains, |k| {
        let cfg = McmcConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        mcmc_sample_scaled(init, hyper, data, &cfg, None, Exec::Sequential)
    })
    .into_iter()
    .collect()
}

/// Average of the draws in unconstrained coordinates, mapped back.
pub fn chain_mean(chain: &McmcChain) -> Result<ModelParams> {
    let first = chain.draws.first().ok_or(Error::Empty("chain"))?;
    let (n, d) = (first.n_centres(), first.dim());
    let mut acc = vec![0.0; first.n_coords()];
    for p in &chain.draws {
        for (a, v) in acc.iter_mut().zip(to_unconstrained(p)) {
            *a += v;
        }
    }
    let m = chain.draws.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    from_unconstrained(&acc, n, d)
}

/// The draw with the highest recorded log-posterior (first one on ties).
pub fn chain_map(chain: &McmcChain) -> Result<ModelParams> {
    let best = chain
        .log_post_values
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .ok_or(Error::Empty("chain"))?;
    Ok(chain.draws[best.0].clone())
}
