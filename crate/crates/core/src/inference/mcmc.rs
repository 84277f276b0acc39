//! Adaptive random-walk Metropolis over a subset of coordinates.
//!
//! During burn-in the proposal uses per-coordinate scales `lambda * s_i`.
//! `lambda` follows a Robbins-Monro recursion toward the target acceptance
//! rate and `s_i` tracks the running standard deviation of each coordinate.
//! A long run of rejections during burn-in shrinks `lambda` tenfold, which
//! recovers from starting scales far wider than the target.
//! After burn-in the proposal is frozen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const REJECTION_STREAK: usize = 20;

/// Log-density to sample from; `-inf` outside the support.
pub trait LogTarget {
    fn log_density(&self, u: &[f64]) -> f64;
}

impl<F> LogTarget for F
where
    F: Fn(&[f64]) -> f64,
{
    fn log_density(&self, u: &[f64]) -> f64 {
        self(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub n_samples: usize,
    pub n_burnin: usize,
    pub initial_proposal_scale: f64,
    pub adapt_target: f64,
    pub seed: u64,
}

/// Raw draws over the full coordinate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChain {
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    /// Accepted proposals after burn-in.
    pub accepted: usize,
    /// Proposals made after burn-in.
    pub proposals: usize,
    /// Final per-free-coordinate proposal standard deviations.
    pub proposal_scales: Vec<f64>,
}

impl RawChain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Running mean and variance (Welford).
#[derive(Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Moments {
            n: 0.0,
            mean: vec![0.0; k],
            m2: vec![0.0; k],
        }
    }

    fn push(&mut self, x: impl Iterator<Item = f64>) {
        self.n += 1.0;
        for (i, v) in x.enumerate() {
            let delta = v - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (v - self.mean[i]);
        }
    }

    fn std(&self, i: usize) -> f64 {
        (self.m2[i] / (self.n - 1.0).max(1.0)).sqrt()
    }
}

/// Samples `target`, moving only the coordinates in `free`.
///
/// `scales`, when given, replaces the initial per-coordinate proposal scales
/// (one entry per free coordinate).
pub fn sample<T: LogTarget + ?Sized>(
    target: &T,
    init: &[f64],
    free: &[usize],
    settings: &SamplerSettings,
    scales: Option<&[f64]>,
) -> Result<RawChain> {
    let k = free.len();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut u = init.to_vec();
    let mut f = target.log_density(&u);
    if !f.is_finite() {
        return Err(Error::NonFinite("log-density at the initial point".into()));
    }

    let mut scale: Vec<f64> = match scales {
        Some(s) if s.len() == k => s.to_vec(),
        _ => vec![settings.initial_proposal_scale; k],
    };
    let mut log_lambda = 0.0f64;
    let mut moments = Moments::new(k);
    let burnin = settings.n_burnin;
    let min_moments = (2 * k).max(50) as f64;
    let dim_factor = 2.38 / (k.max(1) as f64).sqrt();
    let mut burnin_accepts = 0usize;
    let mut streak = 0usize;

    let mut draws = Vec::with_capacity(settings.n_samples);
    let mut log_density = Vec::with_capacity(settings.n_samples);
    let mut accepted = 0usize;
    let mut trial = u.clone();

    for t in 0..burnin + settings.n_samples {
        let lambda = log_lambda.exp();
        trial.copy_from_slice(&u);
        for (c, &i) in free.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            trial[i] += lambda * scale[c] * z;
        }
        let ft = target.log_density(&trial);
        let log_ratio = if ft.is_finite() { ft - f } else { f64::NEG_INFINITY };
        let log_u: f64 = rng.gen::<f64>().ln();
        let accept = log_u < log_ratio;
        if accept {
            std::mem::swap(&mut u, &mut trial);
            f = ft;
        }

        if t < burnin {
            burnin_accepts += accept as usize;
            let acc_prob = log_ratio.min(0.0).exp();
            let gain = 1.0 / ((t + 1) as f64).powf(0.6);
            log_lambda += gain * (acc_prob - settings.adapt_target);
            streak = if accept { 0 } else { streak + 1 };
            if streak == REJECTION_STREAK {
                log_lambda -= std::f64::consts::LN_10;
                streak = 0;
            }
            log_lambda = log_lambda.clamp(-30.0, 10.0);

            // Once enough states are seen, per-coordinate scales follow the
            // running standard deviations; lambda absorbs the change in
            // overall step size so the proposal stays continuous.
            moments.push(free.iter().map(|&i| u[i]));
            if moments.n >= min_moments {
                let before: f64 = scale.iter().map(|s| s.ln()).sum();
                for (c, s) in scale.iter_mut().enumerate() {
                    let sd = moments.std(c);
                    if sd.is_finite() && sd > 0.0 {
                        *s = (dim_factor * sd).max(1e-10);
                    }
                }
                let after: f64 = scale.iter().map(|s| s.ln()).sum();
                log_lambda += (before - after) / k as f64;
            }
        } else {
            accepted += accept as usize;
            draws.push(u.clone());
            log_density.push(f);
        }
    }

    if burnin > 0 && burnin_accepts == 0 {
        return Err(Error::ZeroAcceptance { burnin });
    }

    let lambda = log_lambda.exp();
    Ok(RawChain {
        draws,
        log_density,
        accepted,
        proposals: settings.n_samples,
        proposal_scales: scale.iter().map(|s| s * lambda).collect(),
    })
}
