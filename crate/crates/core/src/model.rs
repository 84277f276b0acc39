//! The probabilistic filter model: Gaussian likelihood around a kernel
//! expansion, priors over weights, dictionary and scales, and the joint
//! log-posterior with its analytic gradient.
//!
//! The optimiser and sampler work on an unconstrained vector laid out as
//!
//! ```text
//! [ alpha (N) | centres, row-major (N * d) | ln sigma_k | ln sigma_eps | ln l_alpha | ln l_dict ]
//! ```
//!
//! Densities over that vector include the log-Jacobian of the exponential
//! maps, i.e. `+ ln z` for each of the four scales.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddedDataset;
use crate::error::{check_dim, check_positive, Error, Result};
use crate::exec::Exec;
use crate::kernel::{gauss, gram_sq_norm_unchecked, sq_dist, Dictionary};

/// Number of log-transformed scalars at the end of the unconstrained vector.
pub const N_SCALES: usize = 4;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub dictionary: Dictionary,
    pub sigma_k: f64,
    pub sigma_eps: f64,
    pub l_alpha: f64,
    pub l_dict: f64,
}

impl ModelParams {
    pub fn n_centres(&self) -> usize {
        self.dictionary.len()
    }

    pub fn dim(&self) -> usize {
        self.dictionary.dim()
    }

    /// Length of the unconstrained vector for this shape.
    pub fn n_coords(&self) -> usize {
        n_coords(self.n_centres(), self.dim())
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.dictionary.len(), self.alpha.len())?;
        if let Some(a) = self.alpha.iter().find(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("weight {a}")));
        }
        check_positive("sigma_k", self.sigma_k)?;
        check_positive("sigma_eps", self.sigma_eps)?;
        check_positive("l_alpha", self.l_alpha)?;
        check_positive("l_dict", self.l_dict)
    }
}

pub fn n_coords(n: usize, d: usize) -> usize {
    n + n * d + N_SCALES
}

/// Half-Normal variances of the scale priors and hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub v_k: f64,
    pub v_eps: f64,
    pub v_alpha: f64,
    pub v_dict: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            v_k: 1.0,
            v_eps: 1.0,
            v_alpha: 1.0,
            v_dict: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("v_k", self.v_k)?;
        check_positive("v_eps", self.v_eps)?;
        check_positive("v_alpha", self.v_alpha)?;
        check_positive("v_dict", self.v_dict)
    }
}

/// Log-posterior at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensity {
    /// `log_likelihood + log_prior`.
    pub value: f64,
    /// `value` plus the log-Jacobian of the unconstrained parameterisation.
    pub unconstrained_value: f64,
    /// Gradient of `unconstrained_value` over the unconstrained coordinates.
    pub gradient: Option<Vec<f64>>,
}

/// Selects which parameter blocks are free during optimisation or sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamMask {
    pub alpha: bool,
    pub centres: bool,
    pub sigma_k: bool,
    pub sigma_eps: bool,
    pub l_alpha: bool,
    pub l_dict: bool,
}

impl Default for ParamMask {
    fn default() -> Self {
        ParamMask::all()
    }
}

impl ParamMask {
    pub const fn all() -> Self {
        ParamMask {
            alpha: true,
            centres: true,
            sigma_k: true,
            sigma_eps: true,
            l_alpha: true,
            l_dict: true,
        }
    }

    pub const fn alpha_only() -> Self {
        ParamMask {
            alpha: true,
            centres: false,
            sigma_k: false,
            sigma_eps: false,
            l_alpha: false,
            l_dict: false,
        }
    }

    /// Indices of the free coordinates in the unconstrained vector.
    pub fn free_indices(&self, n: usize, d: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(n_coords(n, d));
        if self.alpha {
            idx.extend(0..n);
        }
        if self.centres {
            idx.extend(n..n + n * d);
        }
        let base = n + n * d;
        for (k, on) in [self.sigma_k, self.sigma_eps, self.l_alpha, self.l_dict]
            .into_iter()
            .enumerate()
        {
            if on {
                idx.push(base + k);
            }
        }
        idx
    }
}

pub fn to_unconstrained(params: &ModelParams) -> Vec<f64> {
    let mut u = Vec::with_capacity(params.n_coords());
    u.extend_from_slice(&params.alpha);
    u.extend_from_slice(params.dictionary.as_slice());
    u.extend([
        params.sigma_k.ln(),
        params.sigma_eps.ln(),
        params.l_alpha.ln(),
        params.l_dict.ln(),
    ]);
    u
}

pub fn from_unconstrained(u: &[f64], n: usize, d: usize) -> Result<ModelParams> {
    let expected = n_coords(n, d);
    if u.len() != expected {
        return Err(Error::WrongLength {
            expected,
            found: u.len(),
        });
    }
    if let Some(v) = u.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("unconstrained coordinate {v}")));
    }
    let base = n + n * d;
    let params = ModelParams {
        alpha: u[..n].to_vec(),
        dictionary: Dictionary::new(d, u[n..base].to_vec())?,
        sigma_k: u[base].exp(),
        sigma_eps: u[base + 1].exp(),
        l_alpha: u[base + 2].exp(),
        l_dict: u[base + 3].exp(),
    };
    params.validate()?;
    Ok(params)
}

/// Noise-free model output `alpha^T k(x, D)`.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<f64> {
    check_dim(params.dim(), x.len())?;
    check_dim(params.n_centres(), params.alpha.len())?;
    check_positive("sigma_k", params.sigma_k)?;
    Ok(expansion(&params.alpha, &params.dictionary, params.sigma_k, x))
}

/// `sum_j alpha_j k(x, s_j)`, summed in centre order.
#[inline]
pub(crate) fn expansion(alpha: &[f64], dict: &Dictionary, sigma: f64, x: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(dict.centres())
        .map(|(a, s)| a * gauss(sq_dist(x, s), sigma))
        .sum()
}

fn half_normal_ln(z: f64, v: f64) -> f64 {
    0.5 * (2.0 / (PI * v)).ln() - z * z / (2.0 * v)
}

pub fn log_likelihood(params: &ModelParams, data: &EmbeddedDataset) -> Result<f64> {
    Ok(Posterior::new(data, HyperParams::default())
        .evaluate(params, false)?
        .likelihood)
}

pub fn log_prior(params: &ModelParams, hyper: &HyperParams) -> Result<f64> {
    params.validate()?;
    hyper.validate()?;
    Ok(prior_terms(params, hyper).value)
}

pub fn log_posterior(
    params: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
    with_gradient: bool,
) -> Result<LogDensity> {
    Posterior::new(data, *hyper).log_density(params, with_gradient)
}

pub fn grad_log_posterior(
    params: &ModelParams,
    hyper: &HyperParams,
    data: &EmbeddedDataset,
) -> Result<Vec<f64>> {
    Ok(log_posterior(params, hyper, data, true)?
        .gradient
        .expect("gradient requested"))
}

struct PriorTerms {
    value: f64,
    sq_alpha: f64,
    gram_sq: f64,
}

fn prior_terms(params: &ModelParams, hyper: &HyperParams) -> PriorTerms {
    let sq_alpha: f64 = params.alpha.iter().map(|a| a * a).sum();
    let gram_sq = gram_sq_norm_unchecked(&params.dictionary, params.sigma_k);
    let (la, ld) = (params.l_alpha, params.l_dict);
    let value = -sq_alpha / (2.0 * la * la)
        - 0.5 * (LN_2PI + 2.0 * la.ln())
        - gram_sq / (2.0 * ld * ld)
        - 0.5 * (LN_2PI + 2.0 * ld.ln())
        + half_normal_ln(params.sigma_k, hyper.v_k)
        + half_normal_ln(params.sigma_eps, hyper.v_eps)
        + half_normal_ln(la, hyper.v_alpha)
        + half_normal_ln(ld, hyper.v_dict);
    PriorTerms {
        value,
        sq_alpha,
        gram_sq,
    }
}

/// Per-chunk accumulator over data pairs.
struct FitAccum {
    sq_resid: f64,
    g_alpha: Vec<f64>,
    g_centres: Vec<f64>,
    g_log_sigma: f64,
}

impl FitAccum {
    fn merge(mut self, other: FitAccum) -> FitAccum {
        self.sq_resid += other.sq_resid;
        for (a, b) in self.g_alpha.iter_mut().zip(&other.g_alpha) {
            *a += b;
        }
        for (a, b) in self.g_centres.iter_mut().zip(&other.g_centres) {
            *a += b;
        }
        self.g_log_sigma += other.g_log_sigma;
        self
    }
}

/// Result of [`Posterior::evaluate`].
pub struct Evaluation {
    pub likelihood: f64,
    pub prior: f64,
    pub log_jacobian: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Log-posterior of the model over a fixed dataset.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    data: &'a EmbeddedDataset,
    hyper: HyperParams,
    exec: Exec,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a EmbeddedDataset, hyper: HyperParams) -> Self {
        Posterior {
            data,
            hyper,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn data(&self) -> &EmbeddedDataset {
        self.data
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn log_density(&self, params: &ModelParams, with_gradient: bool) -> Result<LogDensity> {
        let e = self.evaluate(params, with_gradient)?;
        let value = e.likelihood + e.prior;
        Ok(LogDensity {
            value,
            unconstrained_value: value + e.log_jacobian,
            gradient: e.gradient,
        })
    }

    /// Density over the unconstrained coordinates; `-inf` for vectors that do
    /// not map to valid parameters.
    pub fn unconstrained(&self, u: &[f64], n: usize, d: usize) -> f64 {
        match from_unconstrained(u, n, d).and_then(|p| self.log_density(&p, false)) {
            Ok(ld) if ld.unconstrained_value.is_finite() => ld.unconstrained_value,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn evaluate(&self, params: &ModelParams, with_gradient: bool) -> Result<Evaluation> {
        params.validate()?;
        self.hyper.validate()?;
        let data = self.data;
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        check_dim(params.dim(), data.dim())?;

        let n = params.n_centres();
        let d = params.dim();
        let sigma = params.sigma_k;
        let inv_s2 = 1.0 / (sigma * sigma);
        let dict = &params.dictionary;
        let alpha = &params.alpha;
        let noise_var = params.sigma_eps * params.sigma_eps;

        let fit = self
            .exec
            .chunked(
                data.len(),
                |range| {
                    let mut acc = FitAccum {
                        sq_resid: 0.0,
                        g_alpha: if with_gradient { vec![0.0; n] } else { Vec::new() },
                        g_centres: if with_gradient { vec![0.0; n * d] } else { Vec::new() },
                        g_log_sigma: 0.0,
                    };
                    let mut k = vec![0.0; n];
                    let mut dist = vec![0.0; n];
                    for i in range {
                        let x = data.input(i);
                        let mut f = 0.0;
                        for (j, s) in dict.centres().enumerate() {
                            dist[j] = sq_dist(x, s);
                            k[j] = gauss(dist[j], sigma);
                            f += alpha[j] * k[j];
                        }
                        let r = data.targets()[i] - f;
                        acc.sq_resid += r * r;
                        if with_gradient {
                            let w = r / noise_var;
                            for j in 0..n {
                                acc.g_alpha[j] += w * k[j];
                                let c = w * alpha[j] * k[j];
                                acc.g_log_sigma += c * dist[j] * inv_s2;
                                let s = dict.centre(j);
                                let g = &mut acc.g_centres[j * d..(j + 1) * d];
                                for t in 0..d {
                                    g[t] += c * (x[t] - s[t]) * inv_s2;
                                }
                            }
                        }
                    }
                    acc
                },
                FitAccum::merge,
            )
            .expect("non-empty dataset");

        let n_pairs = data.len() as f64;
        let likelihood = -0.5 * n_pairs * LN_2PI
            - n_pairs * params.sigma_eps.ln()
            - fit.sq_resid / (2.0 * noise_var);
        let prior = prior_terms(params, &self.hyper);
        let log_jacobian = params.sigma_k.ln()
            + params.sigma_eps.ln()
            + params.l_alpha.ln()
            + params.l_dict.ln();
        if !(likelihood + prior.value).is_finite() {
            return Err(Error::NonFinite("log-posterior".into()));
        }

        let gradient = with_gradient.then(|| {
            let mut g = Vec::with_capacity(n_coords(n, d));
            let (la2, ld2) = (
                params.l_alpha * params.l_alpha,
                params.l_dict * params.l_dict,
            );
            g.extend(fit.g_alpha.iter().zip(alpha).map(|(ga, a)| ga - a / la2));

            // Dictionary prior pushes centres apart; `gs` accumulates the
            // sigma derivative over unordered pairs.
            let mut g_centres = fit.g_centres;
            let mut gs = 0.0;
            let push = 2.0 * inv_s2 / ld2;
            for j in 0..n {
                for m in (j + 1)..n {
                    let (sj, sm) = (dict.centre(j), dict.centre(m));
                    let dist = sq_dist(sj, sm);
                    let k2 = gauss(dist, sigma).powi(2);
                    gs += k2 * dist;
                    for t in 0..d {
                        let diff = push * k2 * (sj[t] - sm[t]);
                        g_centres[j * d + t] += diff;
                        g_centres[m * d + t] -= diff;
                    }
                }
            }
            g.extend(g_centres);

            let v = &self.hyper;
            g.push(fit.g_log_sigma - 2.0 * gs * inv_s2 / ld2 - sigma * sigma / v.v_k + 1.0);
            g.push(-n_pairs + fit.sq_resid / noise_var - noise_var / v.v_eps + 1.0);
            g.push(prior.sq_alpha / la2 - 1.0 - la2 / v.v_alpha + 1.0);
            g.push(prior.gram_sq / ld2 - 1.0 - ld2 / v.v_dict + 1.0);
            g
        });

        Ok(Evaluation {
            likelihood,
            prior: prior.value,
            log_jacobian,
            gradient,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EmbeddedDataset;
    use crate::kernel::gram;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_1d(alpha: &[f64], centres: &[f64], sigma_k: f64, sigma_eps: f64) -> ModelParams {
        ModelParams {
            alpha: alpha.to_vec(),
            dictionary: Dictionary::new(1, centres.to_vec()).unwrap(),
            sigma_k,
            sigma_eps,
            l_alpha: 1.0,
            l_dict: 1.0,
        }
    }

    fn random_params(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ModelParams {
        ModelParams {
            alpha: (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            dictionary: Dictionary::new(d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap(),
            sigma_k: rng.gen_range(0.3..3.0),
            sigma_eps: rng.gen_range(0.2..2.0),
            l_alpha: rng.gen_range(0.3..3.0),
            l_dict: rng.gen_range(0.3..3.0),
        }
    }

    fn random_data(rng: &mut ChaCha8Rng, pairs: usize, d: usize) -> EmbeddedDataset {
        EmbeddedDataset::from_pairs(
            d,
            (0..pairs * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..pairs).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    /// Sum of Gaussian log-pdfs, coded from the density formula.
    fn likelihood_oracle(p: &ModelParams, data: &EmbeddedDataset) -> f64 {
        let mut total = 0.0;
        for (x, y) in data.inputs().zip(data.targets()) {
            let mean: f64 = (0..p.n_centres())
                .map(|j| {
                    let s = p.dictionary.centre(j);
                    let d2: f64 = x.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum();
                    p.alpha[j] * (-d2 / (2.0 * p.sigma_k.powi(2))).exp()
                })
                .sum();
            let var = p.sigma_eps.powi(2);
            total += ((-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()).ln();
        }
        total
    }

    fn prior_oracle(p: &ModelParams, h: &HyperParams) -> f64 {
        let gauss_ln = |sq: f64, l: f64| -sq / (2.0 * l * l) - (2.0 * PI * l * l).sqrt().ln();
        let half = |z: f64, v: f64| ((2.0 / (PI * v)).sqrt() * (-z * z / (2.0 * v)).exp()).ln();
        let g = gram(&p.dictionary, p.sigma_k).unwrap();
        let frob: f64 = g.rows().flatten().map(|v| v * v).sum();
        gauss_ln(p.alpha.iter().map(|a| a * a).sum(), p.l_alpha)
            + gauss_ln(frob, p.l_dict)
            + half(p.sigma_k, h.v_k)
            + half(p.sigma_eps, h.v_eps)
            + half(p.l_alpha, h.v_alpha)
            + half(p.l_dict, h.v_dict)
    }

    #[test]
    fn predict_examples() {
        let p = params_1d(&[0.0, 0.0], &[0.0, 1.0], 1.0, 1.0);
        assert_eq!(predict(&p, &[0.3]).unwrap(), 0.0);
        let p = params_1d(&[2.5], &[0.7], 0.4, 1.0);
        assert_eq!(predict(&p, &[0.7]).unwrap(), 2.5);
        let p = params_1d(&[1.0, 1.0], &[0.0, 1.0], 1.0, 1.0);
        assert_abs_diff_eq!(
            predict(&p, &[0.0]).unwrap(),
            1.0 + (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert!(predict(&p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let p = params_1d(&[1.0], &[0.0], 1.0, 1.0);
        let perfect = EmbeddedDataset::from_pairs(1, vec![0.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(
            log_likelihood(&p, &perfect).unwrap(),
            -0.5 * (2.0 * PI).ln(),
            epsilon = 1e-14
        );
        let r = 0.75;
        let off = EmbeddedDataset::from_pairs(1, vec![0.0], vec![1.0 + r]).unwrap();
        assert_abs_diff_eq!(
            log_likelihood(&p, &off).unwrap(),
            -0.5 * (2.0 * PI).ln() - r * r / 2.0,
            epsilon = 1e-14
        );
        let empty = EmbeddedDataset::from_pairs(1, vec![], vec![]).unwrap();
        assert!(matches!(log_likelihood(&p, &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn likelihood_and_prior_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let p = random_params(&mut rng, 4, 3);
            let data = random_data(&mut rng, 30, 3);
            let h = HyperParams {
                v_k: rng.gen_range(0.2..3.0),
                v_eps: rng.gen_range(0.2..3.0),
                v_alpha: rng.gen_range(0.2..3.0),
                v_dict: rng.gen_range(0.2..3.0),
            };
            assert_abs_diff_eq!(
                log_likelihood(&p, &data).unwrap(),
                likelihood_oracle(&p, &data),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(log_prior(&p, &h).unwrap(), prior_oracle(&p, &h), epsilon = 1e-10);
            let post = log_posterior(&p, &h, &data, false).unwrap();
            assert_abs_diff_eq!(
                post.value,
                log_likelihood(&p, &data).unwrap() + log_prior(&p, &h).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn half_normal_mode_term() {
        assert_abs_diff_eq!(half_normal_ln(0.0, 1.0), 0.5 * (2.0 / PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn prior_rejects_infeasible_scales() {
        let mut p = params_1d(&[1.0], &[0.0], 1.0, 1.0);
        p.l_dict = 0.0;
        assert!(log_prior(&p, &HyperParams::default()).is_err());
        p.l_dict = 1.0;
        p.sigma_eps = -1.0;
        assert!(log_prior(&p, &HyperParams::default()).is_err());
    }

    #[test]
    fn spreading_centres_does_not_lower_dictionary_prior() {
        let h = HyperParams::default();
        let near = params_1d(&[0.0, 0.0, 0.0], &[0.0, 3.0, 6.0], 1.0, 1.0);
        let far = params_1d(&[0.0, 0.0, 0.0], &[0.0, 6.0, 12.0], 1.0, 1.0);
        assert!(log_prior(&far, &h).unwrap() >= log_prior(&near, &h).unwrap());
    }

    #[test]
    fn shrinking_dictionary_scale_lowers_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_data(&mut rng, 10, 2);
        let h = HyperParams::default();
        for _ in 0..10 {
            let a = random_params(&mut rng, 3, 2);
            let mut b = a.clone();
            b.l_dict = a.l_dict / 10.0;
            let va = log_posterior(&a, &h, &data, false).unwrap().value;
            let vb = log_posterior(&b, &h, &data, false).unwrap().value;
            assert!(vb < va);
        }
    }

    #[test]
    fn unconstrained_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_params(&mut rng, 5, 5);
            let u = to_unconstrained(&p);
            assert_eq!(u.len(), 5 + 25 + 4);
            let q = from_unconstrained(&u, 5, 5).unwrap();
            assert_eq!(p.alpha, q.alpha);
            assert_eq!(p.dictionary, q.dictionary);
            for (a, b) in [
                (p.sigma_k, q.sigma_k),
                (p.sigma_eps, q.sigma_eps),
                (p.l_alpha, q.l_alpha),
                (p.l_dict, q.l_dict),
            ] {
                assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }
        let p = params_1d(&[1.0], &[0.0], 1.0, 2.0);
        assert_eq!(to_unconstrained(&p)[2], 0.0);
        assert!(matches!(
            from_unconstrained(&[0.0; 5], 1, 1),
            Err(Error::WrongLength { expected: 6, found: 5 })
        ));
    }

    #[test]
    fn mask_indices() {
        assert_eq!(ParamMask::alpha_only().free_indices(3, 2), vec![0, 1, 2]);
        assert_eq!(ParamMask::all().free_indices(2, 2).len(), 2 + 4 + 4);
        let scales = ParamMask {
            alpha: false,
            centres: false,
            sigma_k: false,
            ..ParamMask::all()
        };
        assert_eq!(scales.free_indices(2, 1), vec![5, 6, 7]);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng, 6, 4);
        let data = random_data(&mut rng, 700, 4);
        let seq = Posterior::new(&data, HyperParams::default())
            .with_exec(Exec::Sequential)
            .log_density(&p, true)
            .unwrap();
        let par = Posterior::new(&data, HyperParams::default())
            .with_exec(Exec::Parallel)
            .log_density(&p, true)
            .unwrap();
        assert_eq!(seq, par);
    }

    /// Central differences of the unconstrained density.
    fn finite_difference(post: &Posterior, u: &[f64], n: usize, d: usize, h: f64) -> Vec<f64> {
        (0..u.len())
            .map(|i| {
                let mut up = u.to_vec();
                let mut down = u.to_vec();
                up[i] += h;
                down[i] -= h;
                (post.unconstrained(&up, n, d) - post.unconstrained(&down, n, d)) / (2.0 * h)
            })
            .collect()
    }

    /// Ridge solution `(K^T K / s2 + I / l2)^-1 K^T y / s2` for fixed centres.
    fn ridge_alpha(p: &ModelParams, data: &EmbeddedDataset) -> Vec<f64> {
        let n = p.n_centres();
        let k = nalgebra::DMatrix::from_fn(data.len(), n, |i, j| {
            crate::kernel::kernel_eval(data.input(i), p.dictionary.centre(j), p.sigma_k).unwrap()
        });
        let y = nalgebra::DVector::from_column_slice(data.targets());
        let s2 = p.sigma_eps.powi(2);
        let a = k.transpose() * &k / s2
            + nalgebra::DMatrix::identity(n, n) / p.l_alpha.powi(2);
        let b = k.transpose() * y / s2;
        a.cholesky().unwrap().solve(&b).iter().copied().collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = HyperParams::default();
        for _ in 0..20 {
            let p = random_params(&mut rng, 3, 2);
            let data = random_data(&mut rng, 25, 2);
            let post = Posterior::new(&data, h);
            let g = post.log_density(&p, true).unwrap().gradient.unwrap();
            let u = to_unconstrained(&p);
            let fd = finite_difference(&post, &u, 3, 2, 1e-5);
            for (i, (a, f)) in g.iter().zip(&fd).enumerate() {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1.0);
                assert!(rel < 1e-5, "coord {i}: analytic {a}, fd {f}");
            }
        }
    }

    #[test]
    fn alpha_gradient_vanishes_at_ridge_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let mut p = random_params(&mut rng, 4, 2);
            let data = random_data(&mut rng, 30, 2);
            p.alpha = ridge_alpha(&p, &data);
            let g = grad_log_posterior(&p, &HyperParams::default(), &data).unwrap();
            for gi in &g[..4] {
                assert!(gi.abs() < 1e-8, "{gi}");
            }
        }
    }

    #[test]
    fn alpha_gradient_sign_on_positive_constant_targets() {
        let data = EmbeddedDataset::from_pairs(1, vec![1.0; 6], vec![2.0; 6]).unwrap();
        let p = params_1d(&[0.0, 0.0], &[0.5, 1.5], 1.0, 0.5);
        let g = grad_log_posterior(&p, &HyperParams::default(), &data).unwrap();
        // With alpha = 0 the block is K^T y / s2, positive for positive targets.
        let k = [(-0.125f64).exp(), (-0.125f64).exp()];
        for j in 0..2 {
            assert!(g[j] > 0.0);
            assert_abs_diff_eq!(g[j], 6.0 * 2.0 * k[j] / 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn flat_priors_recover_least_squares() {
        let data = EmbeddedDataset::from_pairs(
            1,
            vec![-1.0, -0.4, 0.1, 0.5, 0.9, 1.6],
            vec![0.3, 0.8, 1.1, 0.7, 0.2, -0.5],
        )
        .unwrap();
        let mut p = params_1d(&[0.0, 0.0], &[-0.5, 1.0], 0.8, 0.3);
        p.l_alpha = 1e6;
        let ridge = ridge_alpha(&p, &data);
        let k = nalgebra::DMatrix::from_fn(6, 2, |i, j| {
            crate::kernel::kernel_eval(data.input(i), p.dictionary.centre(j), p.sigma_k).unwrap()
        });
        let y = nalgebra::DVector::from_column_slice(data.targets());
        let ls = (k.transpose() * &k).cholesky().unwrap().solve(&(k.transpose() * y));
        for j in 0..2 {
            assert!((ridge[j] - ls[j]).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn posterior_is_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, 5, 2);
            let data = random_data(&mut rng, 15, 2);
            let mut order: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let centres: Vec<Vec<f64>> =
                order.iter().map(|&j| p.dictionary.centre(j).to_vec()).collect();
            let q = ModelParams {
                alpha: order.iter().map(|&j| p.alpha[j]).collect(),
                dictionary: Dictionary::from_centres(&centres).unwrap(),
                ..p.clone()
            };
            let h = HyperParams::default();
            let a = log_posterior(&p, &h, &data, false).unwrap().value;
            let b = log_posterior(&q, &h, &data, false).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn densities_are_finite(
            seed in 0u64..10_000,
            scale in -6.0..6.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = random_params(&mut rng, 3, 2);
            p.sigma_k = scale.exp();
            p.l_alpha = (-scale / 2.0).exp();
            let data = random_data(&mut rng, 12, 2);
            let ld = log_posterior(&p, &HyperParams::default(), &data, true).unwrap();
            prop_assert!(ld.value.is_finite());
            prop_assert!(ld.unconstrained_value.is_finite());
            prop_assert!(ld.gradient.unwrap().iter().all(|g| g.is_finite()));
        }
    }
}
