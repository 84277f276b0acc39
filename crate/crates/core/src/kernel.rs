//! Isotropic Gaussian kernel, kernel vectors and Gram matrices.
//!
//! `k(x, s) = exp(-|x - s|^2 / (2 sigma^2))`, so `sigma` acts as a lengthscale.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Error, Result};

#[inline]
pub(crate) fn sq_dist(x: &[f64], s: &[f64]) -> f64 {
    x.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel value from a squared distance; no validation.
#[inline]
pub(crate) fn gauss(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// Gaussian kernel between two input vectors.
pub fn kernel_eval(x: &[f64], s: &[f64], sigma_k: f64) -> Result<f64> {
    check_dim(x.len(), s.len())?;
    check_positive("sigma_k", sigma_k)?;
    Ok(gauss(sq_dist(x, s), sigma_k))
}

/// An ordered set of centres, all of the same dimension.
///
/// Stored row-major: centre `j` occupies `values[j * dim..(j + 1) * dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    dim: usize,
    values: Vec<f64>,
}

impl Dictionary {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("dictionary dimension"));
        }
        if values.is_empty() {
            return Err(Error::Empty("dictionary"));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len() % dim,
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dictionary entry {v}")));
        }
        Ok(Dictionary { dim, values })
    }

    pub fn from_centres<C: AsRef<[f64]>>(centres: &[C]) -> Result<Self> {
        let dim = centres.first().ok_or(Error::Empty("dictionary"))?.as_ref().len();
        let mut values = Vec::with_capacity(dim * centres.len());
        for c in centres {
            check_dim(dim, c.as_ref().len())?;
            values.extend_from_slice(c.as_ref());
        }
        Dictionary::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn centre(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centres(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Flat row-major view of all centres.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Kernel evaluations of `x` against every centre of `dict`.
pub fn kernel_vector(x: &[f64], dict: &Dictionary, sigma_k: f64) -> Result<Vec<f64>> {
    check_dim(dict.dim(), x.len())?;
    check_positive("sigma_k", sigma_k)?;
    Ok(dict.centres().map(|s| gauss(sq_dist(x, s), sigma_k)).collect())
}

/// Symmetric matrix of pairwise kernel values over a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.n + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.entries.chunks_exact(self.n)
    }

    /// Squared Frobenius norm.
    pub fn sq_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }
}

pub fn gram(dict: &Dictionary, sigma_k: f64) -> Result<GramMatrix> {
    check_positive("sigma_k", sigma_k)?;
    let n = dict.len();
    let mut entries = vec![0.0; n * n];
    for j in 0..n {
        entries[j * n + j] = 1.0;
        for k in (j + 1)..n {
            let v = gauss(sq_dist(dict.centre(j), dict.centre(k)), sigma_k);
            entries[j * n + k] = v;
            entries[k * n + j] = v;
        }
    }
    Ok(GramMatrix { n, entries })
}

/// Sum of squared Gram entries; at least `N` since the diagonal is all ones.
pub fn gram_sq_norm(dict: &Dictionary, sigma_k: f64) -> Result<f64> {
    check_positive("sigma_k", sigma_k)?;
    Ok(gram_sq_norm_unchecked(dict, sigma_k))
}

pub(crate) fn gram_sq_norm_unchecked(dict: &Dictionary, sigma: f64) -> f64 {
    let n = dict.len();
    let mut off = 0.0;
    for j in 0..n {
        for k in (j + 1)..n {
            let v = gauss(sq_dist(dict.centre(j), dict.centre(k)), sigma);
            off += v * v;
        }
    }
    n as f64 + 2.0 * off
}
