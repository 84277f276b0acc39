//! Default starting point for MAP fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EmbeddedDataset;
use crate::error::{Error, Result};
use crate::kernel::{sq_dist, Dictionary};
use crate::model::ModelParams;

/// Inputs used for the median-distance heuristic are thinned to at most this many.
const MEDIAN_SUBSAMPLE: usize = 200;

/// Median pairwise Euclidean distance between inputs (evenly thinned), or
/// `None` when every pair coincides.
pub fn median_distance(data: &EmbeddedDataset) -> Option<f64> {
    let n = data.len();
    let stride = n.div_ceil(MEDIAN_SUBSAMPLE).max(1);
    let pts: Vec<&[f64]> = (0..n).step_by(stride).map(|i| data.input(i)).collect();
    let mut dists: Vec<f64> = Vec::with_capacity(pts.len() * pts.len() / 2);
    for (a, x) in pts.iter().enumerate() {
        for y in &pts[a + 1..] {
            dists.push(sq_dist(x, y).sqrt());
        }
    }
    if dists.is_empty() {
        return None;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    (*median > 0.0).then_some(*median)
}

/// k-means++ seeding: picks `n` inputs, each subsequent one with probability
/// proportional to its squared distance from the centres chosen so far.
pub fn spread_centres(data: &EmbeddedDataset, n: usize, rng: &mut impl Rng) -> Result<Dictionary> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if n == 0 {
        return Err(Error::Empty("dictionary"));
    }
    let m = data.len();
    let mut chosen = Vec::with_capacity(n * data.dim());
    let first = rng.gen_range(0..m);
    chosen.extend_from_slice(data.input(first));
    let mut nearest: Vec<f64> = (0..m).map(|i| sq_dist(data.input(i), data.input(first))).collect();
    for _ in 1..n {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = m - 1;
            for (i, w) in nearest.iter().enumerate() {
                if r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.gen_range(0..m)
        };
        let c = data.input(pick);
        chosen.extend_from_slice(c);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.input(i), c));
        }
    }
    Dictionary::new(data.dim(), chosen)
}

/// Zero weights, spread centres, median-distance lengthscale, `sigma_eps = 0.1`
/// and unit prior scales.
pub fn initial_params(data: &EmbeddedDataset, n: usize, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dictionary = spread_centres(data, n, &mut rng)?;
    Ok(ModelParams {
        alpha: vec![0.0; n],
        dictionary,
        sigma_k: median_distance(data).unwrap_or(1.0),
        sigma_eps: 0.1,
        l_alpha: 1.0,
        l_dict: 1.0,
    })
}
