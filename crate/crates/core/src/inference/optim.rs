//! Gradient ascent with Barzilai-Borwein step proposals and Armijo
//! backtracking. Only improving iterates are accepted.

use crate::error::{Error, Result};

/// A differentiable objective to maximise.
pub trait Objective {
    /// Value and gradient at `u`. Points outside the domain return a
    /// non-finite value; the gradient is then ignored.
    fn value_and_grad(&self, u: &[f64]) -> (f64, Vec<f64>);
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn value_and_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        self(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentSettings {
    pub max_iters: usize,
    pub step_size: f64,
    pub grad_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Objective value after each accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn inf_norm(g: &[f64], free: &[usize]) -> f64 {
    free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max)
}

/// Maximises `objective` over the coordinates listed in `free`, holding the
/// rest of `init` fixed.
pub fn ascend<O: Objective + ?Sized>(
    objective: &O,
    init: &[f64],
    free: &[usize],
    settings: &AscentSettings,
) -> Result<AscentResult> {
    let mut u = init.to_vec();
    let (mut f, mut g) = objective.value_and_grad(&u);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::OptimiserDiverged { iteration: 0 });
    }
    let mut trace = vec![f];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iters {
        let gnorm = inf_norm(&g, free);
        if gnorm < settings.grad_tol {
            converged = true;
            break;
        }
        let mut step = match &prev {
            Some((du, dg)) => {
                // Ascent BB1: s.s / -(s.y), falling back when curvature is
                // not negative along the step.
                let ss: f64 = free.iter().map(|&i| du[i] * du[i]).sum();
                let sy: f64 = free.iter().map(|&i| du[i] * dg[i]).sum();
                if sy < 0.0 {
                    (ss / -sy).clamp(1e-12, 1e6)
                } else {
                    settings.step_size / gnorm.max(1.0)
                }
            }
            None => settings.step_size / gnorm.max(1.0),
        };
        let slope: f64 = free.iter().map(|&i| g[i] * g[i]).sum();

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = u.clone();
            for &i in free {
                trial[i] += step * g[i];
            }
            let (ft, gt) = objective.value_and_grad(&trial);
            if ft.is_finite() && ft >= f + ARMIJO * step * slope && ft > f {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fnext, gnext)) = accepted else {
            // No ascent along the gradient at machine precision.
            break;
        };
        iterations += 1;
        if gnext.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimiserDiverged { iteration: iterations });
        }
        let du: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        prev = Some((du, dg));
        u = next;
        f = fnext;
        g = gnext;
        trace.push(f);
    }

    let grad_norm = inf_norm(&g, free);
    Ok(AscentResult {
        point: u,
        value: f,
        iterations,
        grad_norm,
        converged: converged || grad_norm < settings.grad_tol,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> AscentSettings {
        AscentSettings {
            max_iters: 10_000,
            step_size: 0.1,
            grad_tol: 1e-10,
        }
    }

    #[test]
    fn maximises_ill_conditioned_quadratic() {
        // f(u) = -(1000 (u0 - 1)^2 + (u1 + 2)^2) / 2
        let f = |u: &[f64]| {
            let v = -(1000.0 * (u[0] - 1.0).powi(2) + (u[1] + 2.0).powi(2)) / 2.0;
            (v, vec![-1000.0 * (u[0] - 1.0), -(u[1] + 2.0)])
        };
        let r = ascend(&f, &[0.0, 0.0], &[0, 1], &settings()).unwrap();
        assert!(r.converged);
        assert!((r.point[0] - 1.0).abs() < 1e-9 && (r.point[1] + 2.0).abs() < 1e-9);
        assert!(r.trace.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn respects_fixed_coordinates() {
        let f = |u: &[f64]| (-(u[0] * u[0]) - u[1] * u[1], vec![-2.0 * u[0], -2.0 * u[1]]);
        let r = ascend(&f, &[3.0, 4.0], &[0], &settings()).unwrap();
        assert_eq!(r.point[1], 4.0);
        assert!(r.point[0].abs() < 1e-9);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let f = |u: &[f64]| (-(u[0] * u[0]), vec![-2.0 * u[0]]);
        let r = ascend(&f, &[0.0], &[0], &settings()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.point, vec![0.0]);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(matches!(
            ascend(&f, &[0.0], &[0], &settings()),
            Err(Error::OptimiserDiverged { iteration: 0 })
        ));
    }
}
