//! Posterior mode by L-BFGS in unconstrained coordinates.
//!
//! By default the objective omits the transform Jacobian, so the optimum is
//! the mode of the posterior over the constrained parameters.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::inference::transform::to_unconstrained;
use crate::model::{FunnelConfig, FunnelPosterior, ModelParams, PatientRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub max_iterations: usize,
    /// Stop once the Euclidean gradient norm drops below this.
    pub gradient_tolerance: f64,
    /// L-BFGS memory.
    pub history: usize,
    /// Starting point; [`default_init`] when absent.
    pub init: Option<ModelParams>,
    /// Include the transform Jacobian, giving the mode of the density over
    /// unconstrained coordinates. That mode stays finite when a δ's
    /// constrained mode sits on its lower bound, so it is the better start
    /// for sampling.
    pub jacobian: bool,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
            history: 10,
            init: None,
            jacobian: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub params: ModelParams,
    pub unconstrained: Vec<f64>,
    /// Log posterior (constrained density, up to a constant) at the mode.
    pub log_posterior: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// α at its prior mean, β = 0, thresholds at the transform midpoints
/// (0.25, then halfway to 1 each stage), δ = 1.
pub fn default_init(config: &FunnelConfig) -> ModelParams {
    let s = config.n_decision_stages();
    let mut thresholds = vec![0.25];
    for k in 1..s {
        let prev = thresholds[k - 1];
        thresholds.push(prev + 0.5 * (1.0 - prev));
    }
    ModelParams {
        alpha: config.priors.alpha_mean,
        beta: vec![0.0; config.n_features()],
        thresholds,
        deltas: vec![1.0; s],
    }
}

pub fn fit_map(dataset: &[PatientRecord], config: &FunnelConfig, opts: &MapOptions) -> Result<MapFit> {
    let posterior = FunnelPosterior::new(dataset, config)?;
    fit_map_posterior(&posterior, opts)
}

pub fn fit_map_posterior(posterior: &FunnelPosterior, opts: &MapOptions) -> Result<MapFit> {
    let init = opts
        .init
        .clone()
        .unwrap_or_else(|| default_init(posterior.config()));
    init.validate(posterior.config())
        .map_err(|e| FunnelError::Initialization(e.to_string()))?;
    let x0 = to_unconstrained(&init).to_flat();
    let objective = |u: &[f64], g: &mut [f64]| {
        let v = posterior.log_density_grad(u, g, opts.jacobian);
        g.iter_mut().for_each(|gi| *gi = -*gi);
        -v
    };
    let result = minimize(objective, &x0, opts)?;
    if !result.converged {
        warn!(
            "MAP stopped after {} iterations with gradient norm {:.3e}",
            result.iterations, result.gradient_norm
        );
    }
    Ok(MapFit {
        params: posterior.constrain(&result.x),
        unconstrained: result.x,
        log_posterior: -result.value,
        gradient_norm: result.gradient_norm,
        iterations: result.iterations,
        converged: result.converged,
    })
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Line search for the approximate Wolfe conditions (sufficient decrease
/// relaxed by a relative `1e-12` so that steps near the optimum are not
/// rejected for rounding noise in `f`), with bracketing by doubling and
/// bisection.
fn line_search<F>(f: &mut F, at: &Point, dir: &[f64], step0: f64) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let slope0 = dot(&at.g, dir);
    if !(slope0 < 0.0) {
        return None;
    }
    let slack = 1e-12 * at.f.abs();
    let mut lo = 0.0;
    let mut f_lo = at.f;
    let mut best: Option<Point> = None;
    let mut hi: Option<f64> = None;
    let mut step = step0;
    let mut g = vec![0.0; at.x.len()];
    for _ in 0..60 {
        let x: Vec<f64> = at.x.iter().zip(dir).map(|(xi, di)| xi + step * di).collect();
        let fx = f(&x, &mut g);
        let decrease_ok = fx.is_finite() && fx <= at.f + C1 * step * slope0 + slack;
        if !decrease_ok || (fx > f_lo && lo > 0.0) {
            hi = Some(step);
        } else {
            let slope = dot(&g, dir);
            let point = Point {
                x,
                f: fx,
                g: g.clone(),
            };
            if slope.abs() <= -C2 * slope0 {
                return Some(point);
            }
            if hi.map_or(slope >= 0.0, |h| slope * (h - step) >= 0.0) {
                hi = Some(lo);
            }
            lo = step;
            f_lo = fx;
            best = Some(point);
        }
        step = match hi {
            None => 2.0 * step,
            Some(h) => 0.5 * (lo + h),
        };
        if hi.is_some_and(|h| (h - lo).abs() <= 1e-16 * lo.abs().max(1e-300)) {
            break;
        }
    }
    best
}

/// Minimizes `f` (value, gradient written into the slice) by L-BFGS.
pub(crate) fn minimize<F>(mut f: F, x0: &[f64], opts: &MapOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut g0 = vec![0.0; n];
    let f0 = f(x0, &mut g0);
    if !f0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(FunnelError::Initialization(
            "log posterior is not finite at the starting point".into(),
        ));
    }
    let mut at = Point {
        x: x0.to_vec(),
        f: f0,
        g: g0,
    };
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut converged = norm(&at.g) < opts.gradient_tolerance;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        // two-loop recursion
        let mut q = at.g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / norm(&at.g).max(1.0),
        };
        q.iter_mut().for_each(|qi| *qi *= gamma);
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();

        let next = match line_search(&mut f, &at, &dir, 1.0) {
            Some(p) => p,
            None if !s_hist.is_empty() => {
                // curvature history is stale; restart from steepest descent
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            None => break,
        };
        let s: Vec<f64> = next.x.iter().zip(&at.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&at.g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == opts.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        at = next;
        converged = norm(&at.g) < opts.gradient_tolerance;
    }
    Ok(Minimum {
        gradient_norm: norm(&at.g),
        x: at.x,
        value: at.f,
        iterations,
        converged,
    })
}

/// Central-difference Hessian of the log density at unconstrained `u`,
/// symmetrized. Differences are taken on the analytic gradient.
pub fn log_density_hessian(posterior: &FunnelPosterior, u: &[f64], jacobian: bool) -> DMatrix<f64> {
    let n = u.len();
    let mut h = DMatrix::zeros(n, n);
    let mut g_plus = vec![0.0; n];
    let mut g_minus = vec![0.0; n];
    let mut x = u.to_vec();
    for j in 0..n {
        let step = 1e-5 * u[j].abs().max(1.0);
        x[j] = u[j] + step;
        posterior.log_density_grad(&x, &mut g_plus, jacobian);
        x[j] = u[j] - step;
        posterior.log_density_grad(&x, &mut g_minus, jacobian);
        x[j] = u[j];
        for i in 0..n {
            h[(i, j)] = (g_plus[i] - g_minus[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Inverse negative Hessian at `u` (the Laplace covariance in unconstrained
/// coordinates), or `None` when the negative Hessian is not positive
/// definite.
pub fn laplace_covariance(posterior: &FunnelPosterior, u: &[f64], jacobian: bool) -> Option<DMatrix<f64>> {
    let neg_h = -log_density_hessian(posterior, u, jacobian);
    let chol = neg_h.cholesky()?;
    Some(chol.inverse())
}
