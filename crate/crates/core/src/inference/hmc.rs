//! Hamiltonian Monte Carlo with warmup adaptation.
//!
//! Each chain runs static-length HMC whose step count is jittered per
//! iteration around `integration_time / step_size`. Warmup adapts the step
//! size by dual averaging and the inverse metric (dense or diagonal) from
//! windowed draw covariances (an initial fast buffer, doubling slow windows,
//! a final fast buffer).

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FunnelError, Result};
use crate::model::FunnelPosterior;

/// A differentiable log density on ℝⁿ.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Returns the log density and overwrites `grad` with its gradient.
    /// Returns `-inf` outside the support.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for FunnelPosterior {
    fn dim(&self) -> usize {
        FunnelPosterior::dim(self)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        FunnelPosterior::log_density_grad(self, x, grad, true)
    }
}

/// Shape of the adapted inverse metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Diagonal,
    #[default]
    Dense,
}

/// Inverse metric, i.e. the covariance the momentum is whitened against.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Metric {
    pub fn identity(dim: usize, kind: MetricKind) -> Self {
        match kind {
            MetricKind::Diagonal => Metric::Diagonal(vec![1.0; dim]),
            MetricKind::Dense => Metric::Dense(DMatrix::identity(dim, dim)),
        }
    }

    /// Metric of the given kind taken from a covariance estimate.
    pub fn from_covariance(cov: &DMatrix<f64>, kind: MetricKind) -> Self {
        match kind {
            MetricKind::Diagonal => Metric::Diagonal(cov.diagonal().iter().copied().collect()),
            MetricKind::Dense => Metric::Dense(cov.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Metric::Diagonal(d) => d.len(),
            Metric::Dense(m) => m.nrows(),
        }
    }

    pub fn kind(&self) -> MetricKind {
        match self {
            Metric::Diagonal(_) => MetricKind::Diagonal,
            Metric::Dense(_) => MetricKind::Dense,
        }
    }

    /// Diagonal of the inverse metric.
    pub fn variances(&self) -> Vec<f64> {
        match self {
            Metric::Diagonal(d) => d.clone(),
            Metric::Dense(m) => m.diagonal().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Hmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_leapfrog: usize,
    pub seed: u64,
    /// Mean trajectory length `step_size × n_steps`.
    pub integration_time: f64,
    /// Half-width of the uniform jitter added to the MAP start per chain.
    pub init_jitter: f64,
    /// Iteration cap of the MAP run used for initialization.
    pub map_iterations: usize,
    pub metric: MetricKind,
    pub sampler: SamplerKind,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            n_chains: 4,
            n_warmup: 500,
            n_samples: 500,
            target_accept: 0.8,
            max_leapfrog: 1024,
            seed: 0,
            integration_time: 2.0,
            init_jitter: 0.5,
            map_iterations: 200,
            metric: MetricKind::Dense,
            sampler: SamplerKind::Hmc,
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_samples == 0 || self.max_leapfrog == 0 {
            return Err(FunnelError::InvalidConfig(
                "n_chains, n_samples and max_leapfrog must be at least 1".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(FunnelError::InvalidConfig(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(self.integration_time > 0.0) || !(self.init_jitter >= 0.0) {
            return Err(FunnelError::InvalidConfig(
                "integration_time must be positive and init_jitter non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Post-warmup output of one chain, in the sampler's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub draws: Vec<Vec<f64>>,
    /// Metropolis acceptance probability of each sampling iteration.
    pub accept_stats: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub metric: Metric,
    pub seed: u64,
}

impl ChainRun {
    pub fn mean_accept(&self) -> f64 {
        self.accept_stats.iter().sum::<f64>() / self.accept_stats.len().max(1) as f64
    }
}

/// Energy error beyond which a transition is counted as divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

struct State {
    q: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

/// Inverse metric with its Cholesky factor (lower) when dense.
struct PreparedMetric {
    metric: Metric,
    chol: Option<DMatrix<f64>>,
}

impl PreparedMetric {
    /// Falls back to the diagonal when a dense metric is not positive
    /// definite.
    fn new(metric: Metric) -> Self {
        match metric {
            Metric::Dense(m) => match m.clone().cholesky() {
                Some(c) => PreparedMetric {
                    chol: Some(c.l()),
                    metric: Metric::Dense(m),
                },
                None => {
                    warn!("dense metric is not positive definite; using its diagonal");
                    PreparedMetric::new(Metric::Diagonal(m.diagonal().iter().copied().collect()))
                }
            },
            diag => PreparedMetric {
                metric: diag,
                chol: None,
            },
        }
    }

    /// `M⁻¹ p`.
    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        match &self.metric {
            Metric::Diagonal(d) => p.iter().zip(d).map(|(pi, m)| pi * m).collect(),
            Metric::Dense(m) => (m * DVector::from_column_slice(p)).as_slice().to_vec(),
        }
    }
}

struct Hamiltonian<'a, D: LogDensity> {
    density: &'a D,
    metric: PreparedMetric,
}

impl<D: LogDensity> Hamiltonian<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        let v = self.metric.velocity(p);
        0.5 * p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Draws `p ~ N(0, M)`.
    fn sample_momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.metric.metric.dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        match (&self.metric.metric, &self.metric.chol) {
            (Metric::Dense(_), Some(l)) => {
                // M⁻¹ = L Lᵀ, so p = L⁻ᵀ z has covariance M
                let p = l
                    .transpose()
                    .solve_upper_triangular(&DVector::from_vec(z))
                    .expect("Cholesky factor is nonsingular");
                p.as_slice().to_vec()
            }
            (metric, _) => z
                .iter()
                .zip(metric.variances())
                .map(|(zi, m)| zi / m.sqrt())
                .collect(),
        }
    }

    /// Leapfrog integration in place. Returns the final log density, or
    /// `-inf` as soon as it becomes non-finite.
    fn leapfrog(&self, q: &mut [f64], p: &mut [f64], grad: &mut [f64], eps: f64, steps: usize) -> f64 {
        let mut logp = f64::NAN;
        for _ in 0..steps {
            p.iter_mut().zip(grad.iter()).for_each(|(pi, g)| *pi += 0.5 * eps * g);
            let v = self.metric.velocity(p);
            q.iter_mut().zip(&v).for_each(|(qi, vi)| *qi += eps * vi);
            logp = self.density.log_density_grad(q, grad);
            if !logp.is_finite() {
                return f64::NEG_INFINITY;
            }
            p.iter_mut().zip(grad.iter()).for_each(|(pi, g)| *pi += 0.5 * eps * g);
        }
        logp
    }

    fn transition(&self, state: &mut State, eps: f64, steps: usize, rng: &mut ChaCha8Rng) -> Transition {
        let mut p = self.sample_momentum(rng);
        let h0 = -state.logp + self.kinetic(&p);
        let mut q = state.q.clone();
        let mut grad = state.grad.clone();
        let logp = self.leapfrog(&mut q, &mut p, &mut grad, eps, steps);
        let h1 = -logp + self.kinetic(&p);
        let error = h1 - h0;
        if !error.is_finite() || error > DIVERGENCE_THRESHOLD {
            return Transition {
                accept_prob: 0.0,
                divergent: true,
            };
        }
        let accept_prob = (-error).exp().min(1.0);
        if rng.gen::<f64>() < accept_prob {
            *state = State { q, logp, grad };
        }
        Transition {
            accept_prob,
            divergent: false,
        }
    }

    /// Doubles or halves `eps` from its current value until a single step's
    /// acceptance crosses one half.
    fn reasonable_step(&self, state: &State, mut eps: f64, rng: &mut ChaCha8Rng) -> f64 {
        let accept = |eps: f64, rng: &mut ChaCha8Rng| {
            let mut p = self.sample_momentum(rng);
            let h0 = -state.logp + self.kinetic(&p);
            let mut q = state.q.clone();
            let mut grad = state.grad.clone();
            let logp = self.leapfrog(&mut q, &mut p, &mut grad, eps, 1);
            let delta = h0 - (-logp + self.kinetic(&p));
            if delta.is_nan() {
                f64::NEG_INFINITY
            } else {
                delta
            }
        };
        let ln_half = 0.5f64.ln();
        let direction = if accept(eps, rng) > ln_half { 1.0 } else { -1.0 };
        for _ in 0..100 {
            let next = eps * 2f64.powf(direction);
            if !(next > 1e-10 && next < 1e5) {
                break;
            }
            eps = next;
            let crossed = if direction > 0.0 {
                accept(eps, rng) <= ln_half
            } else {
                accept(eps, rng) > ln_half
            };
            if crossed {
                break;
            }
        }
        eps
    }
}

/// Dual-averaging step-size adaptation. The gain is gentler than the usual
/// NUTS setting (γ = 0.1 rather than 0.05) because a single static
/// trajectory's acceptance probability is a much noisier signal than a NUTS
/// tree average, and the noise otherwise biases realized acceptance upward.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.1;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    /// Returns the next step size.
    fn update(&mut self, accept_prob: f64) -> f64 {
        self.count += 1.0;
        let w = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let decay = self.count.powf(-Self::KAPPA);
        self.log_eps_bar = decay * log_eps + (1.0 - decay) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warmup schedule: metric adaptation collects draws from `init` until the
/// last entry of `ends`, re-estimating the metric at each end.
#[derive(Debug, PartialEq)]
struct Schedule {
    init: usize,
    ends: Vec<usize>,
}

impl Schedule {
    fn new(n_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if n_warmup < 20 {
            return Schedule {
                init: n_warmup,
                ends: Vec::new(),
            };
        }
        if init + term + base > n_warmup {
            init = n_warmup * 15 / 100;
            term = n_warmup / 10;
            base = n_warmup - init - term;
        }
        let last = n_warmup - term;
        let mut ends = Vec::new();
        let mut start = init;
        let mut size = base;
        while start < last {
            let mut end = start + size;
            // stretch the final window rather than leave a short one
            if end + 2 * size > last {
                end = last;
            }
            ends.push(end);
            start = end;
            size *= 2;
        }
        Schedule { init, ends }
    }

    fn collecting(&self, iter: usize) -> bool {
        self.ends.last().is_some_and(|&last| iter >= self.init && iter < last)
    }

    fn window_closes(&self, iter: usize) -> bool {
        self.ends.contains(&(iter + 1))
    }
}

/// Running mean and covariance of warmup draws.
struct Welford {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        let x = DVector::from_column_slice(x);
        let d_old = &x - &self.mean;
        self.mean += &d_old / self.n;
        let d_new = &x - &self.mean;
        self.m2 += d_new * d_old.transpose();
    }

    /// Covariance shrunk toward `1e-3·I`, as Stan regularizes its metric.
    fn regularized_covariance(&self) -> DMatrix<f64> {
        let n = self.n;
        let dim = self.mean.len();
        let cov = &self.m2 / (n - 1.0);
        cov * (n / (n + 5.0)) + DMatrix::identity(dim, dim) * (1e-3 * 5.0 / (n + 5.0))
    }
}

/// Runs one chain from `init`, starting from `metric` (a guess at the
/// posterior covariance) and adapting a metric of the same kind.
pub fn run_chain<D: LogDensity>(
    density: &D,
    init: &[f64],
    metric: &Metric,
    opts: &McmcOptions,
    seed: u64,
) -> Result<ChainRun> {
    let dim = density.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; dim];
    let logp = density.log_density_grad(init, &mut grad);
    if !logp.is_finite() {
        return Err(FunnelError::Initialization(
            "log density is not finite at the chain's starting point".into(),
        ));
    }
    let mut state = State {
        q: init.to_vec(),
        logp,
        grad,
    };
    let mut ham = Hamiltonian {
        density,
        metric: PreparedMetric::new(metric.clone()),
    };
    let mut eps = ham.reasonable_step(&state, 1.0, &mut rng);
    let mut adapt = DualAveraging::new(eps, opts.target_accept);
    let schedule = Schedule::new(opts.n_warmup);
    let mut window = Welford::new(dim);
    let mut warmup_divergences = 0;
    let mut any_accepted = false;

    let n_steps = |eps: f64, rng: &mut ChaCha8Rng| {
        let jitter = rng.gen_range(0.5..1.5);
        ((jitter * opts.integration_time / eps).round() as usize).clamp(1, opts.max_leapfrog)
    };

    for iter in 0..opts.n_warmup {
        let steps = n_steps(eps, &mut rng);
        let t = ham.transition(&mut state, eps, steps, &mut rng);
        if t.divergent {
            warmup_divergences += 1;
        } else {
            any_accepted = true;
        }
        if iter >= 50 && !any_accepted {
            return Err(FunnelError::SamplerFailure {
                message: "every warmup transition diverged".into(),
                divergences: warmup_divergences,
            });
        }
        eps = adapt.update(t.accept_prob);
        if schedule.collecting(iter) {
            window.add(&state.q);
        }
        if schedule.window_closes(iter) && window.n >= 3.0 {
            let cov = window.regularized_covariance();
            ham.metric = PreparedMetric::new(Metric::from_covariance(&cov, metric.kind()));
            window = Welford::new(dim);
            eps = ham.reasonable_step(&state, eps, &mut rng);
            adapt = DualAveraging::new(eps, opts.target_accept);
        }
    }
    if opts.n_warmup > 0 {
        eps = adapt.final_step();
    }

    let mut draws = Vec::with_capacity(opts.n_samples);
    let mut accept_stats = Vec::with_capacity(opts.n_samples);
    let mut divergences = 0;
    for _ in 0..opts.n_samples {
        let steps = n_steps(eps, &mut rng);
        let t = ham.transition(&mut state, eps, steps, &mut rng);
        if t.divergent {
            divergences += 1;
        } else {
            any_accepted = true;
        }
        accept_stats.push(t.accept_prob);
        draws.push(state.q.clone());
    }
    if !any_accepted {
        return Err(FunnelError::SamplerFailure {
            message: "every transition diverged".into(),
            divergences: warmup_divergences + divergences,
        });
    }
    Ok(ChainRun {
        draws,
        accept_stats,
        divergences,
        warmup_divergences,
        step_size: eps,
        metric: ham.metric.metric,
        seed,
    })
}

/// Runs `inits.len()` chains in parallel; chain `c` is seeded with
/// `opts.seed + c`. Fails only when every chain fails.
pub fn run_chains<D: LogDensity>(
    density: &D,
    inits: &[Vec<f64>],
    metric: &Metric,
    opts: &McmcOptions,
) -> Result<Vec<ChainRun>> {
    opts.validate()?;
    let results: Vec<Result<ChainRun>> = inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| run_chain(density, init, metric, opts, opts.seed.wrapping_add(c as u64)))
        .collect();
    let mut runs = Vec::new();
    let mut divergences = 0;
    let mut last_err = None;
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => runs.push(run),
            Err(FunnelError::SamplerFailure { message, divergences: d }) => {
                warn!("chain {c} failed: {message}");
                divergences += d;
                last_err = Some(message);
            }
            Err(e) => return Err(e),
        }
    }
    if runs.is_empty() {
        return Err(FunnelError::SamplerFailure {
            message: last_err.unwrap_or_else(|| "no chains ran".into()),
            divergences,
        });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian {
        mean: Vec<f64>,
        precision: [[f64; 2]; 2],
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
            let p = self.precision;
            grad[0] = -(p[0][0] * d[0] + p[0][1] * d[1]);
            grad[1] = -(p[1][0] * d[0] + p[1][1] * d[1]);
            0.5 * (d[0] * grad[0] + d[1] * grad[1])
        }
    }

    #[test]
    fn warmup_windows_match_default_schedule() {
        let s = Schedule::new(500);
        assert_eq!((s.init, s.ends), (75, vec![100, 150, 250, 450]));
        assert!(Schedule::new(10).ends.is_empty());
        assert_eq!(Schedule::new(100).ends, vec![90]);
    }

    #[test]
    fn energy_error_shrinks_quadratically() {
        let g = Gaussian {
            mean: vec![0.0, 0.0],
            precision: [[2.0, 0.5], [0.5, 1.0]],
        };
        let ham = Hamiltonian {
            density: &g,
            metric: PreparedMetric::new(Metric::Diagonal(vec![1.0, 1.0])),
        };
        let error = |eps: f64| {
            let mut q = vec![0.7, -0.3];
            let mut p = vec![0.4, 1.1];
            let mut grad = vec![0.0; 2];
            let h0 = -g.log_density_grad(&q, &mut grad) + ham.kinetic(&p);
            let steps = (1.0 / eps).round() as usize;
            let logp = ham.leapfrog(&mut q, &mut p, &mut grad, eps, steps);
            (-logp + ham.kinetic(&p) - h0).abs()
        };
        let ratio = error(0.02) / error(0.01);
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn same_seed_same_draws() {
        let g = Gaussian {
            mean: vec![1.0, -1.0],
            precision: [[1.0, 0.0], [0.0, 1.0]],
        };
        let opts = McmcOptions {
            n_warmup: 100,
            n_samples: 50,
            ..McmcOptions::default()
        };
        let a = run_chain(&g, &[0.0, 0.0], &Metric::Diagonal(vec![1.0, 1.0]), &opts, 9).unwrap();
        let b = run_chain(&g, &[0.0, 0.0], &Metric::Diagonal(vec![1.0, 1.0]), &opts, 9).unwrap();
        assert_eq!(a, b);
    }
}
