//! Multi-chain posterior sampling for the funnel model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::diagnostics::{contrast, effective_sample_size, posterior_summary, rhat, Contrast, Rhat, Summary};
use super::hmc::{run_chains, McmcOptions, Metric};
use super::map::{fit_map_posterior, laplace_covariance, MapOptions};
use crate::error::{FunnelError, Result};
use crate::model::{FunnelConfig, FunnelPosterior, ModelParams, PatientRecord};

/// Post-warmup draws in constrained space plus sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    /// `draws[chain][iteration]` is a constrained flat parameter vector.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub diagnostics: McmcDiagnostics,
}

/// Per-parameter and per-chain sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub rhat: Vec<Rhat>,
    pub ess: Vec<f64>,
    pub divergences: Vec<usize>,
    pub warmup_divergences: Vec<usize>,
    pub mean_accept: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_warmup: usize,
    pub n_samples: usize,
}

impl McmcDiagnostics {
    /// Largest finite or infinite R̂, ignoring all-constant parameters.
    pub fn max_rhat(&self) -> f64 {
        self.rhat
            .iter()
            .filter(|r| !(r.degenerate && r.value == 1.0))
            .map(|r| r.value)
            .fold(f64::NAN, f64::max)
    }

    pub fn total_divergences(&self) -> usize {
        self.divergences.iter().sum()
    }
}

/// Per-parameter posterior summary with its R̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub summary: Summary,
    pub rhat: Rhat,
    pub ess: f64,
}

impl PosteriorSamples {
    /// Assembles samples from constrained per-chain draws and computes R̂
    /// and ESS (R̂ is NaN, flagged degenerate, with fewer than two chains).
    pub fn from_draws(
        names: Vec<String>,
        draws: Vec<Vec<Vec<f64>>>,
        mut diagnostics: McmcDiagnostics,
    ) -> Self {
        let mut samples = PosteriorSamples {
            names,
            draws,
            diagnostics: McmcDiagnostics {
                rhat: Vec::new(),
                ess: Vec::new(),
                ..diagnostics.clone()
            },
        };
        diagnostics.rhat = Vec::with_capacity(samples.names.len());
        diagnostics.ess = Vec::with_capacity(samples.names.len());
        for j in 0..samples.names.len() {
            let chains = samples.chains_of(j);
            diagnostics.rhat.push(rhat(&chains).unwrap_or(Rhat {
                value: f64::NAN,
                degenerate: true,
            }));
            diagnostics.ess.push(effective_sample_size(&chains));
        }
        samples.diagnostics = diagnostics;
        samples
    }

    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_draws(&self) -> usize {
        self.draws.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of parameter `j`, one vector per chain.
    pub fn chains_of(&self, j: usize) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|chain| chain.iter().map(|d| d[j]).collect())
            .collect()
    }

    /// Draws of parameter `j` with chains concatenated in order.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().flatten().map(|d| d[j]).collect()
    }

    /// Every draw as [`ModelParams`], chains concatenated in order.
    pub fn params(&self, config: &FunnelConfig) -> Result<Vec<ModelParams>> {
        self.draws
            .iter()
            .flatten()
            .map(|d| ModelParams::from_flat(d, config))
            .collect()
    }

    /// Componentwise posterior mean.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.names.len())
            .map(|j| {
                let col = self.column(j);
                col.iter().sum::<f64>() / col.len() as f64
            })
            .collect()
    }

    pub fn summaries(&self) -> Result<Vec<ParamSummary>> {
        (0..self.names.len())
            .map(|j| {
                Ok(ParamSummary {
                    name: self.names[j].clone(),
                    summary: posterior_summary(&self.column(j))?,
                    rhat: self.diagnostics.rhat[j],
                    ess: self.diagnostics.ess[j],
                })
            })
            .collect()
    }
}

/// Draws jittered chain starts around `center`; chain `c` uses the stream
/// seeded with `seed + c`.
fn jittered_inits(center: &[f64], opts: &McmcOptions) -> Vec<Vec<f64>> {
    (0..opts.n_chains)
        .map(|c| {
            // offset so that init draws do not reuse the chain's own stream
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(c as u64));
            rng.set_stream(1);
            center
                .iter()
                .map(|x| x + rng.gen_range(-1.0..=1.0) * opts.init_jitter)
                .collect()
        })
        .collect()
}

pub fn fit_mcmc(dataset: &[PatientRecord], config: &FunnelConfig, opts: &McmcOptions) -> Result<PosteriorSamples> {
    let posterior = FunnelPosterior::new(dataset, config)?;
    fit_mcmc_posterior(&posterior, opts)
}

/// Short run to the unconstrained-space mode, jittered starts, then [`run_chains`]. The starting
/// metric comes from the Laplace covariance at the MAP point when that is
/// positive definite, otherwise the identity.
pub fn fit_mcmc_posterior(posterior: &FunnelPosterior, opts: &McmcOptions) -> Result<PosteriorSamples> {
    opts.validate()?;
    let map = fit_map_posterior(
        posterior,
        &MapOptions {
            max_iterations: opts.map_iterations,
            jacobian: true,
            ..MapOptions::default()
        },
    )?;
    let metric = laplace_covariance(posterior, &map.unconstrained, true)
        .map(|cov| Metric::from_covariance(&cov, opts.metric))
        .unwrap_or_else(|| Metric::identity(posterior.dim(), opts.metric));
    let inits = jittered_inits(&map.unconstrained, opts);
    let runs = run_chains(posterior, &inits, &metric, opts)?;

    let config = posterior.config();
    let mut draws = Vec::with_capacity(runs.len());
    for run in &runs {
        let mut chain = Vec::with_capacity(run.draws.len());
        for u in &run.draws {
            let params = posterior.constrain(u);
            params.validate(config).map_err(|e| FunnelError::SamplerFailure {
                message: format!("draw violates parameter constraints: {e}"),
                divergences: run.divergences,
            })?;
            chain.push(params.to_flat());
        }
        draws.push(chain);
    }
    let diagnostics = McmcDiagnostics {
        rhat: Vec::new(),
        ess: Vec::new(),
        divergences: runs.iter().map(|r| r.divergences).collect(),
        warmup_divergences: runs.iter().map(|r| r.warmup_divergences).collect(),
        mean_accept: runs.iter().map(|r| r.mean_accept()).collect(),
        step_sizes: runs.iter().map(|r| r.step_size).collect(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        n_warmup: opts.n_warmup,
        n_samples: opts.n_samples,
    };
    Ok(PosteriorSamples::from_draws(
        ModelParams::names(config),
        draws,
        diagnostics,
    ))
}

/// Posterior of `t_A − t_B` for threshold `threshold_index` (0-based) from
/// two independently fitted groups.
pub fn group_threshold_contrast(
    a: &PosteriorSamples,
    b: &PosteriorSamples,
    threshold_index: usize,
    seed: u64,
) -> Result<Contrast> {
    let name = format!("t_{}", threshold_index + 1);
    let column = |s: &PosteriorSamples| {
        s.index_of(&name)
            .map(|j| s.column(j))
            .ok_or_else(|| FunnelError::NameMismatch(format!("no parameter named {name}")))
    };
    contrast(&column(a)?, &column(b)?, seed)
}
