use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use funnel_core::baselines::{fit_baseline, BaselineSpec, BaselineVariant, LogisticFit};
use funnel_core::dataio::{self, FeatureDictionary, TransformStats};
use funnel_core::inference::hmc::{McmcOptions, MetricKind};
use funnel_core::inference::map::{fit_map, MapOptions};
use funnel_core::inference::mcmc::{fit_mcmc, PosteriorSamples};
use funnel_core::metrics::{
    acuity_regression, average_by_model, evaluate_funnel, evaluate_logistic, evaluate_predictions,
    interval_coverage, mae_params, named, posterior_predictive_rates, EvaluationReport, EvaluationSet,
    MaeRow, MortalityScore, RateCheck, Task,
};
use funnel_core::model::{stage_mean, FunnelConfig, ModelParams, PatientRecord, PriorSpec};
use funnel_core::simulate::{simulate_until_valid, SimulationSpec};
use funnel_core::FunnelError;

use crate::manifest::RunManifest;
use crate::{
    BaselinesArgs, DiagnoseArgs, EvaluateArgs, FitArgs, FitMode, MetricArg, MortalityScoreArg,
    SimulateArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Funnel(#[from] FunnelError),
    #[error("no valid simulation after {attempts} attempts; last pathway counts: {counts:?}")]
    Simulation {
        attempts: usize,
        counts: BTreeMap<String, usize>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Funnel(_) => 1,
            CliError::Simulation { .. } => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    ConvergenceWarning = 2,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| FunnelError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| FunnelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, &serde_json::to_string_pretty(value).map_err(FunnelError::from)?)
}

pub fn simulate(a: &SimulateArgs) -> CliResult<Status> {
    let spec = SimulationSpec {
        n_patients: a.n_patients + a.n_test,
        config: FunnelConfig::three_stage(a.n_features),
        min_per_pathway: a.min_per_pathway,
        seed: a.seed,
        allow_skips: !a.no_skips,
    };
    spec.validate()?;
    let accepted = simulate_until_valid(&spec, a.max_attempts).map_err(|check| CliError::Simulation {
        attempts: a.max_attempts,
        counts: check.counts,
    })?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("simulate", a)?;
    manifest.seeds.push(accepted.truth.seed);
    let config = &spec.config;
    let (train, test) = accepted.data.split_at(a.n_patients);
    dataio::write_records(&a.out.join("dataset.csv"), &train.records, config)?;
    dataio::write_full_data(&a.out.join("full.csv"), &train, config)?;
    manifest.output("dataset.csv");
    manifest.output("full.csv");
    if a.n_test > 0 {
        dataio::write_records(&a.out.join("test_dataset.csv"), &test.records, config)?;
        dataio::write_full_data(&a.out.join("test_full.csv"), &test, config)?;
        manifest.output("test_dataset.csv");
        manifest.output("test_full.csv");
    }
    dataio::save_ground_truth(&a.out.join("truth.json"), &accepted.truth, config)?;
    dataio::save_config(&a.out.join("config.json"), config)?;
    write_json(&a.out.join("check.json"), &accepted.check)?;
    for name in ["truth.json", "config.json", "check.json"] {
        manifest.output(name);
    }
    manifest.write(&a.out)?;
    println!(
        "simulated {} patients (+{} held out) after {} attempt(s); pathway counts {:?}",
        a.n_patients, a.n_test, accepted.attempts, accepted.check.counts
    );
    Ok(Status::Success)
}

fn load_fit_data(a: &FitArgs, manifest: &mut RunManifest) -> CliResult<(Vec<PatientRecord>, FunnelConfig)> {
    manifest.input(&a.dataset)?;
    if let Some(dict_path) = &a.dictionary {
        manifest.input(dict_path)?;
        let dictionary = FeatureDictionary::load(dict_path)?;
        let reused = match &a.stats {
            Some(p) => {
                manifest.input(p)?;
                Some(TransformStats::from_json(&fs::read_to_string(p).map_err(|source| {
                    FunnelError::Io {
                        path: p.clone(),
                        source,
                    }
                })?)?)
            }
            None => None,
        };
        let (records, stats, config) = dataio::load_dataset(&a.dataset, &dictionary, reused.as_ref())?;
        dataio::write_records(&a.out.join("dataset.csv"), &records, &config)?;
        write_file(&a.out.join("transform_stats.json"), &stats.to_json()?)?;
        manifest.output("dataset.csv");
        manifest.output("transform_stats.json");
        Ok((records, config))
    } else {
        let config_path = a.config.as_ref().expect("clap requires config or dictionary");
        manifest.input(config_path)?;
        let config = dataio::load_config(config_path)?;
        Ok((dataio::read_records(&a.dataset, &config)?, config))
    }
}

pub fn fit(a: &FitArgs) -> CliResult<Status> {
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("fit", a)?;
    let (records, mut config) = load_fit_data(a, &mut manifest)?;
    if a.low_base_rate_prior {
        config.priors = PriorSpec::low_base_rate();
    }
    dataio::save_config(&a.out.join("config.json"), &config)?;
    manifest.output("config.json");

    let status = match a.mode {
        FitMode::Map => {
            let fit = fit_map(
                &records,
                &config,
                &MapOptions {
                    max_iterations: a.max_iterations,
                    ..MapOptions::default()
                },
            )?;
            dataio::save_params(&a.out.join("params.json"), &fit.params, &config)?;
            write_json(
                &a.out.join("map.json"),
                &serde_json::json!({
                    "log_posterior": fit.log_posterior,
                    "gradient_norm": fit.gradient_norm,
                    "iterations": fit.iterations,
                    "converged": fit.converged,
                }),
            )?;
            manifest.output("params.json");
            manifest.output("map.json");
            println!(
                "MAP: log posterior {:.4} after {} iterations (gradient norm {:.2e}){}",
                fit.log_posterior,
                fit.iterations,
                fit.gradient_norm,
                if fit.converged { "" } else { ", NOT converged" }
            );
            if fit.converged {
                Status::Success
            } else {
                Status::ConvergenceWarning
            }
        }
        FitMode::Mcmc => {
            let opts = McmcOptions {
                n_chains: a.chains,
                n_warmup: a.warmup,
                n_samples: a.samples,
                target_accept: a.target_accept,
                max_leapfrog: a.max_leapfrog,
                seed: a.seed,
                metric: match a.metric {
                    MetricArg::Dense => MetricKind::Dense,
                    MetricArg::Diagonal => MetricKind::Diagonal,
                },
                ..McmcOptions::default()
            };
            manifest.seeds = (0..a.chains as u64).map(|c| a.seed.wrapping_add(c)).collect();
            let samples = fit_mcmc(&records, &config, &opts)?;
            dataio::save_samples(&a.out.join("samples.csv"), &a.out.join("samples.json"), &samples, &config)?;
            let mean = ModelParams::from_flat(&samples.mean(), &config)?;
            dataio::save_params(&a.out.join("params.json"), &mean, &config)?;
            write_file(&a.out.join("summary.csv"), &summary_csv(&samples)?)?;
            for name in ["samples.csv", "samples.json", "params.json", "summary.csv"] {
                manifest.output(name);
            }
            let d = &samples.diagnostics;
            println!(
                "MCMC: {} chains x ({} + {}), divergences {:?}, acceptance {:?}",
                a.chains,
                a.warmup,
                a.samples,
                d.divergences,
                d.mean_accept.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
            print!("{}", summary_csv(&samples)?);
            let max_rhat = d.max_rhat();
            if max_rhat > 1.05 {
                println!("warning: max R-hat {max_rhat:.3} exceeds 1.05");
                Status::ConvergenceWarning
            } else {
                Status::Success
            }
        }
    };
    manifest.write(&a.out)?;
    Ok(status)
}

fn summary_csv(samples: &PosteriorSamples) -> CliResult<String> {
    let mut out = String::from("name,mean,sd,q2.5,median,q97.5,rhat,ess\n");
    for s in samples.summaries()? {
        let m = &s.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.name, m.mean, m.sd, m.q2_5, m.median, m.q97_5, s.rhat.value, s.ess
        ));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Coefficient {
    name: String,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselineFile {
    variant: BaselineVariant,
    lambda: f64,
    converged: bool,
    iterations: usize,
    coefficients: Vec<Coefficient>,
}

impl BaselineFile {
    fn logistic(&self) -> LogisticFit {
        LogisticFit {
            alpha: self.coefficients[0].value,
            beta: self.coefficients[1..].iter().map(|c| c.value).collect(),
            iterations: self.iterations,
            converged: self.converged,
            objective_trace: Vec::new(),
        }
    }
}

fn feature_rows(records: &[PatientRecord], full: Option<&dataio::FullData>) -> Vec<Vec<f64>> {
    match full {
        Some(f) => f.features.clone(),
        None => records
            .iter()
            .map(|r| r.features.iter().map(|x| x.unwrap_or(0.0)).collect())
            .collect(),
    }
}

pub fn baselines(a: &BaselinesArgs) -> CliResult<Status> {
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("baselines", a)?;
    manifest.input(&a.dataset)?;
    manifest.input(&a.config)?;
    let config = dataio::load_config(&a.config)?;
    let records = dataio::read_records(&a.dataset, &config)?;
    let full = match &a.full {
        Some(p) => {
            manifest.input(p)?;
            Some(dataio::read_full_data(p, &records, &config)?)
        }
        None => None,
    };
    let variants = if a.variants.is_empty() {
        BaselineVariant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| BaselineVariant::parse(v))
            .collect::<funnel_core::Result<Vec<_>>>()?
    };
    let rows = feature_rows(&records, full.as_ref());
    for variant in variants {
        let spec = BaselineSpec {
            lambda: a.lambda,
            ..BaselineSpec::new(variant)
        };
        let fit = fit_baseline(&records, full.as_ref().map(|f| f.features.as_slice()), &spec, &config)?;
        let file = BaselineFile {
            variant,
            lambda: a.lambda,
            converged: fit.fit.converged,
            iterations: fit.fit.iterations,
            coefficients: fit
                .fit
                .named(&config)
                .into_iter()
                .map(|(name, value)| Coefficient { name, value })
                .collect(),
        };
        let json_name = format!("baseline_{}.json", variant.name());
        write_file(&a.out.join(&json_name), &dataio::to_tagged_json("funnel-baseline", &file)?)?;
        let mut csv = String::from("id,mortality,final_stage_admission\n");
        for (r, x) in records.iter().zip(&rows) {
            let p = fit.fit.predict_proba(x);
            csv.push_str(&format!("{},{p},{p}\n", r.id));
        }
        let csv_name = format!("predictions_{}.csv", variant.name());
        write_file(&a.out.join(&csv_name), &csv)?;
        manifest.output(&json_name);
        manifest.output(&csv_name);
        println!(
            "{}: {} IRLS iterations{}",
            variant.name(),
            fit.fit.iterations,
            if fit.fit.converged { "" } else { ", NOT converged" }
        );
    }
    manifest.write(&a.out)?;
    Ok(Status::Success)
}

/// Evenly spaced subset of at most `max` draws.
fn thin<T: Clone>(draws: &[T], max: usize) -> Vec<T> {
    if max == 0 || draws.len() <= max {
        return draws.to_vec();
    }
    (0..max).map(|i| draws[i * draws.len() / max].clone()).collect()
}

fn sidecar_path(samples_csv: &Path) -> PathBuf {
    samples_csv.with_extension("json")
}

/// Funnel draws and configuration from a params JSON or a samples CSV.
fn load_draws(
    params: Option<&Path>,
    samples: Option<&Path>,
    max_draws: usize,
    manifest: &mut RunManifest,
) -> CliResult<Option<(Vec<ModelParams>, FunnelConfig, Option<PosteriorSamples>)>> {
    if let Some(p) = params {
        manifest.input(p)?;
        let (params, config) = dataio::load_params(p)?;
        return Ok(Some((vec![params], config, None)));
    }
    if let Some(p) = samples {
        let sidecar = sidecar_path(p);
        manifest.input(p)?;
        manifest.input(&sidecar)?;
        let (samples, config) = dataio::load_samples(p, &sidecar)?;
        let draws = thin(&samples.params(&config)?, max_draws);
        return Ok(Some((draws, config, Some(samples))));
    }
    Ok(None)
}

fn read_predictions(path: &Path, records: &[PatientRecord]) -> CliResult<BTreeMap<Task, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|source| FunnelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(FunnelError::from)?.clone();
    let id_col = header
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| FunnelError::MissingField(format!("id in {}", path.display())))?;
    let task_cols: Vec<(Task, usize)> = [
        (Task::MortalityCensored, ["mortality_censored", "mortality"]),
        (Task::MortalityObserved, ["mortality_observed", "mortality"]),
        (Task::FinalStageAdmission, ["final_stage_admission", "final_stage_admission"]),
    ]
    .into_iter()
    .filter_map(|(task, names)| {
        names
            .iter()
            .find_map(|n| header.iter().position(|h| h == *n))
            .map(|c| (task, c))
    })
    .collect();
    if task_cols.is_empty() {
        return Err(FunnelError::MissingField(format!("task score columns in {}", path.display())).into());
    }
    let mut by_id: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(FunnelError::from)?;
        let scores = task_cols
            .iter()
            .map(|&(_, c)| {
                row[c].trim().parse::<f64>().map_err(|_| FunnelError::Data {
                    row: Some(i + 2),
                    message: format!("{}: `{}` is not a score", path.display(), &row[c]),
                })
            })
            .collect::<funnel_core::Result<Vec<_>>>()?;
        by_id.insert(row[id_col].to_string(), scores);
    }
    let mut out: BTreeMap<Task, Vec<f64>> = BTreeMap::new();
    for r in records {
        let scores = by_id.get(&r.id).ok_or_else(|| FunnelError::Data {
            row: None,
            message: format!("{} has no prediction for id `{}`", path.display(), r.id),
        })?;
        for (&(task, _), &s) in task_cols.iter().zip(scores) {
            out.entry(task).or_default().push(s);
        }
    }
    Ok(out)
}

fn baseline_files(dir: &Path) -> CliResult<Vec<(PathBuf, BaselineFile)>> {
    let entries = fs::read_dir(dir).map_err(|source| FunnelError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("baseline_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|source| FunnelError::Io {
                path: p.clone(),
                source,
            })?;
            let file: BaselineFile = dataio::from_tagged_json("funnel-baseline", &text)?;
            Ok((p, file))
        })
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<Status> {
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("evaluate", a)?;
    let funnel = load_draws(a.params.as_deref(), a.samples.as_deref(), a.max_draws, &mut manifest)?;
    let truth = match &a.truth {
        Some(p) => {
            manifest.input(p)?;
            Some(dataio::load_ground_truth(p)?)
        }
        None => None,
    };
    let config = match (&funnel, &truth, &a.config) {
        (Some((_, c, _)), _, _) | (None, Some((_, c)), _) => c.clone(),
        (None, None, Some(p)) => {
            manifest.input(p)?;
            dataio::load_config(p)?
        }
        (None, None, None) => {
            return Err(FunnelError::MissingField("--config (or --params/--samples/--truth)".into()).into())
        }
    };
    manifest.input(&a.dataset)?;
    let records = dataio::read_records(&a.dataset, &config)?;
    let full = match &a.full {
        Some(p) => {
            manifest.input(p)?;
            Some(dataio::read_full_data(p, &records, &config)?)
        }
        None => None,
    };
    let set = EvaluationSet::new(
        &records,
        full.as_ref().map(|f| f.features.as_slice()),
        full.as_ref().map(|f| f.outcomes.as_slice()),
        &config,
    )?;
    let mode = match a.mortality_score {
        MortalityScoreArg::Conditional => MortalityScore::PathwayConditional,
        MortalityScoreArg::Marginal => MortalityScore::Marginal,
    };

    let mut report = EvaluationReport::default();
    let names = ModelParams::names(&config);
    let beta_names: Vec<String> = names.iter().filter(|n| n.starts_with("beta_")).cloned().collect();
    let alpha_name = vec!["alpha".to_string()];
    let recovery = |model: &str, estimate: &[(String, f64)], truth: &[(String, f64)]| -> CliResult<MaeRow> {
        Ok(MaeRow {
            model: model.to_string(),
            mae_alpha: mae_params(estimate, truth, &alpha_name)?,
            mae_beta: mae_params(estimate, truth, &beta_names)?,
        })
    };
    let truth_named = truth.as_ref().map(|(t, _)| named(&names, &t.params.to_flat()));

    if let Some((draws, _, samples)) = &funnel {
        report.tasks.extend(evaluate_funnel("funnel", draws, &set, mode, a.bins)?);
        if let Some(t) = &truth_named {
            let estimate = match samples {
                Some(s) => named(&names, &s.mean()),
                None => named(&names, &draws[0].to_flat()),
            };
            report.parameter_recovery.push(recovery("funnel", &estimate, t)?);
            if let Some(s) = samples {
                let intervals: Vec<(f64, f64)> = s
                    .summaries()?
                    .iter()
                    .map(|p| (p.summary.q2_5, p.summary.q97_5))
                    .collect();
                let truths: Vec<f64> = t.iter().map(|(_, v)| *v).collect();
                let cov = interval_coverage(&[intervals], &[truths])?;
                report.coverage = names.iter().cloned().zip(cov).collect();
            }
        }
    }
    if let Some(dir) = &a.baselines {
        for (path, file) in baseline_files(dir)? {
            manifest.input(&path)?;
            let name = file.variant.name();
            report.tasks.extend(evaluate_logistic(name, &file.logistic(), &set, a.bins)?);
            if let Some(t) = &truth_named {
                let estimate: Vec<(String, f64)> =
                    file.coefficients.iter().map(|c| (c.name.clone(), c.value)).collect();
                report.parameter_recovery.push(recovery(name, &estimate, t)?);
            }
        }
    }
    for spec in &a.predictions {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| FunnelError::Data {
                row: None,
                message: format!("--predictions expects name=path, got `{spec}`"),
            })?;
        let path = Path::new(path);
        manifest.input(path)?;
        let predictions = read_predictions(path, &records)?;
        report.tasks.extend(evaluate_predictions(name, &predictions, &set, a.bins)?);
    }
    report.task_averages = average_by_model(&report.tasks);

    write_file(&a.out.join("report.json"), &report.to_json()?)?;
    write_file(&a.out.join("table2.csv"), &report.prediction_csv()?)?;
    manifest.output("report.json");
    manifest.output("table2.csv");
    if !report.parameter_recovery.is_empty() {
        write_file(&a.out.join("table1.csv"), &report.recovery_csv()?)?;
        manifest.output("table1.csv");
        print!("{}", report.recovery_csv()?);
    }
    print!("{}", report.prediction_csv()?);
    manifest.write(&a.out)?;
    Ok(Status::Success)
}

fn rate_csv(checks: &[RateCheck]) -> String {
    let mut out = String::from("label,n,observed,expected,se,z\n");
    for c in checks {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.label,
            c.n,
            c.observed,
            c.expected,
            c.se,
            c.z()
        ));
    }
    out
}

pub fn diagnose(a: &DiagnoseArgs) -> CliResult<Status> {
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("diagnose", a)?;
    let (draws, config, _) = load_draws(a.params.as_deref(), a.samples.as_deref(), a.max_draws, &mut manifest)?
        .expect("clap requires samples or params");
    manifest.input(&a.dataset)?;
    let records = dataio::read_records(&a.dataset, &config)?;

    let check = posterior_predictive_rates(&draws, &records, &config)?;
    write_file(&a.out.join("predictive_admit.csv"), &rate_csv(&check.admit))?;
    write_file(&a.out.join("predictive_mortality.csv"), &rate_csv(&check.mortality))?;
    manifest.output("predictive_admit.csv");
    manifest.output("predictive_mortality.csv");
    let all: Vec<&RateCheck> = check.admit.iter().chain(&check.mortality).collect();
    let max_z = all.iter().map(|c| c.z()).fold(0.0, f64::max);
    let within = all.iter().filter(|c| c.z() <= 3.0).count();

    let mut notes = Vec::new();
    let has_columns = records
        .iter()
        .all(|r| r.extras.contains_key(&a.acuity_column) && r.extras.contains_key(&a.group_column));
    let acuity = if has_columns {
        let mut acuity = Vec::new();
        let mut group = Vec::new();
        let mut risk = Vec::new();
        let mut skipped = 0;
        for r in &records {
            let Ok(value) = r.extras[&a.acuity_column].trim().parse::<f64>() else {
                skipped += 1;
                continue;
            };
            let mut total = 0.0;
            for params in &draws {
                total += stage_mean(r, 1, params, &config)?;
            }
            acuity.push(value);
            group.push(r.extras[&a.group_column].trim() == a.group_a);
            risk.push(total / draws.len() as f64);
        }
        if skipped > 0 {
            notes.push(format!("{skipped} rows without a numeric {} were skipped", a.acuity_column));
        }
        let fit = acuity_regression(&acuity, &group, &risk)?;
        write_json(&a.out.join("acuity.json"), &fit)?;
        manifest.output("acuity.json");
        Some(fit)
    } else {
        notes.push(format!(
            "acuity regression skipped: columns `{}` and `{}` are not both present",
            a.acuity_column, a.group_column
        ));
        None
    };

    let summary = serde_json::json!({
        "n_records": records.len(),
        "n_draws": draws.len(),
        "n_checks": all.len(),
        "within_3_se": within,
        "max_abs_z": max_z,
        "acuity": acuity,
        "notes": notes,
    });
    write_json(&a.out.join("diagnose.json"), &summary)?;
    manifest.output("diagnose.json");
    manifest.write(&a.out)?;
    println!(
        "posterior predictive: {within}/{} rates within 3 SE (max |z| = {max_z:.2})",
        all.len()
    );
    for n in &notes {
        println!("note: {n}");
    }
    Ok(Status::Success)
}
