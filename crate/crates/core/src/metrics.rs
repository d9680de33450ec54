//! Evaluation: parameter recovery, discrimination, calibration, interval
//! coverage, posterior predictive rates and the acuity regression.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::LogisticFit;
use crate::error::{FunnelError, Result};
use crate::model::{
    final_stage_probability, marginal_mortality, predict_rates, FunnelConfig, ModelParams,
    PatientRecord,
};

/// Mean absolute difference over the parameters named in `subset`.
pub fn mae_params(
    estimated: &[(String, f64)],
    truth: &[(String, f64)],
    subset: &[String],
) -> Result<f64> {
    if subset.is_empty() {
        return Err(FunnelError::NameMismatch("empty parameter subset".into()));
    }
    let lookup = |set: &[(String, f64)], name: &str, which: &str| {
        set.iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| FunnelError::NameMismatch(format!("{which} has no parameter {name}")))
    };
    let mut total = 0.0;
    for name in subset {
        total += (lookup(estimated, name, "estimate")? - lookup(truth, name, "truth")?).abs();
    }
    Ok(total / subset.len() as f64)
}

/// Names paired with values, e.g. for [`mae_params`].
pub fn named(names: &[String], values: &[f64]) -> Vec<(String, f64)> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}

/// Area under the ROC curve as the Mann–Whitney probability, ties counted
/// one half through average ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(FunnelError::data("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FunnelError::UndefinedMetric(
            "AUROC needs both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg_rank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Expected calibration error over `n_bins` equal-width bins on [0, 1].
/// A score of exactly 1 falls in the last bin.
pub fn ece(scores: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    if scores.len() != labels.len() || n_bins == 0 {
        return Err(FunnelError::data("ECE needs matching scores/labels and at least one bin"));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(FunnelError::Domain(format!("score {bad} outside [0, 1]")));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; n_bins];
    let mut score_sum = vec![0.0; n_bins];
    let mut label_sum = vec![0.0; n_bins];
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * n_bins as f64) as usize).min(n_bins - 1);
        count[b] += 1;
        score_sum[b] += s;
        label_sum[b] += f64::from(u8::from(l));
    }
    let n = scores.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (score_sum[b] - label_sum[b]).abs() / n)
        .sum())
}

/// Fraction of simulations whose interval contains the truth, per
/// parameter. `intervals[s][j]` and `truths[s][j]` belong to simulation `s`,
/// parameter `j`.
pub fn interval_coverage(intervals: &[Vec<(f64, f64)>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    if intervals.is_empty() || intervals.len() != truths.len() {
        return Err(FunnelError::data("coverage needs one truth vector per simulation"));
    }
    let p = intervals[0].len();
    if intervals.iter().any(|v| v.len() != p) || truths.iter().any(|t| t.len() != p) {
        return Err(FunnelError::data("ragged coverage inputs"));
    }
    let sims = intervals.len() as f64;
    Ok((0..p)
        .map(|j| {
            intervals
                .iter()
                .zip(truths)
                .filter(|(iv, t)| iv[j].0 <= t[j] && t[j] <= iv[j].1)
                .count() as f64
                / sims
        })
        .collect())
}

/// Observed against model-expected frequency of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub label: String,
    /// Patients at risk of the event.
    pub n: usize,
    pub observed: f64,
    pub expected: f64,
    /// Binomial standard error `sqrt(expected·(1 − expected)/n)`.
    pub se: f64,
}

impl RateCheck {
    /// `|observed − expected|` in standard errors (0 when both agree
    /// exactly, infinite when they differ with zero SE).
    pub fn z(&self) -> f64 {
        let diff = (self.observed - self.expected).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.se
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveCheck {
    /// One entry per (stage, disposition): among patients who reached the
    /// stage, the share given that disposition.
    pub admit: Vec<RateCheck>,
    /// One entry per pathway with observed outcomes: the share with `y = 1`.
    pub mortality: Vec<RateCheck>,
}

fn rate_check(label: String, n: usize, hits: f64, expected_sum: f64) -> RateCheck {
    let nf = n as f64;
    let expected = expected_sum / nf;
    RateCheck {
        label,
        n,
        observed: hits / nf,
        expected,
        se: (expected * (1.0 - expected) / nf).sqrt(),
    }
}

/// Compares empirical admit and mortality rates with their posterior
/// expectations (per-patient rates averaged over `draws`).
pub fn posterior_predictive_rates(
    draws: &[ModelParams],
    dataset: &[PatientRecord],
    config: &FunnelConfig,
) -> Result<PredictiveCheck> {
    if draws.is_empty() || dataset.is_empty() {
        return Err(FunnelError::data("posterior predictive check needs draws and records"));
    }
    // (stage, disposition label) -> (n, hits, expected sum)
    let mut admit: BTreeMap<(usize, String), (usize, f64, f64)> = BTreeMap::new();
    let mut mortality: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    let inv = 1.0 / draws.len() as f64;
    for record in dataset {
        let pathway = record.pathway();
        let mut mean_probs: Vec<Vec<f64>> = Vec::new();
        let mut mean_mortality = 0.0;
        for params in draws {
            let rates = predict_rates(record, params, config)?;
            if mean_probs.is_empty() {
                mean_probs = rates.stage_rates.iter().map(|s| vec![0.0; s.probs.len()]).collect();
            }
            for (acc, s) in mean_probs.iter_mut().zip(&rates.stage_rates) {
                acc.iter_mut().zip(&s.probs).for_each(|(a, p)| *a += p * inv);
            }
            mean_mortality += rates.mortality * inv;
        }
        for (decision, probs) in pathway.0.iter().zip(&mean_probs) {
            let options = crate::model::Disposition::options(decision.stage, config.n_stages);
            for (option, p) in options.iter().zip(probs) {
                let entry = admit
                    .entry((decision.stage, option.to_string()))
                    .or_insert((0, 0.0, 0.0));
                entry.0 += 1;
                entry.1 += f64::from(u8::from(*option == decision.disposition));
                entry.2 += p;
            }
        }
        if let Some(y) = record.outcome {
            let entry = mortality.entry(pathway.label()).or_insert((0, 0.0, 0.0));
            entry.0 += 1;
            entry.1 += f64::from(u8::from(y));
            entry.2 += mean_mortality;
        }
    }
    Ok(PredictiveCheck {
        admit: admit
            .into_iter()
            .map(|((stage, d), (n, hits, exp))| rate_check(format!("stage{stage}->{d}"), n, hits, exp))
            .collect(),
        mortality: mortality
            .into_iter()
            .map(|(label, (n, hits, exp))| rate_check(label, n, hits, exp))
            .collect(),
    })
}

/// Coefficient estimate with a normal-theory 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcuityFit {
    pub beta_group_a: Coefficient,
    pub beta_group_b: Coefficient,
    pub beta_risk: Coefficient,
    pub residual_sd: f64,
    pub n: usize,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// OLS of `acuity ~ group_a + group_b + risk` with no global intercept (the
/// two complementary group indicators span it). `in_group_a[i]` places row
/// `i` in group A, otherwise group B.
pub fn acuity_regression(acuity: &[f64], in_group_a: &[bool], risk: &[f64]) -> Result<AcuityFit> {
    let n = acuity.len();
    if in_group_a.len() != n || risk.len() != n {
        return Err(FunnelError::data("acuity regression inputs differ in length"));
    }
    if risk.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(FunnelError::Domain("risk must lie in [0, 1]".into()));
    }
    if n <= 3 {
        return Err(FunnelError::RankDeficient);
    }
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => f64::from(u8::from(in_group_a[i])),
        1 => f64::from(u8::from(!in_group_a[i])),
        _ => risk[i],
    });
    let y = DVector::from_column_slice(acuity);
    let xtx = x.transpose() * &x;
    let chol = xtx.clone().cholesky().ok_or(FunnelError::RankDeficient)?;
    let xtx_inv = chol.inverse();
    // rank check on the scaled Gram matrix: a near-singular design gives a
    // tiny smallest eigenvalue relative to the largest
    let eig = xtx.symmetric_eigenvalues();
    if eig.min() <= 1e-12 * eig.max() {
        return Err(FunnelError::RankDeficient);
    }
    // thin QR: R β = Qᵀ y
    let qr = x.clone().qr();
    let beta = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * &y))
        .ok_or(FunnelError::RankDeficient)?;
    let residuals = &y - &x * &beta;
    let sigma2 = residuals.norm_squared() / (n - 3) as f64;
    let coef = |j: usize| {
        let se = (sigma2 * xtx_inv[(j, j)]).sqrt();
        Coefficient {
            estimate: beta[j],
            se,
            lower: beta[j] - Z_975 * se,
            upper: beta[j] + Z_975 * se,
        }
    };
    Ok(AcuityFit {
        beta_group_a: coef(0),
        beta_group_b: coef(1),
        beta_risk: coef(2),
        residual_sd: sigma2.sqrt(),
        n,
    })
}

/// Prediction tasks scored on held-out or observed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Outcome of patients whose outcome was censored (needs withheld
    /// outcomes).
    MortalityCensored,
    /// Outcome of patients whose outcome was observed.
    MortalityObserved,
    /// Whether the patient reached the final stage.
    FinalStageAdmission,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::MortalityCensored => "mortality_censored",
            Task::MortalityObserved => "mortality_observed",
            Task::FinalStageAdmission => "final_stage_admission",
        }
    }
}

/// How the funnel model scores the mortality tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MortalityScore {
    /// Mean outcome given the interval the patient's last recorded decision
    /// placed their risk draw in.
    #[default]
    PathwayConditional,
    /// φ at the deepest stage with complete features, ignoring decisions.
    Marginal,
}

/// Rows and labels for each task. `features[i]` is the feature row used for
/// prediction (complete rows from a simulator, or the record's own features
/// with absent entries as 0). `full_outcomes` supplies censored outcomes.
#[derive(Debug, Clone)]
pub struct EvaluationSet<'a> {
    pub records: &'a [PatientRecord],
    pub features: Vec<Vec<f64>>,
    pub full_outcomes: Option<&'a [bool]>,
    pub config: &'a FunnelConfig,
}

impl<'a> EvaluationSet<'a> {
    pub fn new(
        records: &'a [PatientRecord],
        full_features: Option<&[Vec<f64>]>,
        full_outcomes: Option<&'a [bool]>,
        config: &'a FunnelConfig,
    ) -> Result<Self> {
        let features = match full_features {
            Some(f) if f.len() == records.len() => f.to_vec(),
            Some(_) => return Err(FunnelError::data("feature rows do not match records")),
            None => records
                .iter()
                .map(|r| r.features.iter().map(|x| x.unwrap_or(0.0)).collect())
                .collect(),
        };
        if full_outcomes.is_some_and(|y| y.len() != records.len()) {
            return Err(FunnelError::data("full outcomes do not match records"));
        }
        Ok(EvaluationSet {
            records,
            features,
            full_outcomes,
            config,
        })
    }

    /// Tasks this set has labels for.
    pub fn tasks(&self) -> Vec<Task> {
        let mut tasks = Vec::new();
        if self.full_outcomes.is_some() && self.records.iter().any(|r| r.outcome.is_none()) {
            tasks.push(Task::MortalityCensored);
        }
        if self.records.iter().any(|r| r.outcome.is_some()) {
            tasks.push(Task::MortalityObserved);
        }
        tasks.push(Task::FinalStageAdmission);
        tasks
    }

    /// Row indices and labels of `task`.
    pub fn labels(&self, task: Task) -> (Vec<usize>, Vec<bool>) {
        let k = self.config.n_stages;
        let mut idx = Vec::new();
        let mut labels = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            let label = match task {
                Task::MortalityCensored => match (r.outcome, self.full_outcomes) {
                    (None, Some(full)) => full[i],
                    _ => continue,
                },
                Task::MortalityObserved => match r.outcome {
                    Some(y) => y,
                    None => continue,
                },
                Task::FinalStageAdmission => r.deepest_stage(k) == k,
            };
            idx.push(i);
            labels.push(label);
        }
        (idx, labels)
    }

    fn filled_record(&self, i: usize) -> PatientRecord {
        let mut r = self.records[i].clone();
        r.features = self.features[i].iter().map(|&x| Some(x)).collect();
        r
    }

    /// Posterior-mean funnel prediction for row `i` and `task`.
    pub fn funnel_score(&self, draws: &[ModelParams], i: usize, task: Task, mode: MortalityScore) -> Result<f64> {
        let record = self.filled_record(i);
        let mut total = 0.0;
        for params in draws {
            total += match (task, mode) {
                (Task::FinalStageAdmission, _) => {
                    final_stage_probability(&record.features, params, self.config)
                }
                (_, MortalityScore::Marginal) => marginal_mortality(&record.features, params, self.config),
                (_, MortalityScore::PathwayConditional) => {
                    predict_rates(&record, params, self.config)?.mortality
                }
            };
        }
        Ok(total / draws.len() as f64)
    }
}

/// AUROC and ECE of one model on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub model: String,
    pub task: Task,
    pub n: usize,
    /// Absent when the task's labels contain a single class.
    pub auroc: Option<f64>,
    pub ece: f64,
}

/// Averages over tasks for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAverage {
    pub model: String,
    pub auroc: f64,
    pub ece: f64,
}

fn task_metrics(model: &str, task: Task, scores: &[f64], labels: &[bool], n_bins: usize) -> Result<TaskMetrics> {
    let auroc = match auroc(scores, labels) {
        Ok(a) => Some(a),
        Err(FunnelError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TaskMetrics {
        model: model.to_string(),
        task,
        n: scores.len(),
        auroc,
        ece: ece(scores, labels, n_bins)?,
    })
}

/// Scores the funnel model (posterior mean over `draws`) on every task.
pub fn evaluate_funnel(
    model: &str,
    draws: &[ModelParams],
    set: &EvaluationSet,
    mode: MortalityScore,
    n_bins: usize,
) -> Result<Vec<TaskMetrics>> {
    set.tasks()
        .into_iter()
        .map(|task| {
            let (idx, labels) = set.labels(task);
            let scores = idx
                .iter()
                .map(|&i| set.funnel_score(draws, i, task, mode))
                .collect::<Result<Vec<_>>>()?;
            task_metrics(model, task, &scores, &labels, n_bins)
        })
        .collect()
}

/// Scores a logistic baseline on every task with its single prediction.
pub fn evaluate_logistic(model: &str, fit: &LogisticFit, set: &EvaluationSet, n_bins: usize) -> Result<Vec<TaskMetrics>> {
    set.tasks()
        .into_iter()
        .map(|task| {
            let (idx, labels) = set.labels(task);
            let scores: Vec<f64> = idx.iter().map(|&i| fit.predict_proba(&set.features[i])).collect();
            task_metrics(model, task, &scores, &labels, n_bins)
        })
        .collect()
}

/// Scores externally produced predictions: `predictions[task]` holds one
/// score per record (entries outside the task's rows are ignored).
pub fn evaluate_predictions(
    model: &str,
    predictions: &BTreeMap<Task, Vec<f64>>,
    set: &EvaluationSet,
    n_bins: usize,
) -> Result<Vec<TaskMetrics>> {
    let mut out = Vec::new();
    for task in set.tasks() {
        let Some(scores) = predictions.get(&task) else {
            continue;
        };
        if scores.len() != set.records.len() {
            return Err(FunnelError::data(format!(
                "{} predictions for {} records",
                scores.len(),
                set.records.len()
            )));
        }
        let (idx, labels) = set.labels(task);
        let picked: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        out.push(task_metrics(model, task, &picked, &labels, n_bins)?);
    }
    Ok(out)
}

/// Unweighted mean over tasks of each model's AUROC (tasks with undefined
/// AUROC skipped) and ECE, in order of first appearance.
pub fn average_by_model(metrics: &[TaskMetrics]) -> Vec<ModelAverage> {
    let mut order: Vec<String> = Vec::new();
    for m in metrics {
        if !order.contains(&m.model) {
            order.push(m.model.clone());
        }
    }
    order
        .into_iter()
        .map(|model| {
            let rows: Vec<&TaskMetrics> = metrics.iter().filter(|m| m.model == model).collect();
            let aurocs: Vec<f64> = rows.iter().filter_map(|m| m.auroc).collect();
            ModelAverage {
                auroc: aurocs.iter().sum::<f64>() / aurocs.len() as f64,
                ece: rows.iter().map(|m| m.ece).sum::<f64>() / rows.len() as f64,
                model,
            }
        })
        .collect()
}

/// Parameter-recovery row: one model's MAE on α and on β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub model: String,
    pub mae_alpha: f64,
    pub mae_beta: f64,
}

/// Everything an evaluation run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvaluationReport {
    pub parameter_recovery: Vec<MaeRow>,
    pub tasks: Vec<TaskMetrics>,
    pub task_averages: Vec<ModelAverage>,
    /// Parameter name → coverage of its 95% interval.
    pub coverage: Vec<(String, f64)>,
    pub posterior_predictive: Option<PredictiveCheck>,
    pub acuity: Option<AcuityFit>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parameter-recovery table: `model,mae_alpha,mae_beta`.
    pub fn recovery_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "mae_alpha", "mae_beta"])?;
        for r in &self.parameter_recovery {
            w.write_record([r.model.clone(), r.mae_alpha.to_string(), r.mae_beta.to_string()])?;
        }
        finish_csv(w)
    }

    /// Prediction table: `model,task,n,auroc,ece`, with `average` rows.
    pub fn prediction_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "task", "n", "auroc", "ece"])?;
        for m in &self.tasks {
            w.write_record([
                m.model.clone(),
                m.task.name().to_string(),
                m.n.to_string(),
                m.auroc.map_or(String::new(), |a| a.to_string()),
                m.ece.to_string(),
            ])?;
        }
        for a in &self.task_averages {
            w.write_record([
                a.model.clone(),
                "average".to_string(),
                String::new(),
                a.auroc.to_string(),
                a.ece.to_string(),
            ])?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| FunnelError::data(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| FunnelError::data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        let names = vec!["a".to_string()];
        assert_eq!(mae_params(&named(&names, &[3.0]), &named(&names, &[1.0]), &names).unwrap(), 2.0);
        let bad = vec!["b".to_string()];
        assert!(matches!(
            mae_params(&named(&names, &[3.0]), &named(&names, &[1.0]), &bad),
            Err(FunnelError::NameMismatch(_))
        ));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(FunnelError::UndefinedMetric(_))));
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0, 1.0, 1.0], &[false, false, false], 10).unwrap(), 1.0);
        // bins [0,.1) [.1,.2) ...: scores 0.05 ×2 with labels 0,0 → |0.05|; 0.55 ×2 with 1,0 → |0.05|
        let e = ece(&[0.05, 0.05, 0.55, 0.55], &[false, false, true, false], 10).unwrap();
        assert!((e - 0.05).abs() < 1e-15);
        assert!(ece(&[1.2], &[true], 10).is_err());
    }

    #[test]
    fn coverage_examples() {
        let wide = vec![vec![(f64::NEG_INFINITY, f64::INFINITY); 2]; 3];
        let truths = vec![vec![0.3, -1.0]; 3];
        assert_eq!(interval_coverage(&wide, &truths).unwrap(), vec![1.0, 1.0]);
        let wrong = vec![vec![(5.0, 5.0); 2]; 3];
        assert_eq!(interval_coverage(&wrong, &truths).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn acuity_noise_free_recovery() {
        let n = 40;
        let group: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let risk: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).fract()).collect();
        let acuity: Vec<f64> = (0..n)
            .map(|i| if group[i] { 2.5 } else { 3.1 } - 4.0 * risk[i])
            .collect();
        let fit = acuity_regression(&acuity, &group, &risk).unwrap();
        assert!((fit.beta_group_a.estimate - 2.5).abs() < 1e-10);
        assert!((fit.beta_group_b.estimate - 3.1).abs() < 1e-10);
        assert!((fit.beta_risk.estimate + 4.0).abs() < 1e-10);
    }

    #[test]
    fn acuity_single_group_is_rank_deficient() {
        let risk = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(matches!(
            acuity_regression(&[1.0; 5], &[true; 5], &risk),
            Err(FunnelError::RankDeficient)
        ));
    }
}
