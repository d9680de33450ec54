//! Raw-extract feature pipeline driven by a JSON feature dictionary.
//!
//! Per numeric column, among patients for whom the feature is available:
//! out-of-range values and then missing values are replaced by the mean of
//! the in-range observed values, the result is z-scored with the sample
//! standard deviation, squared entries take the square of the z-score, and
//! categorical columns expand to one-hot indicators.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{from_tagged_json, parse_decision, parse_outcome, read_text, to_tagged_json, write_text};
use crate::error::{FunnelError, Result};
use crate::model::{FunnelConfig, PatientRecord, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// The model's α; no column.
    Intercept,
    NumericZscore,
    /// Square of the z-score of `base`.
    NumericZscoreSquared,
    /// 1 when `source` equals `level`, else 0.
    OneHot,
    /// Taken as is (used to reload already transformed data).
    Numeric,
}

/// Accepted values; a missing bound is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ValidRange {
    #[serde(default)]
    pub low: Option<f64>,
    #[serde(default)]
    pub high: Option<f64>,
    /// Exclude `low` itself, e.g. SpO₂ in (0, 100].
    #[serde(default)]
    pub low_exclusive: bool,
    #[serde(default)]
    pub high_exclusive: bool,
}

impl ValidRange {
    pub fn contains(&self, x: f64) -> bool {
        let above = match self.low {
            Some(lo) if self.low_exclusive => x > lo,
            Some(lo) => x >= lo,
            None => true,
        };
        let below = match self.high {
            Some(hi) if self.high_exclusive => x < hi,
            Some(hi) => x <= hi,
            None => true,
        };
        above && below && x.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub kind: FeatureKind,
    pub first_available_stage: usize,
    /// Raw column; defaults to `name`. Unused for intercept and squared
    /// entries.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub valid_range: Option<ValidRange>,
    /// Base z-scored feature of a squared entry.
    #[serde(default)]
    pub base: Option<String>,
    /// Category matched by a one-hot entry (case-insensitive, trimmed).
    #[serde(default)]
    pub level: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
}

impl FeatureEntry {
    pub fn source_column(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    pub n_stages: usize,
    pub observation_stage: usize,
    pub id_column: String,
    /// One column per decision stage `1..K`.
    pub decision_columns: Vec<String>,
    pub outcome_column: String,
    pub features: Vec<FeatureEntry>,
    /// Raw columns carried through untouched when present (e.g. acuity).
    #[serde(default)]
    pub passthrough: Vec<String>,
    #[serde(default)]
    pub priors: PriorSpec,
}

impl FeatureDictionary {
    pub fn from_json(text: &str) -> Result<Self> {
        let dict: FeatureDictionary = from_tagged_json("funnel-feature-dictionary", text)?;
        dict.validate()?;
        Ok(dict)
    }

    pub fn to_json(&self) -> Result<String> {
        to_tagged_json("funnel-feature-dictionary", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FunnelError::InvalidConfig(m));
        let intercepts = self.features.iter().filter(|f| f.kind == FeatureKind::Intercept).count();
        if intercepts != 1 {
            return bad(format!("dictionary needs exactly one intercept entry, found {intercepts}"));
        }
        if self.decision_columns.len() + 1 != self.n_stages {
            return bad(format!(
                "{} decision columns for {} stages",
                self.decision_columns.len(),
                self.n_stages
            ));
        }
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return bad(format!("duplicate feature `{}`", f.name));
            }
            if !(1..=self.n_stages).contains(&f.first_available_stage) {
                return bad(format!("feature `{}` has stage outside [1, {}]", f.name, self.n_stages));
            }
            match f.kind {
                FeatureKind::NumericZscoreSquared => {
                    let base = f.base.as_deref().unwrap_or_default();
                    let ok = self.features.iter().any(|b| {
                        b.name == base
                            && b.kind == FeatureKind::NumericZscore
                            && b.first_available_stage <= f.first_available_stage
                    });
                    if !ok {
                        return bad(format!("squared feature `{}` needs a z-scored base, got `{base}`", f.name));
                    }
                }
                FeatureKind::OneHot if f.level.is_none() => {
                    return bad(format!("one-hot feature `{}` has no level", f.name));
                }
                _ => {}
            }
        }
        self.config()?;
        Ok(())
    }

    /// Model features in dictionary order, intercept excluded.
    pub fn model_features(&self) -> impl Iterator<Item = &FeatureEntry> {
        self.features.iter().filter(|f| f.kind != FeatureKind::Intercept)
    }

    pub fn config(&self) -> Result<FunnelConfig> {
        let features: Vec<(String, usize)> = self
            .model_features()
            .map(|f| (f.name.clone(), f.first_available_stage))
            .collect();
        let mut config = FunnelConfig::from_first_stages(self.n_stages, self.observation_stage, &features)?;
        config.priors = self.priors.clone();
        config.validate()?;
        Ok(config)
    }
}

/// Statistics of one numeric source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub feature: String,
    pub source: String,
    /// Mean of the in-range observed values, used for imputation.
    pub impute_mean: f64,
    /// Mean and standard deviation used for z-scoring.
    pub mean: f64,
    pub sd: f64,
    pub n_available: usize,
    pub n_out_of_range: usize,
    pub n_missing: usize,
}

/// Everything needed to apply the same transform to held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformStats {
    /// Always `"sample"` (n − 1).
    pub sd_denominator: String,
    pub numeric: Vec<NumericStats>,
    /// One-hot source column → number of rows matching no level.
    pub one_hot_reference_rows: BTreeMap<String, usize>,
}

impl TransformStats {
    pub fn to_json(&self) -> Result<String> {
        to_tagged_json("funnel-transform-stats", self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_tagged_json("funnel-transform-stats", text)
    }

    fn get(&self, feature: &str) -> Option<&NumericStats> {
        self.numeric.iter().find(|s| s.feature == feature)
    }
}

struct RawRow {
    id: String,
    decisions: Vec<Option<crate::model::Disposition>>,
    outcome: Option<bool>,
    deepest: usize,
    fields: Vec<String>,
    extras: BTreeMap<String, String>,
}

/// Loads a raw extract and applies the dictionary's transforms. With
/// `stats` (from an earlier load) the recorded means and sds are reused
/// instead of being estimated, e.g. for held-out data.
pub fn load_dataset(
    path: &Path,
    dictionary: &FeatureDictionary,
    stats: Option<&TransformStats>,
) -> Result<(Vec<PatientRecord>, TransformStats, FunnelConfig)> {
    let text = read_text(path)?;
    load_dataset_from_str(&text, dictionary, stats)
}

pub fn load_dataset_from_str(
    text: &str,
    dictionary: &FeatureDictionary,
    stats: Option<&TransformStats>,
) -> Result<(Vec<PatientRecord>, TransformStats, FunnelConfig)> {
    dictionary.validate()?;
    let config = dictionary.config()?;
    let k = dictionary.n_stages;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FunnelError::MissingField(name.to_string()))
    };
    let id_col = col(&dictionary.id_column)?;
    let outcome_col = col(&dictionary.outcome_column)?;
    let decision_cols = dictionary
        .decision_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let mut sources: Vec<String> = Vec::new();
    for f in dictionary.model_features() {
        if matches!(f.kind, FeatureKind::NumericZscore | FeatureKind::OneHot | FeatureKind::Numeric)
            && !sources.iter().any(|s| s == f.source_column())
        {
            sources.push(f.source_column().to_string());
        }
    }
    let source_cols = sources.iter().map(|s| col(s)).collect::<Result<Vec<_>>>()?;
    let passthrough: Vec<(String, usize)> = dictionary
        .passthrough
        .iter()
        .filter_map(|p| header.iter().position(|h| h == p).map(|c| (p.clone(), c)))
        .collect();

    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| FunnelError::data_at(line, e.to_string()))?;
        let decisions = decision_cols
            .iter()
            .enumerate()
            .map(|(s, &c)| parse_decision(&row[c], line, s + 1, k))
            .collect::<Result<Vec<_>>>()?;
        let probe = PatientRecord::new("", Vec::new(), decisions.clone(), None);
        rows.push(RawRow {
            id: row[id_col].to_string(),
            deepest: probe.deepest_stage(k),
            decisions,
            outcome: parse_outcome(&row[outcome_col], line)?,
            fields: source_cols.iter().map(|&c| row[c].trim().to_string()).collect(),
            extras: passthrough
                .iter()
                .map(|(name, c)| (name.clone(), row[*c].to_string()))
                .collect(),
        });
    }
    if rows.is_empty() {
        return Err(FunnelError::data("dataset has no rows"));
    }

    let source_index = |name: &str| sources.iter().position(|s| s == name).expect("collected above");
    let n_features = config.n_features();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::with_capacity(n_features);
    let mut numeric_stats = Vec::new();
    let mut z_by_name: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let mut reference_rows = BTreeMap::new();

    for f in dictionary.model_features() {
        let available = |r: &RawRow| r.deepest >= f.first_available_stage;
        let column: Vec<Option<f64>> = match f.kind {
            FeatureKind::Intercept => unreachable!("filtered by model_features"),
            FeatureKind::NumericZscore | FeatureKind::Numeric => {
                let j = source_index(f.source_column());
                let range = f.valid_range.unwrap_or_default();
                let mut raw: Vec<Option<Option<f64>>> = Vec::with_capacity(rows.len());
                for (i, r) in rows.iter().enumerate() {
                    if !available(r) {
                        raw.push(None);
                        continue;
                    }
                    let field = &r.fields[j];
                    let value = if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                        None
                    } else {
                        Some(field.parse::<f64>().map_err(|_| {
                            FunnelError::data_at(i + 2, format!("column `{}`: `{field}` is not a number", f.source_column()))
                        })?)
                    };
                    raw.push(Some(value));
                }
                if f.kind == FeatureKind::Numeric {
                    let mut out = Vec::with_capacity(rows.len());
                    for (i, v) in raw.into_iter().enumerate() {
                        out.push(match v {
                            None => None,
                            Some(Some(x)) => Some(x),
                            Some(None) => {
                                return Err(FunnelError::data_at(
                                    i + 2,
                                    format!("numeric feature `{}` is missing", f.name),
                                ))
                            }
                        });
                    }
                    out
                } else {
                    let (column, s) = zscore_column(f, &raw, &range, stats)?;
                    z_by_name.insert(f.name.clone(), column.clone());
                    numeric_stats.push(s);
                    column
                }
            }
            FeatureKind::NumericZscoreSquared => {
                let base = &z_by_name[f.base.as_deref().expect("validated")];
                rows.iter()
                    .zip(base)
                    .map(|(r, z)| if available(r) { z.map(|z| z * z) } else { None })
                    .collect()
            }
            FeatureKind::OneHot => {
                let j = source_index(f.source_column());
                let level = f.level.as_deref().expect("validated").trim();
                rows.iter()
                    .map(|r| available(r).then(|| f64::from(u8::from(r.fields[j].eq_ignore_ascii_case(level)))))
                    .collect()
            }
        };
        columns.push(column);
    }
    for f in dictionary.model_features().filter(|f| f.kind == FeatureKind::OneHot) {
        let j = source_index(f.source_column());
        let levels: Vec<&str> = dictionary
            .model_features()
            .filter(|g| g.kind == FeatureKind::OneHot && g.source_column() == f.source_column())
            .filter_map(|g| g.level.as_deref())
            .collect();
        let n_ref = rows
            .iter()
            .filter(|r| !levels.iter().any(|l| r.fields[j].eq_ignore_ascii_case(l.trim())))
            .count();
        reference_rows.insert(f.source_column().to_string(), n_ref);
    }

    let mut records = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let mut record = PatientRecord::new(
            r.id,
            columns.iter().map(|c| c[i]).collect(),
            r.decisions,
            r.outcome,
        );
        record.extras = r.extras;
        record
            .validate(&config)
            .map_err(|e| FunnelError::data_at(i + 2, e.to_string()))?;
        records.push(record);
    }
    Ok((
        records,
        TransformStats {
            sd_denominator: "sample".into(),
            numeric: numeric_stats,
            one_hot_reference_rows: reference_rows,
        },
        config,
    ))
}

/// Imputes and z-scores one column. `raw[i]` is `None` when the feature is
/// unavailable for row `i`, `Some(None)` when available but missing.
fn zscore_column(
    f: &FeatureEntry,
    raw: &[Option<Option<f64>>],
    range: &ValidRange,
    stats: Option<&TransformStats>,
) -> Result<(Vec<Option<f64>>, NumericStats)> {
    let available: Vec<Option<f64>> = raw.iter().flatten().copied().collect();
    let in_range: Vec<f64> = available.iter().flatten().copied().filter(|&x| range.contains(x)).collect();
    let n_missing = available.iter().filter(|v| v.is_none()).count();
    let n_out_of_range = available.iter().flatten().filter(|&&x| !range.contains(x)).count();
    let reused = match stats {
        Some(s) => Some(s.get(&f.name).ok_or_else(|| {
            FunnelError::MissingField(format!("transform statistics for `{}`", f.name))
        })?),
        None => None,
    };
    let impute_mean = match reused {
        Some(s) => s.impute_mean,
        None if in_range.is_empty() => {
            return Err(FunnelError::data(format!(
                "numeric column `{}` has no in-range values",
                f.source_column()
            )))
        }
        None => in_range.iter().sum::<f64>() / in_range.len() as f64,
    };
    let imputed: Vec<Option<f64>> = raw
        .iter()
        .map(|v| v.map(|x| x.filter(|&x| range.contains(x)).unwrap_or(impute_mean)))
        .collect();
    let (mean, sd) = match reused {
        Some(s) => (s.mean, s.sd),
        None => {
            let values: Vec<f64> = imputed.iter().flatten().copied().collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = if values.len() > 1 {
                (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (mean, sd)
        }
    };
    if !(sd > 0.0) {
        return Err(FunnelError::data(format!(
            "numeric column `{}` is constant after imputation",
            f.source_column()
        )));
    }
    Ok((
        imputed.iter().map(|v| v.map(|x| (x - mean) / sd)).collect(),
        NumericStats {
            feature: f.name.clone(),
            source: f.source_column().to_string(),
            impute_mean,
            mean,
            sd,
            n_available: available.len(),
            n_out_of_range,
            n_missing,
        },
    ))
}

/// Dictionary for reloading an already transformed export written by
/// [`super::write_records`]: every model feature passes through unchanged.
pub fn identity_dictionary(config: &FunnelConfig) -> FeatureDictionary {
    let mut features = vec![FeatureEntry {
        name: "intercept".into(),
        kind: FeatureKind::Intercept,
        first_available_stage: 1,
        source: None,
        valid_range: None,
        base: None,
        level: None,
        description: None,
    }];
    for (j, name) in config.feature_names.iter().enumerate() {
        features.push(FeatureEntry {
            name: name.clone(),
            kind: FeatureKind::Numeric,
            first_available_stage: config.first_stage_of(j).unwrap_or(config.n_stages),
            source: None,
            valid_range: None,
            base: None,
            level: None,
            description: None,
        });
    }
    FeatureDictionary {
        n_stages: config.n_stages,
        observation_stage: config.observation_stage,
        id_column: super::ID_COLUMN.into(),
        decision_columns: (1..config.n_stages).map(super::decision_column).collect(),
        outcome_column: super::OUTCOME_COLUMN.into(),
        features,
        passthrough: Vec::new(),
        priors: config.priors.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, kind: FeatureKind) -> FeatureEntry {
        FeatureEntry {
            name: name.into(),
            kind,
            first_available_stage: 1,
            source: None,
            valid_range: None,
            base: None,
            level: None,
            description: None,
        }
    }

    fn dictionary(features: Vec<FeatureEntry>) -> FeatureDictionary {
        let mut all = vec![entry("intercept", FeatureKind::Intercept)];
        all.extend(features);
        FeatureDictionary {
            n_stages: 3,
            observation_stage: 2,
            id_column: "id".into(),
            decision_columns: vec!["d1".into(), "d2".into()],
            outcome_column: "y".into(),
            features: all,
            passthrough: vec!["acuity".into()],
            priors: PriorSpec::default(),
        }
    }

    #[test]
    fn symmetric_triple_zscores() {
        let dict = dictionary(vec![entry("v", FeatureKind::NumericZscore)]);
        let csv = "id,d1,d2,y,v\na,0,,,1\nb,0,,,2\nc,0,,,3\n";
        let (records, stats, _) = load_dataset_from_str(csv, &dict, None).unwrap();
        let z: Vec<f64> = records.iter().map(|r| r.features[0].unwrap()).collect();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        assert_eq!(stats.numeric[0].sd, 1.0);
    }

    #[test]
    fn out_of_range_and_missing_take_in_range_mean() {
        let mut o2 = entry("o2sat", FeatureKind::NumericZscore);
        o2.valid_range = Some(ValidRange {
            low: Some(0.0),
            high: Some(100.0),
            low_exclusive: true,
            high_exclusive: false,
        });
        let dict = dictionary(vec![o2]);
        let csv = "id,d1,d2,y,o2sat\na,0,,,90\nb,0,,,100\nc,0,,,105\nd,0,,,\ne,0,,,0\n";
        let (_, stats, _) = load_dataset_from_str(csv, &dict, None).unwrap();
        let s = &stats.numeric[0];
        assert_eq!(s.impute_mean, 95.0);
        assert_eq!((s.n_out_of_range, s.n_missing), (2, 1));
        assert_eq!(s.mean, 95.0);
    }

    #[test]
    fn later_stage_features_are_absent_before_reached() {
        let mut age = entry("age", FeatureKind::NumericZscore);
        age.first_available_stage = 2;
        let dict = dictionary(vec![age]);
        let csv = "id,d1,d2,y,age\na,0,,,70\nb,2,0,1,40\nc,3,,0,60\nd,2,3,1,50\n";
        let (records, stats, _) = load_dataset_from_str(csv, &dict, None).unwrap();
        assert_eq!(records[0].features[0], None);
        assert!(records[1].features[0].is_some());
        assert_eq!(stats.numeric[0].n_available, 3);
        assert_eq!(stats.numeric[0].mean, 50.0);
    }

    #[test]
    fn all_missing_numeric_column_is_an_error() {
        let dict = dictionary(vec![entry("v", FeatureKind::NumericZscore)]);
        let csv = "id,d1,d2,y,v\na,0,,,\nb,0,,,\n";
        assert!(load_dataset_from_str(csv, &dict, None).is_err());
    }

    #[test]
    fn unknown_disposition_reports_row() {
        let dict = dictionary(vec![entry("v", FeatureKind::NumericZscore)]);
        let csv = "id,d1,d2,y,v\na,0,,,1\nb,7,,,2\n";
        match load_dataset_from_str(csv, &dict, None) {
            Err(FunnelError::Data { row, .. }) => assert_eq!(row, Some(3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn squares_and_one_hot() {
        let mut sq = entry("v_sq", FeatureKind::NumericZscoreSquared);
        sq.base = Some("v".into());
        let mut cp = entry("cc_chest", FeatureKind::OneHot);
        cp.source = Some("complaint".into());
        cp.level = Some("chest pain".into());
        let dict = dictionary(vec![entry("v", FeatureKind::NumericZscore), sq, cp]);
        let csv = "id,d1,d2,y,v,complaint,acuity\na,0,,,1,Chest Pain,2\nb,0,,,2,cough,3\nc,0,,,3,,1\n";
        let (records, stats, _) = load_dataset_from_str(csv, &dict, None).unwrap();
        assert_eq!(records[0].features, vec![Some(-1.0), Some(1.0), Some(1.0)]);
        assert_eq!(records[1].features, vec![Some(0.0), Some(0.0), Some(0.0)]);
        assert_eq!(records[2].extras["acuity"], "1");
        assert_eq!(stats.one_hot_reference_rows["complaint"], 2);
    }

    #[test]
    fn dictionary_needs_one_intercept() {
        let mut dict = dictionary(vec![entry("v", FeatureKind::NumericZscore)]);
        dict.features.remove(0);
        assert!(dict.validate().is_err());
    }
}
