//! File formats: model-ready dataset CSV, parameter and ground-truth JSON,
//! posterior samples (CSV plus JSON sidecar), and the raw-extract feature
//! pipeline in [`features`].
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-for-bit.

pub mod features;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FunnelError, Result};
use crate::inference::mcmc::{McmcDiagnostics, PosteriorSamples};
use crate::model::{Disposition, FunnelConfig, ModelParams, PatientRecord};
use crate::simulate::{GroundTruth, SimulatedData};

pub use features::{load_dataset, FeatureDictionary, FeatureEntry, FeatureKind, TransformStats};

pub const FORMAT_VERSION: u32 = 1;

pub const ID_COLUMN: &str = "id";
pub const OUTCOME_COLUMN: &str = "outcome";

/// Name of the decision column for `stage`.
pub fn decision_column(stage: usize) -> String {
    format!("decision_{stage}")
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FunnelError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| FunnelError::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| FunnelError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(file))
}

fn csv_writer(path: &Path, comment: &str) -> Result<csv::Writer<fs::File>> {
    use std::io::Write;
    let mut file = fs::File::create(path).map_err(|e| FunnelError::io(path, e))?;
    for line in comment.lines() {
        writeln!(file, "# {line}").map_err(|e| FunnelError::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| FunnelError::io(path, e))
}

/// Writes `body` wrapped with a `format` tag and [`FORMAT_VERSION`].
pub fn to_tagged_json<T: Serialize>(format: &str, body: &T) -> Result<String> {
    let mut value = serde_json::to_value(body)?;
    let Value::Object(map) = &mut value else {
        return Err(FunnelError::data("tagged JSON body must be an object"));
    };
    map.insert("format".into(), Value::String(format.into()));
    map.insert("version".into(), Value::from(FORMAT_VERSION));
    Ok(serde_json::to_string_pretty(&value)?)
}

/// Parses JSON written by [`to_tagged_json`], checking the tag first.
pub fn from_tagged_json<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    let mut value: Value = serde_json::from_str(text)?;
    let found_format = value.get("format").and_then(Value::as_str).unwrap_or("<none>");
    let found_version = value.get("version").and_then(Value::as_u64);
    if found_format != format || found_version != Some(u64::from(FORMAT_VERSION)) {
        return Err(FunnelError::VersionMismatch {
            expected: format.into(),
            expected_version: FORMAT_VERSION,
            found: format!(
                "{found_format} version {}",
                found_version.map_or("<none>".into(), |v| v.to_string())
            ),
        });
    }
    if let Value::Object(map) = &mut value {
        map.remove("format");
        map.remove("version");
    }
    serde_json::from_value(value).map_err(named_missing_field)
}

fn named_missing_field(e: serde_json::Error) -> FunnelError {
    let msg = e.to_string();
    match msg.strip_prefix("missing field `").and_then(|rest| rest.split('`').next()) {
        Some(field) => FunnelError::MissingField(field.to_string()),
        None => FunnelError::Json(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsFile {
    config: FunnelConfig,
    params: ModelParams,
}

pub fn params_to_json(params: &ModelParams, config: &FunnelConfig) -> Result<String> {
    params.validate(config)?;
    to_tagged_json(
        "funnel-params",
        &ParamsFile {
            config: config.clone(),
            params: params.clone(),
        },
    )
}

/// Parameters and the configuration they were fitted under.
pub fn params_from_json(text: &str) -> Result<(ModelParams, FunnelConfig)> {
    let file: ParamsFile = from_tagged_json("funnel-params", text)?;
    file.config.validate()?;
    file.params.validate(&file.config)?;
    Ok((file.params, file.config))
}

pub fn save_params(path: &Path, params: &ModelParams, config: &FunnelConfig) -> Result<()> {
    write_text(path, &params_to_json(params, config)?)
}

pub fn load_params(path: &Path) -> Result<(ModelParams, FunnelConfig)> {
    params_from_json(&read_text(path)?)
}

pub fn save_config(path: &Path, config: &FunnelConfig) -> Result<()> {
    write_text(path, &to_tagged_json("funnel-config", config)?)
}

pub fn load_config(path: &Path) -> Result<FunnelConfig> {
    let config: FunnelConfig = from_tagged_json("funnel-config", &read_text(path)?)?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthFile {
    config: FunnelConfig,
    params: ModelParams,
    seed: u64,
}

pub fn save_ground_truth(path: &Path, truth: &GroundTruth, config: &FunnelConfig) -> Result<()> {
    let text = to_tagged_json(
        "funnel-ground-truth",
        &TruthFile {
            config: config.clone(),
            params: truth.params.clone(),
            seed: truth.seed,
        },
    )?;
    write_text(path, &text)
}

pub fn load_ground_truth(path: &Path) -> Result<(GroundTruth, FunnelConfig)> {
    let file: TruthFile = from_tagged_json("funnel-ground-truth", &read_text(path)?)?;
    file.config.validate()?;
    file.params.validate(&file.config)?;
    Ok((
        GroundTruth {
            params: file.params,
            seed: file.seed,
        },
        file.config,
    ))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| FunnelError::data_at(row, format!("column `{column}`: cannot parse `{field}` as a number")))
}

pub(crate) fn parse_outcome(field: &str, row: usize) -> Result<Option<bool>> {
    match field.trim() {
        "" => Ok(None),
        "1" | "true" | "TRUE" | "True" => Ok(Some(true)),
        "0" | "false" | "FALSE" | "False" => Ok(Some(false)),
        other => Err(FunnelError::data_at(row, format!("outcome `{other}` is not 0/1"))),
    }
}

pub(crate) fn parse_decision(field: &str, row: usize, stage: usize, n_stages: usize) -> Result<Option<Disposition>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let code: usize = field
        .parse()
        .map_err(|_| FunnelError::data_at(row, format!("decision at stage {stage}: `{field}` is not a disposition code")))?;
    if code != 0 && !(stage < code && code <= n_stages) {
        return Err(FunnelError::data_at(
            row,
            format!("decision at stage {stage}: unknown disposition code {code}"),
        ));
    }
    Ok(Some(Disposition::from_code(code)))
}

const DATASET_COMMENT: &str = "disposition codes: 0 = discharge, m = admit to stage m; empty = stage not reached\noutcome: 1/0, empty when censored; empty feature = not available";

/// Writes model-ready records: `id`, `decision_k`…, `outcome`, one column
/// per feature, then any passthrough columns.
pub fn write_records(path: &Path, records: &[PatientRecord], config: &FunnelConfig) -> Result<()> {
    let extras: Vec<String> = records
        .iter()
        .flat_map(|r| r.extras.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv_writer(path, DATASET_COMMENT)?;
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend((1..config.n_stages).map(decision_column));
    header.push(OUTCOME_COLUMN.into());
    header.extend(config.feature_names.iter().cloned());
    header.extend(extras.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend(r.decisions.iter().map(|d| d.map_or(String::new(), |d| d.code().to_string())));
        row.push(r.outcome.map_or(String::new(), |y| u8::from(y).to_string()));
        row.extend(r.features.iter().map(|&x| fmt_opt(x)));
        row.extend(extras.iter().map(|k| r.extras.get(k).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// Reads records written by [`write_records`] (or any CSV with those
/// columns). Columns not named by `config` become passthrough extras.
pub fn read_records(path: &Path, config: &FunnelConfig) -> Result<Vec<PatientRecord>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FunnelError::MissingField(name.to_string()))
    };
    let id_col = col(ID_COLUMN)?;
    let outcome_col = col(OUTCOME_COLUMN)?;
    let decision_cols = (1..config.n_stages)
        .map(|s| col(&decision_column(s)))
        .collect::<Result<Vec<_>>>()?;
    let feature_cols = config
        .feature_names
        .iter()
        .map(|f| col(f))
        .collect::<Result<Vec<_>>>()?;
    let mut known = vec![id_col, outcome_col];
    known.extend(&decision_cols);
    known.extend(&feature_cols);
    let extra_cols: Vec<usize> = (0..header.len()).filter(|j| !known.contains(j)).collect();

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is row 1
        let line = i + 2;
        let row = row.map_err(|e| FunnelError::data_at(line, e.to_string()))?;
        let decisions = decision_cols
            .iter()
            .enumerate()
            .map(|(s, &c)| parse_decision(&row[c], line, s + 1, config.n_stages))
            .collect::<Result<Vec<_>>>()?;
        let features = feature_cols
            .iter()
            .zip(&config.feature_names)
            .map(|(&c, name)| parse_f64(&row[c], line, name))
            .collect::<Result<Vec<_>>>()?;
        let mut record = PatientRecord::new(&row[id_col], features, decisions, parse_outcome(&row[outcome_col], line)?);
        for &c in &extra_cols {
            record.extras.insert(header[c].to_string(), row[c].to_string());
        }
        record
            .validate(config)
            .map_err(|e| FunnelError::data_at(line, e.to_string()))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(FunnelError::data(format!("{} has no records", path.display())));
    }
    Ok(records)
}

/// Writes the simulator's withheld data: `id`, uncensored `outcome`, and
/// every feature for every patient.
pub fn write_full_data(path: &Path, data: &SimulatedData, config: &FunnelConfig) -> Result<()> {
    let mut w = csv_writer(path, "evaluation only: uncensored outcomes and complete features")?;
    let mut header = vec![ID_COLUMN.to_string(), OUTCOME_COLUMN.to_string()];
    header.extend(config.feature_names.iter().cloned());
    w.write_record(&header)?;
    for ((r, y), x) in data.records.iter().zip(&data.full_outcomes).zip(&data.full_features) {
        let mut row = vec![r.id.clone(), u8::from(*y).to_string()];
        row.extend(x.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// Complete features and outcomes keyed by patient id.
#[derive(Debug, Clone, PartialEq)]
pub struct FullData {
    pub outcomes: Vec<bool>,
    pub features: Vec<Vec<f64>>,
}

/// Reads [`write_full_data`] output aligned to `records` by id.
pub fn read_full_data(path: &Path, records: &[PatientRecord], config: &FunnelConfig) -> Result<FullData> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FunnelError::MissingField(name.to_string()))
    };
    let id_col = col(ID_COLUMN)?;
    let outcome_col = col(OUTCOME_COLUMN)?;
    let feature_cols = config
        .feature_names
        .iter()
        .map(|f| col(f))
        .collect::<Result<Vec<_>>>()?;
    let mut by_id: BTreeMap<String, (bool, Vec<f64>)> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| FunnelError::data_at(line, e.to_string()))?;
        let y = parse_outcome(&row[outcome_col], line)?
            .ok_or_else(|| FunnelError::data_at(line, "full data needs every outcome"))?;
        let x = feature_cols
            .iter()
            .zip(&config.feature_names)
            .map(|(&c, name)| {
                parse_f64(&row[c], line, name)?
                    .ok_or_else(|| FunnelError::data_at(line, format!("full data needs feature `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        by_id.insert(row[id_col].to_string(), (y, x));
    }
    let mut full = FullData {
        outcomes: Vec::with_capacity(records.len()),
        features: Vec::with_capacity(records.len()),
    };
    for r in records {
        let (y, x) = by_id
            .remove(&r.id)
            .ok_or_else(|| FunnelError::data(format!("full data has no row for id `{}`", r.id)))?;
        full.outcomes.push(y);
        full.features.push(x);
    }
    Ok(full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SamplesSidecar {
    config: FunnelConfig,
    names: Vec<String>,
    diagnostics: McmcDiagnostics,
}

/// Writes draws as CSV (`chain`, `iteration`, then parameters by name) and
/// a JSON sidecar with the configuration and diagnostics.
pub fn save_samples(csv_path: &Path, json_path: &Path, samples: &PosteriorSamples, config: &FunnelConfig) -> Result<()> {
    let mut w = csv_writer(csv_path, "")?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(samples.names.iter().cloned());
    w.write_record(&header)?;
    for (c, chain) in samples.draws.iter().enumerate() {
        for (i, draw) in chain.iter().enumerate() {
            let mut row = vec![c.to_string(), i.to_string()];
            row.extend(draw.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    flush(w, csv_path)?;
    let sidecar = SamplesSidecar {
        config: config.clone(),
        names: samples.names.clone(),
        diagnostics: samples.diagnostics.clone(),
    };
    write_text(json_path, &to_tagged_json("funnel-samples", &sidecar)?)
}

pub fn load_samples(csv_path: &Path, json_path: &Path) -> Result<(PosteriorSamples, FunnelConfig)> {
    let sidecar: SamplesSidecar = from_tagged_json("funnel-samples", &read_text(json_path)?)?;
    sidecar.config.validate()?;
    if sidecar.names != ModelParams::names(&sidecar.config) {
        return Err(FunnelError::NameMismatch("sidecar names do not match its configuration".into()));
    }
    let mut reader = csv_reader(csv_path)?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = ["chain", "iteration"]
        .into_iter()
        .chain(sidecar.names.iter().map(String::as_str))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(FunnelError::NameMismatch(format!(
            "samples header does not match sidecar names in {}",
            csv_path.display()
        )));
    }
    let mut draws: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| FunnelError::data_at(line, e.to_string()))?;
        let chain: usize = row[0]
            .parse()
            .map_err(|_| FunnelError::data_at(line, "bad chain index"))?;
        let iteration: usize = row[1]
            .parse()
            .map_err(|_| FunnelError::data_at(line, "bad iteration index"))?;
        if chain > draws.len() || (chain == draws.len()) != (iteration == 0) {
            return Err(FunnelError::data_at(line, "draws must be ordered by chain then iteration"));
        }
        if chain == draws.len() {
            draws.push(Vec::new());
        }
        if iteration != draws[chain].len() {
            return Err(FunnelError::data_at(line, "draws must be ordered by chain then iteration"));
        }
        let values = (2..row.len())
            .map(|j| parse_f64(&row[j], line, &header[j])?.ok_or_else(|| FunnelError::data_at(line, "empty draw value")))
            .collect::<Result<Vec<_>>>()?;
        draws[chain].push(values);
    }
    let d = &sidecar.diagnostics;
    if draws.len() != d.seeds.len() || draws.iter().any(|c| c.len() != d.n_samples) {
        return Err(FunnelError::data(format!(
            "{} holds {} chains of sizes {:?}, sidecar expects {} × {}",
            csv_path.display(),
            draws.len(),
            draws.iter().map(Vec::len).collect::<Vec<_>>(),
            d.seeds.len(),
            d.n_samples
        )));
    }
    Ok((
        PosteriorSamples {
            names: sidecar.names,
            draws,
            diagnostics: sidecar.diagnostics,
        },
        sidecar.config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_mismatch_is_reported() {
        let text = r#"{"format": "funnel-params", "version": 99}"#;
        assert!(matches!(
            params_from_json(text),
            Err(FunnelError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn missing_field_is_named() {
        let config = FunnelConfig::three_stage(2);
        let params = crate::inference::map::default_init(&config);
        let mut value: Value = serde_json::from_str(&params_to_json(&params, &config).unwrap()).unwrap();
        value["params"].as_object_mut().unwrap().remove("alpha");
        match params_from_json(&value.to_string()) {
            Err(FunnelError::MissingField(f)) => assert_eq!(f, "alpha"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decision_codes_are_checked() {
        assert_eq!(parse_decision("2", 1, 1, 3).unwrap(), Some(Disposition::Admit(2)));
        assert_eq!(parse_decision("0", 1, 2, 3).unwrap(), Some(Disposition::Discharge));
        assert!(parse_decision("2", 1, 2, 3).is_err());
        assert!(parse_decision("4", 1, 1, 3).is_err());
        assert!(parse_decision("x", 1, 1, 3).is_err());
    }
}
