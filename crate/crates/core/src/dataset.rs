//! Cross-system score records, their file formats, and assembly into the
//! regression design matrix.
//!
//! Two CSV layouts share one entry point and are told apart by the header:
//!
//! * raw trial rows, `system_id,kind,name,k,n,trial_index,seconds`, where
//!   `kind` is `micro` or `target` (`k` and `n` are empty for targets);
//! * the summarized wide form, `system_id,loop31,C_Ia,…,C_Fsl,<targets…>`,
//!   with an optional reserved `suspect` column listing clamped compound
//!   scores separated by `;`.
//!
//! Raw files may carry machine metadata as comment lines of the form
//! `# meta <system_id> <key>=<value>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compound::{compound_all, CompoundError, CompoundName, CompoundScores, DeltaPolicy, TrialSeries};
use crate::linalg::Matrix;
use crate::microbench::{KernelConfig, KernelKind, MicrobenchResult};
use crate::scalar::Scalar;

pub const REGRESSOR_NAMES: [&str; 12] =
    ["loop31", "C_Ia", "C_Im", "C_Iam", "C_Id", "C_Is", "C_Isl", "C_Fa", "C_Fm", "C_Fd", "C_Fs", "C_Fsl"];
pub const RAW_HEADER: [&str; 7] = ["system_id", "kind", "name", "k", "n", "trial_index", "seconds"];
pub const SUSPECT_COLUMN: &str = "suspect";
pub const RECORDS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TARGET_TRIALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Summarizer {
    /// Timing noise only ever adds time, so the fastest trial is the least
    /// perturbed one.
    #[default]
    Min,
    Median,
    Mean,
}

impl FromStr for Summarizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Summarizer::Min),
            "median" => Ok(Summarizer::Median),
            "mean" => Ok(Summarizer::Mean),
            _ => Err(format!("unknown summarizer '{s}' (expected min, median or mean)")),
        }
    }
}

impl fmt::Display for Summarizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Summarizer::Min => "min",
            Summarizer::Median => "median",
            Summarizer::Mean => "mean",
        })
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no trials to summarize")]
    EmptyTrials,
    #[error("trial duration {0} is not positive and finite")]
    BadTrial(f64),
    #[error("line {line}, column '{column}': {reason}")]
    Schema { line: u64, column: String, reason: String },
    #[error("system '{0}' appears more than once")]
    DuplicateSystem(String),
    #[error("system '{system}': {column} = {value} is not positive")]
    NonPositiveScore { system: String, column: String, value: f64 },
    #[error("system '{system}' has no score for target '{target}'")]
    MissingTarget { system: String, target: String },
    #[error("invalid system id '{0}'")]
    InvalidSystemId(String),
    #[error("dataset has no systems")]
    Empty,
    #[error("system '{system}': {source}")]
    Compound {
        system: String,
        #[source]
        source: CompoundError,
    },
    #[error("unsupported records schema version {0}")]
    SchemaVersion(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.display().to_string(), source }
    }
}

/// Collapses repeated measurements into one score.
pub fn summarize_trials<T: Scalar>(trials: &[T], method: Summarizer) -> Result<T, DatasetError> {
    if trials.is_empty() {
        return Err(DatasetError::EmptyTrials);
    }
    if let Some(&bad) = trials.iter().find(|t| **t <= T::zero() || !t.is_finite()) {
        return Err(DatasetError::BadTrial(bad.as_f64()));
    }
    Ok(match method {
        Summarizer::Min => trials.iter().copied().fold(T::infinity(), T::min),
        Summarizer::Mean => trials.iter().copied().sum::<T>() / T::of_usize(trials.len()),
        Summarizer::Median => {
            let mut v = trials.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite trials"));
            let mid = v.len() / 2;
            if v.len() % 2 == 1 {
                v[mid]
            } else {
                (v[mid - 1] + v[mid]) / T::of(2.0)
            }
        }
    })
}

/// All scores of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub system_id: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub compound: CompoundScores<f64>,
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
    #[serde(default)]
    pub suspect_flags: BTreeSet<CompoundName>,
}

impl SystemRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        validate_system_id(&self.system_id)?;
        let bad = |column: &str, value: f64| DatasetError::NonPositiveScore {
            system: self.system_id.clone(),
            column: column.to_string(),
            value,
        };
        if self.compound.loop31 <= 0.0 || !self.compound.loop31.is_finite() {
            return Err(bad("loop31", self.compound.loop31));
        }
        for name in CompoundName::ALL {
            let v = *self.compound.values.get(&name).ok_or_else(|| bad(name.name(), f64::NAN))?;
            let ok = if self.suspect_flags.contains(&name) { v == 0.0 } else { v > 0.0 && v.is_finite() };
            if !ok {
                return Err(bad(name.name(), v));
            }
        }
        for (t, &v) in &self.targets {
            if v <= 0.0 || !v.is_finite() {
                return Err(bad(t, v));
            }
        }
        Ok(())
    }

    /// `[loop31, C_Ia, …, C_Fsl]` in seconds.
    pub fn regressors(&self) -> [f64; 12] {
        self.compound.regressors()
    }
}

fn validate_system_id(id: &str) -> Result<(), DatasetError> {
    if id.is_empty() || id.trim() != id || id.starts_with('#') || id.contains(['\n', '\r']) {
        return Err(DatasetError::InvalidSystemId(id.to_string()));
    }
    Ok(())
}

/// Regression inputs for one target: rows in `system_id` order, columns in
/// [`REGRESSOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub design: Matrix<f64>,
    pub y: Vec<f64>,
    pub system_ids: Vec<String>,
    pub regressor_names: Vec<String>,
}

pub fn assemble(records: &[SystemRecord], target: &str) -> Result<Assembled, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut sorted: Vec<&SystemRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.system_id.cmp(&b.system_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].system_id == w[1].system_id) {
        return Err(DatasetError::DuplicateSystem(w[0].system_id.clone()));
    }
    let mut y = Vec::with_capacity(sorted.len());
    for r in &sorted {
        let v = r
            .targets
            .get(target)
            .ok_or_else(|| DatasetError::MissingTarget { system: r.system_id.clone(), target: target.to_string() })?;
        y.push(*v);
    }
    let rows: Vec<[f64; 12]> = sorted.iter().map(|r| r.regressors()).collect();
    Ok(Assembled {
        design: Matrix::from_rows(&rows),
        y,
        system_ids: sorted.iter().map(|r| r.system_id.clone()).collect(),
        regressor_names: REGRESSOR_NAMES.iter().map(|s| s.to_string()).collect(),
    })
}

/// A validated set of systems sorted by `system_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SystemRecord>,
    target_names: Vec<String>,
    design: Matrix<f64>,
}

impl Dataset {
    pub fn new(mut records: Vec<SystemRecord>) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        for r in &records {
            r.validate()?;
        }
        records.sort_by(|a, b| a.system_id.cmp(&b.system_id));
        if let Some(w) = records.windows(2).find(|w| w[0].system_id == w[1].system_id) {
            return Err(DatasetError::DuplicateSystem(w[0].system_id.clone()));
        }
        let target_names =
            records[0].targets.keys().filter(|t| records.iter().all(|r| r.targets.contains_key(*t))).cloned().collect();
        let rows: Vec<[f64; 12]> = records.iter().map(|r| r.regressors()).collect();
        Ok(Self { records, target_names, design: Matrix::from_rows(&rows) })
    }

    pub fn records(&self) -> &[SystemRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SystemRecord> {
        self.records
    }

    /// Targets present in every record.
    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn design(&self) -> &Matrix<f64> {
        &self.design
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn assemble(&self, target: &str) -> Result<Assembled, DatasetError> {
        assemble(&self.records, target)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub summarizer: Summarizer,
    pub policy: DeltaPolicy,
}

pub fn ingest_csv(path: &Path, options: &IngestOptions) -> Result<Vec<SystemRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_csv(&text, options)
}

/// Parses either CSV layout, detected from the header row.
pub fn parse_csv(text: &str, options: &IngestOptions) -> Result<Vec<SystemRecord>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let records = if header == RAW_HEADER {
        parse_raw(&mut reader, text, options)?
    } else if header.len() >= 13 && header[0] == "system_id" && header[1..13] == REGRESSOR_NAMES {
        parse_wide(&mut reader, &header)?
    } else {
        return Err(DatasetError::Schema {
            line: 1,
            column: header.first().cloned().unwrap_or_default(),
            reason: "header matches neither the raw nor the summarized layout".into(),
        });
    };
    let mut ids = BTreeSet::new();
    for r in &records {
        if !ids.insert(r.system_id.as_str()) {
            return Err(DatasetError::DuplicateSystem(r.system_id.clone()));
        }
        r.validate()?;
    }
    Ok(records)
}

fn schema(line: u64, column: &str, reason: impl Into<String>) -> DatasetError {
    DatasetError::Schema { line, column: column.to_string(), reason: reason.into() }
}

fn parse_number(line: u64, column: &str, cell: &str) -> Result<f64, DatasetError> {
    let v: f64 = cell.parse().map_err(|_| schema(line, column, format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(schema(line, column, "value is not finite"));
    }
    Ok(v)
}

fn parse_wide(reader: &mut csv::Reader<&[u8]>, header: &[String]) -> Result<Vec<SystemRecord>, DatasetError> {
    let suspect_col = header.iter().position(|h| h == SUSPECT_COLUMN);
    let mut seen = BTreeSet::new();
    for h in &header[13..] {
        if h.is_empty() || !seen.insert(h.as_str()) {
            return Err(schema(1, h, "target columns must be unique and non-empty"));
        }
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(schema(line, "", format!("expected {} fields, found {}", header.len(), row.len())));
        }
        let system_id = row[0].to_string();
        validate_system_id(&system_id).map_err(|_| schema(line, "system_id", format!("invalid id '{system_id}'")))?;

        let mut suspect_flags = BTreeSet::new();
        if let Some(c) = suspect_col {
            for name in row[c].split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let name = name.parse::<CompoundName>().map_err(|e| schema(line, SUSPECT_COLUMN, e))?;
                suspect_flags.insert(name);
            }
        }
        let loop31 = parse_number(line, "loop31", &row[1])?;
        let mut values = BTreeMap::new();
        for (i, name) in CompoundName::ALL.into_iter().enumerate() {
            let mut v = parse_number(line, name.name(), &row[i + 2])?;
            if suspect_flags.contains(&name) {
                v = v.max(0.0);
            }
            values.insert(name, v);
        }
        let mut targets = BTreeMap::new();
        for (c, h) in header.iter().enumerate().skip(13) {
            if Some(c) == suspect_col || row[c].is_empty() {
                continue;
            }
            targets.insert(h.clone(), parse_number(line, h, &row[c])?);
        }
        let compound = CompoundScores { values, loop31, plan_shift: 0 };
        out.push(SystemRecord { system_id, metadata: BTreeMap::new(), compound, targets, suspect_flags });
    }
    Ok(out)
}

#[derive(Default)]
struct RawGroups {
    micro: BTreeMap<KernelConfig, BTreeMap<u64, f64>>,
    targets: BTreeMap<String, BTreeMap<u64, f64>>,
}

fn parse_raw(
    reader: &mut csv::Reader<&[u8]>,
    text: &str,
    options: &IngestOptions,
) -> Result<Vec<SystemRecord>, DatasetError> {
    let mut systems: BTreeMap<String, RawGroups> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != RAW_HEADER.len() {
            return Err(schema(line, "", format!("expected 7 fields, found {}", row.len())));
        }
        let system_id = row[0].to_string();
        validate_system_id(&system_id).map_err(|_| schema(line, "system_id", format!("invalid id '{system_id}'")))?;
        let trial: u64 =
            row[5].parse().map_err(|_| schema(line, "trial_index", format!("'{}' is not an index", &row[5])))?;
        let seconds = parse_number(line, "seconds", &row[6])?;
        if seconds <= 0.0 {
            return Err(DatasetError::NonPositiveScore {
                system: system_id,
                column: row[2].to_string(),
                value: seconds,
            });
        }
        let sys = systems.entry(system_id).or_default();
        let slot = match &row[1] {
            "micro" => {
                let kind: KernelKind = row[2].parse().map_err(|e: String| schema(line, "name", e))?;
                let int = |col: usize, name: &str| -> Result<u32, DatasetError> {
                    match (&row[col], kind) {
                        ("", KernelKind::Loop) if name == "k" => Ok(0),
                        (s, _) => s.parse().map_err(|_| schema(line, name, format!("'{s}' is not an integer"))),
                    }
                };
                let config = KernelConfig { kind, k: int(3, "k")?, n: int(4, "n")? };
                config.validate().map_err(|e| schema(line, "k", e.to_string()))?;
                sys.micro.entry(config).or_default()
            }
            "target" => {
                if !row[3].is_empty() || !row[4].is_empty() {
                    return Err(schema(line, "k", "k and n must be empty for target rows"));
                }
                if row[2].is_empty() {
                    return Err(schema(line, "name", "target name is empty"));
                }
                sys.targets.entry(row[2].to_string()).or_default()
            }
            other => return Err(schema(line, "kind", format!("'{other}' is neither micro nor target"))),
        };
        if slot.insert(trial, seconds).is_some() {
            return Err(schema(line, "trial_index", format!("trial {trial} repeated")));
        }
    }

    let metadata = parse_metadata(text);
    systems
        .into_iter()
        .map(|(system_id, raw)| {
            let series: Vec<TrialSeries<f64>> = raw
                .micro
                .into_iter()
                .map(|(config, trials)| TrialSeries { config, trials: trials.into_values().collect() })
                .collect();
            let (compound, suspect_flags) = compound_all(&series, options.summarizer, options.policy)
                .map_err(|source| DatasetError::Compound { system: system_id.clone(), source })?;
            let targets = raw
                .targets
                .into_iter()
                .map(|(name, trials)| {
                    let t: Vec<f64> = trials.into_values().collect();
                    Ok((name, summarize_trials(&t, options.summarizer)?))
                })
                .collect::<Result<_, DatasetError>>()?;
            Ok(SystemRecord {
                metadata: metadata.get(&system_id).cloned().unwrap_or_default(),
                system_id,
                compound,
                targets,
                suspect_flags,
            })
        })
        .collect()
}

fn parse_metadata(text: &str) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("# meta ") else { continue };
        let Some((system, kv)) = rest.split_once(' ') else { continue };
        let Some((k, v)) = kv.split_once('=') else { continue };
        out.entry(system.to_string()).or_default().insert(k.trim().to_string(), v.trim().to_string());
    }
    out
}

fn clean_meta(s: &str) -> String {
    s.replace(['\n', '\r'], " ").trim().to_string()
}

/// Raw measurements of one system, as written by `measure` and the synthetic
/// raw generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSystem {
    pub system_id: String,
    pub metadata: BTreeMap<String, String>,
    pub micro: Vec<MicrobenchResult>,
    /// Target name and its trials.
    pub targets: Vec<(String, Vec<f64>)>,
}

/// Writes systems in the raw CSV layout, metadata first as comment lines.
pub fn export_raw_csv(systems: &[RawSystem]) -> Result<String, DatasetError> {
    let mut out = String::new();
    for s in systems {
        validate_system_id(&s.system_id)?;
        for (k, v) in &s.metadata {
            out.push_str(&format!("# meta {} {}={}\n", s.system_id, clean_meta(k).replace('=', "_"), clean_meta(v)));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RAW_HEADER)?;
    for s in systems {
        let id = s.system_id.as_str();
        for r in &s.micro {
            let k = if r.config.kind == KernelKind::Loop { String::new() } else { r.config.k.to_string() };
            let n = r.config.n.to_string();
            for (i, t) in r.trials.iter().enumerate() {
                w.write_record([id, "micro", r.config.kind.name(), &k, &n, &i.to_string(), &t.to_string()])?;
            }
        }
        for (name, trials) in &s.targets {
            for (i, t) in trials.iter().enumerate() {
                w.write_record([id, "target", name, "", "", &i.to_string(), &t.to_string()])?;
            }
        }
    }
    out.push_str(
        &String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is utf-8"),
    );
    Ok(out)
}

/// Canonical summarized CSV: rows sorted by `system_id`, targets sorted by
/// name, shortest round-trip float formatting. The `suspect` column appears
/// only when some record carries a flag.
pub fn export_csv(records: &[SystemRecord]) -> Result<String, DatasetError> {
    let mut sorted: Vec<&SystemRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.system_id.cmp(&b.system_id));
    let targets: BTreeSet<&String> = sorted.iter().flat_map(|r| r.targets.keys()).collect();
    let with_suspect = sorted.iter().any(|r| !r.suspect_flags.is_empty());

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = vec!["system_id"];
    header.extend(REGRESSOR_NAMES);
    if with_suspect {
        header.push(SUSPECT_COLUMN);
    }
    header.extend(targets.iter().map(|s| s.as_str()));
    w.write_record(&header)?;
    for r in sorted {
        let mut row = vec![r.system_id.clone()];
        row.extend(r.regressors().iter().map(|v| v.to_string()));
        if with_suspect {
            row.push(r.suspect_flags.iter().map(|c| c.name()).collect::<Vec<_>>().join(";"));
        }
        row.extend(targets.iter().map(|t| r.targets.get(*t).map_or(String::new(), |v| v.to_string())));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is utf-8"))
}

#[derive(Serialize, Deserialize)]
struct RecordsFile {
    schema: u32,
    records: Vec<SystemRecord>,
}

pub fn records_to_json(records: &[SystemRecord]) -> Result<String, DatasetError> {
    let file = RecordsFile { schema: RECORDS_SCHEMA_VERSION, records: records.to_vec() };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn records_from_json(text: &str) -> Result<Vec<SystemRecord>, DatasetError> {
    #[derive(Deserialize)]
    struct Version {
        schema: u32,
    }
    let v: Version = serde_json::from_str(text)?;
    if v.schema != RECORDS_SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersion(v.schema));
    }
    let file: RecordsFile = serde_json::from_str(text)?;
    for r in &file.records {
        r.validate()?;
    }
    Ok(file.records)
}

/// Loads records from a `.json` records file or either CSV layout.
pub fn load_records(path: &Path, options: &IngestOptions) -> Result<Vec<SystemRecord>, DatasetError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        records_from_json(&text)
    } else {
        ingest_csv(path, options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, base: f64, target: f64) -> SystemRecord {
        let values = CompoundName::ALL.iter().enumerate().map(|(i, &c)| (c, base + i as f64 * 0.01)).collect();
        SystemRecord {
            system_id: id.into(),
            metadata: BTreeMap::new(),
            compound: CompoundScores { values, loop31: base * 2.0, plan_shift: 0 },
            targets: BTreeMap::from([("t".to_string(), target)]),
            suspect_flags: BTreeSet::new(),
        }
    }

    #[test]
    fn summarize_min_median_mean() {
        assert_eq!(summarize_trials(&[1.2, 1.1, 1.3], Summarizer::Min).unwrap(), 1.1);
        assert_eq!(summarize_trials(&[1.2, 1.1, 1.3], Summarizer::Median).unwrap(), 1.2);
        assert_eq!(summarize_trials(&[1.0, 4.0, 2.0, 3.0], Summarizer::Median).unwrap(), 2.5);
        assert!((summarize_trials(&[1.0f64, 2.0, 4.5], Summarizer::Mean).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(summarize_trials(&[2.0], Summarizer::Min).unwrap(), 2.0);
        assert!(matches!(summarize_trials::<f64>(&[], Summarizer::Min), Err(DatasetError::EmptyTrials)));
        assert!(matches!(summarize_trials(&[1.0, -1.0], Summarizer::Min), Err(DatasetError::BadTrial(_))));
    }

    #[test]
    fn summarizer_parses() {
        assert_eq!("median".parse::<Summarizer>().unwrap(), Summarizer::Median);
        assert!("max".parse::<Summarizer>().is_err());
    }

    #[test]
    fn assemble_sorts_and_orders_columns() {
        let recs = vec![record("b", 0.2, 3.0), record("a", 0.1, 2.0)];
        let a = assemble(&recs, "t").unwrap();
        assert_eq!(a.system_ids, vec!["a", "b"]);
        assert_eq!(a.y, vec![2.0, 3.0]);
        assert_eq!(a.design.rows(), 2);
        assert_eq!(a.design.cols(), 12);
        assert_eq!(a.design[(0, 0)], 0.2);
        assert_eq!(a.design[(0, 1)], 0.1);
        assert_eq!(a.regressor_names, REGRESSOR_NAMES);
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(assemble(&rev, "t").unwrap(), a);
    }

    #[test]
    fn assemble_errors() {
        assert!(matches!(assemble(&[], "t"), Err(DatasetError::Empty)));
        let recs = vec![record("a", 0.1, 2.0)];
        assert!(matches!(assemble(&recs, "u"), Err(DatasetError::MissingTarget { .. })));
        let dup = vec![record("a", 0.1, 2.0), record("a", 0.2, 2.0)];
        assert!(matches!(assemble(&dup, "t"), Err(DatasetError::DuplicateSystem(_))));
    }

    #[test]
    fn dataset_targets_are_common_ones() {
        let mut a = record("a", 0.1, 2.0);
        a.targets.insert("only_a".into(), 1.0);
        let d = Dataset::new(vec![record("b", 0.2, 3.0), a]).unwrap();
        assert_eq!(d.target_names(), ["t".to_string()]);
        assert_eq!(d.records()[0].system_id, "a");
        assert_eq!(d.design().row(1), record("b", 0.2, 3.0).regressors());
    }

    #[test]
    fn wide_csv_round_trip() {
        let recs = vec![record("b", 0.2, 3.0), record("a", 0.1, 2.5)];
        let text = export_csv(&recs).unwrap();
        assert!(text.starts_with("system_id,loop31,C_Ia,C_Im,C_Iam,C_Id,C_Is,C_Isl,C_Fa,C_Fm,C_Fd,C_Fs,C_Fsl,t\n"));
        let back = parse_csv(&text, &IngestOptions::default()).unwrap();
        assert_eq!(export_csv(&back).unwrap(), text);
        assert_eq!(back[0], recs[1]);
    }

    #[test]
    fn wide_csv_negative_cell_needs_suspect_flag() {
        let mut r = record("nexus6", 0.1, 2.0);
        r.compound.values.insert(CompoundName::FpDiv, -0.5);
        let mut text = export_csv(&[record("a", 0.1, 1.0)]).unwrap();
        let row = format!(
            "nexus6,{}\n",
            r.regressors().iter().map(|v| v.to_string()).chain(["2".into()]).collect::<Vec<_>>().join(",")
        );
        text.push_str(&row);
        match parse_csv(&text, &IngestOptions::default()) {
            Err(DatasetError::NonPositiveScore { column, .. }) => assert_eq!(column, "C_Fd"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wide_csv_suspect_flag_clamps() {
        let mut r = record("a", 0.1, 2.0);
        r.compound.values.insert(CompoundName::FpDiv, 0.0);
        r.suspect_flags.insert(CompoundName::FpDiv);
        let text = export_csv(&[r.clone()]).unwrap();
        assert!(text.lines().next().unwrap().contains(",suspect,"));
        let back = parse_csv(&text, &IngestOptions::default()).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn duplicate_system_rejected() {
        let mut text = export_csv(&[record("nexus6", 0.1, 2.0)]).unwrap();
        let dup = text.lines().nth(1).unwrap().to_string();
        text.push_str(&dup);
        text.push('\n');
        assert!(
            matches!(parse_csv(&text, &IngestOptions::default()), Err(DatasetError::DuplicateSystem(id)) if id == "nexus6")
        );
    }

    #[test]
    fn unknown_header_is_schema_error() {
        let err = parse_csv("a,b,c\n1,2,3\n", &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { line: 1, .. }));
    }

    #[test]
    fn bad_number_reports_line_and_column() {
        let mut text = export_csv(&[record("a", 0.1, 2.0)]).unwrap();
        text = text.replacen(",0.11,", ",x,", 1);
        match parse_csv(&text, &IngestOptions::default()) {
            Err(DatasetError::Schema { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "C_Im");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn raw_rows_rejects_bad_kind() {
        let text = "system_id,kind,name,k,n,trial_index,seconds\ns,bogus,x,,,0,1.0\n";
        assert!(
            matches!(parse_csv(text, &IngestOptions::default()), Err(DatasetError::Schema { column, .. }) if column == "kind")
        );
    }

    #[test]
    fn raw_without_micro_rows_is_compound_error() {
        let text = "system_id,kind,name,k,n,trial_index,seconds\ns,target,429.mcf,,,0,1.0\n";
        assert!(matches!(
            parse_csv(text, &IngestOptions::default()),
            Err(DatasetError::Compound { source: CompoundError::MissingLoop, .. })
        ));
    }

    #[test]
    fn metadata_comments_are_parsed() {
        let m = parse_metadata("# meta s1 cpu=Cortex A57\n# meta s1 os=linux\n# other\n");
        assert_eq!(m["s1"]["cpu"], "Cortex A57");
        assert_eq!(m["s1"].len(), 2);
    }

    #[test]
    fn json_records_round_trip_and_version_check() {
        let mut r = record("a", 0.1, 2.0);
        r.metadata.insert("chipset".into(), "MSM8994".into());
        let text = records_to_json(&[r.clone()]).unwrap();
        assert!(text.contains("\"schema\": 1"));
        assert_eq!(records_from_json(&text).unwrap(), vec![r]);
        let bumped = text.replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(records_from_json(&bumped), Err(DatasetError::SchemaVersion(2))));
    }

    #[test]
    fn invalid_ids_rejected() {
        for id in ["", " a", "#x", "a\nb"] {
            assert!(validate_system_id(id).is_err(), "{id:?}");
        }
    }
}
