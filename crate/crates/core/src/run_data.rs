//! Instances, observed target-algorithm runs, and their conversion into
//! training matrices.
//!
//! Runtime responses are `log10` of the PAR10 cost: successful runs use the
//! measured time (floored at [`RUNTIME_FLOOR`]), timeouts count as ten times
//! the cutoff, and capped runs keep their measured lower bound together with
//! a censoring flag.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config_space::{ColumnKind, Configuration, ConfigurationSpace, SpaceError};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Runtimes below this many seconds are raised to it before taking logs.
pub const RUNTIME_FLOOR: f64 = 0.005;

/// Penalty factor applied to timeouts.
pub const PAR_FACTOR: f64 = 10.0;

/// Default cap on the number of records used for training.
pub const DEFAULT_SUBSAMPLE_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file} row {row}: {message}")]
    Row { file: &'static str, row: u64, message: String },
    #[error("{file}: {source}")]
    Csv { file: &'static str, source: csv::Error },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("quality objective cannot contain censored runs")]
    CensoredQuality,
    #[error("no training rows remain after filtering")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Success,
    Timeout,
    Censored,
    Crashed,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Success => "SUCCESS",
            RunStatus::Timeout => "TIMEOUT",
            RunStatus::Censored => "CENSORED",
            RunStatus::Crashed => "CRASHED",
        })
    }
}

impl FromStr for RunStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SUCCESS" | "SAT" | "UNSAT" => Ok(RunStatus::Success),
            "TIMEOUT" => Ok(RunStatus::Timeout),
            "CENSORED" | "CAPPED" => Ok(RunStatus::Censored),
            "CRASHED" | "CRASH" | "ABORT" => Ok(RunStatus::Crashed),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Problem instances with their feature vectors and train/test labels. The
/// instance distribution is uniform over the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceSetRepr", into = "InstanceSetRepr")]
pub struct InstanceSet {
    ids: Vec<String>,
    features: Vec<Vec<f64>>,
    splits: Vec<Split>,
    n_features: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct InstanceSetRepr {
    n_features: usize,
    ids: Vec<String>,
    splits: Vec<Split>,
    features: Vec<Vec<f64>>,
}

impl TryFrom<InstanceSetRepr> for InstanceSet {
    type Error = DataError;

    fn try_from(r: InstanceSetRepr) -> Result<Self, DataError> {
        InstanceSet::new(r.n_features, r.ids.into_iter().zip(r.splits).zip(r.features).map(|((i, s), f)| (i, s, f)))
    }
}

impl From<InstanceSet> for InstanceSetRepr {
    fn from(s: InstanceSet) -> Self {
        InstanceSetRepr { n_features: s.n_features, ids: s.ids, splits: s.splits, features: s.features }
    }
}

impl InstanceSet {
    pub fn new(
        n_features: usize,
        entries: impl IntoIterator<Item = (String, Split, Vec<f64>)>,
    ) -> Result<Self, DataError> {
        let mut set = InstanceSet {
            ids: Vec::new(),
            features: Vec::new(),
            splits: Vec::new(),
            n_features,
            index: HashMap::new(),
        };
        for (id, split, feats) in entries {
            if feats.len() != n_features {
                return Err(DataError::Invalid(format!(
                    "instance `{id}` has {} features, expected {n_features}",
                    feats.len()
                )));
            }
            if feats.iter().any(|f| !f.is_finite()) {
                return Err(DataError::Invalid(format!("instance `{id}` has a non-finite feature")));
            }
            if set.index.insert(id.clone(), set.ids.len()).is_some() {
                return Err(DataError::Invalid(format!("duplicate instance id `{id}`")));
            }
            set.ids.push(id);
            set.features.push(feats);
            set.splits.push(split);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn features(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.features[i].as_slice())
    }

    pub fn split(&self, id: &str) -> Option<Split> {
        self.position(id).map(|i| self.splits[i])
    }

    /// Ids with the given split label, in declaration order.
    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.ids
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Reads `instance_id, split, f_0 ... f_{d-1}`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        const FILE: &str = "features file";
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| DataError::Csv { file: FILE, source: e })?.clone();
        if header.len() < 2 {
            return Err(DataError::Row { file: FILE, row: 1, message: "expected instance_id, split, f_0...".into() });
        }
        let d = header.len() - 2;
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i as u64 + 1;
            let rec = rec.map_err(|e| DataError::Csv { file: FILE, source: e })?;
            let bad = |message: String| DataError::Row { file: FILE, row, message };
            if rec.len() != d + 2 {
                return Err(bad(format!("expected {} columns, found {}", d + 2, rec.len())));
            }
            let split: Split = rec[1].parse().map_err(bad)?;
            let feats = (0..d)
                .map(|k| {
                    rec[k + 2]
                        .parse::<f64>()
                        .map_err(|_| bad(format!("invalid feature value `{}`", &rec[k + 2])))
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.push((rec[0].to_string(), split, feats));
        }
        InstanceSet::new(d, entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["instance_id".to_string(), "split".to_string()];
        header.extend((0..self.n_features).map(|k| format!("f_{k}")));
        let csv_err = |e| DataError::Csv { file: "features file", source: e };
        w.write_record(&header).map_err(csv_err)?;
        for ((id, split), feats) in self.ids.iter().zip(&self.splits).zip(&self.features) {
            let mut row = vec![id.clone(), split.to_string()];
            row.extend(feats.iter().map(|f| format!("{f:?}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Which configurator run produced a record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunSource {
    pub configurator: String,
    pub repetition: u32,
}

impl RunSource {
    pub fn new(configurator: &str, repetition: u32) -> Self {
        RunSource { configurator: configurator.to_string(), repetition }
    }
}

impl fmt::Display for RunSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.configurator, self.repetition)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: Configuration,
    pub instance: String,
    pub seed: u64,
    pub status: RunStatus,
    pub measured_cost: f64,
    pub cutoff: f64,
    pub source: RunSource,
    /// Incumbent validation on a test instance.
    pub is_validation: bool,
}

impl RunRecord {
    /// Status/cost invariants for runtime objectives.
    pub fn check_runtime(&self) -> Result<(), String> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(format!("cutoff must be positive, got {}", self.cutoff));
        }
        if !(self.measured_cost >= 0.0 && self.measured_cost.is_finite()) {
            return Err(format!("measured_cost must be a nonnegative number, got {}", self.measured_cost));
        }
        match self.status {
            RunStatus::Censored if self.measured_cost >= self.cutoff => Err(format!(
                "CENSORED cost {} must be strictly below the cutoff {}",
                self.measured_cost, self.cutoff
            )),
            RunStatus::Timeout if self.measured_cost != self.cutoff => Err(format!(
                "TIMEOUT cost {} must equal the cutoff {}",
                self.measured_cost, self.cutoff
            )),
            RunStatus::Success if self.measured_cost > self.cutoff => Err(format!(
                "SUCCESS cost {} exceeds the cutoff {}",
                self.measured_cost, self.cutoff
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    Runtime,
    /// Unitless loss, optionally clipped to declared bounds on prediction.
    Quality { lower: Option<f64>, upper: Option<f64> },
}

impl Objective {
    pub fn is_runtime(&self) -> bool {
        matches!(self, Objective::Runtime)
    }
}

/// Which rows enter the training matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Setting I: runs on training instances only.
    TrainOnly,
    /// Setting II: additionally incumbent validations on test instances.
    TrainPlusTestIncumbents,
    All,
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" | "train_only" => Ok(Setting::TrainOnly),
            "ii" | "2" | "train_plus_test_incumbents" => Ok(Setting::TrainPlusTestIncumbents),
            "all" => Ok(Setting::All),
            other => Err(format!("unknown setting `{other}` (expected I, II or all)")),
        }
    }
}

/// Validated run records together with the space and instances they refer to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<RunRecord>,
    pub space: Arc<ConfigurationSpace>,
    pub instances: Arc<InstanceSet>,
    pub objective: Objective,
}

impl Dataset {
    pub fn new(
        records: Vec<RunRecord>,
        space: Arc<ConfigurationSpace>,
        instances: Arc<InstanceSet>,
        objective: Objective,
    ) -> Result<Self, DataError> {
        for (i, r) in records.iter().enumerate() {
            let row = i as u64 + 1;
            let bad = |message: String| DataError::Row { file: "dataset", row, message };
            if !instances.contains(&r.instance) {
                return Err(bad(format!("unknown instance `{}`", r.instance)));
            }
            space.validate(&r.config).map_err(|e| bad(e.to_string()))?;
            if objective.is_runtime() {
                r.check_runtime().map_err(bad)?;
            }
        }
        Ok(Dataset { records, space, instances, objective })
    }

    /// Same space, instances and objective with other records.
    pub fn with_records(&self, records: Vec<RunRecord>) -> Dataset {
        Dataset {
            records,
            space: Arc::clone(&self.space),
            instances: Arc::clone(&self.instances),
            objective: self.objective,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sources(&self) -> BTreeSet<RunSource> {
        self.records.iter().map(|r| r.source.clone()).collect()
    }

    pub fn configurators(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.source.configurator.clone()).collect()
    }

    /// Records whose source is in `keep`.
    pub fn restrict(&self, keep: &BTreeSet<RunSource>) -> Dataset {
        self.with_records(self.records.iter().filter(|r| keep.contains(&r.source)).cloned().collect())
    }

    /// Largest cutoff among the records.
    pub fn cutoff(&self) -> Option<f64> {
        self.records.iter().map(|r| r.cutoff).reduce(f64::max)
    }

    /// Reads a runs file against an already loaded space and instance set.
    pub fn read_runs<R: Read>(
        reader: R,
        space: Arc<ConfigurationSpace>,
        instances: Arc<InstanceSet>,
        objective: Objective,
    ) -> Result<Self, DataError> {
        const FILE: &str = "runs file";
        const COLUMNS: [&str; 9] = [
            "run_source", "repetition", "instance_id", "seed", "status",
            "measured_cost", "cutoff", "is_validation", "config",
        ];
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(reader);
        let header = rdr.headers().map_err(|e| DataError::Csv { file: FILE, source: e })?.clone();
        let mut col = [0usize; 9];
        for (k, name) in COLUMNS.iter().enumerate() {
            col[k] = header.iter().position(|h| h == *name).ok_or_else(|| DataError::Row {
                file: FILE,
                row: 0,
                message: format!("missing column `{name}` in header"),
            })?;
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i as u64 + 1;
            let rec = rec.map_err(|e| DataError::Csv { file: FILE, source: e })?;
            let bad = |message: String| DataError::Row { file: FILE, row, message };
            let field = |k: usize| rec.get(col[k]).map(str::trim).unwrap_or("");
            let repetition = field(1)
                .parse::<u32>()
                .map_err(|_| bad(format!("invalid repetition `{}`", field(1))))?;
            let instance = field(2).to_string();
            if !instances.contains(&instance) {
                return Err(bad(format!("unknown instance `{instance}`")));
            }
            let seed = field(3).parse::<u64>().map_err(|_| bad(format!("invalid seed `{}`", field(3))))?;
            let status: RunStatus = field(4).parse().map_err(bad)?;
            let measured_cost = field(5)
                .parse::<f64>()
                .map_err(|_| bad(format!("invalid measured_cost `{}`", field(5))))?;
            let cutoff = field(6).parse::<f64>().map_err(|_| bad(format!("invalid cutoff `{}`", field(6))))?;
            let is_validation = match field(7).to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" | "" => false,
                other => return Err(bad(format!("invalid is_validation `{other}`"))),
            };
            let config = space.config_from_json_str(field(8)).map_err(|e| bad(e.to_string()))?;
            let record = RunRecord {
                config,
                instance,
                seed,
                status,
                measured_cost,
                cutoff,
                source: RunSource { configurator: field(0).to_string(), repetition },
                is_validation,
            };
            if objective.is_runtime() {
                record.check_runtime().map_err(bad)?;
            } else if !measured_cost.is_finite() {
                return Err(bad("measured_cost must be finite".into()));
            }
            records.push(record);
        }
        Ok(Dataset { records, space, instances, objective })
    }

    pub fn write_runs<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let csv_err = |e| DataError::Csv { file: "runs file", source: e };
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "run_source", "repetition", "instance_id", "seed", "status",
            "measured_cost", "cutoff", "is_validation", "config",
        ])
        .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.source.configurator.clone(),
                r.source.repetition.to_string(),
                r.instance.clone(),
                r.seed.to_string(),
                r.status.to_string(),
                format!("{:?}", r.measured_cost),
                format!("{:?}", r.cutoff),
                r.is_validation.to_string(),
                r.config.to_json(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// SHA-256 of the canonical runs serialization.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_runs(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Loads a dataset from a runs file and a features file.
pub fn ingest_runs(
    runs_path: &Path,
    features_path: &Path,
    space: Arc<ConfigurationSpace>,
    objective: Objective,
) -> Result<Dataset, DataError> {
    let instances = Arc::new(InstanceSet::read_csv(std::fs::File::open(features_path)?)?);
    Dataset::read_runs(std::fs::File::open(runs_path)?, space, instances, objective)
}

/// Drops crashed runs. Returns the filtered dataset and how many were removed.
pub fn filter_crashed(ds: &Dataset) -> (Dataset, usize) {
    let kept: Vec<RunRecord> =
        ds.records.iter().filter(|r| r.status != RunStatus::Crashed).cloned().collect();
    let removed = ds.records.len() - kept.len();
    if kept.is_empty() && removed > 0 {
        log::warn!("all {removed} runs crashed; dataset is empty");
    }
    (ds.with_records(kept), removed)
}

/// Uniform sample without replacement of at most `cap` records, preserving
/// record order.
pub fn subsample(ds: &Dataset, cap: usize, rng: &mut Rng) -> Dataset {
    assert!(cap >= 1, "subsample cap must be at least 1");
    if ds.records.len() <= cap {
        return ds.clone();
    }
    let mut picked = index::sample(rng, ds.records.len(), cap).into_vec();
    picked.sort_unstable();
    ds.with_records(picked.into_iter().map(|i| ds.records[i].clone()).collect())
}

/// Encoded model inputs with responses, censoring flags and per-row response
/// ceilings, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix<T> {
    pub x: Vec<T>,
    pub n_cols: usize,
    pub columns: Vec<ColumnKind>,
    pub y: Vec<T>,
    pub censored: Vec<bool>,
    /// Largest admissible response per row: `log10(10 * cutoff)` for
    /// runtime, unbounded for quality.
    pub ceiling: Vec<T>,
}

impl<T: Scalar> TrainingMatrix<T> {
    pub fn new(columns: Vec<ColumnKind>) -> Self {
        TrainingMatrix {
            x: Vec::new(),
            n_cols: columns.len(),
            columns,
            y: Vec::new(),
            censored: Vec::new(),
            ceiling: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn push(&mut self, row: &[T], y: T, censored: bool, ceiling: T) {
        assert_eq!(row.len(), self.n_cols, "row width");
        self.x.extend_from_slice(row);
        self.y.push(y);
        self.censored.push(censored);
        self.ceiling.push(ceiling);
    }

    /// Rows selected by `keep`, in order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> TrainingMatrix<T> {
        let mut out = TrainingMatrix::new(self.columns.clone());
        for i in 0..self.n_rows() {
            if keep(i) {
                out.push(self.row(i), self.y[i], self.censored[i], self.ceiling[i]);
            }
        }
        out
    }
}

/// Response for one record in model space.
pub fn response(record: &RunRecord, objective: &Objective) -> Result<f64, DataError> {
    match objective {
        Objective::Runtime => Ok(match record.status {
            RunStatus::Timeout => (PAR_FACTOR * record.cutoff).log10(),
            _ => record.measured_cost.max(RUNTIME_FLOOR).log10(),
        }),
        Objective::Quality { .. } => {
            if record.status == RunStatus::Censored {
                Err(DataError::CensoredQuality)
            } else {
                Ok(record.measured_cost)
            }
        }
    }
}

/// Model input for a record: imputed configuration followed by the
/// instance's features.
pub fn encode_record<T: Scalar>(ds: &Dataset, record: &RunRecord) -> Result<Vec<T>, DataError> {
    let total = ds.space.impute_inactive(&record.config);
    let feats = ds
        .instances
        .features(&record.instance)
        .ok_or_else(|| DataError::Invalid(format!("unknown instance `{}`", record.instance)))?;
    Ok(ds.space.encode(&total, feats, ds.instances.n_features())?)
}

/// Indices of records included by `setting`, sorted by run source and then
/// record position.
pub fn matrix_rows(ds: &Dataset, setting: Setting) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..ds.records.len())
        .filter(|&i| {
            let r = &ds.records[i];
            match (setting, ds.instances.split(&r.instance)) {
                (Setting::All, _) => true,
                (_, Some(Split::Train)) => true,
                (Setting::TrainPlusTestIncumbents, Some(Split::Test)) => r.is_validation,
                _ => false,
            }
        })
        .collect();
    rows.sort_by(|&a, &b| ds.records[a].source.cmp(&ds.records[b].source).then(a.cmp(&b)));
    rows
}

/// Builds the training matrix for `setting`. Crashed runs are skipped.
pub fn build_matrix<T: Scalar>(ds: &Dataset, setting: Setting) -> Result<TrainingMatrix<T>, DataError> {
    let mut m = TrainingMatrix::new(ds.space.column_kinds(ds.instances.n_features()));
    for i in matrix_rows(ds, setting) {
        let r = &ds.records[i];
        if r.status == RunStatus::Crashed {
            continue;
        }
        let y = response(r, &ds.objective)?;
        let ceiling = match ds.objective {
            Objective::Runtime => (PAR_FACTOR * r.cutoff).log10(),
            Objective::Quality { .. } => f64::INFINITY,
        };
        let row: Vec<T> = encode_record(ds, r)?;
        m.push(
            &row,
            T::from_f64_lossy(y),
            r.status == RunStatus::Censored,
            T::from_f64(ceiling).unwrap_or_else(T::infinity),
        );
    }
    if m.n_rows() == 0 {
        return Err(DataError::Empty);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::parse_space;
    use crate::rng::rng_from_seed;

    const FEATURES: &str = "instance_id,split,f_0\ni1,train,0.5\ni2,test,1.5\n";
    const RUNS: &str = "run_source,repetition,instance_id,seed,status,measured_cost,cutoff,is_validation,config\n\
        roar,0,i1,1,SUCCESS,2.5,300,false,\"{\"\"x\"\": 0.25}\"\n\
        roar,0,i1,2,TIMEOUT,300,300,false,\"{\"\"x\"\": 0.5}\"\n\
        ils,1,i2,3,CENSORED,10,300,true,\"{\"\"x\"\": 0.75}\"\n";

    fn load(runs: &str) -> Result<Dataset, DataError> {
        let space = Arc::new(parse_space("x real [0.0, 1.0] [0.5]").unwrap());
        let inst = Arc::new(InstanceSet::read_csv(FEATURES.as_bytes()).unwrap());
        Dataset::read_runs(runs.as_bytes(), space, inst, Objective::Runtime)
    }

    #[test]
    fn reads_three_rows() {
        let ds = load(RUNS).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records[2].status, RunStatus::Censored);
        assert!(ds.records[2].is_validation);
        assert_eq!(ds.records[0].source, RunSource::new("roar", 0));
    }

    #[test]
    fn unknown_instance_names_row_and_id() {
        let runs = RUNS.replace("ils,1,i2", "ils,1,zz9");
        let err = load(&runs).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("zz9"), "{err}");
    }

    #[test]
    fn censored_at_cutoff_rejected() {
        let runs = RUNS.replace("CENSORED,10,300", "CENSORED,300,300");
        let err = load(&runs).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("strictly below"), "{err}");
    }

    #[test]
    fn invalid_config_rejected() {
        let runs = RUNS.replace("0.25", "1.25");
        assert!(load(&runs).is_err());
    }

    #[test]
    fn runs_round_trip() {
        let ds = load(RUNS).unwrap();
        let mut buf = Vec::new();
        ds.write_runs(&mut buf).unwrap();
        let again = Dataset::read_runs(
            buf.as_slice(),
            Arc::clone(&ds.space),
            Arc::clone(&ds.instances),
            ds.objective,
        )
        .unwrap();
        assert_eq!(again.records, ds.records);
        assert_eq!(again.digest(), ds.digest());
    }

    #[test]
    fn matrix_responses() {
        let ds = load(RUNS).unwrap();
        let m: TrainingMatrix<f64> = build_matrix(&ds, Setting::All).unwrap();
        // Sorted by source: ils#1 first.
        assert_eq!(m.y[0], 1.0);
        assert!(m.censored[0]);
        assert!((m.y[1] - 2.5f64.log10()).abs() < 1e-15);
        assert_eq!(m.y[2], 3000f64.log10());
        assert!((m.y[2] - 3.477).abs() < 1e-3);
        assert!(!m.censored[2]);
        assert!(m.y.iter().zip(&m.ceiling).all(|(y, c)| y <= c));
    }

    #[test]
    fn zero_runtime_floored() {
        let runs = RUNS.replace("SUCCESS,2.5", "SUCCESS,0");
        let ds = load(&runs).unwrap();
        let m: TrainingMatrix<f64> = build_matrix(&ds, Setting::TrainOnly).unwrap();
        assert_eq!(m.y[0], 0.005f64.log10());
    }

    #[test]
    fn setting_filters() {
        let ds = load(RUNS).unwrap();
        let one: TrainingMatrix<f32> = build_matrix(&ds, Setting::TrainOnly).unwrap();
        assert_eq!(one.n_rows(), 2);
        let two: TrainingMatrix<f32> = build_matrix(&ds, Setting::TrainPlusTestIncumbents).unwrap();
        assert_eq!(two.n_rows(), 3);
        let runs = RUNS.replace("10,300,true", "10,300,false");
        let ds = load(&runs).unwrap();
        let two: TrainingMatrix<f32> = build_matrix(&ds, Setting::TrainPlusTestIncumbents).unwrap();
        assert_eq!(two.n_rows(), 2);
    }

    #[test]
    fn quality_rejects_censored() {
        let mut ds = load(RUNS).unwrap();
        ds.objective = Objective::Quality { lower: None, upper: None };
        assert!(matches!(build_matrix::<f64>(&ds, Setting::All), Err(DataError::CensoredQuality)));
    }

    #[test]
    fn crash_filtering() {
        let runs = RUNS.replace("TIMEOUT,300,300", "CRASHED,1,300");
        let ds = load(&runs).unwrap();
        let (f, removed) = filter_crashed(&ds);
        assert_eq!(removed, 1);
        assert_eq!(f.len(), 2);
        assert!(f.records.iter().all(|r| r.status != RunStatus::Crashed));
        let (g, removed) = filter_crashed(&f);
        assert_eq!(removed, 0);
        assert_eq!(g.records, f.records);

        let all_crashed: Vec<_> =
            ds.records.iter().cloned().map(|mut r| { r.status = RunStatus::Crashed; r }).collect();
        let (empty, removed) = filter_crashed(&ds.with_records(all_crashed));
        assert_eq!((empty.len(), removed), (0, 3));
    }

    #[test]
    fn subsample_contract() {
        let ds = load(RUNS).unwrap();
        let big: Vec<RunRecord> = (0..2000).map(|i| {
            let mut r = ds.records[0].clone();
            r.seed = i;
            r
        }).collect();
        let big = ds.with_records(big);
        let mut rng = rng_from_seed(4);
        let small = subsample(&big, 1000, &mut rng);
        assert_eq!(small.len(), 1000);
        let mut rng = rng_from_seed(4);
        assert_eq!(subsample(&big, 1000, &mut rng).records, small.records);
        let mut rng = rng_from_seed(4);
        assert_eq!(subsample(&ds, DEFAULT_SUBSAMPLE_CAP, &mut rng).records, ds.records);
    }
}
