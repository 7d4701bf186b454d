//! Surrogate benchmarks: a fitted forest standing in for a target algorithm.
//!
//! Building runs the fixed preprocessing pipeline (crash filter, subsample,
//! matrix, censored imputation, fit). A built benchmark answers run requests
//! by drawing a seed-dependent quantile of the predicted runtime
//! distribution, and can be saved, loaded and served over NDJSON.

mod persist;
mod serve;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::censor_impute::{impute_matrix, ImputeError};
use crate::config_space::{Configuration, ConfigurationSpace, SpaceError};
use crate::qrf::{ForestConfig, ForestError, QuantileForest};
use crate::rng::{derive_seed, hash_bytes, unit_interval, Rng};
use crate::run_data::{
    build_matrix, filter_crashed, subsample, DataError, Dataset, InstanceSet, Objective, RunStatus, Setting,
    DEFAULT_SUBSAMPLE_CAP, PAR_FACTOR,
};

pub use persist::{FORMAT_VERSION, MAGIC};
pub use serve::{handle_request, serve_stdio, LatencyStats, Reply, Server};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("invalid configuration: {0}")]
    Config(#[from] SpaceError),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("model file version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("model file digest mismatch: header says {expected}, payload hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("model file truncated: {0}")]
    Truncated(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of one surrogate run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    /// PAR10-adjusted for runtime timeouts.
    pub cost: f64,
    /// Model-space prediction (`log10` runtime, or raw loss).
    pub raw_prediction: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quantile_used: Option<f64>,
}

/// Where a model's training data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub setting: Setting,
    pub dataset_digest: String,
    pub n_records: usize,
    pub n_crashed: usize,
    pub n_rows: usize,
    pub n_censored: usize,
    pub imputation_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub setting: Setting,
    pub forest: ForestConfig,
    pub subsample_cap: usize,
    pub deterministic_target: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            setting: Setting::TrainPlusTestIncumbents,
            forest: ForestConfig::default(),
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            deterministic_target: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateBenchmark {
    pub(crate) forest: QuantileForest<f64>,
    pub(crate) space: Arc<ConfigurationSpace>,
    pub(crate) instances: Arc<InstanceSet>,
    pub(crate) cutoff: f64,
    pub(crate) objective: Objective,
    pub(crate) deterministic_target: bool,
    pub(crate) provenance: Provenance,
}

impl SurrogateBenchmark {
    /// Runs the preprocessing pipeline and fits the forest.
    pub fn build(ds: &Dataset, opts: &BuildOptions, rng: &mut Rng) -> Result<Self, SurrogateError> {
        let (filtered, n_crashed) = filter_crashed(ds);
        if filtered.is_empty() {
            return Err(DataError::Empty.into());
        }
        let sampled = subsample(&filtered, opts.subsample_cap, rng);
        let matrix = build_matrix::<f64>(&sampled, opts.setting)?;
        let n_censored = matrix.censored.iter().filter(|&&c| c).count();
        let (matrix, report) = impute_matrix(&matrix, &opts.forest, rng)?;
        log::info!(
            "imputed {n_censored} censored rows in {} iterations (final change {:.2e})",
            report.iterations,
            report.max_change
        );
        let forest = QuantileForest::fit(&matrix, &opts.forest, rng)?;
        let cutoff = sampled.cutoff().ok_or(DataError::Empty)?;
        log::info!("fitted {} trees on {} rows", forest.trees().len(), matrix.n_rows());
        Ok(SurrogateBenchmark {
            forest,
            space: sampled.space.clone(),
            instances: sampled.instances.clone(),
            cutoff,
            objective: sampled.objective,
            deterministic_target: opts.deterministic_target,
            provenance: Provenance {
                setting: opts.setting,
                dataset_digest: ds.digest(),
                n_records: ds.len(),
                n_crashed,
                n_rows: matrix.n_rows(),
                n_censored,
                imputation_iterations: report.iterations,
            },
        })
    }

    /// Wraps an already fitted forest.
    pub fn from_parts(
        forest: QuantileForest<f64>,
        space: Arc<ConfigurationSpace>,
        instances: Arc<InstanceSet>,
        cutoff: f64,
        objective: Objective,
        deterministic_target: bool,
        provenance: Provenance,
    ) -> Result<Self, SurrogateError> {
        let width = space.len() + instances.n_features();
        if forest.n_cols() != width {
            return Err(SurrogateError::Format(format!(
                "forest expects {} inputs, space and features give {width}",
                forest.n_cols()
            )));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(SurrogateError::Format(format!("cutoff must be positive, got {cutoff}")));
        }
        Ok(SurrogateBenchmark { forest, space, instances, cutoff, objective, deterministic_target, provenance })
    }

    pub fn forest(&self) -> &QuantileForest<f64> {
        &self.forest
    }

    pub fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<ConfigurationSpace> {
        self.space.clone()
    }

    pub fn instances(&self) -> &InstanceSet {
        &self.instances
    }

    pub fn instances_arc(&self) -> Arc<InstanceSet> {
        self.instances.clone()
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn deterministic_target(&self) -> bool {
        self.deterministic_target
    }

    pub fn set_deterministic_target(&mut self, on: bool) {
        self.deterministic_target = on;
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Quantile drawn for a request: the median for deterministic targets,
    /// otherwise a hash of configuration, instance and seed mapped to `[0, 1)`.
    pub fn quantile_for(&self, config: &Configuration, instance: &str, seed: u64) -> f64 {
        if self.deterministic_target {
            return 0.5;
        }
        let h = derive_seed(hash_bytes(&config.canonical_bytes()), &[hash_bytes(instance.as_bytes()), seed]);
        unit_interval(h)
    }

    /// Encoded model input for a configuration on an instance.
    pub fn encode(&self, config: &Configuration, instance: &str) -> Result<Vec<f64>, SurrogateError> {
        let feats = self
            .instances
            .features(instance)
            .ok_or_else(|| SurrogateError::UnknownInstance(instance.to_string()))?;
        self.space.validate(config)?;
        let full = self.space.impute_inactive(config);
        Ok(self.space.encode(&full, feats, self.instances.n_features())?)
    }

    pub fn predict_run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, SurrogateError> {
        let x = self.encode(config, instance)?;
        let alpha = self.quantile_for(config, instance, seed);
        let y = self.forest.predict_quantile(&x, alpha)?;
        Ok(self.to_result(y, alpha))
    }

    /// Maps a model-space prediction to a run outcome.
    pub fn to_result(&self, y: f64, alpha: f64) -> RunResult {
        match self.objective {
            Objective::Runtime => {
                let runtime = 10f64.powf(y);
                if runtime >= self.cutoff {
                    RunResult {
                        status: RunStatus::Timeout,
                        cost: PAR_FACTOR * self.cutoff,
                        raw_prediction: y,
                        quantile_used: Some(alpha),
                    }
                } else {
                    RunResult { status: RunStatus::Success, cost: runtime, raw_prediction: y, quantile_used: Some(alpha) }
                }
            }
            Objective::Quality { lower, upper } => {
                let mut c = y;
                if let Some(lo) = lower {
                    c = c.max(lo);
                }
                if let Some(hi) = upper {
                    c = c.min(hi);
                }
                RunResult { status: RunStatus::Success, cost: c, raw_prediction: y, quantile_used: Some(alpha) }
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config_space::{parse_space, Value};
    use crate::rng::rng_from_seed;
    use crate::run_data::{RunRecord, RunSource, Split};
    use rand::Rng as _;

    /// Small runtime dataset: runtime grows with `x` and instance hardness,
    /// with some timeouts, censored and crashed runs.
    pub(crate) fn toy_dataset(n: usize, seed: u64, censor: bool) -> Dataset {
        let space = Arc::new(
            parse_space("x real [0.0, 1.0] [0.5]\nmode categorical {a, b} [a]\nk integer [1, 8] [2]\nk | mode in {b}")
                .unwrap(),
        );
        let instances = Arc::new(
            InstanceSet::new(
                1,
                (0..6).map(|i| {
                    (format!("i{i}"), if i % 2 == 0 { Split::Train } else { Split::Test }, vec![i as f64 * 0.3])
                }),
            )
            .unwrap(),
        );
        let mut rng = rng_from_seed(seed);
        let cutoff = 20.0;
        let mut records = Vec::new();
        for i in 0..n {
            let config = space.sample_uniform(&mut rng);
            let inst = rng.gen_range(0..6usize);
            let x = match config.get("x") {
                Some(Value::Real(v)) => *v,
                _ => unreachable!(),
            };
            let bonus = if config.get("mode") == Some(&Value::Cat("b".into())) { 0.4 } else { 0.0 };
            let runtime = 10f64.powf(-1.0 + 2.5 * x + 0.3 * inst as f64 + bonus + 0.1 * rng.gen::<f64>());
            let (status, cost) = if censor && i % 7 == 3 {
                (RunStatus::Censored, (runtime * 0.5).min(cutoff * 0.9))
            } else if censor && i % 29 == 5 {
                (RunStatus::Crashed, 1.0)
            } else if runtime >= cutoff {
                (RunStatus::Timeout, cutoff)
            } else {
                (RunStatus::Success, runtime)
            };
            records.push(RunRecord {
                config,
                instance: format!("i{inst}"),
                seed: i as u64,
                status,
                measured_cost: cost,
                cutoff,
                source: RunSource::new("rand", (i % 2) as u32),
                is_validation: inst % 2 == 1,
            });
        }
        Dataset::new(records, space, instances, Objective::Runtime).unwrap()
    }

    pub(crate) fn toy_model(seed: u64) -> SurrogateBenchmark {
        let ds = toy_dataset(300, seed, true);
        let opts = BuildOptions { forest: ForestConfig { num_trees: 12, ..Default::default() }, ..Default::default() };
        SurrogateBenchmark::build(&ds, &opts, &mut rng_from_seed(seed)).unwrap()
    }

    fn config(sb: &SurrogateBenchmark, json: &str) -> Configuration {
        sb.space().config_from_json_str(json).unwrap()
    }

    #[test]
    fn stage_bypass_without_censoring() {
        let ds = toy_dataset(200, 3, false);
        let opts = BuildOptions { forest: ForestConfig { num_trees: 6, ..Default::default() }, ..Default::default() };
        let sb = SurrogateBenchmark::build(&ds, &opts, &mut rng_from_seed(9)).unwrap();
        let m = build_matrix::<f64>(&ds, opts.setting).unwrap();
        let direct = QuantileForest::fit(&m, &opts.forest, &mut rng_from_seed(9)).unwrap();
        assert_eq!(sb.forest(), &direct);
        assert_eq!(sb.provenance().n_censored, 0);
        assert_eq!(sb.provenance().imputation_iterations, 0);
    }

    #[test]
    fn default_cap_and_setting() {
        let o = BuildOptions::default();
        assert_eq!(o.subsample_cap, 1_000_000);
        assert_eq!(o.setting, Setting::TrainPlusTestIncumbents);
        assert_eq!(o.forest, ForestConfig::default());
    }

    #[test]
    fn deterministic_target_uses_median() {
        let mut sb = toy_model(1);
        sb.set_deterministic_target(true);
        let c = config(&sb, r#"{"x": 0.3, "mode": "a"}"#);
        for seed in 0..20 {
            assert_eq!(sb.predict_run(&c, "i0", seed).unwrap().quantile_used, Some(0.5));
        }
    }

    #[test]
    fn timeout_costs_par10() {
        let sb = toy_model(2);
        let mut sb300 = sb.clone();
        sb300.cutoff = 300.0;
        let r = sb300.to_result(450f64.log10(), 0.5);
        assert_eq!(r.status, RunStatus::Timeout);
        assert_eq!(r.cost, 3000.0);
        let r = sb300.to_result(2.0, 0.5);
        assert_eq!(r.status, RunStatus::Success);
        assert!((r.cost - 100.0).abs() < 1e-9);
    }

    #[test]
    fn predictions_repeatable_and_in_range() {
        let sb = toy_model(3);
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let c = sb.space().sample_uniform(&mut rng);
            let inst = format!("i{}", rng.gen_range(0..6));
            let seed = rng.gen::<u64>();
            let a = sb.predict_run(&c, &inst, seed).unwrap();
            assert_eq!(a, sb.predict_run(&c, &inst, seed).unwrap());
            let q = a.quantile_used.unwrap();
            assert!((0.0..1.0).contains(&q));
            assert!((a.cost > 0.0 && a.cost < sb.cutoff()) || a.cost == 10.0 * sb.cutoff());
        }
    }

    #[test]
    fn quantile_depends_on_instance_and_seed() {
        let sb = toy_model(4);
        let c = config(&sb, r#"{"x": 0.3, "mode": "a"}"#);
        let q = |i: &str, s| sb.quantile_for(&c, i, s);
        assert_ne!(q("i0", 1), q("i0", 2));
        assert_ne!(q("i0", 1), q("i2", 1));
        assert_eq!(q("i0", 1), q("i0", 1));
    }

    #[test]
    fn rejects_bad_requests() {
        let sb = toy_model(5);
        let c = config(&sb, r#"{"x": 0.3, "mode": "a"}"#);
        assert!(matches!(sb.predict_run(&c, "nope", 1), Err(SurrogateError::UnknownInstance(_))));
        let mut bad = c.clone();
        bad.set("x", Value::Real(3.0));
        assert!(matches!(sb.predict_run(&bad, "i0", 1), Err(SurrogateError::Config(_))));
    }

    #[test]
    fn empty_after_crash_filter() {
        let mut ds = toy_dataset(20, 1, false);
        for r in ds.records.iter_mut() {
            r.status = RunStatus::Crashed;
        }
        let err = SurrogateBenchmark::build(&ds, &BuildOptions::default(), &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, SurrogateError::Data(DataError::Empty)));
    }
}
