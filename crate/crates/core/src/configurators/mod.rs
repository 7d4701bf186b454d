//! Algorithm configuration procedures and the benchmark backends they run
//! against.
//!
//! Every procedure talks to a [`BenchmarkBackend`], so the same code runs on
//! a synthetic ground-truth target, a surrogate model, or a served model over
//! the network. Budgets count target time (predicted or simulated runtime),
//! never wall-clock.

mod racing;
mod remote;
mod search;
mod synthetic;

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::{Configuration, ConfigurationSpace};
use crate::rng::Rng;
use crate::run_data::{DataError, Dataset, InstanceSet, Objective, RunRecord, RunSource, RunStatus, Split, PAR_FACTOR};
use crate::surrogate::{RunResult, SurrogateBenchmark, SurrogateError};

pub use racing::DEFAULT_SLACK;
pub use remote::RemoteBackend;
pub use search::{
    expected_improvement, ils, ils_traced, random_search, roar, smac_lite, Configurator, IlsOptions,
    DEFAULT_RANDOM_FRACTION, MAX_INCUMBENT_RUNS,
};
pub use synthetic::{FunctionBackend, SyntheticBackend, SyntheticSpec};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("remote backend: {0}")]
    Remote(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One capped evaluation as seen by a configurator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub status: RunStatus,
    /// Cost used for comparisons: runtime, `10 * cutoff` for timeouts, the
    /// cap for censored runs.
    pub cost: f64,
    /// Value recorded in exported run data.
    pub measured: f64,
    /// Target time consumed.
    pub elapsed: f64,
}

/// A target algorithm behind a uniform evaluation interface.
pub trait BenchmarkBackend: Send + Sync {
    fn space(&self) -> &ConfigurationSpace;
    fn instances(&self) -> &InstanceSet;
    fn cutoff(&self) -> f64;
    fn objective(&self) -> Objective;

    /// Runs with the full cutoff.
    fn run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, BackendError>;

    /// Runs with an additional cap. Runtime runs reaching a cap below the
    /// cutoff are reported as censored at the cap.
    fn evaluate(&self, config: &Configuration, instance: &str, seed: u64, cap: f64) -> Result<Evaluation, BackendError> {
        let r = self.run(config, instance, seed)?;
        let cutoff = self.cutoff();
        if !self.objective().is_runtime() {
            return Ok(Evaluation { status: r.status, cost: r.cost, measured: r.cost, elapsed: 1.0 });
        }
        let runtime = if r.status == RunStatus::Timeout { f64::INFINITY } else { r.cost };
        if cap < cutoff && runtime >= cap {
            return Ok(Evaluation { status: RunStatus::Censored, cost: cap, measured: cap, elapsed: cap });
        }
        if r.status == RunStatus::Timeout {
            return Ok(Evaluation {
                status: RunStatus::Timeout,
                cost: PAR_FACTOR * cutoff,
                measured: cutoff,
                elapsed: cutoff,
            });
        }
        Ok(Evaluation { status: RunStatus::Success, cost: r.cost, measured: r.cost, elapsed: r.cost })
    }
}

impl BenchmarkBackend for SurrogateBenchmark {
    fn space(&self) -> &ConfigurationSpace {
        SurrogateBenchmark::space(self)
    }

    fn instances(&self) -> &InstanceSet {
        SurrogateBenchmark::instances(self)
    }

    fn cutoff(&self) -> f64 {
        SurrogateBenchmark::cutoff(self)
    }

    fn objective(&self) -> Objective {
        *SurrogateBenchmark::objective(self)
    }

    fn run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, BackendError> {
        Ok(self.predict_run(config, instance, seed)?)
    }
}

impl<B: BenchmarkBackend + ?Sized> BenchmarkBackend for Arc<B> {
    fn space(&self) -> &ConfigurationSpace {
        (**self).space()
    }

    fn instances(&self) -> &InstanceSet {
        (**self).instances()
    }

    fn cutoff(&self) -> f64 {
        (**self).cutoff()
    }

    fn objective(&self) -> Objective {
        (**self).objective()
    }

    fn run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, BackendError> {
        (**self).run(config, instance, seed)
    }

    fn evaluate(&self, config: &Configuration, instance: &str, seed: u64, cap: f64) -> Result<Evaluation, BackendError> {
        (**self).evaluate(config, instance, seed, cap)
    }
}

/// Configurator budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Budget {
    /// Total target time in seconds.
    TargetTime(f64),
    Evaluations(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Target time consumed when the point was recorded.
    pub time: f64,
    pub evaluations: usize,
    pub incumbent: Configuration,
    /// Mean cost of the incumbent over its evaluated runs.
    pub estimate: f64,
}

/// Result of one configurator run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfiguratorRun {
    pub configurator: String,
    pub repetition: u32,
    pub trajectory: Vec<TrajectoryPoint>,
    pub log: Vec<RunRecord>,
    pub time_used: f64,
    pub evaluations: usize,
}

impl ConfiguratorRun {
    pub fn incumbent(&self) -> Option<&Configuration> {
        self.trajectory.last().map(|p| &p.incumbent)
    }

    /// Relabels the run and its log with a repetition index.
    pub fn with_repetition(mut self, repetition: u32) -> Self {
        self.repetition = repetition;
        for r in &mut self.log {
            r.source.repetition = repetition;
        }
        self
    }

    pub fn source(&self) -> RunSource {
        RunSource::new(&self.configurator, self.repetition)
    }

    /// Lowest incumbent estimate recorded at or before `time`, falling back
    /// to the first point when nothing was recorded yet.
    pub fn best_at(&self, time: f64) -> Option<f64> {
        let first = self.trajectory.first()?.estimate;
        Some(
            self.trajectory
                .iter()
                .take_while(|p| p.time <= time)
                .map(|p| p.estimate)
                .fold(first, f64::min),
        )
    }
}

/// Bookkeeping shared by all procedures: budget, run log and trajectory.
pub(crate) struct Context<'a> {
    pub backend: &'a dyn BenchmarkBackend,
    budget: Budget,
    time: f64,
    evals: usize,
    log: Vec<RunRecord>,
    trajectory: Vec<TrajectoryPoint>,
    source: RunSource,
    pub train: Vec<String>,
}

impl<'a> Context<'a> {
    pub fn new(backend: &'a dyn BenchmarkBackend, budget: Budget, name: &str, repetition: u32) -> Self {
        let train: Vec<String> = backend.instances().ids_in(Split::Train).into_iter().map(String::from).collect();
        let train = if train.is_empty() { backend.instances().ids().to_vec() } else { train };
        Context {
            backend,
            budget,
            time: 0.0,
            evals: 0,
            log: Vec::new(),
            trajectory: Vec::new(),
            source: RunSource::new(name, repetition),
            train,
        }
    }

    pub fn exhausted(&self) -> bool {
        match self.budget {
            Budget::TargetTime(t) => self.time >= t,
            Budget::Evaluations(n) => self.evals >= n,
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.backend.cutoff()
    }

    pub fn capping(&self) -> bool {
        self.backend.objective().is_runtime()
    }

    pub fn space(&self) -> &ConfigurationSpace {
        self.backend.space()
    }

    /// Draws a training instance and a seed.
    pub fn random_pair(&self, rng: &mut Rng) -> (String, u64) {
        let i = rng.gen_range(0..self.train.len());
        (self.train[i].clone(), rng.gen::<u32>() as u64)
    }

    pub fn run(&mut self, config: &Configuration, instance: &str, seed: u64, cap: f64) -> Result<Evaluation, BackendError> {
        let cap = cap.min(self.cutoff());
        let e = self.backend.evaluate(config, instance, seed, cap)?;
        self.time += e.elapsed;
        self.evals += 1;
        self.log.push(RunRecord {
            config: config.clone(),
            instance: instance.to_string(),
            seed,
            status: e.status,
            measured_cost: e.measured,
            cutoff: self.cutoff(),
            source: self.source.clone(),
            is_validation: false,
        });
        Ok(e)
    }

    /// Records the current incumbent. Points sharing a time stamp collapse
    /// into the latest one.
    pub fn note(&mut self, incumbent: &Configuration, estimate: f64) {
        let p = TrajectoryPoint { time: self.time, evaluations: self.evals, incumbent: incumbent.clone(), estimate };
        match self.trajectory.last_mut() {
            Some(last) if last.time >= p.time => *last = p,
            _ => self.trajectory.push(p),
        }
    }

    pub fn finish(mut self, incumbent: &Configuration, estimate: f64) -> ConfiguratorRun {
        let changed = self
            .trajectory
            .last()
            .is_none_or(|p| &p.incumbent != incumbent || p.estimate != estimate);
        if changed {
            self.note(incumbent, estimate);
        }
        ConfiguratorRun {
            configurator: self.source.configurator,
            repetition: self.source.repetition,
            trajectory: self.trajectory,
            log: self.log,
            time_used: self.time,
            evaluations: self.evals,
        }
    }
}

/// Evaluates every distinct incumbent of a run on every test instance with
/// the full cutoff. Seeds derive from `seed`.
pub fn validate_incumbents(
    backend: &dyn BenchmarkBackend,
    run: &ConfiguratorRun,
    seed: u64,
) -> Result<Vec<RunRecord>, BackendError> {
    let test: Vec<String> = backend.instances().ids_in(Split::Test).into_iter().map(String::from).collect();
    let mut seen: Vec<&Configuration> = Vec::new();
    let mut out = Vec::new();
    for p in &run.trajectory {
        if seen.contains(&&p.incumbent) {
            continue;
        }
        seen.push(&p.incumbent);
        for (k, inst) in test.iter().enumerate() {
            let s = crate::rng::derive_seed(seed, &[seen.len() as u64, k as u64]) >> 32;
            let e = backend.evaluate(&p.incumbent, inst, s, backend.cutoff())?;
            out.push(RunRecord {
                config: p.incumbent.clone(),
                instance: inst.clone(),
                seed: s,
                status: e.status,
                measured_cost: e.measured,
                cutoff: backend.cutoff(),
                source: run.source(),
                is_validation: true,
            });
        }
    }
    Ok(out)
}

/// Collects configurator logs and incumbent validations into a dataset.
pub fn export_dataset(
    runs: &[ConfiguratorRun],
    validations: &[RunRecord],
    space: Arc<ConfigurationSpace>,
    instances: Arc<InstanceSet>,
    objective: Objective,
) -> Result<Dataset, DataError> {
    let records: Vec<RunRecord> =
        runs.iter().flat_map(|r| r.log.iter().cloned()).chain(validations.iter().cloned()).collect();
    Dataset::new(records, space, instances, objective)
}
