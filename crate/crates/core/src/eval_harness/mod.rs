//! Evaluation of surrogate benchmarks: validation splits, held-out model
//! quality, and trajectory comparisons between an original benchmark and a
//! surrogate.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configurators::{
    export_dataset, validate_incumbents, BackendError, BenchmarkBackend, Budget, Configurator, ConfiguratorRun,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::run_data::{response, DataError, Dataset, RunRecord, RunSource, RunStatus};
use crate::stats::{self, PairwiseOutcome, StatsError};
use crate::surrogate::{BuildOptions, SurrogateBenchmark, SurrogateError};

pub use report::{FidelityReport, QualityReport, QualityRow, Timing, TrajectoryRow};

/// Significance level for the pairwise tests.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Points in the default budget grid.
pub const DEFAULT_GRID_POINTS: usize = 20;
/// Surrogate requests replayed for latency measurement.
pub const LATENCY_REQUESTS: usize = 1000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("records without a run label (configurator name)")]
    MissingLabels,
    #[error("need at least 2 repetitions, found {0}")]
    TooFewRepetitions(usize),
    #[error("need at least 2 configurators, found {0}")]
    TooFewConfigurators(usize),
    #[error("invalid options: {0}")]
    Options(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Loro,
    Loco,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub name: String,
    pub train: BTreeSet<RunSource>,
    pub held_out: BTreeSet<RunSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub splits: Vec<DataSplit>,
}

fn labelled_sources(ds: &Dataset) -> Result<BTreeSet<RunSource>, HarnessError> {
    if ds.records.iter().any(|r| r.source.configurator.trim().is_empty()) {
        return Err(HarnessError::MissingLabels);
    }
    Ok(ds.sources())
}

/// Leave-one-run-out: one split per repetition index, holding out that
/// repetition of every configurator.
pub fn loro_splits(ds: &Dataset) -> Result<SplitPlan, HarnessError> {
    let sources = labelled_sources(ds)?;
    let reps: BTreeSet<u32> = sources.iter().map(|s| s.repetition).collect();
    if reps.len() < 2 {
        return Err(HarnessError::TooFewRepetitions(reps.len()));
    }
    let splits = reps
        .iter()
        .map(|&r| {
            let (held_out, train) = sources.iter().cloned().partition(|s| s.repetition == r);
            DataSplit { name: format!("run{r}"), train, held_out }
        })
        .collect();
    Ok(SplitPlan { kind: SplitKind::Loro, splits })
}

/// Leave-one-configurator-out: one split per configurator.
pub fn loco_splits(ds: &Dataset) -> Result<SplitPlan, HarnessError> {
    let sources = labelled_sources(ds)?;
    let names: BTreeSet<&str> = sources.iter().map(|s| s.configurator.as_str()).collect();
    if names.len() < 2 {
        return Err(HarnessError::TooFewConfigurators(names.len()));
    }
    let splits = names
        .iter()
        .map(|&c| {
            let (held_out, train) = sources.iter().cloned().partition(|s| s.configurator == c);
            DataSplit { name: c.to_string(), train, held_out }
        })
        .collect();
    Ok(SplitPlan { kind: SplitKind::Loco, splits })
}

#[derive(Default)]
struct Held {
    truth: Vec<f64>,
    pred: Vec<f64>,
}

fn score(split: &str, configurator: Option<&str>, conf: &Held, val: &Held) -> QualityRow {
    let rmse = |h: &Held| stats::rmse(&h.truth, &h.pred).ok();
    let cc = |h: &Held| stats::spearman(&h.truth, &h.pred).ok();
    QualityRow {
        split: split.to_string(),
        configurator: configurator.map(str::to_string),
        n_config: conf.truth.len(),
        n_validation: val.truth.len(),
        rmse_config: rmse(conf),
        cc_config: cc(conf),
        rmse_validation: rmse(val),
        cc_validation: cc(val),
    }
}

/// Builds a surrogate on each split's training runs and scores median
/// predictions on the held-out runs, separately for configuration-phase and
/// validation records. Censored and crashed held-out records are skipped.
pub fn model_quality(
    ds: &Dataset,
    plan: &SplitPlan,
    opts: &BuildOptions,
    seed: u64,
) -> Result<QualityReport, HarnessError> {
    let mut rows = Vec::new();
    for (k, split) in plan.splits.iter().enumerate() {
        let train = ds.restrict(&split.train);
        let sb = SurrogateBenchmark::build(&train, opts, &mut rng_from_seed(derive_seed(seed, &[k as u64])))?;
        let mut per: BTreeMap<String, (Held, Held)> = BTreeMap::new();
        let mut all = (Held::default(), Held::default());
        for r in ds.records.iter().filter(|r| split.held_out.contains(&r.source)) {
            if matches!(r.status, RunStatus::Censored | RunStatus::Crashed) {
                continue;
            }
            let truth = response(r, &ds.objective)?;
            let x = sb.encode(&r.config, &r.instance)?;
            let pred = sb.forest().predict_quantile(&x, 0.5).map_err(SurrogateError::from)?;
            let entry = per.entry(r.source.configurator.clone()).or_default();
            for held in [if r.is_validation { &mut entry.1 } else { &mut entry.0 }, if r.is_validation { &mut all.1 } else { &mut all.0 }] {
                held.truth.push(truth);
                held.pred.push(pred);
            }
        }
        rows.push(score(&split.name, None, &all.0, &all.1));
        for (c, (conf, val)) in &per {
            rows.push(score(&split.name, Some(c), conf, val));
        }
    }
    Ok(QualityReport { kind: plan.kind, rows })
}

/// `n` log-spaced points from `lo` to `hi`, both included.
pub fn budget_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut g: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
            g[0] = lo;
            g[n - 1] = hi;
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub configurators: Vec<Configurator>,
    pub n_runs: usize,
    /// Target-time budget per configurator run.
    pub budget: f64,
    /// Budgets at which runs are compared; defaults to
    /// [`DEFAULT_GRID_POINTS`] log-spaced points from the cutoff to `budget`.
    pub grid: Option<Vec<f64>>,
    pub alpha: f64,
    pub seed: u64,
}

impl CompareOptions {
    pub fn new(configurators: Vec<Configurator>, n_runs: usize, budget: f64, seed: u64) -> Self {
        CompareOptions { configurators, n_runs, budget, grid: None, alpha: DEFAULT_ALPHA, seed }
    }
}

/// Runs every configurator `n_runs` times on each backend with matched seeds
/// and compares the pairwise outcomes of their best-found performance over
/// the budget grid.
pub fn compare(
    original: &dyn BenchmarkBackend,
    surrogate: &dyn BenchmarkBackend,
    opts: &CompareOptions,
) -> Result<FidelityReport, HarnessError> {
    let k = opts.configurators.len();
    if k < 2 {
        return Err(HarnessError::TooFewConfigurators(k));
    }
    if opts.n_runs < 2 {
        return Err(HarnessError::TooFewRepetitions(opts.n_runs));
    }
    if !(opts.budget > 0.0) {
        return Err(HarnessError::Options(format!("budget must be positive, got {}", opts.budget)));
    }
    let grid = match &opts.grid {
        Some(g) => g.clone(),
        None => budget_grid(original.cutoff().min(opts.budget), opts.budget, DEFAULT_GRID_POINTS),
    };
    if grid.is_empty() {
        return Err(HarnessError::Options("empty budget grid".into()));
    }

    let backends: [&dyn BenchmarkBackend; 2] = [original, surrogate];
    let cells: Vec<(usize, usize, usize)> =
        (0..2).flat_map(|b| (0..k).flat_map(move |c| (0..opts.n_runs).map(move |r| (b, c, r)))).collect();
    let runs: Vec<ConfiguratorRun> = cells
        .par_iter()
        .map(|&(b, c, r)| {
            let mut rng = rng_from_seed(derive_seed(opts.seed, &[c as u64, r as u64]));
            opts.configurators[c].run(backends[b], Budget::TargetTime(opts.budget), r as u32, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let run_at = |b: usize, c: usize, r: usize| &runs[(b * k + c) * opts.n_runs + r];

    let names: Vec<String> = opts.configurators.iter().map(|c| c.name().to_string()).collect();
    let mut points = Vec::new();
    let mut outcomes: [Vec<Vec<PairwiseOutcome>>; 2] = [Vec::new(), Vec::new()];
    for &t in &grid {
        for (b, out) in outcomes.iter_mut().enumerate() {
            let groups: Vec<Vec<f64>> = (0..k)
                .map(|c| (0..opts.n_runs).map(|r| run_at(b, c, r).best_at(t).unwrap_or(f64::INFINITY)).collect())
                .collect();
            for (c, g) in groups.iter().enumerate() {
                for (r, &cost) in g.iter().enumerate() {
                    points.push(TrajectoryRow {
                        budget: t,
                        run: r as u32,
                        configurator: names[c].clone(),
                        backend: if b == 0 { "original" } else { "surrogate" }.to_string(),
                        cost,
                    });
                }
            }
            let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
            out.push(stats::all_pairwise(&refs, opts.alpha)?);
        }
    }
    let [original_outcomes, surrogate_outcomes] = outcomes;
    let error = stats::surrogate_error(&original_outcomes, &surrogate_outcomes)?;
    let pairs = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| (names[i].clone(), names[j].clone())).collect();

    let replay: Vec<_> = (0..k * opts.n_runs)
        .flat_map(|i| run_at(0, i / opts.n_runs, i % opts.n_runs).log.iter())
        .take(LATENCY_REQUESTS)
        .collect();
    let timing = measure_timing(surrogate, &replay)?;

    Ok(FidelityReport {
        configurators: names,
        n_runs: opts.n_runs,
        budgets: grid,
        pairs,
        original_outcomes,
        surrogate_outcomes,
        error,
        trajectories: points,
        quality: Vec::new(),
        timing: Some(timing),
    })
}

fn measure_timing(
    surrogate: &dyn BenchmarkBackend,
    replay: &[&RunRecord],
) -> Result<Timing, HarnessError> {
    if replay.is_empty() {
        return Ok(Timing { requests: 0, mean_original_cost: 0.0, mean_latency: 0.0, speedup: 0.0 });
    }
    let start = Instant::now();
    for r in replay {
        surrogate.run(&r.config, &r.instance, r.seed)?;
    }
    let n = replay.len() as f64;
    let mean_latency = start.elapsed().as_secs_f64() / n;
    let mean_original_cost = replay.iter().map(|r| r.measured_cost).sum::<f64>() / n;
    Ok(Timing {
        requests: replay.len(),
        mean_original_cost,
        mean_latency,
        speedup: mean_original_cost / mean_latency.max(f64::MIN_POSITIVE),
    })
}

/// Runs each configurator `n_runs` times on `backend` (in parallel, seeds
/// derived from `seed`), validates every run's incumbents on the test
/// instances and exports the logs as one dataset.
pub fn collect_dataset(
    backend: &dyn BenchmarkBackend,
    configurators: &[Configurator],
    n_runs: usize,
    budget: Budget,
    seed: u64,
) -> Result<(Dataset, Vec<ConfiguratorRun>), HarnessError> {
    let cells: Vec<(usize, usize)> = (0..configurators.len()).flat_map(|c| (0..n_runs).map(move |r| (c, r))).collect();
    let done: Vec<(ConfiguratorRun, Vec<RunRecord>)> = cells
        .par_iter()
        .map(|&(c, r)| {
            let mut rng = rng_from_seed(derive_seed(seed, &[c as u64, r as u64]));
            let run = configurators[c].run(backend, budget, r as u32, &mut rng)?;
            let val = validate_incumbents(backend, &run, derive_seed(seed, &[c as u64, r as u64, 1]))?;
            Ok((run, val))
        })
        .collect::<Result<_, BackendError>>()?;
    let (runs, vals): (Vec<ConfiguratorRun>, Vec<Vec<RunRecord>>) = done.into_iter().unzip();
    let ds = export_dataset(
        &runs,
        &vals.concat(),
        Arc::new(backend.space().clone()),
        Arc::new(backend.instances().clone()),
        backend.objective(),
    )?;
    Ok((ds, runs))
}

/// Trains a surrogate without `excluded`'s data and compares the original and
/// that surrogate.
pub fn compare_loco(
    original: &dyn BenchmarkBackend,
    ds: &Dataset,
    excluded: &str,
    build: &BuildOptions,
    opts: &CompareOptions,
) -> Result<(Arc<SurrogateBenchmark>, FidelityReport), HarnessError> {
    let plan = loco_splits(ds)?;
    let split = plan
        .splits
        .iter()
        .find(|s| s.name == excluded)
        .ok_or_else(|| HarnessError::Options(format!("no data from configurator `{excluded}`")))?;
    let train = ds.restrict(&split.train);
    let sb = Arc::new(SurrogateBenchmark::build(&train, build, &mut rng_from_seed(derive_seed(opts.seed, &[0x10c0])))?);
    let report = compare(original, sb.as_ref(), opts)?;
    Ok((sb, report))
}

#[cfg(test)]
mod tests;
