//! Search procedures: random search, ROAR, iterated local search and a
//! light model-based optimizer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::racing::{Race, Racer, DEFAULT_SLACK};
use super::synthetic::std_normal_cdf;
use super::{BackendError, BenchmarkBackend, Budget, ConfiguratorRun, Context};
use crate::config_space::{Configuration, NeighborOptions};
use crate::qrf::{ForestConfig, QuantileForest};
use crate::rng::Rng;
use crate::run_data::{TrainingMatrix, PAR_FACTOR};

/// Share of uniformly random challengers in [`smac_lite`].
pub const DEFAULT_RANDOM_FRACTION: f64 = 0.5;

/// Upper bound on the runs collected for any one incumbent.
pub const MAX_INCUMBENT_RUNS: usize = 2000;

const SMAC_TREES: usize = 10;
const SMAC_RANDOM_CANDIDATES: usize = 100;

/// Closed-form expected improvement below `f_min` for a normal prediction.
pub fn expected_improvement(mu: f64, sigma: f64, f_min: f64) -> f64 {
    if sigma <= 0.0 {
        return (f_min - mu).max(0.0);
    }
    let z = (f_min - mu) / sigma;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    ((f_min - mu) * std_normal_cdf(z) + sigma * pdf).max(0.0)
}

/// Samples configurations uniformly; each is evaluated on `runs_per_config`
/// random training pairs with the full cutoff, and becomes the incumbent when
/// its mean cost is strictly lower.
pub fn random_search(
    backend: &dyn BenchmarkBackend,
    budget: Budget,
    runs_per_config: usize,
    rng: &mut Rng,
) -> Result<ConfiguratorRun, BackendError> {
    let runs_per_config = runs_per_config.max(1);
    let mut ctx = Context::new(backend, budget, "random_search", 0);
    let mut best: Option<(Configuration, f64)> = None;
    while !ctx.exhausted() {
        let c = ctx.space().sample_uniform(rng);
        let mut total = 0.0;
        let mut n = 0;
        while n < runs_per_config && !ctx.exhausted() {
            let (inst, seed) = ctx.random_pair(rng);
            total += ctx.run(&c, &inst, seed, f64::INFINITY)?.cost;
            n += 1;
        }
        let complete = n == runs_per_config;
        let mean = total / n as f64;
        let adopt = match &best {
            None => n > 0,
            Some((_, m)) => complete && mean < *m,
        };
        if adopt {
            ctx.note(&c, mean);
            best = Some((c, mean));
        }
    }
    let (inc, est) = best.unwrap_or_else(|| (backend.space().default_configuration(), f64::NAN));
    Ok(ctx.finish(&inc, est))
}

/// Random online aggressive racing: uniform challengers raced against the
/// incumbent with adaptive capping.
pub fn roar(
    backend: &dyn BenchmarkBackend,
    budget: Budget,
    rng: &mut Rng,
    slack: f64,
) -> Result<ConfiguratorRun, BackendError> {
    let mut ctx = Context::new(backend, budget, "roar", 0);
    let mut racer = Racer::new(slack, MAX_INCUMBENT_RUNS);
    let mut inc = ctx.space().default_configuration();
    racer.ensure(&mut ctx, &inc, 1, rng)?;
    ctx.note(&inc, racer.mean(&inc));
    while !ctx.exhausted() {
        let challenger = ctx.space().sample_uniform(rng);
        let outcome = racer.race(&mut ctx, &challenger, &inc, rng)?;
        if outcome == Race::Won {
            inc = challenger;
        }
        ctx.note(&inc, racer.mean(&inc));
        if outcome == Race::OutOfBudget {
            break;
        }
    }
    let est = racer.mean(&inc);
    Ok(ctx.finish(&inc, est))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlsOptions {
    pub restart_prob: f64,
    /// Random one-exchange moves applied at a local optimum.
    pub perturb_strength: usize,
    pub slack: f64,
    pub max_runs: usize,
}

impl Default for IlsOptions {
    fn default() -> Self {
        IlsOptions { restart_prob: 0.01, perturb_strength: 3, slack: DEFAULT_SLACK, max_runs: MAX_INCUMBENT_RUNS }
    }
}

/// Iterated local search with first-improvement one-exchange moves.
pub fn ils(
    backend: &dyn BenchmarkBackend,
    budget: Budget,
    rng: &mut Rng,
    opts: &IlsOptions,
) -> Result<ConfiguratorRun, BackendError> {
    Ok(ils_traced(backend, budget, rng, opts)?.0)
}

/// [`ils`] that also returns every accepted local-search move.
pub fn ils_traced(
    backend: &dyn BenchmarkBackend,
    budget: Budget,
    rng: &mut Rng,
    opts: &IlsOptions,
) -> Result<(ConfiguratorRun, Vec<(Configuration, Configuration)>), BackendError> {
    let mut ctx = Context::new(backend, budget, "ils", 0);
    let mut racer = Racer::new(opts.slack, opts.max_runs);
    let neighbor_opts = NeighborOptions::default();
    let mut moves = Vec::new();
    let mut current = ctx.space().default_configuration();
    racer.ensure(&mut ctx, &current, 1, rng)?;
    let mut inc = current.clone();
    ctx.note(&inc, racer.mean(&inc));

    'search: while !ctx.exhausted() {
        loop {
            let mut neigh = ctx.space().neighbors(&current, rng, &neighbor_opts);
            neigh.shuffle(rng);
            let mut moved = false;
            for n in neigh {
                match racer.race(&mut ctx, &n, &current, rng)? {
                    Race::Won => {
                        moves.push((current.clone(), n.clone()));
                        current = n;
                        moved = true;
                        break;
                    }
                    Race::Lost => {}
                    Race::OutOfBudget => break 'search,
                }
            }
            if !moved {
                break;
            }
            if current != inc && racer.race(&mut ctx, &current, &inc, rng)? == Race::Won {
                inc = current.clone();
            }
            ctx.note(&inc, racer.mean(&inc));
        }
        // Local optimum: one more run for the incumbent, then restart or
        // perturb from the incumbent.
        let n_inc = racer.costs(&inc).len();
        racer.ensure(&mut ctx, &inc, n_inc + 1, rng)?;
        ctx.note(&inc, racer.mean(&inc));
        current = if rng.gen::<f64>() < opts.restart_prob {
            ctx.space().sample_uniform(rng)
        } else {
            ctx.space().perturb(&inc, opts.perturb_strength, rng)
        };
        if current != inc {
            match racer.race(&mut ctx, &current, &inc, rng)? {
                Race::Won => inc = current.clone(),
                Race::Lost => {}
                Race::OutOfBudget => break,
            }
            ctx.note(&inc, racer.mean(&inc));
        }
    }
    let est = racer.mean(&inc);
    Ok((ctx.finish(&inc, est), moves))
}

/// Model-based search: a small forest over per-configuration mean log cost
/// proposes challengers by expected improvement, interleaved with uniform
/// samples at rate `random_fraction`.
pub fn smac_lite(
    backend: &dyn BenchmarkBackend,
    budget: Budget,
    rng: &mut Rng,
    random_fraction: f64,
) -> Result<ConfiguratorRun, BackendError> {
    let mut ctx = Context::new(backend, budget, "smac_lite", 0);
    let mut racer = Racer::new(DEFAULT_SLACK, MAX_INCUMBENT_RUNS);
    let mut seen: BTreeMap<Vec<u8>, Configuration> = BTreeMap::new();
    let mut inc = ctx.space().default_configuration();
    seen.insert(inc.canonical_bytes(), inc.clone());
    racer.ensure(&mut ctx, &inc, 1, rng)?;
    ctx.note(&inc, racer.mean(&inc));
    while !ctx.exhausted() {
        let n_observed = racer.observations().filter(|(_, c)| !c.is_empty()).count();
        let challenger = if n_observed < 2 || rng.gen::<f64>() < random_fraction {
            ctx.space().sample_uniform(rng)
        } else {
            propose(&ctx, &racer, &seen, &inc, rng)
        };
        seen.entry(challenger.canonical_bytes()).or_insert_with(|| challenger.clone());
        let outcome = racer.race(&mut ctx, &challenger, &inc, rng)?;
        if outcome == Race::Won {
            inc = challenger;
        }
        ctx.note(&inc, racer.mean(&inc));
        if outcome == Race::OutOfBudget {
            break;
        }
    }
    let est = racer.mean(&inc);
    Ok(ctx.finish(&inc, est))
}

fn log_cost(c: f64, runtime: bool) -> f64 {
    if runtime { c.max(f64::MIN_POSITIVE).log10() } else { c }
}

fn propose(
    ctx: &Context<'_>,
    racer: &Racer,
    seen: &BTreeMap<Vec<u8>, Configuration>,
    inc: &Configuration,
    rng: &mut Rng,
) -> Configuration {
    let space = ctx.space();
    let runtime = ctx.capping();
    let encode = |c: &Configuration| space.encode::<f64>(&space.impute_inactive(c), &[], 0).expect("valid configuration");
    let mut m = TrainingMatrix::new(space.column_kinds(0));
    for (key, costs) in racer.observations() {
        if costs.is_empty() {
            continue;
        }
        let y = log_cost(costs[0], runtime);
        m.push(&encode(&seen[key]), y, false, f64::INFINITY);
    }
    // Configurations capped on their first run enter at the PAR10 penalty of
    // their cap.
    for (key, bound) in racer.lower_bounds() {
        m.push(&encode(&seen[key]), log_cost(bound * PAR_FACTOR, runtime), false, f64::INFINITY);
    }
    let cfg = ForestConfig { num_trees: SMAC_TREES, ..ForestConfig::default() };
    let Ok(forest) = QuantileForest::fit(&m, &cfg, rng) else {
        return space.sample_uniform(rng);
    };
    let Ok(f_min) = forest.predict_mean(&encode(inc)) else {
        return space.sample_uniform(rng);
    };
    let mut candidates = space.neighbors(inc, rng, &NeighborOptions::default());
    candidates.extend((0..SMAC_RANDOM_CANDIDATES).map(|_| space.sample_uniform(rng)));
    let mut best: Option<(f64, Configuration)> = None;
    for c in candidates {
        let (mu, var) = forest.predict_mean_var(&encode(&c)).expect("matching width");
        let ei = expected_improvement(mu, var.max(0.0).sqrt(), f_min);
        if best.as_ref().is_none_or(|(b, _)| ei > *b) {
            best = Some((ei, c));
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| space.sample_uniform(rng))
}

/// A configurator with its settings, runnable under a uniform signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Configurator {
    RandomSearch { runs_per_config: usize },
    Roar { slack: f64 },
    Ils(IlsOptions),
    SmacLite { random_fraction: f64 },
}

impl Configurator {
    pub fn random_search() -> Self {
        Configurator::RandomSearch { runs_per_config: 1 }
    }

    pub fn roar() -> Self {
        Configurator::Roar { slack: DEFAULT_SLACK }
    }

    pub fn ils() -> Self {
        Configurator::Ils(IlsOptions::default())
    }

    pub fn smac_lite() -> Self {
        Configurator::SmacLite { random_fraction: DEFAULT_RANDOM_FRACTION }
    }

    /// Looks up a configurator with default settings by name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "random_search" | "random" => Some(Self::random_search()),
            "roar" => Some(Self::roar()),
            "ils" => Some(Self::ils()),
            "smac_lite" | "smac" => Some(Self::smac_lite()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Configurator::RandomSearch { .. } => "random_search",
            Configurator::Roar { .. } => "roar",
            Configurator::Ils(_) => "ils",
            Configurator::SmacLite { .. } => "smac_lite",
        }
    }

    /// Runs once and labels the result with `repetition`.
    pub fn run(
        &self,
        backend: &dyn BenchmarkBackend,
        budget: Budget,
        repetition: u32,
        rng: &mut Rng,
    ) -> Result<ConfiguratorRun, BackendError> {
        let run = match self {
            Configurator::RandomSearch { runs_per_config } => random_search(backend, budget, *runs_per_config, rng)?,
            Configurator::Roar { slack } => roar(backend, budget, rng, *slack)?,
            Configurator::Ils(opts) => ils(backend, budget, rng, opts)?,
            Configurator::SmacLite { random_fraction } => smac_lite(backend, budget, rng, *random_fraction)?,
        };
        Ok(run.with_repetition(repetition))
    }
}
