//! Synthetic target algorithm with a known runtime distribution.
//!
//! Runtime is `exp(g(θ) + h(π) + σ·Z)` cut off at κ. `g` is a mixture of
//! quadratic basins over the numeric parameters plus categorical and
//! conditional offsets, `h` is a per-instance hardness offset and `Z` is a
//! standard normal draw fixed by (configuration, instance, seed).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{BackendError, BenchmarkBackend};
use crate::config_space::{parse_space, Configuration, ConfigurationSpace, Value};
use crate::rng::{derive_seed, hash_bytes, rng_from_seed, Rng};
use crate::run_data::{InstanceSet, Objective, RunStatus, Split, PAR_FACTOR, RUNTIME_FLOOR};
use crate::surrogate::RunResult;

const SPACE: &str = "\
algo categorical {local, global, hybrid} [local]
restarts categorical {off, on} [off]
heuristic categorical {h0, h1, h2, h3} [h0]
alpha real [0.0, 1.0] [0.5]
beta real [0.001, 10.0] [1.0] (log)
gamma real [-5.0, 5.0] [0.0]
depth integer [1, 64] [8] (log)
width real [0.0, 1.0] [0.5]
restart_interval integer [10, 1000] [100] (log)
tabu real [0.0, 1.0] [0.5]
restart_interval | restarts in {on}
tabu | algo in {local, hybrid}
";

const BASIN_PARAMS: [&str; 5] = ["alpha", "beta", "gamma", "depth", "width"];
const CURVATURE: f64 = 3.0;
const CALIBRATION_SAMPLES: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_instances: usize,
    /// Width of the range of instance hardness offsets (natural log).
    pub hardness_spread: f64,
    /// Standard deviation of the log-normal noise.
    pub noise_scale: f64,
    /// Expected fraction of timeouts over uniform configurations, instances
    /// and seeds.
    pub timeout_fraction: f64,
    pub cutoff: f64,
    /// Number of quadratic basins; 1 gives a unimodal landscape.
    pub basins: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_instances: 20,
            hardness_spread: 4.0,
            noise_scale: 0.3,
            timeout_fraction: 0.1,
            cutoff: 10.0,
            basins: 3,
        }
    }
}

#[derive(Debug, Clone)]
struct Basin {
    center: [f64; 5],
    weight: [f64; 5],
    offset: f64,
}

/// Ground-truth benchmark backend.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticSpec,
    space: ConfigurationSpace,
    instances: InstanceSet,
    hardness: Vec<f64>,
    basins: Vec<Basin>,
    algo_offset: [f64; 3],
    heuristic_offset: [f64; 4],
    restart_offset: f64,
    restart_center: f64,
    tabu_center: f64,
    base: f64,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticSpec) -> Self {
        assert!(spec.n_instances >= 1, "at least one instance");
        assert!(spec.basins >= 1, "at least one basin");
        assert!(spec.cutoff > 0.0 && spec.noise_scale >= 0.0);
        assert!((0.0..1.0).contains(&spec.timeout_fraction));
        let space = parse_space(SPACE).expect("built-in space parses");
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[0x5e17]));

        let mut hardness: Vec<f64> =
            (0..spec.n_instances).map(|_| spec.hardness_spread * (rng.gen::<f64>() - 0.5)).collect();
        hardness.sort_by(f64::total_cmp);
        let entries: Vec<(String, Split, Vec<f64>)> = hardness
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let jitter: f64 = StandardNormal.sample(&mut rng);
                let split = if i % 2 == 0 { Split::Train } else { Split::Test };
                (format!("inst{i:03}"), split, vec![h + 0.1 * jitter, rng.gen::<f64>()])
            })
            .collect();
        let instances = InstanceSet::new(2, entries).expect("generated instances are valid");

        let basins = (0..spec.basins)
            .map(|k| Basin {
                center: std::array::from_fn(|_| 0.1 + 0.8 * rng.gen::<f64>()),
                weight: std::array::from_fn(|_| 0.5 + rng.gen::<f64>()),
                offset: if k == 0 { 0.0 } else { 0.3 + 0.7 * rng.gen::<f64>() },
            })
            .collect();
        let algo_offset = std::array::from_fn(|_| rng.gen::<f64>());
        let heuristic_offset = std::array::from_fn(|_| 0.8 * rng.gen::<f64>());
        let restart_offset = rng.gen::<f64>() - 0.5;
        let restart_center = rng.gen::<f64>();
        let tabu_center = rng.gen::<f64>();

        let mut sb = SyntheticBackend {
            spec,
            space,
            instances,
            hardness,
            basins,
            algo_offset,
            heuristic_offset,
            restart_offset,
            restart_center,
            tabu_center,
            base: 0.0,
        };
        sb.base = sb.calibrate(&mut rng);
        sb
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Chooses the intercept so the expected timeout fraction over uniform
    /// draws matches the spec.
    fn calibrate(&self, rng: &mut Rng) -> f64 {
        let ln_cutoff = self.spec.cutoff.ln();
        let sigma = self.spec.noise_scale;
        let locs: Vec<f64> = (0..CALIBRATION_SAMPLES)
            .map(|_| {
                let c = self.space.sample_uniform(rng);
                let i = rng.gen_range(0..self.hardness.len());
                self.landscape(&c) + self.hardness[i]
            })
            .collect();
        let fraction = |base: f64| -> f64 {
            let total: f64 = locs
                .iter()
                .map(|m| {
                    let gap = ln_cutoff - base - m;
                    if sigma == 0.0 {
                        if gap <= 0.0 { 1.0 } else { 0.0 }
                    } else {
                        1.0 - std_normal_cdf(gap / sigma)
                    }
                })
                .sum();
            total / locs.len() as f64
        };
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fraction(mid) < self.spec.timeout_fraction {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn unit(&self, config: &Configuration, name: &str) -> f64 {
        let p = self.space.param(name).expect("known parameter");
        config.get(name).and_then(|v| p.normalize(v)).unwrap_or(0.5)
    }

    /// Configuration part of the log runtime, without intercept.
    fn landscape(&self, config: &Configuration) -> f64 {
        let u: [f64; 5] = std::array::from_fn(|j| self.unit(config, BASIN_PARAMS[j]));
        let basin = self
            .basins
            .iter()
            .map(|b| {
                let q: f64 = (0..5).map(|j| b.weight[j] * (u[j] - b.center[j]).powi(2)).sum();
                CURVATURE * q + b.offset
            })
            .fold(f64::INFINITY, f64::min);
        let cat = |name: &str| match config.get(name) {
            Some(Value::Cat(v)) => v.clone(),
            _ => String::new(),
        };
        let algo = match cat("algo").as_str() {
            "global" => 1,
            "hybrid" => 2,
            _ => 0,
        };
        let heuristic = cat("heuristic").strip_prefix('h').and_then(|d| d.parse::<usize>().ok()).unwrap_or(0);
        let mut g = basin + self.algo_offset[algo] + self.heuristic_offset[heuristic.min(3)];
        if cat("restarts") == "on" {
            g += self.restart_offset + 2.0 * (self.unit(config, "restart_interval") - self.restart_center).powi(2);
        }
        if algo != 1 {
            g += 1.5 * (self.unit(config, "tabu") - self.tabu_center).powi(2);
        }
        g
    }

    /// Location of the log-normal runtime distribution: the natural log of
    /// the median runtime before the cutoff applies.
    pub fn log_median(&self, config: &Configuration, instance: &str) -> Option<f64> {
        let i = self.instances.position(instance)?;
        Some(self.base + self.landscape(config) + self.hardness[i])
    }

    /// Expected PAR10 cost.
    pub fn expected_cost(&self, config: &Configuration, instance: &str) -> Option<f64> {
        let m = self.log_median(config, instance)?;
        let kappa = self.spec.cutoff;
        let s = self.spec.noise_scale;
        if s == 0.0 {
            let rt = m.exp().max(RUNTIME_FLOOR);
            return Some(if rt >= kappa { PAR_FACTOR * kappa } else { rt });
        }
        let a = (kappa.ln() - m) / s;
        Some((m + 0.5 * s * s).exp() * std_normal_cdf(a - s) + PAR_FACTOR * kappa * (1.0 - std_normal_cdf(a)))
    }

    /// Expected PAR10 cost averaged over the instances of a split.
    pub fn mean_expected_cost(&self, config: &Configuration, split: Split) -> f64 {
        let ids = self.instances.ids_in(split);
        ids.iter().map(|i| self.expected_cost(config, i).expect("known instance")).sum::<f64>() / ids.len() as f64
    }

    pub fn hardness(&self, instance: &str) -> Option<f64> {
        self.instances.position(instance).map(|i| self.hardness[i])
    }

    fn noise(&self, config: &Configuration, instance: &str, seed: u64) -> f64 {
        if self.spec.noise_scale == 0.0 {
            return 0.0;
        }
        let s = derive_seed(
            self.spec.seed,
            &[hash_bytes(&config.canonical_bytes()), hash_bytes(instance.as_bytes()), seed],
        );
        let z: f64 = StandardNormal.sample(&mut rng_from_seed(s));
        self.spec.noise_scale * z
    }
}

pub(super) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

impl BenchmarkBackend for SyntheticBackend {
    fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    fn instances(&self) -> &InstanceSet {
        &self.instances
    }

    fn cutoff(&self) -> f64 {
        self.spec.cutoff
    }

    fn objective(&self) -> Objective {
        Objective::Runtime
    }

    fn run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, BackendError> {
        let m = self
            .log_median(config, instance)
            .ok_or_else(|| BackendError::Remote(format!("unknown instance `{instance}`")))?;
        let runtime = (m + self.noise(config, instance, seed)).exp().max(RUNTIME_FLOOR);
        let kappa = self.spec.cutoff;
        Ok(if runtime >= kappa {
            RunResult { status: RunStatus::Timeout, cost: PAR_FACTOR * kappa, raw_prediction: kappa.log10(), quantile_used: None }
        } else {
            RunResult { status: RunStatus::Success, cost: runtime, raw_prediction: runtime.log10(), quantile_used: None }
        })
    }
}

type CostFn = dyn Fn(&Configuration, &str, u64) -> f64 + Send + Sync;

/// Backend around an arbitrary cost function. Runtime costs at or above the
/// cutoff become timeouts.
pub struct FunctionBackend {
    space: ConfigurationSpace,
    instances: InstanceSet,
    cutoff: f64,
    objective: Objective,
    f: Box<CostFn>,
}

impl FunctionBackend {
    pub fn new(
        space: ConfigurationSpace,
        instances: InstanceSet,
        cutoff: f64,
        f: impl Fn(&Configuration, &str, u64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FunctionBackend { space, instances, cutoff, objective: Objective::Runtime, f: Box::new(f) }
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }
}

impl std::fmt::Debug for FunctionBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionBackend").field("cutoff", &self.cutoff).finish_non_exhaustive()
    }
}

impl BenchmarkBackend for FunctionBackend {
    fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    fn instances(&self) -> &InstanceSet {
        &self.instances
    }

    fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn objective(&self) -> Objective {
        self.objective
    }

    fn run(&self, config: &Configuration, instance: &str, seed: u64) -> Result<RunResult, BackendError> {
        let c = (self.f)(config, instance, seed);
        if !self.objective.is_runtime() {
            return Ok(RunResult { status: RunStatus::Success, cost: c, raw_prediction: c, quantile_used: None });
        }
        let c = c.max(RUNTIME_FLOOR);
        Ok(if c >= self.cutoff {
            RunResult {
                status: RunStatus::Timeout,
                cost: PAR_FACTOR * self.cutoff,
                raw_prediction: self.cutoff.log10(),
                quantile_used: None,
            }
        } else {
            RunResult { status: RunStatus::Success, cost: c, raw_prediction: c.log10(), quantile_used: None }
        })
    }
}
