//! Surrogate benchmarks for algorithm configuration.
//!
//! Runs gathered by configurators are turned into a quantile regression
//! forest over (configuration, instance features). The resulting
//! [`SurrogateBenchmark`] answers target-algorithm runs by sampling from the
//! predicted runtime distribution, and can stand in for the real target in any
//! configurator through [`BenchmarkBackend`].
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod censor_impute;
pub mod config_space;
pub mod configurators;
pub mod eval_harness;
pub mod qrf;
pub mod rng;
pub mod run_data;
pub mod scalar;
pub mod stats;
pub mod surrogate;

pub type Forest = qrf::QuantileForest<f64>;
pub type ForestF32 = qrf::QuantileForest<f32>;
pub type Matrix = run_data::TrainingMatrix<f64>;
pub type MatrixF32 = run_data::TrainingMatrix<f32>;
pub type ImputationReport = censor_impute::ImputationReport<f64>;

pub use config_space::{parse_space, Configuration, ConfigurationSpace, Value};
pub use configurators::{BenchmarkBackend, Budget, Configurator, ConfiguratorRun, SyntheticBackend, SyntheticSpec};
pub use eval_harness::{CompareOptions, FidelityReport, QualityReport, SplitPlan};
pub use qrf::ForestConfig;
pub use rng::{rng_from_seed, Rng};
pub use run_data::{Dataset, InstanceSet, Objective, RunRecord, RunStatus, Setting};
pub use surrogate::{BuildOptions, RunResult, SurrogateBenchmark};
