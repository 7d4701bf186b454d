//! Quantile regression forest.
//!
//! Trees are grown as in a regular regression forest, but every leaf keeps
//! the responses routed to it. A query pools the leaves it reaches, weighting
//! each label by `1 / (num_trees * leaf_size)`, and reads quantiles off the
//! resulting weighted empirical distribution.

mod tree;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::ColumnKind;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::run_data::TrainingMatrix;
use crate::scalar::Scalar;

pub use tree::{LeafView, Node, RegressionTree, SplitRule};

/// Slack for comparing accumulated weights against the requested quantile.
const CDF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training matrix needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("degenerate forest configuration: {0}")]
    Config(String),
    #[error("non-finite training response at row {0}")]
    NonFinite(usize),
    #[error("quantile {0} outside [0, 1]")]
    Quantile(f64),
    #[error("input has {got} columns, forest expects {expected}")]
    Width { expected: usize, got: usize },
}

/// Forest hyperparameters. Defaults are the tuned setting for algorithm
/// performance data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub bootstrapping: bool,
    pub frac_points: f64,
    pub max_nodes: usize,
    pub max_depth: usize,
    pub min_samples_in_leaf: usize,
    pub min_samples_to_split: usize,
    pub frac_feats: f64,
    pub num_trees: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            bootstrapping: false,
            frac_points: 0.8,
            max_nodes: 50_000,
            max_depth: 26,
            min_samples_in_leaf: 1,
            min_samples_to_split: 5,
            frac_feats: 0.28,
            num_trees: 48,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: &str| Err(ForestError::Config(m.to_string()));
        if !(self.frac_points > 0.0 && self.frac_points <= 1.0) {
            return bad("frac_points must be in (0, 1]");
        }
        if !(self.frac_feats > 0.0 && self.frac_feats <= 1.0) {
            return bad("frac_feats must be in (0, 1]");
        }
        if self.num_trees == 0 {
            return bad("num_trees must be positive");
        }
        if self.max_nodes == 0 {
            return bad("max_nodes must be positive");
        }
        if self.min_samples_in_leaf == 0 {
            return bad("min_samples_in_leaf must be positive");
        }
        if self.min_samples_to_split < 2 {
            return bad("min_samples_to_split must be at least 2");
        }
        Ok(())
    }

    /// One fully grown tree on all rows with every feature considered:
    /// reproduces distinct training inputs exactly.
    pub fn interpolating() -> Self {
        ForestConfig {
            bootstrapping: false,
            frac_points: 1.0,
            max_nodes: usize::MAX,
            max_depth: usize::MAX,
            min_samples_in_leaf: 1,
            min_samples_to_split: 2,
            frac_feats: 1.0,
            num_trees: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForest<T> {
    trees: Vec<RegressionTree<T>>,
    config: ForestConfig,
    columns: Vec<ColumnKind>,
    response_range: (T, T),
}

impl<T: Scalar> QuantileForest<T> {
    /// Fits a forest. A master seed is drawn from `rng`; tree `i` is grown
    /// from a seed derived from `(master, i)`, so the result does not depend
    /// on thread scheduling.
    pub fn fit(m: &TrainingMatrix<T>, cfg: &ForestConfig, rng: &mut Rng) -> Result<Self, ForestError> {
        Self::fit_seeded(m, cfg, rng.gen())
    }

    pub fn fit_seeded(m: &TrainingMatrix<T>, cfg: &ForestConfig, master: u64) -> Result<Self, ForestError> {
        Self::fit_parts(&m.x, m.n_cols, &m.columns, &m.y, cfg, master)
    }

    /// Fits from a row-major input slice.
    pub fn fit_parts(
        x: &[T],
        n_cols: usize,
        columns: &[ColumnKind],
        y: &[T],
        cfg: &ForestConfig,
        master: u64,
    ) -> Result<Self, ForestError> {
        cfg.validate()?;
        let n = y.len();
        if n < 2 {
            return Err(ForestError::TooFewRows(n));
        }
        assert_eq!(x.len(), n * n_cols, "input shape");
        assert_eq!(columns.len(), n_cols, "column metadata");
        if cfg.frac_points * (n as f64) < 1.0 {
            return Err(ForestError::Config(format!(
                "frac_points * n = {} selects no rows",
                cfg.frac_points * n as f64
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite(i));
        }
        let lo = y.iter().copied().fold(T::infinity(), T::min);
        let hi = y.iter().copied().fold(T::neg_infinity(), T::max);

        let trees: Vec<RegressionTree<T>> = (0..cfg.num_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from_seed(derive_seed(master, &[t as u64]));
                RegressionTree::fit(x, n_cols, columns, y, cfg, &mut rng)
            })
            .collect();

        Ok(QuantileForest { trees, config: *cfg, columns: columns.to_vec(), response_range: (lo, hi) })
    }

    pub fn trees(&self) -> &[RegressionTree<T>] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn columns(&self) -> &[ColumnKind] {
        &self.columns
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Smallest and largest training response.
    pub fn response_range(&self) -> (T, T) {
        self.response_range
    }

    fn check_width(&self, x: &[T]) -> Result<(), ForestError> {
        if x.len() != self.columns.len() {
            return Err(ForestError::Width { expected: self.columns.len(), got: x.len() });
        }
        Ok(())
    }

    /// Pooled leaf labels for `x` as `(label, cumulative weight)`, sorted by
    /// label. The last cumulative weight is 1 up to rounding.
    pub fn pooled_cdf(&self, x: &[T]) -> Result<Vec<(T, f64)>, ForestError> {
        self.check_width(x)?;
        let n_trees = self.trees.len() as f64;
        let mut pooled: Vec<(T, f64)> = Vec::new();
        for tree in &self.trees {
            let leaf = tree.leaf(x);
            let w = 1.0 / (n_trees * leaf.labels.len() as f64);
            pooled.extend(leaf.labels.iter().map(|&v| (v, w)));
        }
        pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite labels"));
        let mut acc = 0.0;
        for p in pooled.iter_mut() {
            acc += p.1;
            p.1 = acc;
        }
        Ok(pooled)
    }

    /// `inf { y : F(y | x) >= alpha }` under the pooled leaf distribution.
    pub fn predict_quantile(&self, x: &[T], alpha: f64) -> Result<T, ForestError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ForestError::Quantile(alpha));
        }
        let cdf = self.pooled_cdf(x)?;
        Ok(cdf
            .iter()
            .find(|(_, c)| *c + CDF_TOLERANCE >= alpha)
            .or(cdf.last())
            .map(|(v, _)| *v)
            .expect("every leaf holds at least one label"))
    }

    /// Mean of per-tree leaf means, and variance by the law of total
    /// variance over trees: spread of the leaf means plus the average
    /// within-leaf variance.
    pub fn predict_mean_var(&self, x: &[T]) -> Result<(T, T), ForestError> {
        self.check_width(x)?;
        let n = T::from_usize_lossy(self.trees.len());
        let leaves: Vec<LeafView<'_, T>> = self.trees.iter().map(|t| t.leaf(x)).collect();
        let mean = leaves.iter().map(|l| l.mean).sum::<T>() / n;
        let between = leaves.iter().map(|l| (l.mean - mean) * (l.mean - mean)).sum::<T>() / n;
        let within = leaves.iter().map(|l| l.var).sum::<T>() / n;
        Ok((mean, (between + within).max(T::zero())))
    }

    pub fn predict_mean(&self, x: &[T]) -> Result<T, ForestError> {
        self.predict_mean_var(x).map(|(m, _)| m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn matrix(rows: &[Vec<f64>], y: &[f64], columns: Vec<ColumnKind>) -> TrainingMatrix<f64> {
        let mut m = TrainingMatrix::new(columns);
        for (r, &v) in rows.iter().zip(y) {
            m.push(r, v, false, f64::INFINITY);
        }
        m
    }

    fn random_matrix(n: usize, seed: u64) -> TrainingMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let cols = vec![ColumnKind::Numeric, ColumnKind::Categorical { n_values: 4 }, ColumnKind::Numeric];
        let mut m = TrainingMatrix::new(cols);
        for _ in 0..n {
            let a: f64 = rng.gen();
            let c = rng.gen_range(0..4) as f64;
            let b: f64 = rng.gen();
            let y = 3.0 * a + c * 0.5 + (b * 6.0).sin() + 0.1 * rng.gen::<f64>();
            m.push(&[a, c, b], y, false, f64::INFINITY);
        }
        m
    }

    #[test]
    fn defaults_match_tuned_setting() {
        let c = ForestConfig::default();
        assert!(!c.bootstrapping);
        assert_eq!(c.frac_points, 0.8);
        assert_eq!(c.max_nodes, 50_000);
        assert_eq!(c.max_depth, 26);
        assert_eq!(c.min_samples_in_leaf, 1);
        assert_eq!(c.min_samples_to_split, 5);
        assert_eq!(c.frac_feats, 0.28);
        assert_eq!(c.num_trees, 48);
        let f = QuantileForest::fit(&random_matrix(50, 1), &c, &mut rng_from_seed(0)).unwrap();
        assert_eq!(f.trees().len(), 48);
    }

    #[test]
    fn constant_response() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let m = matrix(&rows, &[7.0; 20], vec![ColumnKind::Numeric]);
        let f = QuantileForest::fit(&m, &ForestConfig::default(), &mut rng_from_seed(1)).unwrap();
        for q in [0.0, 0.3, 1.0] {
            assert_eq!(f.predict_quantile(&[3.3], q).unwrap(), 7.0);
        }
        assert_eq!(f.predict_mean_var(&[100.0]).unwrap(), (7.0, 0.0));
    }

    #[test]
    fn single_tree_interpolates() {
        let m = random_matrix(300, 2);
        let f = QuantileForest::fit(&m, &ForestConfig::interpolating(), &mut rng_from_seed(3)).unwrap();
        for i in 0..m.n_rows() {
            assert_eq!(f.predict_quantile(m.row(i), 0.5).unwrap(), m.y[i]);
            assert_eq!(f.predict_mean(m.row(i)).unwrap(), m.y[i]);
        }
    }

    #[test]
    fn tree_limits_respected() {
        let m = random_matrix(400, 5);
        let cfg = ForestConfig { max_depth: 4, max_nodes: 21, min_samples_in_leaf: 3, num_trees: 6, ..Default::default() };
        let f = QuantileForest::fit(&m, &cfg, &mut rng_from_seed(0)).unwrap();
        for t in f.trees() {
            assert!(t.depth() <= 4);
            assert!(t.nodes().len() <= 21);
            let total: usize = t.leaves().map(|l| l.labels.len()).sum();
            assert_eq!(total, 320);
            assert!(t.leaves().all(|l| l.labels.len() >= 3));
        }
    }

    #[test]
    fn pooled_quantile_inf_definition() {
        // Two trees, each a single leaf holding two labels: pooled {1,2,3,4}
        // with equal weights 1/4.
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![0.0], vec![0.0], vec![0.0]];
        let m = matrix(&rows, &[1.0, 2.0, 3.0, 4.0], vec![ColumnKind::Numeric]);
        let cfg = ForestConfig { num_trees: 1, frac_points: 1.0, ..Default::default() };
        let f = QuantileForest::fit(&m, &cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(f.predict_quantile(&[0.0], 0.5).unwrap(), 2.0);
        assert_eq!(f.predict_quantile(&[0.0], 0.0).unwrap(), 1.0);
        assert_eq!(f.predict_quantile(&[0.0], 1.0).unwrap(), 4.0);
        assert_eq!(f.predict_quantile(&[0.0], 0.51).unwrap(), 3.0);
        assert!(matches!(f.predict_quantile(&[0.0], 1.5), Err(ForestError::Quantile(_))));
        assert!(matches!(f.predict_quantile(&[0.0, 1.0], 0.5), Err(ForestError::Width { .. })));
        // Single tree, leaf {1,2,3,4}: population variance 1.25.
        assert_eq!(f.predict_mean_var(&[0.0]).unwrap(), (2.5, 1.25));
    }

    #[test]
    fn mean_var_decomposition() {
        // Single leaf {0, 2}: mean 1, within-leaf variance 1.
        let m = matrix(&[vec![0.0], vec![0.0]], &[0.0, 2.0], vec![ColumnKind::Numeric]);
        let cfg = ForestConfig { num_trees: 1, frac_points: 1.0, ..Default::default() };
        let f = QuantileForest::fit(&m, &cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(f.predict_mean_var(&[0.0]).unwrap(), (1.0, 1.0));

        // Two pure trees predicting 1 and 3: mean 2, between-tree variance 1.
        let one = matrix(&[vec![0.0], vec![0.0]], &[1.0, 1.0], vec![ColumnKind::Numeric]);
        let three = matrix(&[vec![0.0], vec![0.0]], &[3.0, 3.0], vec![ColumnKind::Numeric]);
        let cfg = ForestConfig { num_trees: 1, frac_points: 1.0, ..Default::default() };
        let mut f1 = QuantileForest::fit(&one, &cfg, &mut rng_from_seed(0)).unwrap();
        let f3 = QuantileForest::fit(&three, &cfg, &mut rng_from_seed(0)).unwrap();
        f1.trees.extend(f3.trees);
        assert_eq!(f1.predict_mean_var(&[0.0]).unwrap(), (2.0, 1.0));
    }

    #[test]
    fn categorical_split_groups_by_mean() {
        // Categories 0 and 2 are low, 1 and 3 high: one split separates them.
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 }).collect();
        let m = matrix(&rows, &y, vec![ColumnKind::Categorical { n_values: 4 }]);
        let cfg = ForestConfig { num_trees: 1, frac_points: 1.0, frac_feats: 1.0, ..Default::default() };
        let f = QuantileForest::fit(&m, &cfg, &mut rng_from_seed(0)).unwrap();
        let t = &f.trees()[0];
        assert_eq!(t.nodes().len(), 3);
        match &t.nodes()[0] {
            Node::Split { rule: SplitRule::In(set), .. } => assert_eq!(set, &vec![0, 2]),
            other => panic!("{other:?}"),
        }
        assert_eq!(f.predict_quantile(&[2.0], 0.5).unwrap(), 0.0);
        assert_eq!(f.predict_quantile(&[3.0], 0.5).unwrap(), 10.0);
    }

    #[test]
    fn fit_is_deterministic_and_thread_independent() {
        let m = random_matrix(200, 9);
        let cfg = ForestConfig { num_trees: 8, ..Default::default() };
        let a = QuantileForest::fit_seeded(&m, &cfg, 77).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| QuantileForest::fit_seeded(&m, &cfg, 77).unwrap());
        assert_eq!(a, b);
        let c = QuantileForest::fit_seeded(&m, &cfg, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_tree_median_is_leaf_median() {
        let m = random_matrix(300, 4);
        let cfg = ForestConfig { num_trees: 1, min_samples_in_leaf: 5, ..Default::default() };
        let f = QuantileForest::fit(&m, &cfg, &mut rng_from_seed(6)).unwrap();
        let mut rng = rng_from_seed(8);
        for _ in 0..50 {
            let x = [rng.gen::<f64>(), rng.gen_range(0..4) as f64, rng.gen::<f64>()];
            let labels = f.trees()[0].leaf(&x).labels;
            // Lower median: smallest label with at least half the mass.
            let k = labels.len().div_ceil(2) - 1;
            assert_eq!(f.predict_quantile(&x, 0.5).unwrap(), labels[k]);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let m = matrix(&[vec![0.0]], &[1.0], vec![ColumnKind::Numeric]);
        assert_eq!(
            QuantileForest::fit(&m, &ForestConfig::default(), &mut rng_from_seed(0)).unwrap_err(),
            ForestError::TooFewRows(1)
        );
        let m = random_matrix(10, 1);
        let cfg = ForestConfig { frac_points: 0.01, ..Default::default() };
        assert!(matches!(QuantileForest::fit(&m, &cfg, &mut rng_from_seed(0)), Err(ForestError::Config(_))));
        let cfg = ForestConfig { frac_feats: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_precision_forest() {
        let m64 = random_matrix(200, 3);
        let mut m = TrainingMatrix::<f32>::new(m64.columns.clone());
        for i in 0..m64.n_rows() {
            let row: Vec<f32> = m64.row(i).iter().map(|&v| v as f32).collect();
            m.push(&row, m64.y[i] as f32, false, f32::INFINITY);
        }
        let f = QuantileForest::<f32>::fit(&m, &ForestConfig::interpolating(), &mut rng_from_seed(1)).unwrap();
        for i in 0..m.n_rows() {
            assert_eq!(f.predict_quantile(m.row(i), 0.5).unwrap(), m.y[i]);
        }
    }
}
