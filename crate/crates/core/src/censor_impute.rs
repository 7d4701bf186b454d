//! Iterative imputation of right-censored responses.
//!
//! A forest is fit on the uncensored rows. Each censored row is then replaced
//! by the mean of the forest's predictive normal truncated at the row's lower
//! bound, and the forest is refit on the union until the imputations settle.

use rayon::prelude::*;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::qrf::{ForestConfig, ForestError, QuantileForest};
use crate::rng::Rng;
use crate::run_data::TrainingMatrix;
use crate::scalar::Scalar;

pub const CONVERGENCE_EPS: f64 = 1e-3;
pub const MAX_ITERATIONS: usize = 10;

/// Standardized bound beyond which the Mills ratio comes from its continued
/// fraction instead of `erfc`.
const MILLS_SWITCH: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error("standard deviation must be positive, got {0}")]
    Sigma(f64),
    #[error("no uncensored rows to fit on")]
    NoUncensored,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationReport<T> {
    /// One value per censored row, in input order.
    pub imputed: Vec<T>,
    pub iterations: usize,
    pub max_change: T,
}

/// `phi(a) / (1 - Phi(a))` for the standard normal.
pub fn inverse_mills(a: f64) -> f64 {
    if a < MILLS_SWITCH {
        let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let tail = 0.5 * erfc(a / std::f64::consts::SQRT_2);
        pdf / tail
    } else {
        // Laplace continued fraction: a + 1/(a + 2/(a + 3/(a + ...))).
        let mut acc = a;
        for k in (1..=60).rev() {
            acc = a + k as f64 / acc;
        }
        acc
    }
}

/// `E[Z | Z >= lb]` for `Z ~ N(mu, sigma^2)`.
pub fn trunc_normal_mean(mu: f64, sigma: f64, lb: f64) -> Result<f64, ImputeError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(ImputeError::Sigma(sigma));
    }
    let a = (lb - mu) / sigma;
    Ok(mu + sigma * inverse_mills(a))
}

/// Imputes `censored.y` (strict lower bounds) given fully observed rows.
/// Imputations stay within `[y_c, ceiling]` row by row.
pub fn impute_censored<T: Scalar>(
    uncensored: &TrainingMatrix<T>,
    censored: &TrainingMatrix<T>,
    cfg: &ForestConfig,
    rng: &mut Rng,
) -> Result<ImputationReport<T>, ImputeError> {
    if censored.n_rows() == 0 {
        return Ok(ImputationReport { imputed: Vec::new(), iterations: 0, max_change: T::zero() });
    }
    if uncensored.n_rows() == 0 {
        return Err(ImputeError::NoUncensored);
    }
    if uncensored.n_cols != censored.n_cols || uncensored.columns != censored.columns {
        return Err(ImputeError::Shape(format!(
            "uncensored rows have {} columns, censored rows {}",
            uncensored.n_cols, censored.n_cols
        )));
    }
    if censored.ceiling.len() != censored.n_rows() {
        return Err(ImputeError::Shape("censored ceilings misaligned".into()));
    }

    let mut forest = QuantileForest::fit(uncensored, cfg, rng)?;
    let mut current: Vec<T> = censored.y.clone();
    let mut union = uncensored.clone();
    for i in 0..censored.n_rows() {
        union.push(censored.row(i), censored.y[i], false, censored.ceiling[i]);
    }
    let offset = uncensored.n_rows();

    let mut iterations = 0;
    let mut max_change;
    loop {
        let next: Vec<T> = (0..censored.n_rows())
            .into_par_iter()
            .map(|i| impute_one(&forest, censored.row(i), censored.y[i], censored.ceiling[i]))
            .collect::<Result<_, _>>()?;
        max_change = next
            .iter()
            .zip(&current)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max);
        current = next;
        iterations += 1;
        if max_change.to_f64_lossy() < CONVERGENCE_EPS || iterations >= MAX_ITERATIONS {
            break;
        }
        union.y[offset..].copy_from_slice(&current);
        forest = QuantileForest::fit(&union, cfg, rng)?;
    }
    Ok(ImputationReport { imputed: current, iterations, max_change })
}

fn impute_one<T: Scalar>(forest: &QuantileForest<T>, x: &[T], lower: T, ceiling: T) -> Result<T, ImputeError> {
    let (mu, var) = forest.predict_mean_var(x)?;
    let (mu, var, lb) = (mu.to_f64_lossy(), var.to_f64_lossy(), lower.to_f64_lossy());
    let raw = if var > 0.0 { trunc_normal_mean(mu, var.sqrt(), lb)? } else { mu.max(lb) };
    let v = T::from_f64_lossy(raw).min(ceiling);
    Ok(if v > lower { v } else { lower })
}

/// Splits `m` by its censoring mask, imputes, and returns a matrix with the
/// censored responses replaced and their flags cleared.
pub fn impute_matrix<T: Scalar>(
    m: &TrainingMatrix<T>,
    cfg: &ForestConfig,
    rng: &mut Rng,
) -> Result<(TrainingMatrix<T>, ImputationReport<T>), ImputeError> {
    let unc = m.select(|i| !m.censored[i]);
    let cen = m.select(|i| m.censored[i]);
    let report = impute_censored(&unc, &cen, cfg, rng)?;
    let mut out = m.clone();
    let mut k = 0;
    for i in 0..out.n_rows() {
        if out.censored[i] {
            out.y[i] = report.imputed[k];
            out.censored[i] = false;
            k += 1;
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::ColumnKind;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    /// Truncated-normal mean by composite Simpson quadrature of the density.
    fn quadrature_mean(mu: f64, sigma: f64, lb: f64) -> f64 {
        let hi = lb.max(mu) + 40.0 * sigma;
        let n = 200_000;
        let h = (hi - lb) / n as f64;
        let pdf = |z: f64| (-0.5 * ((z - mu) / sigma).powi(2)).exp();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let z = lb + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            num += w * z * pdf(z);
            den += w * pdf(z);
        }
        num / den
    }

    #[test]
    fn truncated_mean_examples() {
        assert_abs_diff_eq!(trunc_normal_mean(0.0, 1.0, 0.0).unwrap(), quadrature_mean(0.0, 1.0, 0.0), epsilon = 1e-8);
        assert_abs_diff_eq!(trunc_normal_mean(0.0, 1.0, 0.0).unwrap(), 0.79788, epsilon = 1e-5);
        assert_abs_diff_eq!(trunc_normal_mean(0.0, 1.0, 3.0).unwrap(), quadrature_mean(0.0, 1.0, 3.0), epsilon = 1e-8);
        assert_abs_diff_eq!(trunc_normal_mean(0.0, 1.0, 3.0).unwrap(), 3.28310, epsilon = 1e-5);
        let (mu, s) = (2.5, 0.7);
        assert_abs_diff_eq!(trunc_normal_mean(mu, s, mu - 10.0 * s).unwrap(), mu, epsilon = 1e-6 * s);
        assert_eq!(trunc_normal_mean(0.0, 0.0, 1.0), Err(ImputeError::Sigma(0.0)));
        assert!(trunc_normal_mean(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn mills_ratio_is_continuous_across_switch() {
        let below = inverse_mills(MILLS_SWITCH - 1e-9);
        let above = inverse_mills(MILLS_SWITCH);
        assert!((below - above).abs() < 1e-7, "{below} vs {above}");
        for a in [8.0f64, 12.0, 30.0, 100.0] {
            // Asymptotic series a + 1/a - 2/a^3 + 10/a^5.
            let series = a + 1.0 / a - 2.0 / a.powi(3) + 10.0 / a.powi(5);
            assert!((inverse_mills(a) - series).abs() < 80.0 / a.powi(7));
        }
        assert!(inverse_mills(1e6).is_finite());
    }

    #[test]
    fn truncated_mean_matches_quadrature_grid() {
        for &lb in &[-3.0, -1.0, 0.5, 2.0, 5.0, 7.5] {
            let got = trunc_normal_mean(0.3, 1.4, lb).unwrap();
            assert_abs_diff_eq!(got, quadrature_mean(0.3, 1.4, lb), epsilon = 1e-7);
        }
    }

    fn synthetic(seed: u64, n: usize) -> (TrainingMatrix<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::new(0.0, 0.25).unwrap();
        let mut m = TrainingMatrix::new(vec![ColumnKind::Numeric, ColumnKind::Numeric]);
        let mut truth = Vec::new();
        for _ in 0..n {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let y = 0.5 + 2.0 * x[0] + 0.5 * (x[1] * 6.0).sin() + noise.sample(&mut rng);
            truth.push(y);
            if rng.gen_bool(0.3) {
                let bound = y - rng.gen_range(0.0..1.5);
                m.push(&x, bound, true, 6.0);
            } else {
                m.push(&x, y, false, 6.0);
            }
        }
        (m, truth)
    }

    #[test]
    fn no_censored_rows() {
        let (m, _) = synthetic(1, 50);
        let unc = m.select(|i| !m.censored[i]);
        let cen = m.select(|_| false);
        let rep = impute_censored(&unc, &cen, &ForestConfig::default(), &mut rng_from_seed(0)).unwrap();
        assert!(rep.imputed.is_empty());
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn no_uncensored_rows() {
        let (m, _) = synthetic(1, 50);
        let unc = m.select(|_| false);
        assert_eq!(
            impute_censored(&unc, &m, &ForestConfig::default(), &mut rng_from_seed(0)),
            Err(ImputeError::NoUncensored)
        );
    }

    #[test]
    fn imputation_beats_lower_bounds() {
        let mut wins = 0;
        for rep in 0..20u64 {
            let (m, truth) = synthetic(100 + rep, 300);
            let (out, report) = impute_matrix(&m, &ForestConfig::default(), &mut rng_from_seed(rep)).unwrap();
            assert!(report.iterations <= MAX_ITERATIONS);
            let (mut err_imp, mut err_bound) = (0.0, 0.0);
            for i in 0..m.n_rows() {
                if m.censored[i] {
                    err_imp += (out.y[i] - truth[i]).abs();
                    err_bound += (m.y[i] - truth[i]).abs();
                }
            }
            if err_imp < err_bound {
                wins += 1;
            }
        }
        assert!(wins >= 16, "imputation won {wins}/20");
    }

    #[test]
    fn deterministic_given_seed() {
        let (m, _) = synthetic(7, 120);
        let a = impute_matrix(&m, &ForestConfig::default(), &mut rng_from_seed(3)).unwrap();
        let b = impute_matrix(&m, &ForestConfig::default(), &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ceiling_caps_imputation() {
        // Fully observed rows sit far above a low ceiling; censored rows must
        // be pinned to the ceiling, never above it.
        let mut unc = TrainingMatrix::new(vec![ColumnKind::Numeric]);
        for i in 0..20 {
            unc.push(&[i as f64], 5.0 + (i % 3) as f64, false, 3.0);
        }
        let mut cen = TrainingMatrix::new(vec![ColumnKind::Numeric]);
        cen.push(&[3.0], 2.0, true, 3.0);
        cen.push(&[7.0], 1.0, true, 3.0);
        let rep = impute_censored(&unc, &cen, &ForestConfig::default(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(rep.imputed, vec![3.0, 3.0]);
    }

    #[test]
    fn zero_variance_uses_point_mass() {
        let mut unc = TrainingMatrix::new(vec![ColumnKind::Numeric]);
        for i in 0..10 {
            unc.push(&[i as f64], 2.0, false, 9.0);
        }
        let mut below = TrainingMatrix::new(vec![ColumnKind::Numeric]);
        below.push(&[1.0], 1.0, true, 9.0);
        let rep = impute_censored(&unc, &below, &ForestConfig::default(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(rep.imputed, vec![2.0]);
        let mut above = TrainingMatrix::new(vec![ColumnKind::Numeric]);
        above.push(&[2.0], 2.5, true, 9.0);
        let rep = impute_censored(&unc, &above, &ForestConfig::default(), &mut rng_from_seed(0)).unwrap();
        assert!(rep.imputed[0] >= 2.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn imputations_respect_bounds(seed in 0u64..1000, n in 20usize..80) {
            let (m, _) = synthetic(seed, n);
            prop_assume!(m.censored.iter().any(|&c| !c) && m.censored.iter().filter(|&&c| !c).count() >= 2);
            let cfg = ForestConfig { num_trees: 8, ..Default::default() };
            let unc = m.select(|i| !m.censored[i]);
            let cen = m.select(|i| m.censored[i]);
            let rep = impute_censored(&unc, &cen, &cfg, &mut rng_from_seed(seed)).unwrap();
            prop_assert!(rep.iterations <= MAX_ITERATIONS);
            for (i, v) in rep.imputed.iter().enumerate() {
                prop_assert!(*v >= cen.y[i]);
                prop_assert!(*v <= cen.ceiling[i]);
            }
        }

        #[test]
        fn truncated_mean_above_bound(mu in -20.0f64..20.0, sigma in 0.01f64..10.0, lb in -20.0f64..20.0) {
            let m = trunc_normal_mean(mu, sigma, lb).unwrap();
            prop_assert!(m >= lb);
            prop_assert!(m >= mu - 1e-9 * sigma.max(1.0));
        }
    }
}
