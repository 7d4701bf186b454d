//! Nonparametric statistics and the surrogate fidelity metric.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Largest sample size for which the rank-sum test enumerates the exact null
/// distribution.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty sample")]
    Empty,
    #[error("need at least {0} observations")]
    TooShort(usize),
    #[error("constant input, correlation undefined")]
    Constant,
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("outcome index sets differ: {0}")]
    IndexMismatch(String),
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, StatsError> {
    if y_true.len() != y_pred.len() {
        return Err(StatsError::Length(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(StatsError::Empty);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of the tie groups in `v`.
fn tie_sizes(v: &[f64]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i + 1;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Length(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooShort(2));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Number of `k`-subsets of `{1..=n}` by rank sum.
fn subset_sum_counts(n: usize, k: usize) -> Vec<f64> {
    let max_sum = n * (n + 1) / 2;
    // counts[j][s]: j-subsets of the ranks seen so far with sum s.
    let mut counts = vec![vec![0.0f64; max_sum + 1]; k + 1];
    counts[0][0] = 1.0;
    for r in 1..=n {
        for j in (1..=k.min(r)).rev() {
            for s in (r..=max_sum).rev() {
                let add = counts[j - 1][s - r];
                if add != 0.0 {
                    counts[j][s] += add;
                }
            }
        }
    }
    counts.swap_remove(k)
}

fn rank_sum(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    (ranks[..a.len()].iter().sum(), pooled)
}

/// Two-sided p-value from the exact permutation distribution of the rank
/// sum of `a`. Assumes no ties.
pub fn wilcoxon_rank_sum_exact(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let (w, _) = rank_sum(a, b);
    let w = w.round() as usize;
    let counts = subset_sum_counts(a.len() + b.len(), a.len());
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=w].iter().sum();
    let upper: f64 = counts[w..].iter().sum();
    Ok((2.0 * lower.min(upper) / total).min(1.0))
}

/// Two-sided p-value from the normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_rank_sum_normal(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let (w, pooled) = rank_sum(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let big_n = n + m;
    let ties: f64 = tie_sizes(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * m / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let expected = n * (big_n + 1.0) / 2.0;
    let z = ((w - expected).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Two-sided Wilcoxon rank-sum test: exact for small tie-free samples,
/// normal approximation otherwise.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let tied = tie_sizes(&pooled).iter().any(|&t| t > 1);
    if a.len().max(b.len()) <= EXACT_LIMIT && !tied {
        wilcoxon_rank_sum_exact(a, b)
    } else {
        wilcoxon_rank_sum_normal(a, b)
    }
}

/// Kruskal-Wallis H with tie correction and its chi-squared p-value.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<(f64, f64), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let ranks = average_ranks(&pooled);
    let n = pooled.len() as f64;
    let mut acc = 0.0;
    let mut at = 0;
    for g in groups {
        let r: f64 = ranks[at..at + g.len()].iter().sum();
        acc += r * r / g.len() as f64;
        at += g.len();
    }
    let h_raw = 12.0 / (n * (n + 1.0)) * acc - 3.0 * (n + 1.0);
    let ties: f64 = tie_sizes(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok((0.0, 1.0));
    }
    // Rounding can leave a tiny negative value when rank sums balance.
    let h = (h_raw / correction).max(0.0);
    let df = (groups.len() - 1) as f64;
    let p = ChiSquared::new(df).expect("positive degrees of freedom").sf(h);
    Ok((h, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseOutcome {
    Better,
    Equal,
    Worse,
}

impl PairwiseOutcome {
    pub fn inverse(self) -> Self {
        match self {
            PairwiseOutcome::Better => PairwiseOutcome::Worse,
            PairwiseOutcome::Equal => PairwiseOutcome::Equal,
            PairwiseOutcome::Worse => PairwiseOutcome::Better,
        }
    }

    /// Disagreement penalty between an original and a surrogate outcome.
    pub fn penalty(self, other: Self) -> f64 {
        use PairwiseOutcome::*;
        match (self, other) {
            (a, b) if a == b => 0.0,
            (Equal, _) | (_, Equal) => 0.5,
            _ => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairwiseOutcome::Better => "better",
            PairwiseOutcome::Equal => "equal",
            PairwiseOutcome::Worse => "worse",
        }
    }
}

/// Number of unordered pairs among `k` groups.
pub fn n_pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Outcome of `a` against `b` (lower is better), gated by a Kruskal-Wallis
/// test over all groups and Bonferroni-corrected over all unordered pairs.
pub fn pairwise_outcome(
    a: &[f64],
    b: &[f64],
    all_groups: &[&[f64]],
    alpha: f64,
) -> Result<PairwiseOutcome, StatsError> {
    let (_, p) = kruskal_wallis(all_groups)?;
    pairwise_given_gate(a, b, p < alpha, n_pairs(all_groups.len()), alpha)
}

/// Pairwise outcome with the omnibus gate already evaluated.
pub fn pairwise_given_gate(
    a: &[f64],
    b: &[f64],
    gate_passed: bool,
    pairs: usize,
    alpha: f64,
) -> Result<PairwiseOutcome, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    if !gate_passed {
        return Ok(PairwiseOutcome::Equal);
    }
    let p = wilcoxon_rank_sum(a, b)?;
    if p >= alpha / pairs.max(1) as f64 {
        return Ok(PairwiseOutcome::Equal);
    }
    let (ma, mb) = (median(a), median(b));
    Ok(if ma < mb {
        PairwiseOutcome::Better
    } else if ma > mb {
        PairwiseOutcome::Worse
    } else {
        PairwiseOutcome::Equal
    })
}

/// Outcomes for every ordered pair `(i, j)`, `i < j`, listed row-major.
pub fn all_pairwise(groups: &[&[f64]], alpha: f64) -> Result<Vec<PairwiseOutcome>, StatsError> {
    let (_, p) = kruskal_wallis(groups)?;
    let pairs = n_pairs(groups.len());
    let mut out = Vec::with_capacity(pairs);
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            out.push(pairwise_given_gate(groups[i], groups[j], p < alpha, pairs, alpha)?);
        }
    }
    Ok(out)
}

/// Mean disagreement over pairs, then over budgets. Both inputs are indexed
/// `[budget][pair]`.
pub fn surrogate_error(
    original: &[Vec<PairwiseOutcome>],
    surrogate: &[Vec<PairwiseOutcome>],
) -> Result<f64, StatsError> {
    if original.len() != surrogate.len() {
        return Err(StatsError::IndexMismatch(format!(
            "{} budgets vs {}",
            original.len(),
            surrogate.len()
        )));
    }
    if original.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut total = 0.0;
    for (b, (o, s)) in original.iter().zip(surrogate).enumerate() {
        if o.len() != s.len() || o.is_empty() {
            return Err(StatsError::IndexMismatch(format!("budget {b}: {} pairs vs {}", o.len(), s.len())));
        }
        total += o.iter().zip(s).map(|(x, y)| x.penalty(*y)).sum::<f64>() / o.len() as f64;
    }
    Ok(total / original.len() as f64)
}
