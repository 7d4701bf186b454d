//! Single regression tree with native categorical splits. Leaves keep every
//! training response routed to them, sorted, so the forest can answer
//! quantile queries.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ForestConfig;
use crate::config_space::ColumnKind;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule<T> {
    /// Numeric: go left when `x <= threshold`.
    LessEq(T),
    /// Categorical: go left when the category index is in the (sorted) set.
    In(Vec<u32>),
}

impl<T: Scalar> SplitRule<T> {
    #[inline]
    pub fn goes_left(&self, v: T) -> bool {
        match self {
            SplitRule::LessEq(t) => v <= *t,
            SplitRule::In(set) => v
                .to_u32()
                .is_some_and(|c| set.binary_search(&c).is_ok()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    Split { feature: u32, rule: SplitRule<T>, left: u32, right: u32 },
    /// `labels[start..start + len]` holds the leaf's sorted responses.
    Leaf { start: u32, len: u32, mean: T, var: T },
}

/// Leaf reached by a query.
#[derive(Debug, Clone, Copy)]
pub struct LeafView<'a, T> {
    pub labels: &'a [T],
    pub mean: T,
    pub var: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<T> {
    nodes: Vec<Node<T>>,
    labels: Vec<T>,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = LeafView<'_, T>> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { start, len, mean, var } => Some(LeafView {
                labels: &self.labels[*start as usize..(*start + *len) as usize],
                mean: *mean,
                var: *var,
            }),
            Node::Split { .. } => None,
        })
    }

    pub fn leaf(&self, x: &[T]) -> LeafView<'_, T> {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, rule, left, right } => {
                    i = if rule.goes_left(x[*feature as usize]) { *left } else { *right } as usize;
                }
                Node::Leaf { start, len, mean, var } => {
                    return LeafView {
                        labels: &self.labels[*start as usize..(*start + *len) as usize],
                        mean: *mean,
                        var: *var,
                    }
                }
            }
        }
    }

    /// Grows a tree on a row subset drawn from `n_rows` rows of `x`.
    pub(super) fn fit(
        x: &[T],
        n_cols: usize,
        columns: &[ColumnKind],
        y: &[T],
        cfg: &ForestConfig,
        rng: &mut Rng,
    ) -> Self {
        let n = y.len();
        let k = ((cfg.frac_points * n as f64).ceil() as usize).clamp(1, n);
        let mut rows: Vec<usize> = if cfg.bootstrapping {
            (0..k).map(|_| rng.gen_range(0..n)).collect()
        } else {
            index::sample(rng, n, k).into_vec()
        };
        rows.sort_unstable();

        let mut builder = Builder { x, n_cols, columns, y, cfg, nodes: Vec::new(), labels: Vec::new() };
        builder.grow(rows, rng);
        RegressionTree { nodes: builder.nodes, labels: builder.labels }
    }
}

struct Builder<'a, T> {
    x: &'a [T],
    n_cols: usize,
    columns: &'a [ColumnKind],
    y: &'a [T],
    cfg: &'a ForestConfig,
    nodes: Vec<Node<T>>,
    labels: Vec<T>,
}

struct Candidate<T> {
    sse: T,
    feature: usize,
    rule: SplitRule<T>,
}

impl<T: Scalar> Builder<'_, T> {
    #[inline]
    fn at(&self, row: usize, col: usize) -> T {
        self.x[row * self.n_cols + col]
    }

    /// Breadth-first growth so the node budget is spent level by level.
    fn grow(&mut self, rows: Vec<usize>, rng: &mut Rng) {
        let mut queue = VecDeque::new();
        self.nodes.push(Node::Leaf { start: 0, len: 0, mean: T::zero(), var: T::zero() });
        queue.push_back((0usize, rows, 0usize));
        while let Some((id, rows, depth)) = queue.pop_front() {
            let split = if depth < self.cfg.max_depth && self.nodes.len() + 2 <= self.cfg.max_nodes {
                self.best_split(&rows, rng)
            } else {
                None
            };
            match split {
                Some(c) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&row| c.rule.goes_left(self.at(row, c.feature)));
                    let left = self.nodes.len();
                    self.nodes.push(Node::Leaf { start: 0, len: 0, mean: T::zero(), var: T::zero() });
                    self.nodes.push(Node::Leaf { start: 0, len: 0, mean: T::zero(), var: T::zero() });
                    self.nodes[id] = Node::Split {
                        feature: c.feature as u32,
                        rule: c.rule,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    queue.push_back((left, l, depth + 1));
                    queue.push_back((left + 1, r, depth + 1));
                }
                None => self.make_leaf(id, &rows),
            }
        }
    }

    fn make_leaf(&mut self, id: usize, rows: &[usize]) {
        let start = self.labels.len();
        let mut vals: Vec<T> = rows.iter().map(|&r| self.y[r]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite responses"));
        let n = T::from_usize_lossy(vals.len());
        let mean = vals.iter().copied().sum::<T>() / n;
        let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        self.labels.extend(vals);
        self.nodes[id] = Node::Leaf { start: start as u32, len: rows.len() as u32, mean, var };
    }

    fn best_split(&self, rows: &[usize], rng: &mut Rng) -> Option<Candidate<T>> {
        let n = rows.len();
        let min_leaf = self.cfg.min_samples_in_leaf.max(1);
        if n < self.cfg.min_samples_to_split || n < 2 * min_leaf {
            return None;
        }
        let first = self.y[rows[0]];
        if rows.iter().all(|&r| self.y[r] == first) {
            return None;
        }
        // Centre responses on the node mean to keep the SSE sums well
        // conditioned in single precision.
        let centre = rows.iter().map(|&r| self.y[r]).sum::<T>() / T::from_usize_lossy(n);

        let p = self.n_cols;
        let m = ((self.cfg.frac_feats * p as f64).ceil() as usize).clamp(1, p);
        let mut feats = index::sample(rng, p, m).into_vec();
        feats.sort_unstable();

        let mut best: Option<Candidate<T>> = None;
        for f in feats {
            let cand = match self.columns[f] {
                ColumnKind::Numeric => self.numeric_split(rows, f, centre, min_leaf),
                ColumnKind::Categorical { .. } => self.categorical_split(rows, f, centre, min_leaf),
            };
            if let Some(c) = cand {
                if best.as_ref().is_none_or(|b| c.sse < b.sse) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn numeric_split(&self, rows: &[usize], f: usize, centre: T, min_leaf: usize) -> Option<Candidate<T>> {
        let mut pairs: Vec<(T, T)> = rows.iter().map(|&r| (self.at(r, f), self.y[r] - centre)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let n = pairs.len();
        let (tot_s, tot_q) = pairs.iter().fold((T::zero(), T::zero()), |(s, q), &(_, y)| (s + y, q + y * y));
        let (mut ls, mut lq) = (T::zero(), T::zero());
        let mut best: Option<(T, usize)> = None;
        for i in 0..n - 1 {
            let y = pairs[i].1;
            ls += y;
            lq += y * y;
            let nl = i + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf || !(pairs[i].0 < pairs[i + 1].0) {
                continue;
            }
            let (fl, fr) = (T::from_usize_lossy(nl), T::from_usize_lossy(nr));
            let rs = tot_s - ls;
            let rq = tot_q - lq;
            let sse = (lq - ls * ls / fl) + (rq - rs * rs / fr);
            if best.is_none_or(|(b, _)| sse < b) {
                best = Some((sse, i));
            }
        }
        best.map(|(sse, i)| {
            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            let mid = a + (b - a) / (T::one() + T::one());
            let threshold = if mid < b { mid } else { a };
            Candidate { sse, feature: f, rule: SplitRule::LessEq(threshold) }
        })
    }

    /// Orders the categories present in the node by mean response and scans
    /// prefix partitions, which is exact for squared error.
    fn categorical_split(&self, rows: &[usize], f: usize, centre: T, min_leaf: usize) -> Option<Candidate<T>> {
        // (category, count, sum, sumsq)
        let mut stats: Vec<(u32, usize, T, T)> = Vec::new();
        for &r in rows {
            let c = self.at(r, f).to_u32().unwrap_or(u32::MAX);
            let y = self.y[r] - centre;
            match stats.binary_search_by_key(&c, |s| s.0) {
                Ok(k) => {
                    stats[k].1 += 1;
                    stats[k].2 += y;
                    stats[k].3 += y * y;
                }
                Err(k) => stats.insert(k, (c, 1, y, y * y)),
            }
        }
        if stats.len() < 2 {
            return None;
        }
        stats.sort_by(|a, b| {
            let ma = a.2 / T::from_usize_lossy(a.1);
            let mb = b.2 / T::from_usize_lossy(b.1);
            ma.partial_cmp(&mb).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
        });
        let n = rows.len();
        let (tot_s, tot_q) = stats.iter().fold((T::zero(), T::zero()), |(s, q), c| (s + c.2, q + c.3));
        let (mut nl, mut ls, mut lq) = (0usize, T::zero(), T::zero());
        let mut best: Option<(T, usize)> = None;
        for j in 0..stats.len() - 1 {
            nl += stats[j].1;
            ls += stats[j].2;
            lq += stats[j].3;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let (fl, fr) = (T::from_usize_lossy(nl), T::from_usize_lossy(nr));
            let rs = tot_s - ls;
            let rq = tot_q - lq;
            let sse = (lq - ls * ls / fl) + (rq - rs * rs / fr);
            if best.is_none_or(|(b, _)| sse < b) {
                best = Some((sse, j));
            }
        }
        best.map(|(sse, j)| {
            let mut left: Vec<u32> = stats[..=j].iter().map(|s| s.0).collect();
            left.sort_unstable();
            Candidate { sse, feature: f, rule: SplitRule::In(left) }
        })
    }
}
