//! Intensification with adaptive capping.
//!
//! All configurations are evaluated on prefixes of one shared, lazily grown
//! sequence of (instance, seed) pairs, so any two configurations can be
//! compared on the runs they have in common.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{BackendError, Context};
use crate::config_space::Configuration;
use crate::rng::Rng;
use crate::run_data::RunStatus;

/// Default bound multiplier for adaptive capping.
pub const DEFAULT_SLACK: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Race {
    Won,
    Lost,
    OutOfBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Done,
    Censored,
    NoBudget,
}

pub(crate) struct Racer {
    pairs: Vec<(usize, u64)>,
    order: Vec<usize>,
    slack: f64,
    max_runs: usize,
    /// Uncensored costs of each configuration on the leading pairs.
    costs: BTreeMap<Vec<u8>, Vec<f64>>,
    /// Largest censoring cap seen for each configuration.
    bounds: BTreeMap<Vec<u8>, f64>,
}

impl Racer {
    pub fn new(slack: f64, max_runs: usize) -> Self {
        Racer { pairs: Vec::new(), order: Vec::new(), slack, max_runs: max_runs.max(1), costs: BTreeMap::new(), bounds: BTreeMap::new() }
    }

    fn pair(&mut self, ctx: &Context<'_>, k: usize, rng: &mut Rng) -> (String, u64) {
        while self.pairs.len() <= k {
            if self.order.is_empty() {
                self.order = (0..ctx.train.len()).collect();
                self.order.shuffle(rng);
            }
            let inst = self.order.pop().expect("non-empty order");
            self.pairs.push((inst, rng.gen::<u32>() as u64));
        }
        let (i, s) = self.pairs[k];
        (ctx.train[i].clone(), s)
    }

    pub fn costs(&self, config: &Configuration) -> &[f64] {
        self.costs.get(&config.canonical_bytes()).map_or(&[], |v| v.as_slice())
    }

    pub fn mean(&self, config: &Configuration) -> f64 {
        let c = self.costs(config);
        c.iter().sum::<f64>() / c.len() as f64
    }

    /// Every evaluated configuration with its costs.
    pub fn observations(&self) -> impl Iterator<Item = (&Vec<u8>, &Vec<f64>)> {
        self.costs.iter()
    }

    /// Configurations whose only information is a censored run, with the
    /// censoring cap.
    pub fn lower_bounds(&self) -> impl Iterator<Item = (&Vec<u8>, f64)> {
        self.bounds.iter().filter(|(k, _)| !self.costs.contains_key(*k)).map(|(k, &b)| (k, b))
    }

    /// Evaluates `config` on its next pair with cap `cap`.
    fn extend(&mut self, ctx: &mut Context<'_>, config: &Configuration, cap: f64, rng: &mut Rng) -> Result<Step, BackendError> {
        if ctx.exhausted() {
            return Ok(Step::NoBudget);
        }
        let key = config.canonical_bytes();
        let k = self.costs.get(&key).map_or(0, Vec::len);
        let (inst, seed) = self.pair(ctx, k, rng);
        let e = ctx.run(config, &inst, seed, cap)?;
        if e.status == RunStatus::Censored {
            let b = self.bounds.entry(key).or_insert(e.cost);
            *b = b.max(e.cost);
            return Ok(Step::Censored);
        }
        self.costs.entry(key).or_default().push(e.cost);
        Ok(Step::Done)
    }

    /// Makes sure `config` has at least `n` uncapped runs.
    pub fn ensure(&mut self, ctx: &mut Context<'_>, config: &Configuration, n: usize, rng: &mut Rng) -> Result<bool, BackendError> {
        while self.costs(config).len() < n {
            if self.extend(ctx, config, f64::INFINITY, rng)? != Step::Done {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Races `challenger` against `reference`. The reference first gains one
    /// run; the challenger then follows it on 1, 2, 4, ... of its pairs, each
    /// run capped by the slack-scaled remaining gap. The challenger wins only
    /// with a strictly lower mean over all of the reference's pairs.
    pub fn race(
        &mut self,
        ctx: &mut Context<'_>,
        challenger: &Configuration,
        reference: &Configuration,
        rng: &mut Rng,
    ) -> Result<Race, BackendError> {
        if challenger == reference {
            return Ok(Race::Lost);
        }
        let have = self.costs(reference).len();
        if have < self.max_runs && !ctx.exhausted() {
            self.extend(ctx, reference, f64::INFINITY, rng)?;
        }
        let reference_costs = self.costs(reference).to_vec();
        let total = reference_costs.len();
        if total == 0 {
            return Ok(if ctx.exhausted() { Race::OutOfBudget } else { Race::Lost });
        }
        let mut n = 1;
        loop {
            let target = n.min(total);
            let ref_sum: f64 = reference_costs[..target].iter().sum();
            loop {
                let done = self.costs(challenger);
                if done.len() >= target {
                    break;
                }
                let spent: f64 = done.iter().sum();
                let cap = if ctx.capping() { self.slack * (ref_sum - spent) } else { f64::INFINITY };
                if cap <= 0.0 {
                    return Ok(Race::Lost);
                }
                match self.extend(ctx, challenger, cap, rng)? {
                    Step::Done => {}
                    Step::Censored => return Ok(Race::Lost),
                    Step::NoBudget => return Ok(Race::OutOfBudget),
                }
            }
            let chal: f64 = self.costs(challenger)[..target].iter().sum();
            if chal > ref_sum {
                return Ok(Race::Lost);
            }
            if target == total {
                return Ok(if chal < ref_sum { Race::Won } else { Race::Lost });
            }
            n *= 2;
        }
    }
}
