//! Parameter configuration spaces: categorical, integer and real parameters,
//! single-parent conditions, and the operations configurators and the
//! performance model need on top of them.

mod parser;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::scalar::Scalar;

pub use parser::parse_space;

/// Source position of a declaration. `None` for spaces built in code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

fn at(pos: &Option<Pos>) -> String {
    match pos {
        Some(p) => format!("{p}: "),
        None => String::new(),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("{pos}: syntax error: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("{}duplicate parameter `{name}`", at(.pos))]
    DuplicateName { pos: Option<Pos>, name: String },
    #[error("{}unknown parameter `{name}`", at(.pos))]
    UnknownParameter { pos: Option<Pos>, name: String },
    #[error("{}default {value} outside the domain of `{name}`", at(.pos))]
    DefaultOutOfDomain { pos: Option<Pos>, name: String, value: String },
    #[error("{}invalid domain for `{name}`: {message}", at(.pos))]
    InvalidDomain { pos: Option<Pos>, name: String, message: String },
    #[error("{}invalid condition on `{child}`: {message}", at(.pos))]
    InvalidCondition { pos: Option<Pos>, child: String, message: String },
    #[error("cyclic conditions involving `{0}`")]
    Cycle(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("expected {expected} instance features, got {got}")]
    FeatureLength { expected: usize, got: usize },
}

/// A single parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:?}"),
            Value::Cat(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Categorical(Vec<String>),
    Integer { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub domain: Domain,
    pub log_scale: bool,
    pub default: Option<Value>,
}

impl ParameterSpec {
    pub fn categorical(name: &str, values: &[&str], default: Option<&str>) -> Self {
        ParameterSpec {
            name: name.to_string(),
            domain: Domain::Categorical(values.iter().map(|s| s.to_string()).collect()),
            log_scale: false,
            default: default.map(|d| Value::Cat(d.to_string())),
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64, default: Option<i64>, log_scale: bool) -> Self {
        ParameterSpec {
            name: name.to_string(),
            domain: Domain::Integer { lo, hi },
            log_scale,
            default: default.map(Value::Int),
        }
    }

    pub fn real(name: &str, lo: f64, hi: f64, default: Option<f64>, log_scale: bool) -> Self {
        ParameterSpec {
            name: name.to_string(),
            domain: Domain::Real { lo, hi },
            log_scale,
            default: default.map(Value::Real),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.domain, Domain::Categorical(_))
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (&self.domain, value) {
            (Domain::Categorical(vals), Value::Cat(v)) => vals.contains(v),
            (Domain::Integer { lo, hi }, Value::Int(v)) => lo <= v && v <= hi,
            (Domain::Real { lo, hi }, Value::Real(v)) => *lo <= *v && *v <= *hi,
            _ => false,
        }
    }

    fn check(&self, pos: Option<Pos>) -> Result<(), SpaceError> {
        let bad = |message: &str| SpaceError::InvalidDomain {
            pos,
            name: self.name.clone(),
            message: message.to_string(),
        };
        match &self.domain {
            Domain::Categorical(vals) => {
                if vals.is_empty() {
                    return Err(bad("empty value list"));
                }
                for (i, v) in vals.iter().enumerate() {
                    if vals[..i].contains(v) {
                        return Err(bad(&format!("duplicate value `{v}`")));
                    }
                }
                if self.log_scale {
                    return Err(bad("log scale on a categorical parameter"));
                }
            }
            Domain::Integer { lo, hi } => {
                if lo >= hi {
                    return Err(bad("lower bound must be below upper bound"));
                }
                if self.log_scale && *lo <= 0 {
                    return Err(bad("log scale requires a positive lower bound"));
                }
            }
            Domain::Real { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(bad("bounds must be finite"));
                }
                if lo >= hi {
                    return Err(bad("lower bound must be below upper bound"));
                }
                if self.log_scale && *lo <= 0.0 {
                    return Err(bad("log scale requires a positive lower bound"));
                }
            }
        }
        if let Some(d) = &self.default {
            if !self.contains(d) {
                return Err(SpaceError::DefaultOutOfDomain {
                    pos,
                    name: self.name.clone(),
                    value: d.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Value used when the parameter is inactive: the default, else the
    /// midpoint of the range (in log space for log-scaled parameters), else
    /// the first categorical value.
    pub fn inactive_value(&self) -> Value {
        if let Some(d) = &self.default {
            return d.clone();
        }
        match &self.domain {
            Domain::Categorical(vals) => Value::Cat(vals[0].clone()),
            Domain::Integer { lo, hi } => {
                let mid = if self.log_scale {
                    ((*lo as f64).ln() * 0.5 + (*hi as f64).ln() * 0.5).exp()
                } else {
                    (*lo as f64 + *hi as f64) / 2.0
                };
                Value::Int(round_half_up(mid).clamp(*lo, *hi))
            }
            Domain::Real { lo, hi } => {
                let mid = if self.log_scale {
                    (lo.ln() * 0.5 + hi.ln() * 0.5).exp()
                } else {
                    lo + (hi - lo) / 2.0
                };
                Value::Real(mid.clamp(*lo, *hi))
            }
        }
    }

    /// Position of a numeric value in `[0, 1]`, log-transformed when
    /// `log_scale`. Categorical values map to their index.
    pub fn normalize(&self, value: &Value) -> Option<f64> {
        match (&self.domain, value) {
            (Domain::Categorical(vals), Value::Cat(v)) => {
                vals.iter().position(|c| c == v).map(|i| i as f64)
            }
            (Domain::Integer { lo, hi }, Value::Int(v)) => {
                Some(self.to_unit(*lo as f64, *hi as f64, *v as f64))
            }
            (Domain::Real { lo, hi }, Value::Real(v)) => Some(self.to_unit(*lo, *hi, *v)),
            _ => None,
        }
    }

    fn to_unit(&self, lo: f64, hi: f64, v: f64) -> f64 {
        if self.log_scale {
            (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            (v - lo) / (hi - lo)
        }
    }

    /// Inverse of [`normalize`](Self::normalize) for numeric parameters;
    /// integers round half up.
    pub fn denormalize(&self, unit: f64) -> Value {
        let unit = unit.clamp(0.0, 1.0);
        let raw = |lo: f64, hi: f64| {
            if self.log_scale {
                (lo.ln() + unit * (hi.ln() - lo.ln())).exp()
            } else {
                lo + unit * (hi - lo)
            }
        };
        match &self.domain {
            Domain::Integer { lo, hi } => {
                Value::Int(round_half_up(raw(*lo as f64, *hi as f64)).clamp(*lo, *hi))
            }
            Domain::Real { lo, hi } => Value::Real(raw(*lo, *hi).clamp(*lo, *hi)),
            Domain::Categorical(vals) => {
                let i = ((unit * vals.len() as f64) as usize).min(vals.len() - 1);
                Value::Cat(vals[i].clone())
            }
        }
    }

    fn sample(&self, rng: &mut Rng) -> Value {
        match &self.domain {
            Domain::Categorical(vals) => Value::Cat(vals[rng.gen_range(0..vals.len())].clone()),
            Domain::Integer { lo, hi } if !self.log_scale => Value::Int(rng.gen_range(*lo..=*hi)),
            Domain::Real { lo, hi } if !self.log_scale => {
                Value::Real(lo + rng.gen::<f64>() * (hi - lo))
            }
            _ => self.denormalize(rng.gen::<f64>()),
        }
    }
}

/// Rounds to nearest, ties upward.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub child: String,
    pub parent: String,
    pub activating_values: Vec<Value>,
}

/// A point in a configuration space: parameter name to value. Ordered by
/// name, which is also its canonical form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    values: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn set(&mut self, name: &str, value: Value) {
        self.values.insert(name.to_string(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.values.remove(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Compact JSON object of the values, keys in canonical order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("configuration serializes")
    }

    /// Exact textual form used for hashing; reals are encoded by bit pattern.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (k, v) in &self.values {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            match v {
                Value::Int(i) => out.extend_from_slice(format!("i{i}").as_bytes()),
                Value::Real(r) => out.extend_from_slice(format!("r{:016x}", r.to_bits()).as_bytes()),
                Value::Cat(c) => {
                    out.push(b'c');
                    out.extend_from_slice(c.as_bytes());
                }
            }
            out.push(b';');
        }
        out
    }

    /// Names whose values differ between `self` and `other`, including names
    /// present in only one of them.
    pub fn differing(&self, other: &Configuration) -> Vec<String> {
        let mut names: Vec<String> = self
            .values
            .keys()
            .chain(other.values.keys())
            .filter(|k| self.values.get(*k) != other.values.get(*k))
            .cloned()
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// How a model-input column should be treated by the forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical { n_values: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborOptions {
    /// Perturbed values drawn per active numeric parameter.
    pub k_perturb: usize,
    /// Standard deviation of a numeric step, as a fraction of the
    /// normalized range.
    pub step_scale: f64,
}

impl Default for NeighborOptions {
    fn default() -> Self {
        NeighborOptions { k_perturb: 4, step_scale: 0.2 }
    }
}

/// Validated, immutable parameter space.
#[derive(Debug, Clone)]
pub struct ConfigurationSpace {
    params: Vec<ParameterSpec>,
    conditions: Vec<Condition>,
    index: HashMap<String, usize>,
    /// Condition governing each parameter, by parameter index.
    condition_of: Vec<Option<usize>>,
    /// Parameter indices, parents before children.
    order: Vec<usize>,
}

impl PartialEq for ConfigurationSpace {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.conditions == other.conditions
    }
}

impl ConfigurationSpace {
    pub fn new(params: Vec<ParameterSpec>, conditions: Vec<Condition>) -> Result<Self, SpaceError> {
        let n = params.len();
        Self::build(params, conditions, &vec![None; n], &[])
    }

    pub(crate) fn build(
        params: Vec<ParameterSpec>,
        conditions: Vec<Condition>,
        param_pos: &[Option<Pos>],
        cond_pos: &[(Option<Pos>, Option<Pos>)],
    ) -> Result<Self, SpaceError> {
        let mut index = HashMap::new();
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(SpaceError::DuplicateName { pos: param_pos[i], name: p.name.clone() });
            }
            p.check(param_pos[i])?;
        }

        let mut condition_of = vec![None; params.len()];
        for (ci, c) in conditions.iter().enumerate() {
            let (child_pos, parent_pos) = cond_pos.get(ci).copied().unwrap_or((None, None));
            let child = *index.get(&c.child).ok_or_else(|| SpaceError::UnknownParameter {
                pos: child_pos,
                name: c.child.clone(),
            })?;
            let parent = *index.get(&c.parent).ok_or_else(|| SpaceError::UnknownParameter {
                pos: parent_pos,
                name: c.parent.clone(),
            })?;
            let invalid = |message: String| SpaceError::InvalidCondition {
                pos: child_pos,
                child: c.child.clone(),
                message,
            };
            if child == parent {
                return Err(invalid("a parameter cannot condition itself".into()));
            }
            if condition_of[child].is_some() {
                return Err(invalid("more than one condition on the same parameter".into()));
            }
            if matches!(params[parent].domain, Domain::Real { .. }) {
                return Err(invalid(format!("parent `{}` is real-valued", c.parent)));
            }
            if c.activating_values.is_empty() {
                return Err(invalid("empty activating value set".into()));
            }
            for v in &c.activating_values {
                if !params[parent].contains(v) {
                    return Err(invalid(format!("value {v} not in the domain of `{}`", c.parent)));
                }
            }
            condition_of[child] = Some(ci);
        }

        // Topological order over parent -> child edges (each node has at
        // most one parent, so a chain walk detects cycles).
        let parent_of = |i: usize| condition_of[i].map(|ci| index[&conditions[ci].parent]);
        let mut depth = vec![usize::MAX; params.len()];
        for start in 0..params.len() {
            let mut chain = vec![start];
            let mut cur = start;
            while depth[cur] == usize::MAX {
                match parent_of(cur) {
                    None => {
                        depth[cur] = 0;
                        break;
                    }
                    Some(p) => {
                        if chain.contains(&p) {
                            return Err(SpaceError::Cycle(params[p].name.clone()));
                        }
                        chain.push(p);
                        cur = p;
                    }
                }
            }
            for &node in chain.iter().rev() {
                if depth[node] == usize::MAX {
                    let p = parent_of(node).expect("non-root has a parent");
                    depth[node] = depth[p] + 1;
                }
            }
        }
        let mut order: Vec<usize> = (0..params.len()).collect();
        order.sort_by_key(|&i| (depth[i], i));

        Ok(ConfigurationSpace { params, conditions, index, condition_of, order })
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Parameter indices with parents before children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn condition_for(&self, name: &str) -> Option<&Condition> {
        self.index_of(name).and_then(|i| self.condition_of[i]).map(|ci| &self.conditions[ci])
    }

    /// Whether each parameter is active under `config`, by parameter index.
    /// A parameter is active when unconditional, or when its parent is
    /// active and holds an activating value.
    pub fn active_mask(&self, config: &Configuration) -> Vec<bool> {
        let mut active = vec![false; self.params.len()];
        for &i in &self.order {
            active[i] = match self.condition_of[i] {
                None => true,
                Some(ci) => {
                    let c = &self.conditions[ci];
                    let p = self.index[&c.parent];
                    active[p]
                        && config
                            .get(&c.parent)
                            .is_some_and(|v| c.activating_values.contains(v))
                }
            };
        }
        active
    }

    /// Checks the configuration invariants: known names, values in domain,
    /// and presence exactly for active parameters.
    pub fn validate(&self, config: &Configuration) -> Result<(), SpaceError> {
        for (name, value) in config.iter() {
            let p = self.param(name).ok_or_else(|| {
                SpaceError::InvalidConfiguration(format!("unknown parameter `{name}`"))
            })?;
            if !p.contains(value) {
                return Err(SpaceError::InvalidConfiguration(format!(
                    "value {value} outside the domain of `{name}`"
                )));
            }
        }
        let active = self.active_mask(config);
        for (i, p) in self.params.iter().enumerate() {
            match (active[i], config.get(&p.name).is_some()) {
                (true, false) => {
                    return Err(SpaceError::InvalidConfiguration(format!(
                        "active parameter `{}` is missing",
                        p.name
                    )))
                }
                (false, true) => {
                    return Err(SpaceError::InvalidConfiguration(format!(
                        "inactive parameter `{}` is present",
                        p.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Builds a configuration from a JSON object, coercing numbers to the
    /// parameter's kind, and validates it.
    pub fn config_from_json(&self, json: &serde_json::Value) -> Result<Configuration, SpaceError> {
        let obj = json.as_object().ok_or_else(|| {
            SpaceError::InvalidConfiguration("configuration must be a JSON object".into())
        })?;
        let mut config = Configuration::new();
        for (name, raw) in obj {
            let p = self.param(name).ok_or_else(|| {
                SpaceError::InvalidConfiguration(format!("unknown parameter `{name}`"))
            })?;
            let bad = || {
                SpaceError::InvalidConfiguration(format!("value {raw} has the wrong type for `{name}`"))
            };
            let value = match &p.domain {
                Domain::Categorical(_) => match raw {
                    serde_json::Value::String(s) => Value::Cat(s.clone()),
                    serde_json::Value::Number(n) => Value::Cat(n.to_string()),
                    serde_json::Value::Bool(b) => Value::Cat(b.to_string()),
                    _ => return Err(bad()),
                },
                Domain::Integer { .. } => {
                    if let Some(i) = raw.as_i64() {
                        Value::Int(i)
                    } else {
                        match raw.as_f64() {
                            Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Value::Int(f as i64),
                            _ => return Err(bad()),
                        }
                    }
                }
                Domain::Real { .. } => Value::Real(raw.as_f64().ok_or_else(bad)?),
            };
            config.set(name, value);
        }
        self.validate(&config)?;
        Ok(config)
    }

    pub fn config_from_json_str(&self, text: &str) -> Result<Configuration, SpaceError> {
        let json: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| SpaceError::InvalidConfiguration(format!("bad JSON: {e}")))?;
        self.config_from_json(&json)
    }

    /// Removes parameters that are inactive and fills active ones that are
    /// missing with their inactive value.
    fn repair(&self, mut config: Configuration) -> Configuration {
        let mut active = vec![false; self.params.len()];
        for &i in &self.order {
            let p = &self.params[i];
            active[i] = match self.condition_of[i] {
                None => true,
                Some(ci) => {
                    let c = &self.conditions[ci];
                    active[self.index[&c.parent]]
                        && config.get(&c.parent).is_some_and(|v| c.activating_values.contains(v))
                }
            };
            if active[i] {
                if config.get(&p.name).is_none() {
                    config.set(&p.name, p.inactive_value());
                }
            } else {
                config.remove(&p.name);
            }
        }
        config
    }

    /// Every active parameter at its default (or midpoint).
    pub fn default_configuration(&self) -> Configuration {
        self.repair(Configuration::new())
    }

    /// Uniform draw: top-down in condition order, uniform in log space for
    /// log-scaled parameters, conditionals only when active.
    pub fn sample_uniform(&self, rng: &mut Rng) -> Configuration {
        let mut config = Configuration::new();
        let mut active = vec![false; self.params.len()];
        for &i in &self.order {
            let p = &self.params[i];
            active[i] = match self.condition_of[i] {
                None => true,
                Some(ci) => {
                    let c = &self.conditions[ci];
                    active[self.index[&c.parent]]
                        && config.get(&c.parent).is_some_and(|v| c.activating_values.contains(v))
                }
            };
            if active[i] {
                config.set(&p.name, p.sample(rng));
            }
        }
        config
    }

    /// Total assignment over all parameters: inactive parameters take their
    /// default, or the range midpoint, or the first categorical value.
    pub fn impute_inactive(&self, config: &Configuration) -> Configuration {
        let active = self.active_mask(config);
        let mut out = Configuration::new();
        for (i, p) in self.params.iter().enumerate() {
            let value = match (active[i], config.get(&p.name)) {
                (true, Some(v)) => v.clone(),
                _ => p.inactive_value(),
            };
            out.set(&p.name, value);
        }
        out
    }

    /// Model columns for this space followed by `n_features` numeric
    /// instance-feature columns.
    pub fn column_kinds(&self, n_features: usize) -> Vec<ColumnKind> {
        self.params
            .iter()
            .map(|p| match &p.domain {
                Domain::Categorical(vals) => ColumnKind::Categorical { n_values: vals.len() as u32 },
                _ => ColumnKind::Numeric,
            })
            .chain(std::iter::repeat_n(ColumnKind::Numeric, n_features))
            .collect()
    }

    /// Model input for a total configuration: numeric parameters scaled to
    /// `[0, 1]`, categoricals as value indices, then the raw features.
    pub fn encode<T: Scalar>(
        &self,
        config: &Configuration,
        features: &[f64],
        n_features: usize,
    ) -> Result<Vec<T>, SpaceError> {
        if features.len() != n_features {
            return Err(SpaceError::FeatureLength { expected: n_features, got: features.len() });
        }
        let mut out = Vec::with_capacity(self.params.len() + n_features);
        for p in &self.params {
            let v = config.get(&p.name).ok_or_else(|| {
                SpaceError::InvalidConfiguration(format!("`{}` missing; impute inactive values first", p.name))
            })?;
            let x = p.normalize(v).ok_or_else(|| {
                SpaceError::InvalidConfiguration(format!("value {v} does not fit `{}`", p.name))
            })?;
            out.push(T::from_f64_lossy(x));
        }
        out.extend(features.iter().map(|&f| T::from_f64_lossy(f)));
        Ok(out)
    }

    /// Alternative encoding with one binary column per categorical value.
    pub fn encode_one_hot<T: Scalar>(
        &self,
        config: &Configuration,
        features: &[f64],
        n_features: usize,
    ) -> Result<Vec<T>, SpaceError> {
        let compact: Vec<T> = self.encode(config, features, n_features)?;
        let mut out = Vec::new();
        for (p, x) in self.params.iter().zip(&compact) {
            match &p.domain {
                Domain::Categorical(vals) => {
                    let hot = x.to_f64_lossy() as usize;
                    out.extend((0..vals.len()).map(|k| if k == hot { T::one() } else { T::zero() }));
                }
                _ => out.push(*x),
            }
        }
        out.extend_from_slice(&compact[self.params.len()..]);
        Ok(out)
    }

    /// One-exchange neighborhood: every alternative value of each active
    /// categorical and `k_perturb` Gaussian steps for each active numeric
    /// parameter. Newly activated children take their inactive value.
    pub fn neighbors(
        &self,
        config: &Configuration,
        rng: &mut Rng,
        opts: &NeighborOptions,
    ) -> Vec<Configuration> {
        let active = self.active_mask(config);
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let Some(current) = config.get(&p.name) else { continue };
            match &p.domain {
                Domain::Categorical(vals) => {
                    for v in vals {
                        let candidate = Value::Cat(v.clone());
                        if &candidate != current {
                            out.push(self.with_value(config, &p.name, candidate));
                        }
                    }
                }
                _ => {
                    let unit = p.normalize(current).unwrap_or(0.5);
                    for _ in 0..opts.k_perturb {
                        let v = self.perturb_numeric(p, current, unit, rng, opts.step_scale);
                        out.push(self.with_value(config, &p.name, v));
                    }
                }
            }
        }
        out
    }

    fn perturb_numeric(
        &self,
        p: &ParameterSpec,
        current: &Value,
        unit: f64,
        rng: &mut Rng,
        scale: f64,
    ) -> Value {
        for _ in 0..64 {
            let step: f64 = StandardNormal.sample(rng);
            let v = p.denormalize(unit + scale * step);
            if &v != current {
                return v;
            }
        }
        // Pinned at a bound or a tiny integer range: step to an adjacent value.
        match (&p.domain, current) {
            (Domain::Integer { lo, hi }, Value::Int(c)) => {
                Value::Int(if c < hi { c + 1 } else { (c - 1).max(*lo) })
            }
            (Domain::Real { lo, hi }, Value::Real(c)) => {
                let towards = if unit < 0.5 { *hi } else { *lo };
                Value::Real(c + (towards - c) * 0.01)
            }
            _ => current.clone(),
        }
    }

    fn with_value(&self, config: &Configuration, name: &str, value: Value) -> Configuration {
        let mut next = config.clone();
        next.set(name, value);
        self.repair(next)
    }

    /// Applies `steps` random one-exchange moves.
    pub fn perturb(&self, config: &Configuration, steps: usize, rng: &mut Rng) -> Configuration {
        let opts = NeighborOptions { k_perturb: 1, ..NeighborOptions::default() };
        let mut cur = config.clone();
        for _ in 0..steps {
            let neigh = self.neighbors(&cur, rng, &opts);
            if neigh.is_empty() {
                break;
            }
            cur = neigh[rng.gen_range(0..neigh.len())].clone();
        }
        cur
    }

    /// Renders the space in the text format accepted by [`parse_space`].
    pub fn render(&self) -> String {
        parser::render(self)
    }
}
