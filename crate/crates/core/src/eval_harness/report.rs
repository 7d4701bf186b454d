//! Report types and their JSON/CSV forms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SplitKind;
use crate::stats::{self, PairwiseOutcome};

/// Held-out model quality for one split, either over all held-out runs or
/// over one configurator's runs. Missing values mark undefined statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub split: String,
    /// `None` for the aggregate row.
    pub configurator: Option<String>,
    pub n_config: usize,
    pub n_validation: usize,
    pub rmse_config: Option<f64>,
    pub cc_config: Option<f64>,
    pub rmse_validation: Option<f64>,
    pub cc_validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub kind: SplitKind,
    pub rows: Vec<QualityRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| stats::mean(&v))
}

impl QualityReport {
    /// Rows for the aggregate (`None`) or one configurator.
    pub fn rows_for<'a>(&'a self, configurator: Option<&'a str>) -> impl Iterator<Item = &'a QualityRow> + 'a {
        self.rows.iter().filter(move |r| r.configurator.as_deref() == configurator)
    }

    /// Means over splits of each statistic, skipping undefined values.
    pub fn mean(&self, configurator: Option<&str>) -> QualityRow {
        let rows: Vec<&QualityRow> = self.rows_for(configurator).collect();
        QualityRow {
            split: "mean".into(),
            configurator: configurator.map(str::to_string),
            n_config: rows.iter().map(|r| r.n_config).sum(),
            n_validation: rows.iter().map(|r| r.n_validation).sum(),
            rmse_config: mean_of(rows.iter().map(|r| r.rmse_config)),
            cc_config: mean_of(rows.iter().map(|r| r.cc_config)),
            rmse_validation: mean_of(rows.iter().map(|r| r.rmse_validation)),
            cc_validation: mean_of(rows.iter().map(|r| r.cc_validation)),
        }
    }

    /// Per-split rows followed by mean rows for the aggregate and every
    /// configurator.
    pub fn with_means(&self) -> Vec<QualityRow> {
        let mut out = self.rows.clone();
        let mut names: Vec<Option<&str>> = vec![None];
        for r in &self.rows {
            if let Some(c) = r.configurator.as_deref() {
                if !names.contains(&Some(c)) {
                    names.push(Some(c));
                }
            }
        }
        out.extend(names.into_iter().map(|c| self.mean(c)));
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        write_quality_csv(&self.with_means(), w)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn write_quality_csv<W: Write>(rows: &[QualityRow], w: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "split", "configurator", "n_config", "rmse_config", "cc_config", "n_validation", "rmse_validation",
        "cc_validation",
    ])?;
    for r in rows {
        w.write_record([
            r.split.clone(),
            r.configurator.clone().unwrap_or_else(|| "all".into()),
            r.n_config.to_string(),
            opt(r.rmse_config),
            opt(r.cc_config),
            r.n_validation.to_string(),
            opt(r.rmse_validation),
            opt(r.cc_validation),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Best-found cost of one run at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub budget: f64,
    pub run: u32,
    pub configurator: String,
    pub backend: String,
    pub cost: f64,
}

/// Wall-clock cost of surrogate predictions against simulated target time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub requests: usize,
    /// Mean target time of the replayed original runs, in seconds.
    pub mean_original_cost: f64,
    /// Mean wall-clock seconds per surrogate prediction.
    pub mean_latency: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub configurators: Vec<String>,
    pub n_runs: usize,
    pub budgets: Vec<f64>,
    pub pairs: Vec<(String, String)>,
    /// Indexed `[budget][pair]`.
    pub original_outcomes: Vec<Vec<PairwiseOutcome>>,
    pub surrogate_outcomes: Vec<Vec<PairwiseOutcome>>,
    pub error: f64,
    pub trajectories: Vec<TrajectoryRow>,
    #[serde(default)]
    pub quality: Vec<QualityRow>,
    /// Wall-clock measurements; the only part that differs between
    /// repetitions with identical seeds.
    pub timing: Option<Timing>,
}

impl FidelityReport {
    /// The report with timing removed.
    pub fn without_timing(&self) -> Self {
        FidelityReport { timing: None, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per budget and pair with both outcomes.
    pub fn write_outcomes_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["budget", "configurator_a", "configurator_b", "original", "surrogate", "penalty"])?;
        for (b, budget) in self.budgets.iter().enumerate() {
            for (p, (a, c)) in self.pairs.iter().enumerate() {
                let (o, s) = (self.original_outcomes[b][p], self.surrogate_outcomes[b][p]);
                w.write_record([
                    format!("{budget:?}"),
                    a.clone(),
                    c.clone(),
                    o.as_str().to_string(),
                    s.as_str().to_string(),
                    format!("{:?}", o.penalty(s)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Trajectory points with columns budget, run, configurator, backend,
    /// cost.
    pub fn write_trajectories_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["budget", "run", "configurator", "backend", "cost"])?;
        for p in &self.trajectories {
            w.write_record([
                format!("{:?}", p.budget),
                p.run.to_string(),
                p.configurator.clone(),
                p.backend.clone(),
                format!("{:?}", p.cost),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary table: error, timing and any model-quality rows.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["metric", "value"])?;
        w.write_record(["error".to_string(), format!("{:?}", self.error)])?;
        if let Some(t) = self.timing {
            w.write_record(["requests".to_string(), t.requests.to_string()])?;
            w.write_record(["mean_original_cost".to_string(), format!("{:?}", t.mean_original_cost)])?;
            w.write_record(["mean_latency".to_string(), format!("{:?}", t.mean_latency)])?;
            w.write_record(["speedup".to_string(), format!("{:?}", t.speedup)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_quality_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        write_quality_csv(&self.quality, w)
    }
}
