use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::config_space::{parse_space, Configuration, Value};
use crate::configurators::{SyntheticBackend, SyntheticSpec};
use crate::qrf::ForestConfig;
use crate::run_data::{InstanceSet, Objective, RunRecord, Setting, Split};

fn labelled(sources: &[(&str, u32)], per_source: usize) -> Dataset {
    let space = Arc::new(parse_space("x real [0.0, 1.0] [0.5]\n").unwrap());
    let instances = Arc::new(
        InstanceSet::new(1, [("a".to_string(), Split::Train, vec![0.0]), ("b".to_string(), Split::Test, vec![1.0])])
            .unwrap(),
    );
    let mut records = Vec::new();
    for (k, (name, rep)) in sources.iter().enumerate() {
        for i in 0..per_source {
            let mut c = Configuration::new();
            let x = ((k * per_source + i) as f64 * 0.618_033_988_7).fract();
            c.set("x", Value::Real(x));
            records.push(RunRecord {
                config: c,
                instance: "a".into(),
                seed: i as u64,
                status: RunStatus::Success,
                measured_cost: 0.1 + 5.0 * x,
                cutoff: 10.0,
                source: RunSource::new(name, *rep),
                is_validation: false,
            });
        }
    }
    Dataset::new(records, space, instances, Objective::Runtime).unwrap()
}

fn grid_sources(configurators: &[&'static str], reps: u32) -> Vec<(&'static str, u32)> {
    configurators.iter().flat_map(|&c| (0..reps).map(move |r| (c, r))).collect()
}

#[test]
fn loro_ten_reps_three_configurators() {
    let ds = labelled(&grid_sources(&["roar", "ils", "random_search"], 10), 2);
    let plan = loro_splits(&ds).unwrap();
    assert_eq!(plan.splits.len(), 10);
    for s in &plan.splits {
        assert_eq!(s.train.len(), 27);
        assert_eq!(s.held_out.len(), 3);
    }
}

#[test]
fn loro_two_reps_one_configurator() {
    let ds = labelled(&grid_sources(&["roar"], 2), 2);
    assert_eq!(loro_splits(&ds).unwrap().splits.len(), 2);
}

#[test]
fn loro_rejects_unlabelled_and_single_run() {
    let ds = labelled(&[("", 0), ("", 1)], 2);
    assert!(matches!(loro_splits(&ds), Err(HarnessError::MissingLabels)));
    let ds = labelled(&[("roar", 0)], 2);
    assert!(matches!(loro_splits(&ds), Err(HarnessError::TooFewRepetitions(1))));
}

#[test]
fn loco_splits_by_configurator() {
    let ds = labelled(&grid_sources(&["roar", "ils", "random_search"], 2), 2);
    let plan = loco_splits(&ds).unwrap();
    assert_eq!(plan.splits.len(), 3);
    let roar = plan.splits.iter().find(|s| s.name == "roar").unwrap();
    assert!(roar.train.iter().all(|s| s.configurator != "roar"));
    assert!(roar.held_out.iter().all(|s| s.configurator == "roar"));
    assert!(ds.restrict(&roar.train).records.iter().all(|r| r.source.configurator != "roar"));
    let ds = labelled(&grid_sources(&["roar"], 3), 2);
    assert!(matches!(loco_splits(&ds), Err(HarnessError::TooFewConfigurators(1))));
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_cover(n_conf in 1usize..4, n_rep in 1u32..5) {
        let names = ["a", "b", "c", "d"];
        let ds = labelled(&grid_sources(&names[..n_conf], n_rep), 1);
        let all = ds.sources();
        for plan in [loro_splits(&ds), loco_splits(&ds)].into_iter().flatten() {
            let mut covered = BTreeSet::new();
            for s in &plan.splits {
                prop_assert!(s.train.is_disjoint(&s.held_out));
                let union: BTreeSet<_> = s.train.union(&s.held_out).cloned().collect();
                prop_assert_eq!(&union, &all);
                covered.extend(s.held_out.iter().cloned());
            }
            prop_assert_eq!(&covered, &all);
        }
    }
}

#[test]
fn interpolating_model_is_exact_on_training_rows() {
    let ds = labelled(&grid_sources(&["roar"], 2), 40);
    let all = ds.sources();
    let plan = SplitPlan {
        kind: SplitKind::Loro,
        splits: vec![DataSplit { name: "self".into(), train: all.clone(), held_out: all }],
    };
    let opts = BuildOptions { forest: ForestConfig::interpolating(), setting: Setting::All, ..BuildOptions::default() };
    let q = model_quality(&ds, &plan, &opts, 1).unwrap();
    let row = q.rows_for(None).next().unwrap();
    assert_eq!(row.n_config, 80);
    assert!(row.rmse_config.unwrap().abs() < 1e-12);
    assert_eq!(row.cc_config, Some(1.0));
    assert_eq!(row.rmse_validation, None);
    assert_eq!(row.cc_validation, None);
}

#[test]
fn constant_truth_has_no_correlation() {
    let mut ds = labelled(&grid_sources(&["roar"], 2), 10);
    for r in &mut ds.records {
        r.measured_cost = 1.0;
    }
    let plan = loro_splits(&ds).unwrap();
    let opts = BuildOptions { forest: ForestConfig { num_trees: 4, ..Default::default() }, ..Default::default() };
    let q = model_quality(&ds, &plan, &opts, 1).unwrap();
    for r in &q.rows {
        assert_eq!(r.cc_config, None);
        assert!(r.rmse_config.unwrap() < 1e-12);
    }
    let mut buf = Vec::new();
    q.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("split,configurator,n_config"));
    assert!(text.lines().any(|l| l.starts_with("mean,all,")));
}

#[test]
fn default_grid_is_log_spaced() {
    let g = budget_grid(10.0, 5000.0, DEFAULT_GRID_POINTS);
    assert_eq!(g.len(), 20);
    assert_eq!(g[0], 10.0);
    assert_eq!(g[19], 5000.0);
    let ratio = (5000.0f64 / 10.0).powf(1.0 / 19.0);
    for w in g.windows(2) {
        assert!((w[1] / w[0] - ratio).abs() < 1e-9);
    }
}

#[test]
fn one_differing_cell_costs_one_over_pairs_times_budgets() {
    use PairwiseOutcome::*;
    let (p, b) = (3, 20);
    let orig = vec![vec![Equal; p]; b];
    let mut sur = orig.clone();
    let mut orig2 = orig.clone();
    orig2[7][1] = Better;
    sur[7][1] = Worse;
    let e = stats::surrogate_error(&orig2, &sur).unwrap();
    assert!((e - 1.0 / (p * b) as f64).abs() < 1e-15);
}

fn small_compare(seed: u64) -> CompareOptions {
    let mut o = CompareOptions::new(vec![Configurator::roar(), Configurator::random_search()], 5, 150.0, seed);
    o.grid = Some(budget_grid(10.0, 150.0, 5));
    o
}

#[test]
fn identity_control_has_zero_error_and_is_reproducible() {
    let b = SyntheticBackend::new(SyntheticSpec::default());
    let opts = small_compare(3);
    let r1 = compare(&b, &b, &opts).unwrap();
    assert_eq!(r1.error, 0.0);
    assert_eq!(r1.original_outcomes, r1.surrogate_outcomes);
    assert_eq!(r1.pairs, vec![("roar".to_string(), "random_search".to_string())]);
    assert_eq!(r1.trajectories.len(), 5 * 2 * 2 * 5);
    let r2 = compare(&b, &b, &opts).unwrap();
    assert_eq!(r1.without_timing(), r2.without_timing());
    assert_eq!(r1.without_timing().to_json(), r2.without_timing().to_json());
    let t = r1.timing.unwrap();
    assert!(t.speedup > 0.0 && t.requests > 0);

    let mut buf = Vec::new();
    r1.write_trajectories_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("budget,run,configurator,backend,cost\n"));
    assert_eq!(text.lines().count(), 1 + r1.trajectories.len());
    let mut buf = Vec::new();
    r1.write_outcomes_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 5);
}

#[test]
fn compare_rejects_bad_options() {
    let b = SyntheticBackend::new(SyntheticSpec::default());
    let mut o = small_compare(1);
    o.configurators.truncate(1);
    assert!(matches!(compare(&b, &b, &o), Err(HarnessError::TooFewConfigurators(1))));
    let mut o = small_compare(1);
    o.grid = Some(Vec::new());
    assert!(matches!(compare(&b, &b, &o), Err(HarnessError::Options(_))));
}

#[test]
fn setting_two_validation_beats_configuration_correlation() {
    let b = SyntheticBackend::new(SyntheticSpec { seed: 5, ..SyntheticSpec::default() });
    let (ds, _) = collect_dataset(
        &b,
        &[Configurator::random_search(), Configurator::roar()],
        3,
        Budget::Evaluations(400),
        7,
    )
    .unwrap();
    assert!(ds.records.iter().any(|r| r.is_validation));
    let plan = loro_splits(&ds).unwrap();
    let opts = BuildOptions { forest: ForestConfig { num_trees: 16, ..Default::default() }, ..Default::default() };
    let q = model_quality(&ds, &plan, &opts, 2).unwrap();
    let conf: Vec<f64> = q.rows_for(None).filter_map(|r| r.cc_config).collect();
    let val: Vec<f64> = q.rows_for(None).filter_map(|r| r.cc_validation).collect();
    assert_eq!(conf.len(), 3);
    assert_eq!(val.len(), 3);
    assert!(stats::median(&val) >= stats::median(&conf), "validation {val:?} configuration {conf:?}");
}
