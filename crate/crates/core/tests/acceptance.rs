//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and fails if any criterion fails.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use acsurrogate::censor_impute::impute_matrix;
use acsurrogate::config_space::ColumnKind;
use acsurrogate::configurators::RemoteBackend;
use acsurrogate::eval_harness::{
    budget_grid, collect_dataset, compare, compare_loco, loro_splits, model_quality, DEFAULT_GRID_POINTS,
};
use acsurrogate::rng::derive_seed;
use acsurrogate::run_data::response;
use acsurrogate::stats::{kruskal_wallis, spearman, wilcoxon_rank_sum};
use acsurrogate::surrogate::Server;
use acsurrogate::{
    rng_from_seed, BenchmarkBackend, BuildOptions, Budget, CompareOptions, Configuration, Configurator, Dataset,
    Forest, ForestConfig, Matrix, RunStatus, SurrogateBenchmark, SyntheticBackend, SyntheticSpec,
};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 2024;
const RUNS_PER_CONFIGURATOR: usize = 5;
const EVALUATIONS_PER_RUN: usize = 2000;
const COMPARE_RUNS: usize = 10;
const COMPARE_BUDGET: f64 = 2000.0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn record(out: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { name, pass, detail });
}

fn elapsed(t: Instant) -> Duration {
    t.elapsed()
}

fn backend() -> SyntheticBackend {
    SyntheticBackend::new(SyntheticSpec { seed: SEED, ..SyntheticSpec::default() })
}

fn forest_correctness() -> (bool, String) {
    let start = Instant::now();
    let mut rng = rng_from_seed(11);
    let mut m = Matrix::new(vec![ColumnKind::Numeric, ColumnKind::Numeric, ColumnKind::Categorical { n_values: 4 }]);
    for _ in 0..500 {
        let row = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen_range(0..4) as f64];
        let y = row[0] * 3.0 - row[1] + row[2] * 0.5 + rng.gen::<f64>() * 0.1;
        m.push(&row, y, false, f64::INFINITY);
    }
    let tree = Forest::fit(&m, &ForestConfig::interpolating(), &mut rng).unwrap();
    let sse: f64 = (0..m.n_rows()).map(|i| (tree.predict_mean(m.row(i)).unwrap() - m.y[i]).powi(2)).sum();
    let rmse = (sse / m.n_rows() as f64).sqrt();
    let fit_time = elapsed(start);

    let forest = Forest::fit(&m, &ForestConfig::default(), &mut rng).unwrap();
    let alphas: Vec<f64> = (0..10).map(|k| (k as f64 + 0.5) / 10.0).collect();
    let mut violations = 0;
    for _ in 0..1000 {
        let q = [rng.gen::<f64>() * 1.2 - 0.1, rng.gen::<f64>() * 1.2 - 0.1, rng.gen_range(0..4) as f64];
        let preds: Vec<f64> = alphas.iter().map(|&a| forest.predict_quantile(&q, a).unwrap()).collect();
        violations += preds.windows(2).filter(|w| w[1] < w[0]).count();
    }
    (
        rmse == 0.0 && fit_time < Duration::from_secs(1) && violations == 0,
        format!("training rmse {rmse:e} in {fit_time:?}, {violations} quantile violations over 10^3 x 10"),
    )
}

/// Two-sided exact p-value by enumerating every assignment of pooled ranks.
fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let big_n = pooled.len();
    let observed: usize = pooled.iter().enumerate().filter(|(_, p)| p.1).map(|(i, _)| i + 1).sum();
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << big_n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let w: usize = (0..big_n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        total += 1;
        le += (w <= observed) as u64;
        ge += (w >= observed) as u64;
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

fn statistics_oracles() -> (bool, String) {
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for n in 1..=7 {
        for m in 1..=7 {
            for _ in 0..5 {
                let mut values: Vec<f64> = (0..n + m).map(|i| i as f64 + 0.25).collect();
                for i in (1..values.len()).rev() {
                    values.swap(i, rng.gen_range(0..=i));
                }
                let (a, b) = values.split_at(n);
                let got = wilcoxon_rank_sum(a, b).unwrap();
                worst = worst.max((got - brute_force_p(a, b)).abs());
            }
        }
    }
    let (h, _) = kruskal_wallis(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
    let h_formula = 12.0 / (6.0 * 7.0) * (6.0f64.powi(2) / 3.0 + 15.0f64.powi(2) / 3.0) - 3.0 * 7.0;
    let fwd: Vec<f64> = (0..25).map(|i| (i as f64).sqrt()).collect();
    let rev: Vec<f64> = fwd.iter().rev().copied().collect();
    let rho = spearman(&fwd, &rev).unwrap();
    (
        worst <= 1e-12 && (h - 3.857).abs() <= 1e-3 && (h - h_formula).abs() <= 1e-12 && rho == -1.0,
        format!("max wilcoxon deviation {worst:e}, kruskal-wallis H {h:.6}, reversed spearman {rho}"),
    )
}

fn imputation() -> (bool, String) {
    let start = Instant::now();
    let cutoff = 1000.0f64;
    let ceiling = (10.0 * cutoff).log10();
    let noise = Normal::new(0.0, 0.25).unwrap();
    let (mut wins, mut below, mut above) = (0, 0usize, 0usize);
    for rep in 0..20u64 {
        let mut rng = rng_from_seed(500 + rep);
        let mut m = Matrix::new(vec![ColumnKind::Numeric; 3]);
        let mut truth = Vec::new();
        for i in 0..2000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let y = 0.5 + 2.0 * x[0] + 0.5 * (x[1] * 6.0).sin() - 0.3 * x[2] + noise.sample(&mut rng);
            truth.push(y);
            if i % 10 < 3 {
                let bound = (y - rng.gen_range(0.0..1.5)).min(cutoff.log10());
                m.push(&x, bound, true, ceiling);
            } else {
                m.push(&x, y, false, ceiling);
            }
        }
        let (out, _) = impute_matrix(&m, &ForestConfig::default(), &mut rng_from_seed(rep)).unwrap();
        let (mut err_imp, mut err_bound) = (0.0, 0.0);
        for i in 0..m.n_rows() {
            if m.censored[i] {
                below += (out.y[i] < m.y[i]) as usize;
                above += (out.y[i] > ceiling) as usize;
                err_imp += (out.y[i] - truth[i]).abs();
                err_bound += (m.y[i] - truth[i]).abs();
            }
        }
        wins += (err_imp < err_bound) as usize;
    }
    let t = elapsed(start);
    (
        below == 0 && above == 0 && wins >= 16 && t < Duration::from_secs(60),
        format!("{below} below bound, {above} above cap, {wins}/20 wins over lower bounds, {t:?}"),
    )
}

fn collect(b: &SyntheticBackend) -> Dataset {
    collect_dataset(
        b,
        &[Configurator::random_search(), Configurator::roar()],
        RUNS_PER_CONFIGURATOR,
        Budget::Evaluations(EVALUATIONS_PER_RUN),
        SEED,
    )
    .unwrap()
    .0
}

/// Rank correlation between observed log costs and each configuration's mean
/// log cost over all its runs, ignoring the instance.
fn mean_regressor_cc(ds: &Dataset) -> f64 {
    let rows: Vec<(Vec<u8>, f64)> = ds
        .records
        .iter()
        .filter(|r| matches!(r.status, RunStatus::Success | RunStatus::Timeout))
        .map(|r| (r.config.canonical_bytes(), response(r, &ds.objective).unwrap()))
        .collect();
    let mut groups: BTreeMap<&[u8], (f64, usize)> = BTreeMap::new();
    for (k, y) in &rows {
        let e = groups.entry(k).or_default();
        e.0 += y;
        e.1 += 1;
    }
    let truth: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let pred: Vec<f64> = rows.iter().map(|(k, _)| groups[k.as_slice()].0 / groups[k.as_slice()].1 as f64).collect();
    spearman(&truth, &pred).unwrap()
}

fn loro_quality(ds: &Dataset) -> (bool, String) {
    let start = Instant::now();
    let plan = loro_splits(ds).unwrap();
    let q = model_quality(ds, &plan, &BuildOptions::default(), SEED).unwrap();
    let mean = q.mean(None);
    let t = elapsed(start);
    let baseline = mean_regressor_cc(ds);
    let cc = mean.cc_config.zip(mean.cc_validation).map(|(a, b)| a.min(b)).unwrap_or(f64::NAN);
    let rmse = mean.rmse_config.zip(mean.rmse_validation).map(|(a, b)| a.max(b)).unwrap_or(f64::NAN);
    (
        cc >= 0.85 && rmse <= 0.5 && cc > baseline && t < Duration::from_secs(300),
        format!(
            "{} splits, CC config {:.3} validation {:.3}, RMSE config {:.3} validation {:.3}, mean-regressor CC {baseline:.3}, {t:?}",
            plan.splits.len(),
            mean.cc_config.unwrap_or(f64::NAN),
            mean.cc_validation.unwrap_or(f64::NAN),
            mean.rmse_config.unwrap_or(f64::NAN),
            mean.rmse_validation.unwrap_or(f64::NAN),
        ),
    )
}

fn compare_options() -> CompareOptions {
    let mut o = CompareOptions::new(
        vec![Configurator::roar(), Configurator::ils(), Configurator::random_search()],
        COMPARE_RUNS,
        COMPARE_BUDGET,
        SEED,
    );
    o.grid = Some(budget_grid(SyntheticSpec::default().cutoff, COMPARE_BUDGET, DEFAULT_GRID_POINTS));
    o
}

fn ks_distance(sb: &SurrogateBenchmark, b: &SyntheticBackend) -> (bool, String) {
    let mut rng = rng_from_seed(77);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let config = b.space().sample_uniform(&mut rng);
        let ids = b.instances().ids();
        let inst = &ids[rng.gen_range(0..ids.len())];
        let mut draws: Vec<f64> =
            (0..1000u64).map(|s| sb.predict_run(&config, inst, s).unwrap().raw_prediction).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = sb.forest().pooled_cdf(&sb.encode(&config, inst).unwrap()).unwrap();
        let n = draws.len() as f64;
        for (k, &(v, c)) in cdf.iter().enumerate() {
            let last_of_atom = cdf.get(k + 1).map_or(true, |next| next.0 > v);
            if !last_of_atom {
                continue;
            }
            let emp = draws.partition_point(|&d| d <= v) as f64 / n;
            let emp_left = draws.partition_point(|&d| d < v) as f64 / n;
            let left = cdf[..k].iter().rev().find(|p| p.0 < v).map_or(0.0, |p| p.1);
            worst = worst.max((emp - c).abs()).max((emp_left - left).abs());
        }
    }
    (worst <= 0.05, format!("max KS distance {worst:.4} over 20 points x 10^3 seeds"))
}

fn serving(sb: Arc<SurrogateBenchmark>, b: &SyntheticBackend) -> (bool, String) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = Server::new(sb.clone());
    let mut rng = rng_from_seed(99);
    let requests: Vec<(Configuration, String, u64)> = (0..1000)
        .map(|_| {
            let ids = b.instances().ids();
            (b.space().sample_uniform(&mut rng), ids[rng.gen_range(0..ids.len())].clone(), rng.gen())
        })
        .collect();
    let mismatches = thread::scope(|s| {
        s.spawn(|| server.serve_tcp(listener).unwrap());
        let remote = RemoteBackend::connect(addr).unwrap();
        let mut bad = 0;
        for (c, i, seed) in &requests {
            let wire = remote.run(c, i, *seed).unwrap();
            let local = sb.predict_run(c, i, *seed).unwrap();
            if wire.status != local.status || wire.cost.to_bits() != local.cost.to_bits() {
                bad += 1;
            }
        }
        remote.shutdown().unwrap();
        bad
    });
    let latency = server.latency();

    let bytes = sb.to_bytes();
    let loaded = SurrogateBenchmark::from_bytes(&bytes).unwrap();
    let reloaded_mismatch = requests
        .iter()
        .filter(|(c, i, seed)| sb.predict_run(c, i, *seed).unwrap() != loaded.predict_run(c, i, *seed).unwrap())
        .count();
    let trees = sb.forest().trees().len();
    (
        mismatches == 0 && latency.mean_ms <= 10.0 && trees == 48 && reloaded_mismatch == 0 && loaded == *sb,
        format!(
            "{mismatches} wire mismatches over {} requests, mean latency {:.3} ms ({trees} trees), {reloaded_mismatch} save/load mismatches",
            latency.count, latency.mean_ms
        ),
    )
}

fn main() {
    let mut out = Vec::new();

    let (p, d) = forest_correctness();
    record(&mut out, "forest correctness", p, d);
    let (p, d) = statistics_oracles();
    record(&mut out, "statistics oracles", p, d);
    let (p, d) = imputation();
    record(&mut out, "censored imputation", p, d);

    let b = backend();
    let ds = collect(&b);
    let (p, d) = loro_quality(&ds);
    record(&mut out, "leave-one-run-out fidelity", p, d);

    let start = Instant::now();
    let build = BuildOptions::default();
    let sb = Arc::new(SurrogateBenchmark::build(&ds, &build, &mut rng_from_seed(derive_seed(SEED, &[1]))).unwrap());
    let opts = compare_options();
    let report = compare(&b, sb.as_ref(), &opts).unwrap();
    let identity = compare(&b, &b, &opts).unwrap();
    let t = elapsed(start);
    let timing = report.timing.unwrap();
    record(
        &mut out,
        "end-to-end error",
        report.error < 0.5 && identity.error == 0.0 && t < Duration::from_secs(600),
        format!(
            "error {:.4}, identity error {}, speedup {:.0}x over {} requests, {t:?}",
            report.error, identity.error, timing.speedup, timing.requests
        ),
    );

    let start = Instant::now();
    let (_, loco) = compare_loco(&b, &ds, "roar", &build, &opts).unwrap();
    let t = elapsed(start);
    record(
        &mut out,
        "leave-one-configurator-out error",
        loco.error < 0.55 && t < Duration::from_secs(600),
        format!("error {:.4} without roar data, {t:?}", loco.error),
    );

    let (p, d) = ks_distance(&sb, &b);
    record(&mut out, "randomized prediction distribution", p, d);
    let (p, d) = serving(sb.clone(), &b);
    record(&mut out, "serving and latency", p, d);

    let ds2 = collect(&b);
    let (mut runs1, mut runs2) = (Vec::new(), Vec::new());
    ds.write_runs(&mut runs1).unwrap();
    ds2.write_runs(&mut runs2).unwrap();
    let sb2 = SurrogateBenchmark::build(&ds2, &build, &mut rng_from_seed(derive_seed(SEED, &[1]))).unwrap();
    let report2 = compare(&b, &sb2, &opts).unwrap();
    let (mut traj1, mut traj2) = (Vec::new(), Vec::new());
    report.write_trajectories_csv(&mut traj1).unwrap();
    report2.write_trajectories_csv(&mut traj2).unwrap();
    let same_runs = runs1 == runs2;
    let same_model = sb.to_bytes() == sb2.to_bytes();
    let same_report = report.without_timing().to_json() == report2.without_timing().to_json();
    let same_traj = traj1 == traj2;
    record(
        &mut out,
        "determinism",
        same_runs && same_model && same_report && same_traj,
        format!(
            "identical runs {same_runs}, model bytes {same_model}, report {same_report}, trajectories {same_traj}"
        ),
    );

    let failed: Vec<&Outcome> = out.iter().filter(|o| !o.pass).collect();
    println!("{}/{} criteria passed", out.len() - failed.len(), out.len());
    if !failed.is_empty() {
        for f in failed {
            eprintln!("failed: {} ({})", f.name, f.detail);
        }
        std::process::exit(1);
    }
}
