//! `acsurrogate` command-line front-end.

use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use acsurrogate::eval_harness::{
    budget_grid, collect_dataset, compare, loco_splits, loro_splits, model_quality, FidelityReport,
    DEFAULT_GRID_POINTS,
};
use acsurrogate::run_data::ingest_runs;
use acsurrogate::surrogate::{serve_stdio, Server};
use acsurrogate::{
    parse_space, rng_from_seed, BenchmarkBackend, BuildOptions, Budget, CompareOptions, Configurator,
    ConfigurationSpace, Dataset, ForestConfig, Objective, Setting, SurrogateBenchmark, SyntheticBackend,
    SyntheticSpec,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "acsurrogate", version, about = "Surrogate benchmarks for algorithm configuration")]
struct Cli {
    /// Worker threads (defaults to the number of available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a space, runs and features file and print a summary.
    Ingest(DataArgs),
    /// Write a synthetic benchmark's space, features and configurator runs.
    Generate(GenerateArgs),
    /// Build a surrogate model and save it.
    Train(TrainArgs),
    /// Predict one run with a saved model.
    Predict(PredictArgs),
    /// Answer newline-delimited JSON requests with a saved model.
    Serve(ServeArgs),
    /// Held-out model quality over leave-one-run-out or leave-one-configurator-out splits.
    Evaluate(EvaluateArgs),
    /// Compare configurators on a synthetic benchmark and on a saved surrogate of it.
    Compare(CompareArgs),
    /// Generate, train and compare end to end on a synthetic benchmark.
    Demo(DemoArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ObjectiveKind {
    Runtime,
    Quality,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Parameter space file.
    #[arg(long)]
    space: PathBuf,
    /// Runs file (CSV).
    #[arg(long)]
    runs: PathBuf,
    /// Instance features file (CSV).
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveKind::Runtime)]
    objective: ObjectiveKind,
    /// Lower clip for quality predictions.
    #[arg(long)]
    quality_lower: Option<f64>,
    /// Upper clip for quality predictions.
    #[arg(long)]
    quality_upper: Option<f64>,
}

#[derive(Args, Debug)]
struct ForestArgs {
    /// Rows in the training matrix: I (training instances), II (plus test-instance incumbents) or all.
    #[arg(long, default_value = "II", value_parser = parse_setting)]
    setting: Setting,
    #[arg(long, default_value_t = 48)]
    num_trees: usize,
    #[arg(long, default_value_t = 0.8)]
    frac_points: f64,
    #[arg(long, default_value_t = 0.28)]
    frac_feats: f64,
    #[arg(long, default_value_t = 5)]
    min_samples_to_split: usize,
    #[arg(long, default_value_t = 1)]
    min_samples_in_leaf: usize,
    #[arg(long, default_value_t = 26)]
    max_depth: usize,
    #[arg(long, default_value_t = 50_000)]
    max_nodes: usize,
    /// Sample rows with replacement.
    #[arg(long, default_value_t = false)]
    bootstrapping: bool,
    /// Maximum number of run records used for training.
    #[arg(long, default_value_t = acsurrogate::run_data::DEFAULT_SUBSAMPLE_CAP)]
    subsample_cap: usize,
    /// Always predict the median instead of a seed-dependent quantile.
    #[arg(long, default_value_t = false)]
    deterministic_target: bool,
}

#[derive(Args, Debug)]
struct SyntheticArgs {
    /// Seed of the synthetic benchmark's landscape and instances.
    #[arg(long, default_value_t = 0)]
    bench_seed: u64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Cutoff time in seconds.
    #[arg(long, default_value_t = 10.0)]
    cutoff: f64,
    /// Expected fraction of timeouts over random configurations.
    #[arg(long, default_value_t = 0.1)]
    timeout_fraction: f64,
    /// Standard deviation of the log-normal runtime noise.
    #[arg(long, default_value_t = 0.3)]
    noise_scale: f64,
    /// Range of instance hardness offsets (natural log).
    #[arg(long, default_value_t = 4.0)]
    hardness_spread: f64,
    /// Quadratic basins in the configuration landscape.
    #[arg(long, default_value_t = 3)]
    basins: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Directory for space.pcs, features.csv and runs.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    synthetic: SyntheticArgs,
    /// Comma-separated configurators that produce the runs.
    #[arg(long, default_value = "random_search,roar")]
    configurators: String,
    /// Runs per configurator.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Target-algorithm evaluations per configurator run.
    #[arg(long, default_value_t = 2000)]
    evaluations: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    forest: ForestArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Configuration as a JSON object of active parameter values.
    #[arg(long)]
    config: String,
    #[arg(long)]
    instance: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "transport")]
struct Transport {
    /// Listen for TCP connections on this address, e.g. 127.0.0.1:7070.
    #[arg(long)]
    listen: Option<String>,
    /// Read requests from standard input and answer on standard output.
    #[arg(long)]
    stdio: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    transport: Transport,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Loro,
    Loco,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Loro)]
    split: SplitArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    forest: ForestArgs,
}

#[derive(Args, Debug)]
struct CompareRunArgs {
    /// Comma-separated configurators to compare.
    #[arg(long, default_value = "roar,ils,random_search")]
    compare_configurators: String,
    /// Runs per configurator on each backend.
    #[arg(long, default_value_t = 10)]
    compare_runs: usize,
    /// Target-time budget per configurator run, in seconds.
    #[arg(long, default_value_t = 2000.0)]
    budget: f64,
    /// Points in the logarithmic budget grid starting at the cutoff.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Significance level of the pairwise tests.
    #[arg(long, default_value_t = acsurrogate::eval_harness::DEFAULT_ALPHA)]
    alpha: f64,
    /// Directory for report.json, outcomes.csv, trajectories.csv and summary.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Surrogate model of the synthetic benchmark.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    synthetic: SyntheticArgs,
    #[command(flatten)]
    run: CompareRunArgs,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Runs per configurator used as training data.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Evaluations per training-data run.
    #[arg(long, default_value_t = 2000)]
    evaluations: usize,
    #[command(flatten)]
    run: CompareRunArgs,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl Display) -> Self {
        Failure { kind, message: message.to_string() }
    }

    fn emit(&self) {
        eprintln!("{}", json!({"error": {"kind": self.kind, "message": self.message}}));
    }
}

fn fail<E: Display>(kind: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure::new(kind, e)
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    s.parse()
}

fn objective(d: &DataArgs) -> Objective {
    match d.objective {
        ObjectiveKind::Runtime => Objective::Runtime,
        ObjectiveKind::Quality => Objective::Quality { lower: d.quality_lower, upper: d.quality_upper },
    }
}

fn build_options(f: &ForestArgs) -> BuildOptions {
    BuildOptions {
        setting: f.setting,
        forest: ForestConfig {
            bootstrapping: f.bootstrapping,
            frac_points: f.frac_points,
            max_nodes: f.max_nodes,
            max_depth: f.max_depth,
            min_samples_in_leaf: f.min_samples_in_leaf,
            min_samples_to_split: f.min_samples_to_split,
            frac_feats: f.frac_feats,
            num_trees: f.num_trees,
        },
        subsample_cap: f.subsample_cap,
        deterministic_target: f.deterministic_target,
    }
}

fn spec(s: &SyntheticArgs) -> SyntheticSpec {
    SyntheticSpec {
        seed: s.bench_seed,
        n_instances: s.instances,
        hardness_spread: s.hardness_spread,
        noise_scale: s.noise_scale,
        timeout_fraction: s.timeout_fraction,
        cutoff: s.cutoff,
        basins: s.basins,
    }
}

fn configurators(list: &str) -> Result<Vec<Configurator>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|n| Configurator::by_name(n).ok_or_else(|| Failure::new("usage", format!("unknown configurator `{n}`"))))
        .collect()
}

fn load_dataset(d: &DataArgs) -> Result<Dataset, Failure> {
    let text = fs::read_to_string(&d.space).map_err(|e| Failure::new("io", format!("{}: {e}", d.space.display())))?;
    let space = parse_space(&text).map_err(|e| Failure::new("space", format!("{}: {e}", d.space.display())))?;
    ingest_runs(&d.runs, &d.features, Arc::new(space), objective(d)).map_err(fail("data"))
}

fn load_model(path: &Path) -> Result<SurrogateBenchmark, Failure> {
    SurrogateBenchmark::load(path).map_err(|e| Failure::new("model", format!("{}: {e}", path.display())))
}

fn print_json(v: serde_json::Value) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    writeln!(out, "{v}").map_err(fail("io"))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn write_dataset(dir: &Path, space: &ConfigurationSpace, ds: &Dataset) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(fail("io"))?;
    fs::write(dir.join("space.pcs"), space.render()).map_err(fail("io"))?;
    ds.instances.write_csv(create(&dir.join("features.csv"))?).map_err(fail("io"))?;
    ds.write_runs(create(&dir.join("runs.csv"))?).map_err(fail("io"))
}

fn dataset_summary(ds: &Dataset) -> serde_json::Value {
    let count = |s: acsurrogate::RunStatus| ds.records.iter().filter(|r| r.status == s).count();
    json!({
        "records": ds.records.len(),
        "validation_records": ds.records.iter().filter(|r| r.is_validation).count(),
        "success": count(acsurrogate::RunStatus::Success),
        "timeout": count(acsurrogate::RunStatus::Timeout),
        "censored": count(acsurrogate::RunStatus::Censored),
        "crashed": count(acsurrogate::RunStatus::Crashed),
        "instances": ds.instances.len(),
        "parameters": ds.space.len(),
        "configurators": ds.configurators(),
        "runs": ds.sources().len(),
        "digest": ds.digest(),
    })
}

fn model_summary(sb: &SurrogateBenchmark) -> serde_json::Value {
    let p = sb.provenance();
    let trees = sb.forest().trees();
    json!({
        "imputation": {
            "censored_rows": p.n_censored,
            "iterations": p.imputation_iterations,
        },
        "fit": {
            "setting": p.setting,
            "records": p.n_records,
            "crashed_dropped": p.n_crashed,
            "rows": p.n_rows,
            "trees": trees.len(),
            "leaves": trees.iter().map(|t| t.n_leaves()).sum::<usize>(),
            "max_depth": trees.iter().map(|t| t.depth()).max().unwrap_or(0),
        },
    })
}

fn run_compare(
    original: &dyn BenchmarkBackend,
    surrogate: &dyn BenchmarkBackend,
    seed: u64,
    a: &CompareRunArgs,
) -> Result<FidelityReport, Failure> {
    let mut opts = CompareOptions::new(configurators(&a.compare_configurators)?, a.compare_runs, a.budget, seed);
    opts.alpha = a.alpha;
    opts.grid = Some(budget_grid(original.cutoff().min(a.budget), a.budget, a.grid_points));
    let report = compare(original, surrogate, &opts).map_err(fail("compare"))?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(fail("io"))?;
        fs::write(dir.join("report.json"), report.to_json()).map_err(fail("io"))?;
        report.write_outcomes_csv(create(&dir.join("outcomes.csv"))?).map_err(fail("io"))?;
        report.write_trajectories_csv(create(&dir.join("trajectories.csv"))?).map_err(fail("io"))?;
        report.write_summary_csv(create(&dir.join("summary.csv"))?).map_err(fail("io"))?;
    }
    Ok(report)
}

fn report_summary(r: &FidelityReport) -> serde_json::Value {
    json!({
        "configurators": r.configurators,
        "runs": r.n_runs,
        "budgets": r.budgets.len(),
        "error": r.error,
        "timing": r.timing,
    })
}

fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let backend = SyntheticBackend::new(spec(&a.synthetic));
    let (ds, _) =
        collect_dataset(&backend, &configurators(&a.configurators)?, a.runs, Budget::Evaluations(a.evaluations), a.seed)
            .map_err(fail("generate"))?;
    write_dataset(&a.out_dir, backend.space(), &ds)?;
    print_json(dataset_summary(&ds))
}

fn train(a: &TrainArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.data)?;
    let opts = build_options(&a.forest);
    opts.forest.validate().map_err(fail("usage"))?;
    let sb = SurrogateBenchmark::build(&ds, &opts, &mut rng_from_seed(a.seed)).map_err(fail("train"))?;
    sb.save(&a.out).map_err(|e| Failure::new("io", format!("{}: {e}", a.out.display())))?;
    print_json(model_summary(&sb))
}

fn predict(a: &PredictArgs) -> Result<(), Failure> {
    let sb = load_model(&a.model)?;
    let config = sb.space().config_from_json_str(&a.config).map_err(fail("config"))?;
    let r = sb.predict_run(&config, &a.instance, a.seed).map_err(fail("predict"))?;
    print_json(serde_json::to_value(r).map_err(fail("io"))?)
}

fn serve(a: &ServeArgs) -> Result<(), Failure> {
    let sb = Arc::new(load_model(&a.model)?);
    if a.transport.stdio {
        let stats = serve_stdio(sb).map_err(fail("io"))?;
        log::info!("served {} requests, mean latency {:.3} ms", stats.count, stats.mean_ms);
        return Ok(());
    }
    let addr = a.transport.listen.as_deref().expect("clap requires a transport");
    let listener = TcpListener::bind(addr).map_err(|e| Failure::new("io", format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(fail("io"))?;
    eprintln!("{}", json!({"listening": local.to_string()}));
    let server = Server::new(sb);
    server.serve_tcp(listener).map_err(fail("io"))?;
    let stats = server.latency();
    log::info!("served {} requests, mean latency {:.3} ms", stats.count, stats.mean_ms);
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.data)?;
    let plan = match a.split {
        SplitArg::Loro => loro_splits(&ds),
        SplitArg::Loco => loco_splits(&ds),
    }
    .map_err(fail("evaluate"))?;
    let q = model_quality(&ds, &plan, &build_options(&a.forest), a.seed).map_err(fail("evaluate"))?;
    match &a.out {
        Some(p) => q.write_csv(create(p)?),
        None => q.write_csv(io::stdout().lock()),
    }
    .map_err(fail("io"))
}

fn compare_cmd(a: &CompareArgs) -> Result<(), Failure> {
    let original = SyntheticBackend::new(spec(&a.synthetic));
    let sb = load_model(&a.model)?;
    let report = run_compare(&original, &sb, a.seed, &a.run)?;
    print_json(report_summary(&report))
}

fn demo(a: &DemoArgs) -> Result<(), Failure> {
    let backend = SyntheticBackend::new(SyntheticSpec { seed: a.seed, ..SyntheticSpec::default() });
    log::info!("collecting {} runs each of random_search and roar", a.runs);
    let (ds, _) = collect_dataset(
        &backend,
        &[Configurator::random_search(), Configurator::roar()],
        a.runs,
        Budget::Evaluations(a.evaluations),
        a.seed,
    )
    .map_err(fail("demo"))?;
    log::info!("training on {} records", ds.records.len());
    let sb = SurrogateBenchmark::build(&ds, &BuildOptions::default(), &mut rng_from_seed(a.seed))
        .map_err(fail("demo"))?;
    log::info!("comparing configurators on both backends");
    let report = run_compare(&backend, &sb, a.seed, &a.run)?;
    print_json(json!({
        "data": dataset_summary(&ds),
        "model": model_summary(&sb),
        "report": report_summary(&report),
    }))?;
    println!("error: {}", report.error);
    Ok(())
}

fn ingest(a: &DataArgs) -> Result<(), Failure> {
    print_json(dataset_summary(&load_dataset(a)?))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::new("usage", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(fail("runtime"))?;
    }
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Demo(a) => demo(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            Failure::new("usage", e.render().to_string().trim_end()).emit();
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.emit();
            if f.kind == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
