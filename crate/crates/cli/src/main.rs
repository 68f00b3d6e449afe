//! `alod`: generate datasets, run active-learning experiments, evaluate them.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
//! single `error[<category>]: <message>` line on stderr.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use alod_core::coco::load_manifest;
use alod_core::config::{load_config, ExperimentConfig};
use alod_core::eval::{report, MaxPerformanceTable, ReportOptions};
use alod_core::orchestrator::check::protocol_check;
use alod_core::orchestrator::{backend_from_command, run_matrix, RunPlan};
use alod_core::query::Strategy;
use alod_core::runlog::find_runlogs;
use alod_core::synthgen::{dataset_stats, generate_dataset};

#[derive(Parser)]
#[command(name = "alod", version, about = "Active-learning sandbox for object detection")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a semi-synthetic detection dataset.
    Generate(GenerateArgs),
    /// Box statistics of one split.
    Stats(StatsArgs),
    /// Run the strategy x seed matrix.
    Run(RunArgs),
    /// Curves, AUCs, crossings and correlations from runlogs.
    Evaluate(EvaluateArgs),
    /// Send golden requests to a backend and validate its responses.
    ProtocolCheck(CheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file (or a config.resolved.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set al.query.aggregation=max`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// `builtin:sim` or a command line; `--request <dir>` is appended.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Dataset manifest (default: $ALOD_DATA_ROOT/manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output root for runlogs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    query_size: Option<usize>,
    #[arg(long)]
    initial_labeled: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dropout_samples: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Record 0 seconds per step so reruns are byte-identical.
    #[arg(long)]
    no_wall_clock: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directories searched recursively for runlog.json.
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// CSV with columns dataset,detector,max_map50.
    #[arg(long)]
    max_performance: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
    /// Crossing level as a fraction of the maximum performance.
    #[arg(long, default_value_t = 0.9)]
    level_fraction: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value = "builtin:sim")]
    backend: String,
    /// Keep request directories here instead of a temporary directory.
    #[arg(long)]
    work: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    timeout_secs: u64,
}

struct Failure {
    category: &'static str,
    message: String,
}

fn fail(category: &'static str, message: impl Display) -> Failure {
    Failure {
        category,
        message: message.to_string(),
    }
}

fn config_fail(e: impl Display) -> Failure {
    fail("config", e)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Stats(a) => stats(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ProtocolCheck(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    load_config(args.config.as_deref(), &args.overrides).map_err(config_fail)
}

fn with_threads<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(config_fail("--jobs: must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(config_fail)?;
            Ok(pool.install(f))
        }
    }
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut config = load(&a.config)?;
    let synth = &mut config.synth;
    if let Some(s) = a.seed {
        synth.seed = s;
    }
    if let Some(n) = a.train {
        synth.splits.train = n;
    }
    if let Some(n) = a.val {
        synth.splits.val = n;
    }
    if let Some(n) = a.test {
        synth.splits.test = n;
    }
    config.validate().map_err(config_fail)?;
    let manifest = with_threads(a.jobs, || generate_dataset(&config.synth, &a.out))?.map_err(|e| fail("dataset", e))?;
    for (split, images) in manifest.splits() {
        let instances: usize = images.iter().map(|r| r.annotations.len()).sum();
        println!("{split}: {} images, {instances} instances", images.len());
    }
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&a.manifest).map_err(|e| fail("dataset", e))?;
    let s = dataset_stats(&manifest, &a.split).map_err(|e| fail("dataset", e))?;
    println!("dataset\tsplit\timages\tinstances\tstd_cx\tstd_cy\tstd_w\tstd_h\tmean_instances");
    println!(
        "{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
        manifest.name(),
        a.split,
        s.images,
        s.instances,
        s.std_cx,
        s.std_cy,
        s.std_w,
        s.std_h,
        s.mean_instances
    );
    Ok(())
}

fn resolve_run_config(a: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = load(&a.config)?;
    let al = &mut config.al;
    if let Some(b) = &a.backend {
        al.backend.command = b.clone();
    }
    if let Some(s) = &a.seeds {
        al.seeds = s.clone();
    }
    if let Some(s) = &a.strategies {
        al.strategies = s.clone();
    }
    if let Some(m) = &a.manifest {
        al.manifest = Some(m.clone());
    }
    if let Some(n) = a.query_size {
        al.query.query_size = n;
    }
    if let Some(n) = a.initial_labeled {
        al.initial_labeled = n;
    }
    if let Some(n) = a.steps {
        al.steps = n;
    }
    if let Some(n) = a.dropout_samples {
        al.query.dropout_samples = n;
    }
    if let Some(n) = a.jobs {
        al.jobs = n;
    }
    if a.no_wall_clock {
        al.record_wall_clock = false;
    }
    if let Some(o) = &a.out {
        config.output_root = o.clone();
    }
    config.validate().map_err(config_fail)?;
    Ok(config)
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let config = resolve_run_config(&a)?;
    if a.dump_config {
        let dump = serde_json::json!({
            "fingerprint": config.fingerprint(),
            "config": config,
        });
        println!("{}", serde_json::to_string_pretty(&dump).map_err(config_fail)?);
        return Ok(());
    }
    let manifest_path = config.manifest_path().map_err(config_fail)?;
    let manifest = Arc::new(load_manifest(&manifest_path).map_err(|e| fail("dataset", e))?);
    config.write_resolved(&config.output_root).map_err(|e| fail("io", e))?;
    let al = &config.al;
    let backend = backend_from_command(
        &al.backend.command,
        Duration::from_secs(al.backend.timeout_secs),
        Some(manifest.clone()),
    )
    .map_err(config_fail)?;
    let plan = RunPlan {
        al,
        manifest: &manifest,
        manifest_path: manifest_path.display().to_string(),
        backend_options: config.backend_options(),
        fingerprint: config.fingerprint(),
        config_snapshot: config.snapshot(),
        out_root: config.output_root.clone(),
    };
    let outcomes = run_matrix(&plan, backend.as_ref()).map_err(|e| fail(e.category(), e))?;
    let mut first_error = None;
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(log) => {
                let last = log.steps.last().map(|s| s.map50).unwrap_or(f64::NAN);
                println!("{}\tseed {}\tfinal mAP50 {last:.4}", o.strategy, o.seed);
            }
            Err(e) => {
                println!("{}\tseed {}\tFAILED: {e}", o.strategy, o.seed);
                failed += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok(()),
        Some(e) => Err(fail(
            e.category(),
            format!("{failed} of {} runs failed; first: {e}", outcomes.len()),
        )),
    }
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let logs = find_runlogs(&a.runs).map_err(|e| fail("runlog", e))?;
    let max = match &a.max_performance {
        Some(p) => MaxPerformanceTable::read_csv(p).map_err(config_fail)?,
        None => MaxPerformanceTable::default(),
    };
    let options = ReportOptions {
        level_fraction: a.level_fraction,
        svg: a.svg,
    };
    let r = report(logs, &max, &a.out, &options).map_err(|e| fail("eval", e))?;
    for e in &r.experiments {
        println!("{}\t{}\t{} strategies", e.dataset, e.detector, e.final_map.len());
    }
    println!("{}", a.out.display());
    Ok(())
}

fn check(a: CheckArgs) -> Result<(), Failure> {
    let backend = backend_from_command(&a.backend, Duration::from_secs(a.timeout_secs), None).map_err(config_fail)?;
    let temp;
    let work: &Path = match &a.work {
        Some(w) => w,
        None => {
            temp = tempfile::tempdir().map_err(|e| fail("io", e))?;
            temp.path()
        }
    };
    let report = protocol_check(backend.as_ref(), work).map_err(|e| fail("dataset", e))?;
    for r in &report.results {
        match &r.outcome {
            Ok(()) => println!("PASS {}", r.name),
            Err(e) => println!("FAIL {}: {e}", r.name),
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(fail("protocol", format!("backend {:?} does not conform", a.backend)))
    }
}
