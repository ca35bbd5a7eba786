//! The `evograd` command line.
//!
//! Exit status: 0 on success, 1 on bad input (flags, equations, configs),
//! 2 when something fails at run time.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use evograd_core::dsl::{check_feasible, parse_equation, Equation, ShapeEnv};
use evograd_core::evolution::Population;
use evograd_core::task::SyntheticKind;
use evograd_core::tensor::Activation;
use evograd_core::trainer::{builtin_equations, check_for_widths, EarlyStop, OptimizerKind, Schedule, TrainConfig};

use crate::config::{Assignments, SearchJob};
use crate::dataset::DatasetSpec;
use crate::report::{rerun_top, write_csv, write_json};
use crate::runlog::read_log;
use crate::search::{evaluate, population_from_records, run_search_with, SearchOptions};

/// Overrides the worker count of search jobs and reports.
pub const WORKERS_ENV: &str = "EVOGRAD_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "evograd", version, about = "Evolutionary search over backward-signal update equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run (or resume) a search job.
    Search(SearchArgs),
    /// Train one network with an equation and print its fitness.
    Train {
        #[arg(long)]
        equation: String,
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Parse, shape-check and pretty-print an equation.
    Eval {
        #[arg(long)]
        equation: String,
        /// Also check concrete layer widths, e.g. `2,32,32,2`.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Re-train the best logged candidates and write a report.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// CSV output; a JSON file with per-rerun values is written beside it.
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train the builtin equations on one task and compare them.
    Baselines {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Job config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` assignments applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Continue the log at the output path instead of starting over.
    #[arg(long)]
    resume: bool,
    /// Only print the summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct TaskArgs {
    /// blobs, two_moons, spirals or idx.
    #[arg(long, default_value = "blobs")]
    task: String,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    noise: Option<f64>,
    /// Seeds both the data and the training run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    hidden: Vec<usize>,
    /// tanh or relu.
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// sgd or momentum.
    #[arg(long, default_value = "sgd")]
    optimizer: String,
    /// constant or cosine.
    #[arg(long, default_value = "constant")]
    schedule: String,
    #[arg(long)]
    no_early_stop: bool,
}

/// Input problems (exit 1) versus run-time failures (exit 2).
enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> Failure {
    Failure::Runtime(msg.to_string())
}

/// Runs the command line and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Search(a) => search(a),
        Command::Train { equation, task, train } => train_cmd(&equation, &task, &train),
        Command::Eval { equation, widths, batch } => eval_cmd(&equation, widths.as_deref(), batch),
        Command::Report {
            log,
            k,
            repeats,
            out,
            workers,
        } => report_cmd(&log, k, repeats, &out, workers),
        Command::Baselines { task, train } => baselines(&task, &train),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn env_workers() -> Result<Option<usize>, Failure> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(usage(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn parse_eq(text: &str) -> Result<Equation, Failure> {
    parse_equation(text).map_err(|e| usage(format!("cannot parse equation: {e}")))
}

fn task_spec(a: &TaskArgs) -> Result<DatasetSpec, Failure> {
    let mut spec = if a.task == "idx" {
        match (&a.images, &a.labels) {
            (Some(i), Some(l)) => DatasetSpec::idx(i, l, a.seed),
            _ => return Err(usage("--task idx needs --images and --labels")),
        }
    } else {
        let kind = SyntheticKind::from_name(&a.task).ok_or_else(|| usage(format!("unknown task `{}`", a.task)))?;
        DatasetSpec::synthetic(kind, a.seed)
    };
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    Ok(spec)
}

fn train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig, Failure> {
    let activation = match a.activation.as_str() {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => return Err(usage(format!("unknown activation `{other}`"))),
    };
    let optimizer = match a.optimizer.as_str() {
        "sgd" => OptimizerKind::Sgd,
        "momentum" => OptimizerKind::MOMENTUM,
        other => return Err(usage(format!("unknown optimizer `{other}`"))),
    };
    let schedule = match a.schedule.as_str() {
        "constant" => Schedule::Constant,
        "cosine" => Schedule::CosineWarmup,
        other => return Err(usage(format!("unknown schedule `{other}`"))),
    };
    if a.batch_size == 0 || a.hidden.contains(&0) {
        return Err(usage("batch size and hidden widths must be positive"));
    }
    Ok(TrainConfig {
        hidden: a.hidden.clone(),
        activation,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        schedule,
        optimizer,
        seed,
        early_stop: (!a.no_early_stop).then(EarlyStop::default),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn train_cmd(equation: &str, task: &TaskArgs, train: &TrainArgs) -> Result<(), Failure> {
    let e = parse_eq(equation)?;
    let spec = task_spec(task)?;
    let config = train_config(train, task.seed)?;
    let data = spec.build().map_err(runtime)?;
    let widths = config.widths(data.features(), data.classes);
    check_for_widths(&e, &widths, config.batch_size.min(data.train.len().max(1)))
        .map_err(|err| usage(format!("equation is infeasible for widths {widths:?}: {err}")))?;
    let r = evaluate(&e, &data, &config);
    println!("equation: {e}");
    println!("key: {}", r.key);
    println!("val_acc: {:.4}", r.val_acc);
    println!("test_acc: {}", fmt_opt(r.test_acc));
    println!("chance: {:.4}", data.chance());
    println!("epochs: {}", r.epochs_completed);
    println!("early_stopped: {}", r.early_stopped);
    println!("failed: {}", r.failed);
    if let Some(reason) = &r.reason {
        println!("reason: {reason}");
    }
    println!("seconds: {:.3}", r.wall_clock_secs);
    Ok(())
}

fn eval_cmd(equation: &str, widths: Option<&[usize]>, batch: usize) -> Result<(), Failure> {
    let e = parse_eq(equation)?;
    println!("{e}");
    if e.canonical_key() != e.to_string() {
        println!("key: {}", e.canonical_key());
    }
    let shape = check_feasible(&e, &ShapeEnv::symbolic()).map_err(|err| usage(format!("infeasible: {err}")))?;
    println!("feasible, shape {shape}");
    if let Some(w) = widths {
        if w.len() < 3 || w.contains(&0) {
            return Err(usage("--widths needs at least three positive widths"));
        }
        check_for_widths(&e, w, batch.max(1)).map_err(|err| usage(format!("infeasible for widths {w:?}: {err}")))?;
        println!("feasible for widths {w:?} at batch {batch}");
    }
    Ok(())
}

fn search(a: SearchArgs) -> Result<(), Failure> {
    let mut assignments = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
            Assignments::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Assignments::default(),
    };
    let bad = |e: crate::config::ConfigError| usage(e);
    if let Some(n) = env_workers()? {
        assignments.set("workers", &n.to_string()).map_err(bad)?;
    }
    for pair in &a.set {
        assignments.set_pair(pair).map_err(bad)?;
    }
    let flags = [
        ("budget", a.budget.map(|v| v.to_string())),
        ("workers", a.workers.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("output", a.output.as_ref().map(|p| p.display().to_string())),
        ("task", a.task.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            assignments.set(k, &v).map_err(bad)?;
        }
    }
    let job = SearchJob::from_assignments(&assignments).map_err(bad)?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        // Only the first handler installation in a process succeeds.
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }
    let quiet = a.quiet;
    let mut best = f64::NEG_INFINITY;
    let on_record = move |r: &crate::runlog::RunLogRecord, pop: &Population| {
        let b = pop.best_val_acc().unwrap_or(0.0);
        if !quiet {
            let mark = if b > best { " *" } else { "" };
            println!("{:>5} val={:.4} best={:.4}{mark}  {}", r.iter, r.val_acc, b, r.eq);
        }
        best = best.max(b);
    };
    let options = SearchOptions {
        stop: Some(stop),
        on_record: Some(Box::new(on_record)),
    };
    let outcome = run_search_with(&job, a.resume, options).map_err(|e| match e {
        crate::search::SearchError::Log(crate::runlog::LogError::JobMismatch { .. }) | crate::search::SearchError::Init(_) => usage(e),
        other => runtime(other),
    })?;
    if outcome.skipped_lines > 0 {
        eprintln!("resume: dropped {} unreadable log line(s)", outcome.skipped_lines);
    }
    println!(
        "evaluated {} this run, {} children in total, log {}",
        outcome.written,
        outcome.children,
        job.output.display()
    );
    if outcome.interrupted {
        println!("interrupted; rerun with --resume to continue");
    }
    if outcome.exhausted {
        println!("no unseen children reachable; search ended early");
    }
    if let Some(b) = outcome.population.best() {
        println!("best: {:.4}  {}", b.val_acc().unwrap_or(0.0), b.equation);
    }
    Ok(())
}

fn report_cmd(log: &std::path::Path, k: usize, repeats: usize, out: &std::path::Path, workers: Option<usize>) -> Result<(), Failure> {
    if k == 0 || repeats == 0 {
        return Err(usage("--k and --repeats must be positive"));
    }
    let contents = read_log(log).map_err(|e| runtime(format!("{}: {e}", log.display())))?;
    let header = contents.header.ok_or_else(|| usage(format!("{} has no header line", log.display())))?;
    let job = SearchJob::from_text(&header.job).map_err(|e| runtime(format!("job in log header: {e}")))?;
    let pop = population_from_records(&contents.records).map_err(runtime)?;
    let workers = match workers {
        Some(n) => n,
        None => env_workers()?.unwrap_or(job.workers),
    };
    let entries = rerun_top(&pop, k, repeats, &job, workers).map_err(runtime)?;
    let csv_file = fs::File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write_csv(csv_file, &entries).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let json_path = out.with_extension("json");
    let json_file = fs::File::create(&json_path).map_err(|e| runtime(format!("{}: {e}", json_path.display())))?;
    write_json(json_file, &entries).map_err(|e| runtime(format!("{}: {e}", json_path.display())))?;
    println!("{:>4}  {:>8}  {:>8}  {:>8}  {:>8}  equation", "rank", "val", "±", "test", "±");
    for e in &entries {
        let flag = if e.failed { "  (failed rerun)" } else { "" };
        println!(
            "{:>4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {}{flag}",
            e.rank, e.val_mean, e.val_std, e.test_mean, e.test_std, e.equation
        );
    }
    println!("wrote {} and {}", out.display(), json_path.display());
    Ok(())
}

fn baselines(task: &TaskArgs, train: &TrainArgs) -> Result<(), Failure> {
    let spec = task_spec(task)?;
    let config = train_config(train, task.seed)?;
    let data = spec.build().map_err(runtime)?;
    println!("task {} (chance {:.4}), {} epochs, lr {}", spec.kind.name(), data.chance(), config.epochs, config.lr);
    println!("{:<20} {:>8} {:>8} {:>7} {:>6}", "equation", "val_acc", "test_acc", "epochs", "status");
    for (name, e) in builtin_equations() {
        let r = evaluate(&e, &data, &config);
        let status = if r.failed {
            "failed"
        } else if r.early_stopped {
            "early"
        } else {
            "ok"
        };
        println!(
            "{:<20} {:>8.4} {:>8} {:>7} {:>6}",
            name,
            r.val_acc,
            fmt_opt(r.test_acc),
            r.epochs_completed,
            status
        );
    }
    Ok(())
}
