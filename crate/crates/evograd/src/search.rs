//! The search loop: one controller thread owns the population and feeds a
//! pool of evaluation workers over channels.

use std::collections::{BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::unbounded;
use evograd_core::dsl::{parse_equation, Equation, ParseError};
use evograd_core::evolution::{init_population, mutate, record_result, select_parent, Candidate, Population};
use evograd_core::task::Dataset;
use evograd_core::trainer::{train_and_evaluate, FitnessRecord, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SearchJob;
use crate::dataset::DatasetError;
use crate::runlog::{read_log, LogError, LogHeader, RunLog, RunLogRecord, LOG_VERSION};

/// Fresh mutations tried before concluding that every reachable child has
/// already been evaluated.
pub const DUPLICATE_LIMIT: usize = 1000;

const STREAM_INIT: u64 = 4;
const STREAM_CONTROLLER: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("building the task: {0}")]
    Dataset(#[from] DatasetError),
    #[error("population setup: {0}")]
    Init(#[from] evograd_core::evolution::ConfigError),
    #[error("run log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("log record {iter}: equation `{eq}` does not parse: {source}")]
    BadEquation {
        iter: u64,
        eq: String,
        #[source]
        source: ParseError,
    },
    #[error("log record {iter}: key `{found}` does not match its equation (expected `{expected}`)")]
    BadKey { iter: u64, expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SearchError + '_ {
    move |source| SearchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Called after each record is logged.
pub type RecordHook<'a> = Box<dyn FnMut(&RunLogRecord, &Population) + 'a>;

/// Hooks for a running search.
#[derive(Default)]
pub struct SearchOptions<'a> {
    /// When set, no new work is dispatched; in-flight evaluations finish
    /// and are logged.
    pub stop: Option<Arc<AtomicBool>>,
    pub on_record: Option<RecordHook<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub population: Population,
    /// Iteration number the next record would get.
    pub next_iter: u64,
    /// Mutated children evaluated, across resumes.
    pub children: usize,
    /// Records written by this call.
    pub written: usize,
    pub interrupted: bool,
    /// Every reachable child was already known before the budget ran out.
    pub exhausted: bool,
    /// Unreadable log lines dropped on resume.
    pub skipped_lines: usize,
}

/// Population and counters rebuilt from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct Resumed {
    pub population: Population,
    pub next_iter: u64,
    pub children: usize,
    pub skipped_lines: usize,
    valid_len: u64,
}

fn fitness_from(r: &RunLogRecord, secs: f64) -> FitnessRecord {
    FitnessRecord {
        key: r.key.clone(),
        val_acc: r.val_acc,
        test_acc: r.test_acc,
        epochs_completed: r.epochs,
        failed: r.failed,
        early_stopped: r.early_stopped,
        reason: r.reason.clone(),
        wall_clock_secs: secs,
        seed: r.seed,
    }
}

/// Applies logged records to a population in order.
pub fn population_from_records(records: &[RunLogRecord]) -> Result<Population, SearchError> {
    let mut pop = Population::new();
    for r in records {
        let equation = parse_equation(&r.eq).map_err(|source| SearchError::BadEquation {
            iter: r.iter,
            eq: r.eq.clone(),
            source,
        })?;
        let candidate = Candidate::new(equation, r.iter, r.parent.clone());
        if candidate.key != r.key {
            return Err(SearchError::BadKey {
                iter: r.iter,
                expected: candidate.key,
                found: r.key.clone(),
            });
        }
        let fitness = fitness_from(r, r.secs);
        record_result(&mut pop, candidate.with_fitness(fitness));
    }
    Ok(pop)
}

/// Rebuilds the population stored in `log`, refusing logs of other jobs.
pub fn resume(log: &Path, job: &SearchJob) -> Result<Resumed, SearchError> {
    let contents = read_log(log)?;
    let Some(header) = contents.header else {
        return Ok(Resumed {
            population: Population::new(),
            next_iter: 0,
            children: 0,
            skipped_lines: contents.skipped,
            valid_len: 0,
        });
    };
    let expected = job.hash();
    if header.job_hash != expected {
        return Err(LogError::JobMismatch {
            expected,
            found: header.job_hash,
        }
        .into());
    }
    let population = population_from_records(&contents.records)?;
    Ok(Resumed {
        population,
        next_iter: contents.records.last().map_or(0, |r| r.iter + 1),
        children: contents.records.iter().filter(|r| r.parent.is_some()).count(),
        skipped_lines: contents.skipped,
        valid_len: contents.valid_len,
    })
}

struct Task {
    equation: Equation,
    key: String,
    parent: Option<String>,
    fallback: bool,
}

struct Done {
    task: Task,
    record: FitnessRecord,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

/// Trains one candidate, turning a panic into a failure record.
pub fn evaluate(e: &Equation, task: &Dataset, config: &TrainConfig) -> FitnessRecord {
    let start = Instant::now();
    let mut record = catch_unwind(AssertUnwindSafe(|| train_and_evaluate(e, task, config))).unwrap_or_else(|payload| {
        FitnessRecord::failure(
            e.canonical_key(),
            config.seed,
            format!("worker panic: {}", panic_message(payload.as_ref())),
        )
    });
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    record
}

/// Starts a new search, truncating any existing log at `job.output`.
pub fn run_search(job: &SearchJob) -> Result<SearchOutcome, SearchError> {
    run_search_with(job, false, SearchOptions::default())
}

/// Runs a search; with `resume_existing` the log at `job.output` is read
/// back first and extended.
pub fn run_search_with(job: &SearchJob, resume_existing: bool, mut options: SearchOptions<'_>) -> Result<SearchOutcome, SearchError> {
    let dataset = job.task.build()?;
    let path = job.output.as_path();
    let header = LogHeader {
        version: LOG_VERSION,
        job_hash: job.hash(),
        job: job.to_text(),
    };
    let (mut population, mut next_iter, mut children, skipped_lines, mut log) = if resume_existing && path.exists() {
        let r = resume(path, job)?;
        let log = if r.valid_len == 0 {
            RunLog::create(path, &header)
        } else {
            RunLog::append(path, r.valid_len)
        }
        .map_err(io_err(path))?;
        (r.population, r.next_iter, r.children, r.skipped_lines, log)
    } else {
        let log = RunLog::create(path, &header).map_err(io_err(path))?;
        (Population::new(), 0, 0, 0, log)
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(job.seed);
    init_rng.set_stream(STREAM_INIT);
    let initial = init_population(&job.evo, &mut init_rng)?;
    let mut pending: VecDeque<Candidate> = initial.iter().filter(|c| !population.contains(&c.key)).cloned().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    rng.set_stream(STREAM_CONTROLLER + next_iter);

    let workers = job.workers.max(1);
    let (task_tx, task_rx) = unbounded::<Task>();
    let (done_tx, done_rx) = unbounded::<Done>();
    let stop = options.stop.clone().unwrap_or_default();
    let mut written = 0usize;
    let mut exhausted = false;
    let mut fatal: Option<SearchError> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let rx = task_rx.clone();
            let tx = done_tx.clone();
            let dataset = &dataset;
            let config = &job.train;
            scope.spawn(move || {
                for task in rx.iter() {
                    let record = evaluate(&task.equation, dataset, config);
                    if tx.send(Done { task, record }).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);

        let mut in_flight: BTreeSet<String> = BTreeSet::new();
        loop {
            let halted = stop.load(Ordering::SeqCst) || fatal.is_some();
            while !halted && in_flight.len() < workers {
                if let Some(c) = pending.pop_front() {
                    in_flight.insert(c.key.clone());
                    let _ = task_tx.send(Task {
                        equation: c.equation,
                        key: c.key,
                        parent: None,
                        fallback: false,
                    });
                    continue;
                }
                if children >= job.budget || population.evaluated_len() == 0 {
                    break;
                }
                match next_child(&population, &in_flight, job, &mut rng) {
                    Some(task) => {
                        in_flight.insert(task.key.clone());
                        children += 1;
                        let _ = task_tx.send(task);
                    }
                    None => {
                        exhausted = in_flight.is_empty();
                        break;
                    }
                }
            }
            if in_flight.is_empty() {
                break;
            }
            let Ok(done) = done_rx.recv() else {
                break;
            };
            in_flight.remove(&done.task.key);
            let record = RunLogRecord {
                iter: next_iter,
                eq: done.task.equation.to_string(),
                key: done.task.key.clone(),
                parent: done.task.parent.clone(),
                val_acc: done.record.val_acc,
                test_acc: done.record.test_acc,
                epochs: done.record.epochs_completed,
                failed: done.record.failed,
                reason: done.record.reason.clone(),
                seed: done.record.seed,
                ts: now(),
                secs: done.record.wall_clock_secs,
                early_stopped: done.record.early_stopped,
                fallback: done.task.fallback,
            };
            if let Err(e) = log.write(&record) {
                // The log is the source of truth: stop dispatching, keep draining.
                fatal.get_or_insert(SearchError::Io {
                    path: path.to_path_buf(),
                    source: e,
                });
                continue;
            }
            let candidate = Candidate::new(done.task.equation, next_iter, done.task.parent);
            record_result(&mut population, candidate.with_fitness(fitness_from(&record, record.secs)));
            next_iter += 1;
            written += 1;
            if let Some(cb) = options.on_record.as_mut() {
                cb(&record, &population);
            }
        }
        drop(task_tx);
    });

    if let Some(e) = fatal {
        return Err(e);
    }
    let interrupted = stop.load(Ordering::SeqCst) && (children < job.budget || !pending.is_empty());
    Ok(SearchOutcome {
        population,
        next_iter,
        children,
        written,
        interrupted,
        exhausted,
        skipped_lines,
    })
}

/// Selects a parent and mutates it until the child's key is new.
fn next_child(pop: &Population, in_flight: &BTreeSet<String>, job: &SearchJob, rng: &mut ChaCha8Rng) -> Option<Task> {
    for _ in 0..DUPLICATE_LIMIT {
        let parent = select_parent(pop, &job.evo, rng).ok()?;
        let m = mutate(&parent.equation, &job.evo, rng);
        let key = m.equation.canonical_key();
        if pop.contains(&key) || in_flight.contains(&key) {
            continue;
        }
        return Some(Task {
            equation: m.equation,
            key,
            parent: Some(parent.key.clone()),
            fallback: m.fallback,
        });
    }
    None
}
