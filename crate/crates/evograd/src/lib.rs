//! Search driver for update-equation evolution: task files, job configs,
//! the worker pool, run logs, rerun reports and the `evograd` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod report;
pub mod runlog;
pub mod search;

pub use evograd_core as core;

pub use config::{SearchJob, VocabSpec};
pub use dataset::{load_idx, DatasetSpec, TaskKind};
pub use report::{rerun_top, ReportEntry};
pub use runlog::{read_log, RunLogRecord};
pub use search::{resume, run_search, run_search_with, SearchOptions, SearchOutcome};
