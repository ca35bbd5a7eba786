//! Append-only JSON Lines run log.
//!
//! The first line is a header carrying the job text and its hash; every
//! following line is one completed evaluation.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub job_hash: String,
    /// The job in config-file form.
    pub job: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub iter: u64,
    pub eq: String,
    pub key: String,
    pub parent: Option<String>,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
    pub epochs: usize,
    pub failed: bool,
    pub reason: Option<String>,
    pub seed: u64,
    /// Seconds since the Unix epoch when the record was written.
    pub ts: f64,
    /// Wall-clock training time; like `ts`, not reproducible.
    #[serde(default)]
    pub secs: f64,
    #[serde(default)]
    pub early_stopped: bool,
    /// The child came from the random fallback rather than a slot swap.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(LogHeader),
    Eval(RunLogRecord),
}

/// Open log file positioned for appends.
pub struct RunLog {
    file: File,
}

impl RunLog {
    /// Creates (truncating) a log and writes its header.
    pub fn create(path: &Path, header: &LogHeader) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = File::create(path)?;
        let mut log = RunLog { file };
        log.write_line(&Line::Header(header.clone()))?;
        Ok(log)
    }

    /// Opens an existing log for appending. A torn final line is cut off
    /// first so new records start on a fresh line.
    pub fn append(path: &Path, valid_len: u64) -> io::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        file.set_len(valid_len)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok(RunLog { file })
    }

    pub fn write(&mut self, record: &RunLogRecord) -> io::Result<()> {
        self.write_line(&Line::Eval(record.clone()))
    }

    fn write_line(&mut self, line: &Line) -> io::Result<()> {
        let mut buf = serde_json::to_vec(line).map_err(io::Error::other)?;
        buf.push(b'\n');
        // One write per line keeps each record whole on disk.
        self.file.write_all(&buf)?;
        self.file.flush()
    }
}

/// Everything recoverable from a log file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogContents {
    pub header: Option<LogHeader>,
    pub records: Vec<RunLogRecord>,
    /// Lines after the first unreadable one, including it.
    pub skipped: usize,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("reading log: {0}")]
    Io(#[from] io::Error),
    #[error("log does not start with a header line")]
    MissingHeader,
    #[error("log was written by a different job (hash {found}, expected {expected})")]
    JobMismatch { expected: String, found: String },
}

/// Reads a log, stopping at the first line that does not parse. An empty
/// file yields no header and no records.
pub fn read_log(path: &Path) -> Result<LogContents, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = LogContents::default();
    let mut lines = reader.split(b'\n').peekable();
    while let Some(line) = lines.next() {
        let line = line?;
        let complete = lines.peek().is_some() || ends_with_newline(path, out.valid_len + line.len() as u64)?;
        let parsed = if complete {
            serde_json::from_slice::<Line>(&line).ok()
        } else {
            None
        };
        match (parsed, out.header.is_some()) {
            (Some(Line::Header(h)), false) if out.records.is_empty() => out.header = Some(h),
            (Some(Line::Eval(r)), true) => out.records.push(r),
            _ => {
                out.skipped = 1 + lines.count();
                break;
            }
        }
        out.valid_len += line.len() as u64 + 1;
    }
    if out.header.is_none() && out.skipped > 0 {
        return Err(LogError::MissingHeader);
    }
    Ok(out)
}

fn ends_with_newline(path: &Path, at: u64) -> io::Result<bool> {
    Ok(std::fs::metadata(path)?.len() > at)
}
