//! Re-training the best candidates and writing the report.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use evograd_core::dsl::Equation;
use evograd_core::evolution::{top_k, Population};
use evograd_core::task::Dataset;
use evograd_core::trainer::{train_on, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::SearchJob;
use crate::dataset::DatasetError;

/// Results of re-training one candidate several times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub rank: usize,
    pub equation: String,
    pub key: String,
    /// Validation accuracy of the search run that ranked this candidate.
    pub search_val_acc: f64,
    pub val_accs: Vec<f64>,
    pub test_accs: Vec<f64>,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Some rerun failed; its accuracies count as recorded.
    pub failed: bool,
    pub reasons: Vec<String>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Training seed of rerun `r`, distinct from the search seed.
pub fn rerun_seed(search_seed: u64, r: usize) -> u64 {
    search_seed.wrapping_add(1 + r as u64)
}

struct RerunResult {
    val: f64,
    test: f64,
    failure: Option<String>,
}

/// One rerun: validation accuracy from training on the training split, test
/// accuracy from a second model trained on training plus validation data.
fn rerun(e: &Equation, task: &Dataset, config: &TrainConfig) -> RerunResult {
    let on_train = train_on(e, &task.train, Some(&task.val), None, task.classes, config).record;
    let merged = task.train.concat(&task.val);
    let full_config = TrainConfig {
        early_stop: None,
        ..config.clone()
    };
    let on_all = train_on(e, &merged, None, Some(&task.test), task.classes, &full_config).record;
    let failure = [&on_train, &on_all].iter().find_map(|r| {
        r.failed
            .then(|| r.reason.clone().unwrap_or_else(|| "failed".to_string()))
    });
    RerunResult {
        val: on_train.val_acc,
        test: on_all.test_acc.unwrap_or(0.0),
        failure,
    }
}

/// Re-trains the `k` best candidates `repeats` times each with fresh seeds
/// and sorts them by mean validation accuracy over the reruns.
pub fn rerun_top(pop: &Population, k: usize, repeats: usize, job: &SearchJob, workers: usize) -> Result<Vec<ReportEntry>, DatasetError> {
    let task = job.task.build()?;
    let top = top_k(pop, k);
    let repeats = repeats.max(1);
    let jobs: Vec<(usize, usize)> = (0..top.len()).flat_map(|c| (0..repeats).map(move |r| (c, r))).collect();
    let results: Mutex<Vec<Option<RerunResult>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(c, r)) = jobs.get(i) else {
                    break;
                };
                let config = TrainConfig {
                    seed: rerun_seed(job.train.seed, r),
                    ..job.train.clone()
                };
                let out = rerun(&top[c].equation, &task, &config);
                results.lock().expect("no poisoned workers")[i] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("no poisoned workers");
    let mut entries: Vec<ReportEntry> = top
        .iter()
        .enumerate()
        .map(|(c, cand)| {
            let runs: Vec<&RerunResult> = (0..repeats).map(|r| results[c * repeats + r].as_ref().expect("every rerun ran")).collect();
            let val_accs: Vec<f64> = runs.iter().map(|r| r.val).collect();
            let test_accs: Vec<f64> = runs.iter().map(|r| r.test).collect();
            let reasons: Vec<String> = runs.iter().filter_map(|r| r.failure.clone()).collect();
            let (val_mean, val_std) = mean_std(&val_accs);
            let (test_mean, test_std) = mean_std(&test_accs);
            ReportEntry {
                rank: 0,
                equation: cand.equation.to_string(),
                key: cand.key.clone(),
                search_val_acc: cand.val_acc().unwrap_or(0.0),
                val_accs,
                test_accs,
                val_mean,
                val_std,
                test_mean,
                test_std,
                failed: !reasons.is_empty(),
                reasons,
            }
        })
        .collect();
    // Stable: equal means keep the search ranking.
    entries.sort_by(|a, b| b.val_mean.total_cmp(&a.val_mean));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}

/// Writes `rank,equation,val_mean,val_std,test_mean,test_std,failed`.
pub fn write_csv<W: Write>(out: W, entries: &[ReportEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "equation", "val_mean", "val_std", "test_mean", "test_std", "failed"])?;
    for e in entries {
        w.write_record([
            e.rank.to_string(),
            e.equation.clone(),
            e.val_mean.to_string(),
            e.val_std.to_string(),
            e.test_mean.to_string(),
            e.test_std.to_string(),
            e.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Full entries, including every per-rerun accuracy.
pub fn write_json<W: Write>(out: W, entries: &[ReportEntry]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, entries)
}
