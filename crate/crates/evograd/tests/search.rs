use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use evograd::config::SearchJob;
use evograd::core::dsl::{check_feasible, parse_equation, ShapeEnv};
use evograd::report::{mean_std, write_csv, write_json, ReportEntry};
use evograd::runlog::LogError;
use evograd::search::{population_from_records, SearchError};
use evograd::{read_log, rerun_top, resume, run_search, run_search_with, RunLogRecord, SearchOptions};

fn job(out: &Path, extra: &str) -> SearchJob {
    let text = format!(
        "task = blobs\ntrain.hidden = 8\ntrain.epochs = 3\nbudget = 50\nseed = 7\noutput = {}\n{extra}",
        out.display()
    );
    SearchJob::from_text(&text).unwrap()
}

fn records(path: &Path) -> Vec<RunLogRecord> {
    read_log(path).unwrap().records
}

fn without_clock(mut rs: Vec<RunLogRecord>) -> Vec<RunLogRecord> {
    for r in &mut rs {
        r.ts = 0.0;
        r.secs = 0.0;
    }
    rs
}

#[test]
fn budget_counts_mutated_children() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "");
    let out = run_search(&j).unwrap();
    assert_eq!(out.children, 50);
    assert_eq!(out.written, 53);
    assert!(!out.interrupted && !out.exhausted);
    let rs = records(&j.output);
    assert_eq!(rs.len(), 53);
    assert_eq!(rs.iter().filter(|r| r.parent.is_none()).count(), 3);
    let mut seen = BTreeSet::new();
    for (i, r) in rs.iter().enumerate() {
        assert_eq!(r.iter, i as u64);
        if let Some(p) = &r.parent {
            assert!(seen.contains(p), "parent {p} logged after child");
        }
        assert!(seen.insert(r.key.clone()), "key {} logged twice", r.key);
    }
}

#[test]
fn single_worker_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = job(&dir.path().join("a.jsonl"), "budget = 30");
    let b = job(&dir.path().join("b.jsonl"), "budget = 30");
    let pa = run_search(&a).unwrap().population;
    let pb = run_search(&b).unwrap().population;
    assert_eq!(without_clock(records(&a.output)), without_clock(records(&b.output)));
    assert_eq!(pa.ranked().map(|c| &c.key).collect::<Vec<_>>(), pb.ranked().map(|c| &c.key).collect::<Vec<_>>());
}

#[test]
fn parallel_records_are_feasible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "workers = 8\nevo.init = random:12");
    run_search(&j).unwrap();
    let rs = records(&j.output);
    assert_eq!(rs.len(), 62);
    for r in &rs {
        let e = parse_equation(&r.eq).unwrap();
        assert_eq!(e.canonical_key(), r.key);
        assert!(check_feasible(&e, &ShapeEnv::symbolic()).is_ok(), "{}", r.eq);
        assert!((0.0..=1.0).contains(&r.val_acc));
        assert_eq!(r.seed, 7);
        assert!(!r.failed || r.reason.is_some());
    }
}

#[test]
fn resume_rebuilds_the_in_memory_population() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 25");
    let out = run_search(&j).unwrap();
    let r = resume(&j.output, &j).unwrap();
    assert_eq!(r.population, out.population);
    assert_eq!(r.next_iter, out.next_iter);
    assert_eq!(r.children, 25);
    assert_eq!(r.skipped_lines, 0);
}

#[test]
fn interrupted_search_resumes_to_budget() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 40");
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let options = SearchOptions {
        stop: Some(stop),
        on_record: Some(Box::new(move |r: &RunLogRecord, _: &_| {
            if r.iter == 19 {
                flag.store(true, Ordering::SeqCst);
            }
        })),
    };
    let first = run_search_with(&j, false, options).unwrap();
    assert!(first.interrupted);
    assert_eq!(first.written, 20);

    let second = run_search_with(&j, true, SearchOptions::default()).unwrap();
    assert!(!second.interrupted);
    assert_eq!(second.children, 40);
    assert_eq!(second.written, 23);
    let rs = records(&j.output);
    assert_eq!(rs.len(), 43);
    assert!(rs.iter().enumerate().all(|(i, r)| r.iter == i as u64));
    assert_eq!(rs.iter().map(|r| &r.key).collect::<BTreeSet<_>>().len(), 43);
    assert_eq!(population_from_records(&rs).unwrap(), second.population);
}

#[test]
fn resume_of_empty_or_missing_log_starts_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 5");
    std::fs::write(&j.output, "").unwrap();
    let r = resume(&j.output, &j).unwrap();
    assert!(r.population.is_empty());
    assert_eq!(r.next_iter, 0);
    let out = run_search_with(&j, true, SearchOptions::default()).unwrap();
    assert_eq!(out.written, 8);
    assert!(read_log(&j.output).unwrap().header.is_some());

    let fresh = job(&dir.path().join("missing.jsonl"), "budget = 5");
    assert_eq!(run_search_with(&fresh, true, SearchOptions::default()).unwrap().written, 8);
}

#[test]
fn torn_final_line_is_dropped_and_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 10");
    run_search(&j).unwrap();
    let intact = records(&j.output);
    let mut f = std::fs::OpenOptions::new().append(true).open(&j.output).unwrap();
    f.write_all(b"{\"type\":\"eval\",\"iter\":13,\"eq\":\"add(").unwrap();
    drop(f);

    let r = resume(&j.output, &j).unwrap();
    assert_eq!(r.skipped_lines, 1);
    assert_eq!(r.population, population_from_records(&intact).unwrap());

    let more = SearchJob { budget: 15, ..j.clone() };
    let out = run_search_with(&more, true, SearchOptions::default()).unwrap();
    assert_eq!(out.skipped_lines, 1);
    let after = read_log(&j.output).unwrap();
    assert_eq!(after.skipped, 0);
    assert_eq!(after.records.len(), 18);
    assert_eq!(after.records[..13], intact[..]);
}

#[test]
fn resume_refuses_a_different_job() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 3");
    run_search(&j).unwrap();
    let other = SearchJob { seed: 8, ..j.clone() };
    assert!(matches!(resume(&j.output, &other), Err(SearchError::Log(LogError::JobMismatch { .. }))));
    let more_workers = SearchJob { workers: 4, ..j.clone() };
    assert!(resume(&j.output, &more_workers).is_ok());
}

#[test]
fn rerun_top_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 10");
    let pop = run_search(&j).unwrap().population;

    let one = rerun_top(&pop, 1, 5, &j, 2).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].key, pop.best().unwrap().key);
    assert_eq!(one[0].val_accs.len(), 5);
    assert_eq!(one[0].test_accs.len(), 5);

    let single = rerun_top(&pop, 4, 1, &j, 1).unwrap();
    assert_eq!(single.len(), 4);
    assert!(single.iter().all(|e| e.val_std == 0.0 && e.test_std == 0.0));
    assert!(single.windows(2).all(|w| w[0].val_mean >= w[1].val_mean));
    assert_eq!(single.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

    let all = rerun_top(&pop, 1000, 1, &j, 1).unwrap();
    assert_eq!(all.len(), pop.evaluated_len());

    // Reruns are independent of the worker count.
    assert_eq!(rerun_top(&pop, 4, 1, &j, 3).unwrap(), single);
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let j = job(&dir.path().join("run.jsonl"), "budget = 6");
    let pop = run_search(&j).unwrap().population;
    let entries = rerun_top(&pop, 3, 3, &j, 1).unwrap();

    let mut csv_buf = Vec::new();
    write_csv(&mut csv_buf, &entries).unwrap();
    let mut reader = csv::Reader::from_reader(csv_buf.as_slice());
    assert_eq!(
        reader.headers().unwrap(),
        vec!["rank", "equation", "val_mean", "val_std", "test_mean", "test_std", "failed"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);

    let mut json_buf = Vec::new();
    write_json(&mut json_buf, &entries).unwrap();
    let back: Vec<ReportEntry> = serde_json::from_slice(&json_buf).unwrap();
    assert_eq!(back, entries);

    for (row, e) in rows.iter().zip(&back) {
        assert_eq!(&row[1], e.equation);
        let (vm, vs) = mean_std(&e.val_accs);
        let (tm, ts) = mean_std(&e.test_accs);
        for (field, want) in [(2, vm), (3, vs), (4, tm), (5, ts)] {
            let got: f64 = row[field].parse().unwrap();
            assert!((got - want).abs() <= 1e-12);
        }
    }
}
