//! Acceptance suite. Every criterion runs in order and prints one
//! `criterion N ... PASS|FAIL` line; the test fails if any criterion does.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use evograd::config::SearchJob;
use evograd::core::dsl::{check_feasible, parse_equation, random_equation, ShapeEnv, Vocab};
use evograd::core::evolution::{mutate, record_result, select_parent, slot_diff, Candidate, EvoConfig, Population};
use evograd::core::task::{generate, SyntheticKind, SyntheticSpec};
use evograd::core::tensor::{Activation, Matrix};
use evograd::core::trainer::*;
use evograd::report::write_csv;
use evograd::search::population_from_records;
use evograd::{read_log, rerun_top, resume, run_search, run_search_with, RunLogRecord, SearchOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion_01_dsl_fidelity() -> (bool, String) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut problems = Vec::new();
    for (name, e) in builtin_equations() {
        let text = e.to_string();
        match parse_equation(&text) {
            Ok(back) if back == e && back.to_string() == text => {}
            _ => problems.push(format!("{name} does not round-trip")),
        }
        if check_feasible(&e, &ShapeEnv::symbolic()).is_err() {
            problems.push(format!("{name} symbolic shape check"));
        }
        for _ in 0..300 {
            let layers = rng.random_range(3..=6);
            let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=64)).collect();
            let batch = rng.random_range(1..=32);
            if let Err(err) = check_for_widths(&e, &widths, batch) {
                problems.push(format!("{name} at {widths:?}: {err}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = problems.is_empty() && secs < 1.0;
    (ok, format!("{} problems, {:.3} s", problems.len(), secs))
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, features: usize, classes: usize) -> (Matrix, Vec<usize>) {
    let x = Matrix::from_fn(rows, features, |_, _| rng.random_range(-1.5..1.5));
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (x, labels)
}

fn criterion_02_gradient_oracles() -> (bool, String) {
    let t = Instant::now();
    let backprop = builtin("backprop").unwrap();
    let mut worst_eq = 0.0f64;
    let mut worst_fd = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let model = MlpModel::new(&[2, 16, 16, 2], Activation::Tanh, &mut rng);
        let (x, labels) = random_batch(&mut rng, 8, 2, 2);
        let cache = model.forward(&x, &labels).unwrap();
        let reference = backward_reference(&model, &cache);
        let mut state = EquationState::for_model(&model, seed);
        let via_eq = backward_with_equation(&model, &cache, &backprop, &mut state).unwrap();
        worst_eq = worst_eq.max(max_relative_error(&via_eq, &reference, 1e-300));
        let numeric = finite_difference_grad(&model, &x, &labels, 1e-5);
        worst_fd = worst_fd.max(max_relative_error(&reference, &numeric, 1e-6));
    }
    let ok = worst_eq <= 1e-12 && worst_fd <= 1e-5 && t.elapsed().as_secs_f64() < 30.0;
    (ok, format!("equation vs reference {worst_eq:.2e}, reference vs finite differences {worst_fd:.2e}"))
}

fn criterion_03_trainability_ladder() -> (bool, String) {
    let t = Instant::now();
    let blobs = generate(&SyntheticSpec::new(SyntheticKind::Blobs, 0));
    let backprop = builtin("backprop").unwrap();
    let bp_best = [0.01, 0.1, 0.5]
        .iter()
        .map(|&lr| train_and_evaluate(&backprop, &blobs, &TrainConfig { lr, ..TrainConfig::default() }).val_acc)
        .fold(f64::NEG_INFINITY, f64::max);

    let moons = generate(&SyntheticSpec::new(SyntheticKind::TwoMoons, 0));
    let fifty = TrainConfig { epochs: 50, ..TrainConfig::default() };
    let fa = train_and_evaluate(&builtin("fa").unwrap(), &moons, &fifty).val_acc;
    let dfa = train_and_evaluate(&builtin("dfa").unwrap(), &moons, &fifty).val_acc;

    let zero = parse_equation("sub(ident(g), ident(g))").unwrap();
    let z = train_and_evaluate(&zero, &moons, &fifty);
    let chance = moons.chance();

    let ladder = bp_best >= 0.97 && fa >= 0.85 && dfa >= 0.85;
    let near_chance = (z.val_acc - chance).abs() <= 0.1;
    let ok = ladder && near_chance && t.elapsed().as_secs_f64() < 120.0;
    let detail = format!(
        "backprop blobs {bp_best:.3}, fa {fa:.3}, dfa {dfa:.3}; zero update {:.3} vs chance {chance:.3}{}",
        z.val_acc,
        if z.early_stopped { " (early stop)" } else { "" }
    );
    (ok, detail)
}

fn criterion_04_mutation_soundness() -> (bool, String) {
    let t = Instant::now();
    let config = EvoConfig::default();
    let vocab = Vocab::full();
    let env = ShapeEnv::symbolic();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut infeasible, mut not_one_slot, mut fallbacks) = (0, 0, 0);
    for _ in 0..10_000 {
        let steps = rng.random_range(1..=3);
        let parent = random_equation(&mut rng, &vocab, steps).unwrap();
        let child = mutate(&parent, &config, &mut rng);
        if check_feasible(&child.equation, &env).is_err() {
            infeasible += 1;
        }
        if child.fallback {
            fallbacks += 1;
        } else if slot_diff(&parent, &child.equation) != Some(1) {
            not_one_slot += 1;
        }
    }
    let ok = infeasible == 0 && not_one_slot == 0 && t.elapsed().as_secs_f64() < 60.0;
    (ok, format!("{infeasible} infeasible, {not_one_slot} not one-slot, {fallbacks} fallbacks"))
}

fn fitness(key: &str, val_acc: f64) -> FitnessRecord {
    FitnessRecord {
        key: key.to_string(),
        val_acc,
        test_acc: None,
        epochs_completed: 1,
        failed: false,
        early_stopped: false,
        reason: None,
        wall_clock_secs: 0.0,
        seed: 0,
    }
}

fn criterion_05_selection_statistics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = Vocab::full();
    let mut pop = Population::new();
    let mut accs = Vec::new();
    while pop.len() < 100 {
        let e = random_equation(&mut rng, &vocab, 2).unwrap();
        if pop.contains(&e.canonical_key()) {
            continue;
        }
        let acc = rng.random_range(0.0..1.0);
        let c = Candidate::new(e, pop.len() as u64, None);
        let f = fitness(&c.key, acc);
        accs.push((acc, c.key.clone()));
        record_result(&mut pop, c.with_fitness(f));
    }
    accs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let elite: Vec<&String> = accs.iter().take(10).map(|(_, k)| k).collect();
    let config = EvoConfig {
        p: 0.7,
        elite_size: 10,
        ..EvoConfig::default()
    };
    let draws = 100_000;
    let hits = (0..draws).filter(|_| elite.contains(&&select_parent(&pop, &config, &mut rng).unwrap().key)).count();
    let freq = hits as f64 / draws as f64;
    ((freq - 0.7).abs() <= 0.02, format!("elite frequency {freq:.4}"))
}

// One worker keeps the outcome independent of thread timing.
fn efficacy_job(seed: u64, out: &Path) -> SearchJob {
    let text = format!(
        "task = spirals\nseed = {seed}\nbudget = 490\nworkers = 1\ntrain.hidden = 16,16\ntrain.epochs = 5\n\
         evo.init = random:10\nvocab.exclude_operands = g\noutput = {}\n",
        out.display()
    );
    SearchJob::from_text(&text).unwrap()
}

fn criterion_06_search_efficacy() -> (bool, String) {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let job = efficacy_job(seed, &dir.path().join(format!("s{seed}.jsonl")));
        let mut curve: Vec<f64> = Vec::new();
        let options = SearchOptions {
            stop: None,
            on_record: Some(Box::new(|_: &RunLogRecord, pop: &Population| curve.push(pop.best_val_acc().unwrap_or(0.0)))),
        };
        let out = run_search_with(&job, false, options).unwrap();
        let records = read_log(&job.output).unwrap().records;
        let initial = records.iter().filter(|r| r.parent.is_none()).map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
        let last = out.population.best_val_acc().unwrap();
        let monotone = curve.windows(2).all(|w| w[1] >= w[0]);
        let gain = last - initial;
        ok &= records.len() == 500 && monotone && gain >= 0.05;
        parts.push(format!("seed {seed}: {initial:.3} -> {last:.3} ({gain:+.3}){}", if monotone { "" } else { " non-monotone" }));
    }
    ok &= t.elapsed().as_secs_f64() < 1800.0;
    (ok, parts.join("; "))
}

/// Welford mean and population standard deviation.
fn welford(values: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    (mean, (m2 / values.len() as f64).sqrt())
}

fn criterion_07_protocol_fidelity() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "task = two_moons\nseed = 3\nbudget = 12\ntrain.hidden = 8,8\ntrain.epochs = 5\noutput = {}\n",
        dir.path().join("run.jsonl").display()
    );
    let job = SearchJob::from_text(&text).unwrap();
    let pop = run_search(&job).unwrap().population;
    let k = 5;
    let entries = rerun_top(&pop, k, 5, &job, 2).unwrap();
    let mut worst = 0.0f64;
    let mut shape_ok = entries.len() == k;
    for e in &entries {
        shape_ok &= e.val_accs.len() == 5 && e.test_accs.len() == 5;
        let (vm, vs) = welford(&e.val_accs);
        let (tm, ts) = welford(&e.test_accs);
        for (a, b) in [(vm, e.val_mean), (vs, e.val_std), (tm, e.test_mean), (ts, e.test_std)] {
            worst = worst.max((a - b).abs());
        }
    }
    let mut csv_buf = Vec::new();
    write_csv(&mut csv_buf, &entries).unwrap();
    let mut reader = csv::Reader::from_reader(csv_buf.as_slice());
    for (row, e) in reader.records().map(Result::unwrap).zip(&entries) {
        let (vm, vs) = welford(&e.val_accs);
        worst = worst.max((row[2].parse::<f64>().unwrap() - vm).abs());
        worst = worst.max((row[3].parse::<f64>().unwrap() - vs).abs());
    }
    let ok = shape_ok && worst <= 1e-12;
    (ok, format!("{} entries x 5 reruns, max deviation {worst:.1e}", entries.len()))
}

/// Independent reading of a log: every newline-terminated line that parses as
/// an eval record, stopping at the first that does not.
fn reference_parse(bytes: &[u8]) -> (Vec<serde_json::Value>, usize) {
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => &bytes[..=i],
        None => &bytes[..0],
    };
    let lines: Vec<&[u8]> = complete.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    let mut evals = Vec::new();
    for l in lines.iter().skip(1) {
        match serde_json::from_slice::<serde_json::Value>(l) {
            Ok(v) if v["type"] == "eval" => evals.push(v),
            _ => break,
        }
    }
    let torn = usize::from(complete.len() < bytes.len());
    let lost = lines.len().saturating_sub(1) - evals.len() + torn;
    (evals, lost)
}

fn criterion_08_persistence() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let conf = dir.path().join("job.conf");
    std::fs::write(&conf, "task = blobs\nseed = 8\nbudget = 100000\nworkers = 2\ntrain.hidden = 8\ntrain.epochs = 3\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_evograd"))
        .args(["search", "--quiet", "--config", conf.to_str().unwrap(), "--output", log.to_str().unwrap()])
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(300);
    loop {
        let lines = std::fs::read(&log).map(|b| b.iter().filter(|&&c| c == b'\n').count()).unwrap_or(0);
        if lines > 100 || Instant::now() > deadline {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let bytes = std::fs::read(&log).unwrap();
    let (reference, lost) = reference_parse(&bytes);
    let header = read_log(&log).unwrap().header.unwrap();
    let job = SearchJob::from_text(&header.job).unwrap();
    let resumed = resume(&log, &job).unwrap();

    let mut best: BTreeMap<String, (f64, u64, u32)> = BTreeMap::new();
    for v in &reference {
        let key = v["key"].as_str().unwrap().to_string();
        let acc = v["val_acc"].as_f64().unwrap();
        let iter = v["iter"].as_u64().unwrap();
        let e = best.entry(key).or_insert((acc, iter, 0));
        e.0 = e.0.max(acc);
        e.2 += 1;
    }
    let same_population = resumed.population.len() == best.len()
        && best.iter().all(|(k, &(acc, gen, n))| {
            resumed
                .population
                .get(k)
                .is_some_and(|c| c.val_acc() == Some(acc) && c.generation == gen && c.encounters == n)
        });
    let records: Vec<RunLogRecord> = reference.iter().map(|v| serde_json::from_value(v.clone()).unwrap()).collect();
    let same_as_parse = population_from_records(&records).unwrap() == resumed.population;

    // The resumed run picks up where the killed one stopped.
    let more = SearchJob {
        budget: resumed.children + 5,
        output: log.clone(),
        ..job.clone()
    };
    let finished = run_search_with(&more, true, SearchOptions::default()).unwrap();
    let after = read_log(&log).unwrap();
    let continued = after.skipped == 0
        && after.records.len() == reference.len() + finished.written
        && after.records.iter().enumerate().all(|(i, r)| r.iter == i as u64);

    let ok = reference.len() >= 100 && lost <= 1 && resumed.skipped_lines == lost && same_population && same_as_parse && continued;
    let detail = format!(
        "{} records at kill, {lost} partial line(s) dropped, population {} (matches: {same_population}), resumed +{}",
        reference.len(),
        resumed.population.len(),
        finished.written
    );
    (ok, detail)
}

fn criterion_09_determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let job = |name: &str| {
        let text = format!(
            "task = spirals\nseed = 9\nbudget = 60\nworkers = 1\ntrain.hidden = 8,8\ntrain.epochs = 4\nevo.init = random:8\noutput = {}\n",
            dir.path().join(name).display()
        );
        SearchJob::from_text(&text).unwrap()
    };
    let (a, b) = (job("a.jsonl"), job("b.jsonl"));
    run_search(&a).unwrap();
    run_search(&b).unwrap();
    let strip = |p: &Path| {
        let c = read_log(p).unwrap();
        let rs: Vec<RunLogRecord> = c
            .records
            .into_iter()
            .map(|r| RunLogRecord { ts: 0.0, secs: 0.0, ..r })
            .collect();
        (c.header.map(|h| h.job_hash), rs)
    };
    let (ha, ra) = strip(&a.output);
    let (hb, rb) = strip(&b.output);
    let ok = ha.is_some() && ha == hb && ra == rb && ra.len() == 68;
    (ok, format!("{} records, identical: {}", ra.len(), ra == rb))
}

fn criterion_10_schedule_endpoints() -> (bool, String) {
    let mut worst = 0.0f64;
    for (total, peak) in [(1000usize, 0.1), (50, 0.5), (20, 1.0), (12_340, 0.03)] {
        let warm = total / 10;
        worst = worst.max(lr_at(Schedule::CosineWarmup, 0, total, peak).abs());
        worst = worst.max((lr_at(Schedule::CosineWarmup, warm, total, peak) - peak).abs());
        worst = worst.max(lr_at(Schedule::CosineWarmup, total, total, peak).abs());
    }
    (worst <= 1e-12, format!("max endpoint error {worst:.1e}"))
}

type Criterion = fn() -> (bool, String);

#[test]
fn acceptance() {
    let criteria: [(&str, Criterion); 10] = [
        ("dsl fidelity", criterion_01_dsl_fidelity),
        ("gradient oracles", criterion_02_gradient_oracles),
        ("trainability ladder", criterion_03_trainability_ladder),
        ("mutation soundness", criterion_04_mutation_soundness),
        ("selection statistics", criterion_05_selection_statistics),
        ("search efficacy", criterion_06_search_efficacy),
        ("protocol fidelity", criterion_07_protocol_fidelity),
        ("persistence", criterion_08_persistence),
        ("determinism", criterion_09_determinism),
        ("schedule endpoints", criterion_10_schedule_endpoints),
    ];
    let mut failed = Vec::new();
    // Start below libtest's `test acceptance ...` prefix.
    let _ = writeln!(std::io::stdout());
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let t = Instant::now();
        let (ok, detail) = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let status = if ok { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "criterion {n:>2} {name:<21} {status}  {detail} [{:.1} s]", t.elapsed().as_secs_f64());
        let _ = out.flush();
        if !ok {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
