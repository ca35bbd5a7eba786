//! Search jobs and their flat `key = value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments to
//! the same key win, which is how command-line overrides are applied.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `seed` | root seed for selection, mutation and training | `0` |
//! | `budget` | number of mutated children to evaluate | `100` |
//! | `workers` | evaluation threads | `1` |
//! | `output` | run log path | `run.jsonl` |
//! | `task` | `blobs`, `two_moons`, `spirals` or `idx` | `spirals` |
//! | `task.images`, `task.labels` | IDX file paths (`task = idx`) | |
//! | `task.n_train`, `task.n_val`, `task.n_test` | split sizes | 400/200/200, IDX: 60/20/20 % |
//! | `task.noise` | synthetic noise level | per task |
//! | `task.seed` | data seed | `seed` |
//! | `train.hidden` | comma-separated hidden widths | `32,32` |
//! | `train.activation` | `tanh` or `relu` | `tanh` |
//! | `train.epochs`, `train.batch_size`, `train.lr` | | `20`, `16`, `0.1` |
//! | `train.schedule` | `constant` or `cosine` | `constant` |
//! | `train.optimizer` | `sgd` or `momentum` | `sgd` |
//! | `train.momentum` | momentum coefficient | `0.9` |
//! | `train.early_stop` | `true` or `false` | `true` |
//! | `train.early_stop_fraction`, `train.early_stop_margin` | | `0.25`, `0.05` |
//! | `train.seed` | training seed shared by every candidate | `seed` |
//! | `evo.p` | elite selection probability | `0.7` |
//! | `evo.elite_size` | elite set size | `1000` |
//! | `evo.k` | mutation counts, `k:prob` pairs, e.g. `1:0.8,2:0.2` | `1:1` |
//! | `evo.mutation_retries` | | `100` |
//! | `evo.init` | `seeded` or `random:<count>` | `seeded` |
//! | `evo.seeds` | `;`-separated equations for `seeded` | the builtins |
//! | `evo.min_steps`, `evo.max_steps` | step range of random equations | `1`, `3` |
//! | `vocab.exclude_operands` | comma-separated operand names | |
//! | `vocab.exclude_unaries` | unary names (`clip`) or exact forms (`clip[0.1]`) | |
//! | `vocab.exclude_binaries` | binary names | |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use evograd_core::dsl::{parse_equation, Binary, Equation, Operand, OperandRef, Unary, Vocab, MAX_STEPS};
use evograd_core::evolution::{EvoConfig, InitMode};
use evograd_core::task::SyntheticKind;
use evograd_core::tensor::Activation;
use evograd_core::trainer::{builtin_equations, EarlyStop, OptimizerKind, Schedule, TrainConfig};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetSpec, TaskKind};

/// Which vocabulary members to leave out of the full set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VocabSpec {
    pub exclude_operands: Vec<Operand>,
    /// Base names (`clip`) or exact spellings (`clip[0.1]`).
    pub exclude_unaries: Vec<String>,
    pub exclude_binaries: Vec<Binary>,
}

impl VocabSpec {
    pub fn build(&self) -> Vocab {
        let operands = OperandRef::all_leaves()
            .into_iter()
            .filter(|o| !self.exclude_operands.contains(&o.operand))
            .collect();
        let unaries = Unary::all()
            .into_iter()
            .filter(|u| {
                let full = u.to_string();
                let base = full.split('[').next().unwrap_or("");
                !self.exclude_unaries.iter().any(|x| x == &full || x == base)
            })
            .collect();
        let binaries = Binary::ALL.iter().copied().filter(|b| !self.exclude_binaries.contains(b)).collect();
        Vocab::new(operands, unaries, binaries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchJob {
    pub evo: EvoConfig,
    pub vocab: VocabSpec,
    pub train: TrainConfig,
    pub task: DatasetSpec,
    /// Mutated children to evaluate, not counting the initial population.
    pub budget: usize,
    pub workers: usize,
    pub output: PathBuf,
    pub seed: u64,
}

impl Default for SearchJob {
    fn default() -> Self {
        SearchJob::from_text("").expect("defaults are valid")
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.into(),
    }
}

const KEYS: &[&str] = &[
    "seed",
    "budget",
    "workers",
    "output",
    "task",
    "task.images",
    "task.labels",
    "task.n_train",
    "task.n_val",
    "task.n_test",
    "task.noise",
    "task.seed",
    "train.hidden",
    "train.activation",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.schedule",
    "train.optimizer",
    "train.momentum",
    "train.early_stop",
    "train.early_stop_fraction",
    "train.early_stop_margin",
    "train.seed",
    "evo.p",
    "evo.elite_size",
    "evo.k",
    "evo.mutation_retries",
    "evo.init",
    "evo.seeds",
    "evo.min_steps",
    "evo.max_steps",
    "vocab.exclude_operands",
    "vocab.exclude_unaries",
    "vocab.exclude_binaries",
];

/// Ordered `key -> value` assignments.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignments(BTreeMap<String, String>);

impl Assignments {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = Assignments::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            out.set(k.trim(), v.trim())?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v.trim())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| bad(key, e.to_string())),
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, format!("`{v}` is not a boolean"))),
    }
}

impl SearchJob {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        SearchJob::from_assignments(&Assignments::parse(text)?)
    }

    pub fn from_assignments(a: &Assignments) -> Result<Self, ConfigError> {
        let seed: u64 = a.parsed("seed", 0)?;
        let budget: usize = a.parsed("budget", 100)?;
        if budget == 0 {
            return Err(bad("budget", "must be at least 1"));
        }
        let workers: usize = a.parsed("workers", 1)?;
        if workers == 0 {
            return Err(bad("workers", "must be at least 1"));
        }
        let output = PathBuf::from(a.get("output").unwrap_or("run.jsonl"));

        let task_name = a.get("task").unwrap_or("spirals");
        let task_seed: u64 = a.parsed("task.seed", seed)?;
        let mut task = if task_name == "idx" {
            let images = a.get("task.images").ok_or_else(|| bad("task.images", "required for idx tasks"))?;
            let labels = a.get("task.labels").ok_or_else(|| bad("task.labels", "required for idx tasks"))?;
            DatasetSpec::idx(images, labels, task_seed)
        } else {
            let kind = SyntheticKind::from_name(task_name).ok_or_else(|| bad("task", format!("unknown task `{task_name}`")))?;
            DatasetSpec::synthetic(kind, task_seed)
        };
        task.n_train = a.parsed("task.n_train", task.n_train)?;
        task.n_val = a.parsed("task.n_val", task.n_val)?;
        task.n_test = a.parsed("task.n_test", task.n_test)?;
        task.noise = a.parsed("task.noise", task.noise)?;

        let d = TrainConfig::default();
        let hidden = match a.get("train.hidden") {
            None => d.hidden.clone(),
            Some(_) => a
                .list("train.hidden")
                .iter()
                .map(|w| match w.parse::<usize>() {
                    Ok(n) if n > 0 => Ok(n),
                    _ => Err(bad("train.hidden", format!("`{w}` is not a positive width"))),
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let activation = match a.get("train.activation").unwrap_or("tanh") {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => return Err(bad("train.activation", format!("unknown activation `{other}`"))),
        };
        let schedule = match a.get("train.schedule").unwrap_or("constant") {
            "constant" => Schedule::Constant,
            "cosine" | "cosine_warmup" => Schedule::CosineWarmup,
            other => return Err(bad("train.schedule", format!("unknown schedule `{other}`"))),
        };
        let momentum: f64 = a.parsed("train.momentum", 0.9)?;
        let optimizer = match a.get("train.optimizer").unwrap_or("sgd") {
            "sgd" => OptimizerKind::Sgd,
            "momentum" => OptimizerKind::Momentum(momentum),
            other => return Err(bad("train.optimizer", format!("unknown optimizer `{other}`"))),
        };
        let es_default = EarlyStop::default();
        let early_stop = match a.get("train.early_stop") {
            Some(v) if !parse_bool("train.early_stop", v)? => None,
            _ => Some(EarlyStop {
                check_fraction: a.parsed("train.early_stop_fraction", es_default.check_fraction)?,
                margin: a.parsed("train.early_stop_margin", es_default.margin)?,
            }),
        };
        let batch_size: usize = a.parsed("train.batch_size", d.batch_size)?;
        if batch_size == 0 {
            return Err(bad("train.batch_size", "must be at least 1"));
        }
        let train = TrainConfig {
            hidden,
            activation,
            epochs: a.parsed("train.epochs", d.epochs)?,
            batch_size,
            lr: a.parsed("train.lr", d.lr)?,
            schedule,
            optimizer,
            seed: a.parsed("train.seed", seed)?,
            early_stop,
        };

        let vocab = VocabSpec {
            exclude_operands: a
                .list("vocab.exclude_operands")
                .iter()
                .map(|n| match Operand::from_name(n) {
                    Some(op) if op != Operand::Prev => Ok(op),
                    _ => Err(bad("vocab.exclude_operands", format!("unknown operand `{n}`"))),
                })
                .collect::<Result<_, _>>()?,
            exclude_unaries: {
                let names = a.list("vocab.exclude_unaries");
                let known: Vec<String> = Unary::all().iter().map(|u| u.to_string()).collect();
                for n in &names {
                    if !known.iter().any(|k| k == n || k.split('[').next() == Some(n.as_str())) {
                        return Err(bad("vocab.exclude_unaries", format!("unknown unary `{n}`")));
                    }
                }
                names
            },
            exclude_binaries: a
                .list("vocab.exclude_binaries")
                .iter()
                .map(|n| Binary::from_name(n).ok_or_else(|| bad("vocab.exclude_binaries", format!("unknown binary `{n}`"))))
                .collect::<Result<_, _>>()?,
        };

        let init = match a.get("evo.init").unwrap_or("seeded") {
            "seeded" => match a.get("evo.seeds") {
                None => InitMode::builtins(),
                Some(text) => InitMode::Seeded(
                    text.split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_equation(s).map_err(|e| bad("evo.seeds", format!("`{s}`: {e}"))))
                        .collect::<Result<_, _>>()?,
                ),
            },
            other => match other.strip_prefix("random:").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => InitMode::Random(n),
                _ => return Err(bad("evo.init", format!("expected `seeded` or `random:<count>`, got `{other}`"))),
            },
        };
        let k_distribution = match a.get("evo.k") {
            None => vec![(1, 1.0)],
            Some(_) => a
                .list("evo.k")
                .iter()
                .map(|pair| {
                    let (k, p) = pair.split_once(':').unwrap_or((pair.as_str(), "1"));
                    match (k.trim().parse::<usize>(), p.trim().parse::<f64>()) {
                        (Ok(k), Ok(p)) => Ok((k, p)),
                        _ => Err(bad("evo.k", format!("`{pair}` is not `k:probability`"))),
                    }
                })
                .collect::<Result<_, _>>()?,
        };
        let evo_defaults = EvoConfig::default();
        let evo = EvoConfig {
            p: a.parsed("evo.p", evo_defaults.p)?,
            elite_size: a.parsed("evo.elite_size", evo_defaults.elite_size)?,
            k_distribution,
            mutation_retries: a.parsed("evo.mutation_retries", evo_defaults.mutation_retries)?,
            init,
            vocab: vocab.build(),
            min_steps: a.parsed("evo.min_steps", 1)?,
            max_steps: a.parsed("evo.max_steps", MAX_STEPS)?,
            env: evo_defaults.env,
        };
        evo.validate().map_err(|e| bad("evo", e.to_string()))?;

        Ok(SearchJob {
            evo,
            vocab,
            train,
            task,
            budget,
            workers,
            output,
            seed,
        })
    }

    /// Every key with its value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("budget", self.budget.to_string()),
            ("workers", self.workers.to_string()),
            ("output", self.output.display().to_string()),
            ("task", self.task.kind.name().to_string()),
        ];
        if let TaskKind::IdxFiles { images, labels } = &self.task.kind {
            e.push(("task.images", images.display().to_string()));
            e.push(("task.labels", labels.display().to_string()));
        }
        let t = &self.train;
        e.extend([
            ("task.n_train", self.task.n_train.to_string()),
            ("task.n_val", self.task.n_val.to_string()),
            ("task.n_test", self.task.n_test.to_string()),
            ("task.noise", self.task.noise.to_string()),
            ("task.seed", self.task.seed.to_string()),
            ("train.hidden", join(t.hidden.iter())),
            ("train.activation", t.activation.name().to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            (
                "train.schedule",
                match t.schedule {
                    Schedule::Constant => "constant",
                    Schedule::CosineWarmup => "cosine",
                }
                .to_string(),
            ),
        ]);
        match t.optimizer {
            OptimizerKind::Sgd => e.push(("train.optimizer", "sgd".to_string())),
            OptimizerKind::Momentum(mu) => {
                e.push(("train.optimizer", "momentum".to_string()));
                e.push(("train.momentum", mu.to_string()));
            }
        }
        match t.early_stop {
            None => e.push(("train.early_stop", "false".to_string())),
            Some(es) => {
                e.push(("train.early_stop", "true".to_string()));
                e.push(("train.early_stop_fraction", es.check_fraction.to_string()));
                e.push(("train.early_stop_margin", es.margin.to_string()));
            }
        }
        e.push(("train.seed", t.seed.to_string()));
        let v = &self.evo;
        e.extend([
            ("evo.p", v.p.to_string()),
            ("evo.elite_size", v.elite_size.to_string()),
            ("evo.k", join(v.k_distribution.iter().map(|(k, p)| format!("{k}:{p}")))),
            ("evo.mutation_retries", v.mutation_retries.to_string()),
        ]);
        match &v.init {
            InitMode::Random(n) => e.push(("evo.init", format!("random:{n}"))),
            InitMode::Seeded(eqs) => {
                e.push(("evo.init", "seeded".to_string()));
                let builtins: Vec<Equation> = builtin_equations().into_iter().map(|(_, e)| e).collect();
                if *eqs != builtins {
                    let text: Vec<String> = eqs.iter().map(|q| q.to_string()).collect();
                    e.push(("evo.seeds", text.join("; ")));
                }
            }
        }
        e.extend([
            ("evo.min_steps", v.min_steps.to_string()),
            ("evo.max_steps", v.max_steps.to_string()),
        ]);
        if !self.vocab.exclude_operands.is_empty() {
            e.push(("vocab.exclude_operands", join(self.vocab.exclude_operands.iter().map(|o| o.name()))));
        }
        if !self.vocab.exclude_unaries.is_empty() {
            e.push(("vocab.exclude_unaries", self.vocab.exclude_unaries.join(",")));
        }
        if !self.vocab.exclude_binaries.is_empty() {
            e.push(("vocab.exclude_binaries", join(self.vocab.exclude_binaries.iter().map(|b| b.name()))));
        }
        e
    }

    /// SHA-256 of the settings that determine search results. The worker
    /// count and output path are left out so a run can resume elsewhere, and
    /// the budget so a finished run can be extended.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k == "workers" || k == "output" || k == "budget" {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}
