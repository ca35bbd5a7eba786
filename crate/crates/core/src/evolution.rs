//! Population bookkeeping, parent selection and mutation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::dsl::{
    check_feasible, random_equation_with, Binary, Equation, OperandRef, SampleError, ShapeEnv, ShapeError, Step, Unary,
    Vocab, DEFAULT_SAMPLE_RETRIES, MAX_STEPS,
};
use crate::trainer::{builtin_equations, FitnessRecord};

/// How the first generation is formed.
#[derive(Clone, Debug, PartialEq)]
pub enum InitMode {
    /// `count` distinct feasible random equations.
    Random(usize),
    /// Exactly these equations.
    Seeded(Vec<Equation>),
}

impl InitMode {
    /// The three builtin rules.
    pub fn builtins() -> Self {
        InitMode::Seeded(builtin_equations().into_iter().map(|(_, e)| e).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvoConfig {
    /// Probability of drawing the parent from the elite set.
    pub p: f64,
    /// Elite set size `N`.
    pub elite_size: usize,
    /// `(k, probability)` pairs: how many slot swaps one mutation applies.
    pub k_distribution: Vec<(usize, f64)>,
    /// Attempts at a feasible mutation before falling back to a random equation.
    pub mutation_retries: usize,
    pub init: InitMode,
    pub vocab: Vocab,
    /// Step counts for random equations, inclusive.
    pub min_steps: usize,
    pub max_steps: usize,
    /// Shapes every emitted equation must satisfy.
    pub env: ShapeEnv,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            p: 0.7,
            elite_size: 1000,
            k_distribution: alloc::vec![(1, 1.0)],
            mutation_retries: 100,
            init: InitMode::builtins(),
            vocab: Vocab::full(),
            min_steps: 1,
            max_steps: MAX_STEPS,
            env: ShapeEnv::symbolic(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("elite probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("elite size must be at least 1")]
    EliteSize,
    #[error("mutation count distribution must be non-empty with non-negative weights summing to 1")]
    KDistribution,
    #[error("step range {min}..={max} outside 1..={MAX_STEPS}")]
    Steps { min: usize, max: usize },
    #[error("vocabulary has an empty category")]
    EmptyVocab,
    #[error("seeded equation `{equation}` is infeasible: {error}")]
    InfeasibleSeed { equation: String, error: ShapeError },
    #[error("random initialization: {0}")]
    Sample(SampleError),
    #[error("could only find {found} distinct random equations of {wanted}")]
    TooFewDistinct { wanted: usize, found: usize },
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ConfigError::Probability(self.p));
        }
        if self.elite_size == 0 {
            return Err(ConfigError::EliteSize);
        }
        let total: f64 = self.k_distribution.iter().map(|&(_, w)| w).sum();
        if self.k_distribution.is_empty()
            || self.k_distribution.iter().any(|&(k, w)| k == 0 || w.is_nan() || w < 0.0)
            || (total - 1.0).abs() > 1e-9
        {
            return Err(ConfigError::KDistribution);
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps || self.max_steps > MAX_STEPS {
            return Err(ConfigError::Steps {
                min: self.min_steps,
                max: self.max_steps,
            });
        }
        if !self.vocab.is_usable() {
            return Err(ConfigError::EmptyVocab);
        }
        Ok(())
    }

    fn draw_k<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(k, w) in &self.k_distribution {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.k_distribution.last().map_or(1, |&(k, _)| k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub equation: Equation,
    pub key: String,
    /// `None` until evaluated.
    pub fitness: Option<FitnessRecord>,
    /// 0 for the initial population; otherwise the controller iteration.
    pub generation: u64,
    pub parent: Option<String>,
    /// How many times this key was reported.
    pub encounters: u32,
}

impl Candidate {
    pub fn new(equation: Equation, generation: u64, parent: Option<String>) -> Self {
        Candidate {
            key: equation.canonical_key(),
            equation,
            fitness: None,
            generation,
            parent,
            encounters: 0,
        }
    }

    pub fn with_fitness(mut self, fitness: FitnessRecord) -> Self {
        self.fitness = Some(fitness);
        self
    }

    pub fn val_acc(&self) -> Option<f64> {
        self.fitness.as_ref().map(|f| f.val_acc)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Ranked {
    acc: f64,
    generation: u64,
    key: String,
}

/// Best accuracy first, then earlier generation, then key.
fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.acc
        .total_cmp(&a.acc)
        .then(a.generation.cmp(&b.generation))
        .then_with(|| a.key.cmp(&b.key))
}

/// All candidates by canonical key plus a fitness-ordered index of the
/// evaluated ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Population {
    candidates: BTreeMap<String, Candidate>,
    ranking: Vec<Ranked>,
    /// Keys in insertion order.
    order: Vec<String>,
}

impl Population {
    pub fn new() -> Self {
        Population::default()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn evaluated_len(&self) -> usize {
        self.ranking.len()
    }

    pub fn get(&self, key: &str) -> Option<&Candidate> {
        self.candidates.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.candidates.contains_key(key)
    }

    /// Candidates in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Candidate> + '_ {
        self.order.iter().map(move |k| &self.candidates[k])
    }

    /// Candidates still waiting for a fitness, in insertion order.
    pub fn unevaluated(&self) -> impl Iterator<Item = &Candidate> + '_ {
        self.iter().filter(|c| c.fitness.is_none())
    }

    /// Adds an unevaluated candidate. Returns false if the key is present.
    pub fn insert_pending(&mut self, candidate: Candidate) -> bool {
        if self.candidates.contains_key(&candidate.key) {
            return false;
        }
        self.order.push(candidate.key.clone());
        self.candidates.insert(candidate.key.clone(), candidate);
        true
    }

    /// Evaluated candidates, best first.
    pub fn ranked(&self) -> impl Iterator<Item = &Candidate> + '_ {
        self.ranking.iter().map(move |r| &self.candidates[&r.key])
    }

    /// The `n` best evaluated candidates.
    pub fn elite(&self, n: usize) -> impl Iterator<Item = &Candidate> + '_ {
        self.ranked().take(n)
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.ranked().next()
    }

    pub fn best_val_acc(&self) -> Option<f64> {
        self.ranking.first().map(|r| r.acc)
    }

    fn unrank(&mut self, key: &str) {
        if let Some(pos) = self.ranking.iter().position(|r| r.key == key) {
            self.ranking.remove(pos);
        }
    }

    fn rank(&mut self, key: &str) {
        let c = &self.candidates[key];
        let entry = Ranked {
            acc: c.val_acc().expect("ranked candidates are evaluated"),
            generation: c.generation,
            key: c.key.clone(),
        };
        let pos = self.ranking.partition_point(|r| rank_order(r, &entry) == Ordering::Less);
        self.ranking.insert(pos, entry);
    }
}

/// Builds the first generation, all unevaluated.
pub fn init_population<R: Rng + ?Sized>(config: &EvoConfig, rng: &mut R) -> Result<Population, ConfigError> {
    config.validate()?;
    let mut pop = Population::new();
    match &config.init {
        InitMode::Seeded(equations) => {
            for e in equations {
                if let Err(error) = check_feasible(e, &config.env) {
                    return Err(ConfigError::InfeasibleSeed {
                        equation: e.to_string(),
                        error,
                    });
                }
                pop.insert_pending(Candidate::new(e.clone(), 0, None));
            }
        }
        InitMode::Random(count) => {
            let attempts = count.saturating_mul(100).max(100);
            for _ in 0..attempts {
                if pop.len() >= *count {
                    break;
                }
                let e = random_for(config, rng).map_err(ConfigError::Sample)?;
                pop.insert_pending(Candidate::new(e, 0, None));
            }
            if pop.len() < *count {
                return Err(ConfigError::TooFewDistinct {
                    wanted: *count,
                    found: pop.len(),
                });
            }
        }
    }
    Ok(pop)
}

fn random_for<R: Rng + ?Sized>(config: &EvoConfig, rng: &mut R) -> Result<Equation, SampleError> {
    let steps = rng.random_range(config.min_steps..=config.max_steps);
    random_equation_with(rng, &config.vocab, steps, &config.env, DEFAULT_SAMPLE_RETRIES)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SelectError {
    #[error("no evaluated candidates to select from")]
    Empty,
}

/// Draws a parent: uniform over the elite set with probability `p`, else
/// uniform over the remaining evaluated candidates. An empty side falls back
/// to the other. Unevaluated candidates are never selected.
pub fn select_parent<'a, R: Rng + ?Sized>(pop: &'a Population, config: &EvoConfig, rng: &mut R) -> Result<&'a Candidate, SelectError> {
    let total = pop.ranking.len();
    if total == 0 {
        return Err(SelectError::Empty);
    }
    let elite = config.elite_size.clamp(1, total);
    let from_elite = rng.random_bool(config.p.clamp(0.0, 1.0));
    let idx = if from_elite || elite == total {
        rng.random_range(0..elite)
    } else {
        rng.random_range(elite..total)
    };
    Ok(&pop.candidates[&pop.ranking[idx].key])
}

/// Result of [`mutate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mutation {
    pub equation: Equation,
    /// The retry budget ran out and `equation` is a fresh random equation.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Op1,
    U1,
    Op2,
    U2,
    F,
}

/// Every slot of `e` that mutation may touch (forced PREV slots excluded).
fn mutable_slots(e: &Equation) -> Vec<(usize, Slot)> {
    let mut out = Vec::new();
    for idx in 0..e.len() {
        if idx == 0 {
            out.push((idx, Slot::Op1));
        }
        out.extend([(idx, Slot::U1), (idx, Slot::Op2), (idx, Slot::U2), (idx, Slot::F)]);
    }
    out
}

fn pick_other<T: Copy + PartialEq, R: Rng + ?Sized>(items: &[T], current: T, rng: &mut R) -> Option<T> {
    let n = items.iter().filter(|&&v| v != current).count();
    if n == 0 {
        return None;
    }
    let i = rng.random_range(0..n);
    items.iter().copied().filter(|&v| v != current).nth(i)
}

/// A parameterized unary changes its parameter or its tag with equal
/// probability; when only one kind of change is available it is used.
fn swap_unary<R: Rng + ?Sized>(vocab: &Vocab, current: Unary, rng: &mut R) -> Option<Unary> {
    if current.param().is_none() {
        return pick_other(&vocab.unaries, current, rng);
    }
    let same_tag: Vec<Unary> = vocab.unaries.iter().copied().filter(|u| u.tag() == current.tag() && *u != current).collect();
    let other_tag: Vec<Unary> = vocab.unaries.iter().copied().filter(|u| u.tag() != current.tag()).collect();
    let pool = match (same_tag.is_empty(), other_tag.is_empty()) {
        (true, true) => return None,
        (false, true) => same_tag,
        (true, false) => other_tag,
        (false, false) => {
            if rng.random_bool(0.5) {
                same_tag
            } else {
                other_tag
            }
        }
    };
    Some(pool[rng.random_range(0..pool.len())])
}

fn has_alternative(vocab: &Vocab, step: &Step, slot: Slot) -> bool {
    match slot {
        Slot::Op1 => vocab.operands.iter().any(|&o| o != step.op1),
        Slot::Op2 => vocab.operands.iter().any(|&o| o != step.op2),
        Slot::U1 => vocab.unaries.iter().any(|&u| u != step.u1),
        Slot::U2 => vocab.unaries.iter().any(|&u| u != step.u2),
        Slot::F => vocab.binaries.iter().any(|&f| f != step.f),
    }
}

fn swap_slot<R: Rng + ?Sized>(vocab: &Vocab, step: &mut Step, slot: Slot, rng: &mut R) {
    match slot {
        Slot::Op1 => {
            if let Some(v) = pick_other::<OperandRef, _>(&vocab.operands, step.op1, rng) {
                step.op1 = v;
            }
        }
        Slot::Op2 => {
            if let Some(v) = pick_other::<OperandRef, _>(&vocab.operands, step.op2, rng) {
                step.op2 = v;
            }
        }
        Slot::U1 => {
            if let Some(v) = swap_unary(vocab, step.u1, rng) {
                step.u1 = v;
            }
        }
        Slot::U2 => {
            if let Some(v) = swap_unary(vocab, step.u2, rng) {
                step.u2 = v;
            }
        }
        Slot::F => {
            if let Some(v) = pick_other::<Binary, _>(&vocab.binaries, step.f, rng) {
                step.f = v;
            }
        }
    }
}

/// Applies `k` single-slot swaps drawn from the configured distribution,
/// restarting from `e` whenever the result is infeasible.
pub fn mutate<R: Rng + ?Sized>(e: &Equation, config: &EvoConfig, rng: &mut R) -> Mutation {
    let slots: Vec<(usize, Slot)> = mutable_slots(e)
        .into_iter()
        .filter(|&(i, s)| has_alternative(&config.vocab, &e.steps()[i], s))
        .collect();
    if !slots.is_empty() {
        for _ in 0..config.mutation_retries.max(1) {
            let k = config.draw_k(rng);
            let mut steps = e.steps().to_vec();
            for _ in 0..k {
                let (i, slot) = slots[rng.random_range(0..slots.len())];
                swap_slot(&config.vocab, &mut steps[i], slot, rng);
            }
            let child = Equation::new(steps).expect("swaps keep chaining intact");
            if check_feasible(&child, &config.env).is_ok() {
                return Mutation {
                    equation: child,
                    fallback: false,
                };
            }
        }
    }
    let equation = random_for(config, rng).unwrap_or_else(|_| e.clone());
    Mutation { equation, fallback: true }
}

/// Number of slots in which two equations of equal length differ.
pub fn slot_diff(a: &Equation, b: &Equation) -> Option<usize> {
    if a.len() != b.len() {
        return None;
    }
    let n = a
        .steps()
        .iter()
        .zip(b.steps())
        .map(|(x, y)| {
            usize::from(x.op1 != y.op1)
                + usize::from(x.u1 != y.u1)
                + usize::from(x.op2 != y.op2)
                + usize::from(x.u2 != y.u2)
                + usize::from(x.f != y.f)
        })
        .sum();
    Some(n)
}

/// Inserts an evaluated candidate. A known key counts an encounter and keeps
/// whichever fitness has the higher validation accuracy.
pub fn record_result(pop: &mut Population, candidate: Candidate) {
    let Some(fitness) = candidate.fitness.clone() else {
        return;
    };
    let key = candidate.key.clone();
    match pop.candidates.get_mut(&key) {
        None => {
            let mut c = candidate;
            c.encounters = 1;
            pop.order.push(key.clone());
            pop.candidates.insert(key.clone(), c);
        }
        Some(existing) => {
            existing.encounters += 1;
            let better = match &existing.fitness {
                None => true,
                Some(old) => fitness.val_acc > old.val_acc,
            };
            if !better {
                return;
            }
            existing.fitness = Some(fitness);
            pop.unrank(&key);
        }
    }
    pop.rank(&key);
}

/// The `k` best evaluated candidates, best first.
pub fn top_k(pop: &Population, k: usize) -> Vec<&Candidate> {
    pop.ranked().take(k).collect()
}
