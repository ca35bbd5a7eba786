use alloc::vec::Vec;

use rand::Rng;

use super::{check_feasible, Binary, Equation, OperandRef, ShapeEnv, Step, Unary, MAX_STEPS};

pub const DEFAULT_SAMPLE_RETRIES: usize = 1000;

/// The allowed members of each component category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    /// Leaf operands (never `PREV`).
    pub operands: Vec<OperandRef>,
    pub unaries: Vec<Unary>,
    pub binaries: Vec<Binary>,
}

impl Vocab {
    pub fn full() -> Self {
        Vocab {
            operands: OperandRef::all_leaves(),
            unaries: Unary::all(),
            binaries: Binary::ALL.to_vec(),
        }
    }

    pub fn new(operands: Vec<OperandRef>, unaries: Vec<Unary>, binaries: Vec<Binary>) -> Self {
        let mut v = Vocab {
            operands: operands.into_iter().filter(|o| !o.is_prev()).collect(),
            unaries,
            binaries,
        };
        v.operands.dedup();
        v
    }

    pub fn is_usable(&self) -> bool {
        !self.operands.is_empty() && !self.unaries.is_empty() && !self.binaries.is_empty()
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::full()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("vocabulary has an empty category")]
    EmptyVocab,
    #[error("step count {0} outside 1..=3")]
    StepCount(usize),
    #[error("no feasible equation in vocab after {0} attempts")]
    NoFeasible(usize),
}

fn pick<T: Copy, R: Rng + ?Sized>(rng: &mut R, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Draws every slot uniformly from `vocab`, without a feasibility check.
pub(crate) fn sample_unchecked<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocab, steps: usize) -> Equation {
    let mut out = Vec::with_capacity(steps);
    for idx in 0..steps {
        let op1 = if idx == 0 {
            pick(rng, &vocab.operands)
        } else {
            OperandRef::PREV
        };
        let u1 = pick(rng, &vocab.unaries);
        let op2 = pick(rng, &vocab.operands);
        let u2 = pick(rng, &vocab.unaries);
        let f = pick(rng, &vocab.binaries);
        out.push(Step { op1, u1, op2, u2, f });
    }
    Equation::new(out).expect("sampled equations respect chaining")
}

/// Uniformly samples a feasible `steps`-step equation, resampling whole
/// equations until one passes [`check_feasible`] or `retries` runs out.
pub fn random_equation_with<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: &Vocab,
    steps: usize,
    env: &ShapeEnv,
    retries: usize,
) -> Result<Equation, SampleError> {
    if !vocab.is_usable() {
        return Err(SampleError::EmptyVocab);
    }
    if steps == 0 || steps > MAX_STEPS {
        return Err(SampleError::StepCount(steps));
    }
    for _ in 0..retries.max(1) {
        let e = sample_unchecked(rng, vocab, steps);
        if check_feasible(&e, env).is_ok() {
            return Ok(e);
        }
    }
    Err(SampleError::NoFeasible(retries.max(1)))
}

/// [`random_equation_with`] against the symbolic shape environment and the
/// default retry budget.
pub fn random_equation<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocab, steps: usize) -> Result<Equation, SampleError> {
    random_equation_with(rng, vocab, steps, &ShapeEnv::symbolic(), DEFAULT_SAMPLE_RETRIES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{Operand, StatVariant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_for_seed() {
        let vocab = Vocab::full();
        let a = random_equation(&mut ChaCha8Rng::seed_from_u64(7), &vocab, 1).unwrap();
        let b = random_equation(&mut ChaCha8Rng::seed_from_u64(7), &vocab, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_vocab_gives_backprop() {
        let vocab = Vocab::new(
            alloc::vec![OperandRef::raw(Operand::GradHPre)],
            alloc::vec![Unary::Ident],
            alloc::vec![Binary::KeepLeft],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_equation(&mut rng, &vocab, 1).unwrap();
        assert_eq!(e, Equation::keep_left_of(Operand::GradHPre));
    }

    #[test]
    fn infeasible_vocab_gives_up() {
        let vocab = Vocab::new(
            alloc::vec![OperandRef::raw(Operand::BNext)],
            alloc::vec![Unary::Ident],
            alloc::vec![Binary::Add],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            random_equation_with(&mut rng, &vocab, 2, &ShapeEnv::symbolic(), 50),
            Err(SampleError::NoFeasible(50))
        );
    }

    #[test]
    fn argument_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = Vocab::new(Vec::new(), Unary::all(), Binary::ALL.to_vec());
        assert_eq!(random_equation(&mut rng, &empty, 1), Err(SampleError::EmptyVocab));
        assert_eq!(random_equation(&mut rng, &Vocab::full(), 4), Err(SampleError::StepCount(4)));
    }

    #[test]
    fn full_vocab_covers_stat_variants() {
        let v = Vocab::full();
        assert_eq!(v.operands.len(), 64);
        assert!(v.operands.contains(&OperandRef::with_stat(Operand::Dfa, StatVariant::RunMean)));
    }
}
