//! The update-equation language.
//!
//! An [`Equation`] is a chain of one to three [`Step`]s. Each step applies a
//! binary function to two unary-transformed operands, and every step after
//! the first consumes the previous result as its left operand.

mod parse;
mod sample;
mod shape;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub use parse::{parse_equation, ParseError, ParseErrorKind};
pub use sample::{random_equation, random_equation_with, SampleError, Vocab, DEFAULT_SAMPLE_RETRIES};
pub use shape::{check_feasible, Dim, Shape, ShapeEnv, ShapeError};

/// Upper bound on the number of chained steps.
pub const MAX_STEPS: usize = 3;

/// Leaf values available to an equation at hidden layer `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    /// Weight matrix of the current layer, `n_{i-1} x n_i`.
    W,
    SgnW,
    /// Fixed Gaussian matrix shaped like `W`.
    R,
    /// Fixed Bernoulli matrix shaped like `W`.
    S,
    /// Fixed Gaussian matrix mapping the output layer to layer `i`.
    RL,
    HPre,
    H,
    HPreNext,
    BL,
    BNext,
    /// `b^p_{i+1}` pulled back through the true forward weights.
    GradH,
    /// The signal ordinary back-propagation would produce for `b^p_i`.
    GradHPre,
    Fa,
    FaAct,
    Dfa,
    DfaAct,
    /// Result of the previous step.
    Prev,
}

impl Operand {
    /// Every operand that names a concrete value (everything but `Prev`).
    pub const LEAVES: [Operand; 16] = [
        Operand::W,
        Operand::SgnW,
        Operand::R,
        Operand::S,
        Operand::RL,
        Operand::HPre,
        Operand::H,
        Operand::HPreNext,
        Operand::BL,
        Operand::BNext,
        Operand::GradH,
        Operand::GradHPre,
        Operand::Fa,
        Operand::FaAct,
        Operand::Dfa,
        Operand::DfaAct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operand::W => "w",
            Operand::SgnW => "sgn_w",
            Operand::R => "r",
            Operand::S => "s",
            Operand::RL => "r_l",
            Operand::HPre => "h_pre",
            Operand::H => "h",
            Operand::HPreNext => "h_pre_next",
            Operand::BL => "b_l",
            Operand::BNext => "b_next",
            Operand::GradH => "grad_h",
            Operand::GradHPre => "g",
            Operand::Fa => "fa",
            Operand::FaAct => "fa_act",
            Operand::Dfa => "dfa",
            Operand::DfaAct => "dfa_act",
            Operand::Prev => "prev",
        }
    }

    pub fn from_name(name: &str) -> Option<Operand> {
        if name == "prev" {
            return Some(Operand::Prev);
        }
        Operand::LEAVES.iter().copied().find(|op| op.name() == name)
    }

    /// Index into [`Operand::LEAVES`]; `None` for `Prev`.
    pub fn leaf_index(self) -> Option<usize> {
        Operand::LEAVES.iter().position(|&op| op == self)
    }
}

/// Running-statistics view of an operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StatVariant {
    Raw,
    /// EMA of the entry mean, as a `1 x 1` scalar.
    RunMean,
    /// Square root of the EMA variance, as a `1 x 1` scalar.
    RunStd,
    /// The operand standardized with its EMA mean and variance.
    RunNorm,
}

impl StatVariant {
    pub const ALL: [StatVariant; 4] = [
        StatVariant::Raw,
        StatVariant::RunMean,
        StatVariant::RunStd,
        StatVariant::RunNorm,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            StatVariant::Raw => "",
            StatVariant::RunMean => ".rmean",
            StatVariant::RunStd => ".rstd",
            StatVariant::RunNorm => ".rnorm",
        }
    }
}

/// An operand together with its statistics variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OperandRef {
    pub operand: Operand,
    pub stat: StatVariant,
}

impl OperandRef {
    pub const PREV: OperandRef = OperandRef::raw(Operand::Prev);

    pub const fn raw(operand: Operand) -> Self {
        OperandRef {
            operand,
            stat: StatVariant::Raw,
        }
    }

    pub const fn with_stat(operand: Operand, stat: StatVariant) -> Self {
        OperandRef { operand, stat }
    }

    pub fn is_prev(self) -> bool {
        self.operand == Operand::Prev
    }

    /// Every non-`Prev` operand in every statistics variant.
    pub fn all_leaves() -> Vec<OperandRef> {
        Operand::LEAVES
            .iter()
            .flat_map(|&op| StatVariant::ALL.iter().map(move |&s| OperandRef::with_stat(op, s)))
            .collect()
    }
}

impl fmt::Display for OperandRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.operand.name(), self.stat.suffix())
    }
}

/// Legal values of `scale[a]`.
pub const SCALE_VALUES: [f64; 5] = [-2.0, -1.0, -0.5, 0.5, 2.0];
/// Legal values of `shift[b]`.
pub const SHIFT_VALUES: [f64; 12] = [
    -10.0, -2.0, -1.0, -0.5, -0.1, -0.01, 0.01, 0.1, 0.5, 1.0, 2.0, 10.0,
];
/// Legal noise scales for `add_noise[g]` and `mul_noise[g]`.
pub const NOISE_VALUES: [f64; 4] = [0.01, 0.1, 0.5, 1.0];
/// Legal drop probabilities for `dropout[d]`.
pub const DROPOUT_VALUES: [f64; 3] = [0.01, 0.1, 0.3];
/// Legal bounds for `clip[c]`.
pub const CLIP_VALUES: [f64; 4] = [0.01, 0.1, 0.5, 1.0];

/// Vector norm used by the flattened, per-column and per-row normalizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VecNorm {
    /// Count of nonzero entries.
    L0,
    L1,
    L2,
    /// Smallest absolute entry.
    NegInf,
    /// Largest absolute entry.
    Inf,
}

impl VecNorm {
    pub const ALL: [VecNorm; 5] = [VecNorm::L0, VecNorm::L1, VecNorm::L2, VecNorm::NegInf, VecNorm::Inf];

    fn suffix(self) -> &'static str {
        match self {
            VecNorm::L0 => "0",
            VecNorm::L1 => "1",
            VecNorm::L2 => "2",
            VecNorm::NegInf => "neginf",
            VecNorm::Inf => "inf",
        }
    }
}

/// Matrix norm used by `mnorm_*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatNorm {
    Fro,
    /// Largest absolute column sum.
    L1,
    /// Smallest absolute row sum.
    NegInf,
    /// Largest absolute row sum.
    Inf,
}

impl MatNorm {
    pub const ALL: [MatNorm; 4] = [MatNorm::Fro, MatNorm::L1, MatNorm::NegInf, MatNorm::Inf];

    fn suffix(self) -> &'static str {
        match self {
            MatNorm::Fro => "fro",
            MatNorm::L1 => "1",
            MatNorm::NegInf => "neginf",
            MatNorm::Inf => "inf",
        }
    }
}

/// Unary transforms applied to each operand.
///
/// Parameterized variants store an index into the corresponding legal value
/// table (`SCALE_VALUES`, `CLIP_VALUES`, ...), so an out-of-set parameter is
/// unrepresentable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unary {
    Ident,
    Transpose,
    Recip,
    Abs,
    Neg,
    Gt0,
    Relu,
    Sign,
    SqrtAbs,
    SignSqrt,
    Square,
    SignSquare,
    Cube,
    Scale(u8),
    Shift(u8),
    AddNoise(u8),
    MulNoise(u8),
    Dropout(u8),
    Clip(u8),
    VNorm(VecNorm),
    CNorm(VecNorm),
    RNorm(VecNorm),
    MNorm(MatNorm),
    RunNormalize,
}

/// Tag of a [`Unary`] with its parameter erased.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnaryTag {
    Ident,
    Transpose,
    Recip,
    Abs,
    Neg,
    Gt0,
    Relu,
    Sign,
    SqrtAbs,
    SignSqrt,
    Square,
    SignSquare,
    Cube,
    Scale,
    Shift,
    AddNoise,
    MulNoise,
    Dropout,
    Clip,
    VNorm,
    CNorm,
    RNorm,
    MNorm,
    RunNormalize,
}

const SIMPLE_UNARIES: [(Unary, &str); 13] = [
    (Unary::Ident, "ident"),
    (Unary::Transpose, "transpose"),
    (Unary::Recip, "recip"),
    (Unary::Abs, "abs"),
    (Unary::Neg, "neg"),
    (Unary::Gt0, "gt0"),
    (Unary::Relu, "relu"),
    (Unary::Sign, "sign"),
    (Unary::SqrtAbs, "sqrt_abs"),
    (Unary::SignSqrt, "sign_sqrt"),
    (Unary::Square, "square"),
    (Unary::SignSquare, "sign_square"),
    (Unary::Cube, "cube"),
];

const PARAM_UNARIES: [(UnaryTag, &str, &[f64]); 6] = [
    (UnaryTag::Scale, "scale", &SCALE_VALUES),
    (UnaryTag::Shift, "shift", &SHIFT_VALUES),
    (UnaryTag::AddNoise, "add_noise", &NOISE_VALUES),
    (UnaryTag::MulNoise, "mul_noise", &NOISE_VALUES),
    (UnaryTag::Dropout, "dropout", &DROPOUT_VALUES),
    (UnaryTag::Clip, "clip", &CLIP_VALUES),
];

impl Unary {
    /// Every unary with every legal parameter.
    pub fn all() -> Vec<Unary> {
        let mut out: Vec<Unary> = SIMPLE_UNARIES.iter().map(|&(u, _)| u).collect();
        for &(tag, _, values) in PARAM_UNARIES.iter() {
            for idx in 0..values.len() {
                out.push(Unary::with_param_index(tag, idx as u8).expect("parameterized tag"));
            }
        }
        for family in [Unary::VNorm, Unary::CNorm, Unary::RNorm] {
            out.extend(VecNorm::ALL.iter().map(|&p| family(p)));
        }
        out.extend(MatNorm::ALL.iter().map(|&q| Unary::MNorm(q)));
        out.push(Unary::RunNormalize);
        out
    }

    pub fn tag(self) -> UnaryTag {
        match self {
            Unary::Ident => UnaryTag::Ident,
            Unary::Transpose => UnaryTag::Transpose,
            Unary::Recip => UnaryTag::Recip,
            Unary::Abs => UnaryTag::Abs,
            Unary::Neg => UnaryTag::Neg,
            Unary::Gt0 => UnaryTag::Gt0,
            Unary::Relu => UnaryTag::Relu,
            Unary::Sign => UnaryTag::Sign,
            Unary::SqrtAbs => UnaryTag::SqrtAbs,
            Unary::SignSqrt => UnaryTag::SignSqrt,
            Unary::Square => UnaryTag::Square,
            Unary::SignSquare => UnaryTag::SignSquare,
            Unary::Cube => UnaryTag::Cube,
            Unary::Scale(_) => UnaryTag::Scale,
            Unary::Shift(_) => UnaryTag::Shift,
            Unary::AddNoise(_) => UnaryTag::AddNoise,
            Unary::MulNoise(_) => UnaryTag::MulNoise,
            Unary::Dropout(_) => UnaryTag::Dropout,
            Unary::Clip(_) => UnaryTag::Clip,
            Unary::VNorm(_) => UnaryTag::VNorm,
            Unary::CNorm(_) => UnaryTag::CNorm,
            Unary::RNorm(_) => UnaryTag::RNorm,
            Unary::MNorm(_) => UnaryTag::MNorm,
            Unary::RunNormalize => UnaryTag::RunNormalize,
        }
    }

    fn param_table(tag: UnaryTag) -> Option<&'static [f64]> {
        PARAM_UNARIES
            .iter()
            .find(|(t, _, _)| *t == tag)
            .map(|&(_, _, values)| values)
    }

    fn with_param_index(tag: UnaryTag, idx: u8) -> Option<Unary> {
        let len = Unary::param_table(tag)?.len();
        if usize::from(idx) >= len {
            return None;
        }
        Some(match tag {
            UnaryTag::Scale => Unary::Scale(idx),
            UnaryTag::Shift => Unary::Shift(idx),
            UnaryTag::AddNoise => Unary::AddNoise(idx),
            UnaryTag::MulNoise => Unary::MulNoise(idx),
            UnaryTag::Dropout => Unary::Dropout(idx),
            UnaryTag::Clip => Unary::Clip(idx),
            _ => return None,
        })
    }

    /// Builds a parameterized unary from its value; `None` if the value is
    /// not in the legal set for `tag`.
    pub fn with_param(tag: UnaryTag, value: f64) -> Option<Unary> {
        let idx = Unary::param_table(tag)?.iter().position(|&v| v == value)?;
        Unary::with_param_index(tag, idx as u8)
    }

    pub fn scale(a: f64) -> Option<Unary> {
        Unary::with_param(UnaryTag::Scale, a)
    }

    pub fn shift(b: f64) -> Option<Unary> {
        Unary::with_param(UnaryTag::Shift, b)
    }

    pub fn clip(c: f64) -> Option<Unary> {
        Unary::with_param(UnaryTag::Clip, c)
    }

    pub fn dropout(d: f64) -> Option<Unary> {
        Unary::with_param(UnaryTag::Dropout, d)
    }

    pub fn add_noise(g: f64) -> Option<Unary> {
        Unary::with_param(UnaryTag::AddNoise, g)
    }

    pub fn mul_noise(g: f64) -> Option<Unary> {
        Unary::with_param(UnaryTag::MulNoise, g)
    }

    /// The real parameter of a parameterized unary.
    pub fn param(self) -> Option<f64> {
        let idx = match self {
            Unary::Scale(i)
            | Unary::Shift(i)
            | Unary::AddNoise(i)
            | Unary::MulNoise(i)
            | Unary::Dropout(i)
            | Unary::Clip(i) => usize::from(i),
            _ => return None,
        };
        Unary::param_table(self.tag()).map(|values| values[idx])
    }

    /// Whether evaluation draws from the random generator.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Unary::AddNoise(_) | Unary::MulNoise(_) | Unary::Dropout(_))
    }

    /// Base spelling, including the norm suffix but not the bracketed parameter.
    fn base_name(self) -> String {
        use alloc::format;
        match self {
            Unary::VNorm(p) => format!("vnorm_{}", p.suffix()),
            Unary::CNorm(p) => format!("cnorm_{}", p.suffix()),
            Unary::RNorm(p) => format!("rnorm_{}", p.suffix()),
            Unary::MNorm(q) => format!("mnorm_{}", q.suffix()),
            Unary::RunNormalize => String::from("run_normalize"),
            other => {
                if let Some(&(_, name)) = SIMPLE_UNARIES.iter().find(|(u, _)| *u == other) {
                    return String::from(name);
                }
                let tag = other.tag();
                let (_, name, _) = PARAM_UNARIES
                    .iter()
                    .find(|(t, _, _)| *t == tag)
                    .expect("parameterized unary");
                String::from(*name)
            }
        }
    }

    /// Parses a name (without bracketed parameter). Returns the tag for
    /// parameterized names and the full unary otherwise.
    pub(crate) fn lookup(name: &str) -> Option<UnaryLookup> {
        if let Some(&(u, _)) = SIMPLE_UNARIES.iter().find(|(_, n)| *n == name) {
            return Some(UnaryLookup::Plain(u));
        }
        if name == "run_normalize" {
            return Some(UnaryLookup::Plain(Unary::RunNormalize));
        }
        if let Some(&(tag, _, _)) = PARAM_UNARIES.iter().find(|(_, n, _)| *n == name) {
            return Some(UnaryLookup::NeedsParam(tag));
        }
        let (family, suffix) = name.split_once('_')?;
        let vec_norm = VecNorm::ALL.iter().copied().find(|p| p.suffix() == suffix);
        match family {
            "vnorm" => vec_norm.map(|p| UnaryLookup::Plain(Unary::VNorm(p))),
            "cnorm" => vec_norm.map(|p| UnaryLookup::Plain(Unary::CNorm(p))),
            "rnorm" => vec_norm.map(|p| UnaryLookup::Plain(Unary::RNorm(p))),
            "mnorm" => MatNorm::ALL
                .iter()
                .copied()
                .find(|q| q.suffix() == suffix)
                .map(|q| UnaryLookup::Plain(Unary::MNorm(q))),
            _ => None,
        }
    }
}

pub(crate) enum UnaryLookup {
    Plain(Unary),
    NeedsParam(UnaryTag),
}

impl fmt::Display for Unary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base_name())?;
        if let Some(p) = self.param() {
            // `{:?}` keeps a trailing `.0` on integral values: `clip[1.0]`.
            write!(f, "[{p:?}]")?;
        }
        Ok(())
    }
}

/// Binary functions combining the two transformed operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Binary {
    Add,
    Sub,
    MulElem,
    DivElem,
    MatMul,
    KeepLeft,
    Min,
    Max,
}

impl Binary {
    pub const ALL: [Binary; 8] = [
        Binary::Add,
        Binary::Sub,
        Binary::MulElem,
        Binary::DivElem,
        Binary::MatMul,
        Binary::KeepLeft,
        Binary::Min,
        Binary::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::MulElem => "mul_elem",
            Binary::DivElem => "div_elem",
            Binary::MatMul => "matmul",
            Binary::KeepLeft => "keep_left",
            Binary::Min => "min",
            Binary::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Binary> {
        Binary::ALL.iter().copied().find(|b| b.name() == name)
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Binary::Add | Binary::MulElem | Binary::Min | Binary::Max)
    }
}

/// One `f(u1(op1), u2(op2))` application.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Step {
    pub op1: OperandRef,
    pub u1: Unary,
    pub op2: OperandRef,
    pub u2: Unary,
    pub f: Binary,
}

impl Step {
    pub fn new(f: Binary, u1: Unary, op1: OperandRef, u2: Unary, op2: OperandRef) -> Self {
        Step { op1, u1, op2, u2, f }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}({}), {}({}))",
            self.f.name(),
            self.u1,
            self.op1,
            self.u2,
            self.op2
        )
    }
}

/// Structural problems with a step sequence, independent of shapes.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("equation must have between 1 and {MAX_STEPS} steps, got {0}")]
    StepCount(usize),
    #[error("PREV not allowed in step 1")]
    PrevInFirstStep,
    #[error("step {0} must take PREV as its first operand")]
    MissingPrev(usize),
    #[error("PREV may only appear as the first operand (step {0})")]
    PrevAsSecondOperand(usize),
    #[error("PREV cannot carry a running-statistics variant (step {0})")]
    PrevWithStat(usize),
}

/// A chained update equation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Equation {
    steps: Vec<Step>,
}

impl Equation {
    /// Validates the chaining rules and builds the equation.
    pub fn new(steps: Vec<Step>) -> Result<Self, StructureError> {
        if steps.is_empty() || steps.len() > MAX_STEPS {
            return Err(StructureError::StepCount(steps.len()));
        }
        for (idx, step) in steps.iter().enumerate() {
            let n = idx + 1;
            if idx == 0 && step.op1.is_prev() {
                return Err(StructureError::PrevInFirstStep);
            }
            if idx > 0 && !step.op1.is_prev() {
                return Err(StructureError::MissingPrev(n));
            }
            if step.op2.is_prev() {
                if idx == 0 {
                    return Err(StructureError::PrevInFirstStep);
                }
                return Err(StructureError::PrevAsSecondOperand(n));
            }
            if step.op1.is_prev() && step.op1.stat != StatVariant::Raw {
                return Err(StructureError::PrevWithStat(n));
            }
        }
        Ok(Equation { steps })
    }

    /// `f(u(op), u(op))` style single-step equation.
    pub fn single(step: Step) -> Self {
        Equation::new(alloc::vec![step]).expect("single step with leaf operands")
    }

    /// `keep_left(ident(op), ident(op))`.
    pub fn keep_left_of(operand: Operand) -> Self {
        let leaf = OperandRef::raw(operand);
        Equation::single(Step::new(Binary::KeepLeft, Unary::Ident, leaf, Unary::Ident, leaf))
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Distinct leaf operands read anywhere in the equation, in a fixed order.
    pub fn leaf_operands(&self) -> Vec<Operand> {
        let mut out: Vec<Operand> = self
            .steps
            .iter()
            .flat_map(|s| [s.op1.operand, s.op2.operand])
            .filter(|op| *op != Operand::Prev)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Structural identity key with commutative leaf pairs put in order.
    pub fn canonical_key(&self) -> String {
        let mut normalized = self.clone();
        for (idx, step) in normalized.steps.iter_mut().enumerate() {
            if idx == 0 && step.f.is_commutative() && (step.op2, step.u2) < (step.op1, step.u1) {
                core::mem::swap(&mut step.op1, &mut step.op2);
                core::mem::swap(&mut step.u1, &mut step.u2);
            }
        }
        normalized.to_string()
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (idx, step) in self.steps.iter().enumerate() {
            if idx > 0 {
                f.write_str(" |> ")?;
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

impl core::str::FromStr for Equation {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_equation(s)
    }
}

/// Canonical text form; `parse_equation` inverts it.
pub fn serialize_equation(e: &Equation) -> String {
    e.to_string()
}

/// See [`Equation::canonical_key`].
pub fn canonical_key(e: &Equation) -> String {
    e.canonical_key()
}
