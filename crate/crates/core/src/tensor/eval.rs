use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use libm::{fabs, sqrt, tanh};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::dsl::{Binary, Equation, MatNorm, Operand, OperandRef, ShapeEnv, StatVariant, Unary, VecNorm};

/// Generator driving dropout and noise unaries.
pub type StepRng = ChaCha8Rng;

/// Smallest magnitude a denominator may have.
pub const DIV_EPS: f64 = 1e-8;
/// Added to every norm before dividing by it.
pub const NORM_EPS: f64 = 1e-12;
/// Added to the EMA variance before standardizing.
pub const VAR_EPS: f64 = 1e-8;
/// EMA decay factor for running statistics.
pub const EMA_DECAY: f64 = 0.9;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => tanh(x),
        }
    }

    /// Derivative with respect to the pre-activation. ReLU'(0) = 0.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = tanh(pre);
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// Exponential moving averages of the entry mean and the centered variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub mean_ema: f64,
    pub var_ema: f64,
    pub initialized: bool,
}

impl RunningStats {
    /// Folds one observation in. The first call adopts the batch statistics.
    pub fn update(&mut self, x: &Matrix) {
        let batch_mean = x.mean();
        if !self.initialized {
            self.mean_ema = batch_mean;
            self.var_ema = mean_sq_dev(x, batch_mean);
            self.initialized = true;
        } else {
            self.mean_ema = EMA_DECAY * self.mean_ema + (1.0 - EMA_DECAY) * batch_mean;
            let dev = mean_sq_dev(x, self.mean_ema);
            self.var_ema = EMA_DECAY * self.var_ema + (1.0 - EMA_DECAY) * dev;
        }
    }

    pub fn std(&self) -> f64 {
        sqrt(self.var_ema)
    }

    pub fn standardize(&self, x: &Matrix) -> Matrix {
        let denom = sqrt(self.var_ema + VAR_EPS);
        let mean = self.mean_ema;
        x.map(|v| (v - mean) / denom)
    }
}

fn mean_sq_dev(x: &Matrix, center: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.data().iter().map(|v| (v - center) * (v - center)).sum::<f64>() / x.len() as f64
}

/// Functional form of [`RunningStats::update`].
pub fn update_running_stats(mut stats: RunningStats, x: &Matrix) -> RunningStats {
    stats.update(x);
    stats
}

/// Identifies one running-statistics accumulator within a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StatKey {
    Operand(Operand),
    /// A `run_normalize` unary at (step, argument slot).
    Site { step: u8, slot: u8 },
}

/// All running statistics of one hidden layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsStore {
    entries: BTreeMap<StatKey, RunningStats>,
}

impl StatsStore {
    pub fn get(&self, key: StatKey) -> Option<&RunningStats> {
        self.entries.get(&key)
    }

    pub fn entry(&mut self, key: StatKey) -> &mut RunningStats {
        self.entries.entry(key).or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch at step {step}: {f} of {left:?} and {right:?}")]
    Shape {
        step: usize,
        f: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("result has shape {got:?}, expected {expected:?}")]
    ResultShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("equation produced non-finite values")]
    NonFinite,
}

/// Raw inputs from which a [`BackwardContext`] is assembled for hidden layer `i`.
pub struct LayerSignals<'a> {
    /// `W_i`, `n_{i-1} x n_i`.
    pub w: &'a Matrix,
    /// `R_i`, shaped like `W_i`.
    pub r: &'a Matrix,
    /// `S_i`, shaped like `W_i`.
    pub s: &'a Matrix,
    /// `R_{Li}`, `n_L x n_i`.
    pub r_l: &'a Matrix,
    pub h_pre: &'a Matrix,
    pub h: &'a Matrix,
    pub h_pre_next: &'a Matrix,
    /// `b^p_L`, `B x n_L`.
    pub b_l: &'a Matrix,
    /// `b^p_{i+1}`, `B x n_{i+1}`.
    pub b_next: &'a Matrix,
    /// `W_{i+1}`, `n_i x n_{i+1}`.
    pub w_next: &'a Matrix,
    /// `R_{i+1}`, the fixed feedback matrix standing in for `W_{i+1}`.
    pub r_next: &'a Matrix,
    pub activation: Activation,
}

/// Every operand value at one hidden layer, plus the layer's running
/// statistics and the generator for stochastic unaries.
pub struct BackwardContext<'a> {
    values: Vec<Matrix>,
    pub stats: &'a mut StatsStore,
    pub rng: &'a mut StepRng,
}

impl<'a> BackwardContext<'a> {
    /// Builds every operand, deriving the gradient, feedback-alignment and
    /// direct-feedback-alignment signals from `signals`.
    pub fn assemble(signals: &LayerSignals<'_>, stats: &'a mut StatsStore, rng: &'a mut StepRng) -> Self {
        let act = signals.activation;
        let local = signals.h_pre.map(|v| act.derivative(v));
        let grad_h = signals.b_next.matmul_t(signals.w_next);
        let grad_hpre = grad_h.zip_map(&local, |a, b| a * b);
        let fa = signals.b_next.matmul_t(signals.r_next);
        let fa_act = fa.zip_map(&local, |a, b| a * b);
        let dfa = signals.b_l.matmul(signals.r_l);
        let dfa_act = dfa.zip_map(&local, |a, b| a * b);
        let sgn_w = signals.w.map(sign);
        let mut values = Vec::with_capacity(Operand::LEAVES.len());
        for op in Operand::LEAVES {
            values.push(match op {
                Operand::W => signals.w.clone(),
                Operand::SgnW => sgn_w.clone(),
                Operand::R => signals.r.clone(),
                Operand::S => signals.s.clone(),
                Operand::RL => signals.r_l.clone(),
                Operand::HPre => signals.h_pre.clone(),
                Operand::H => signals.h.clone(),
                Operand::HPreNext => signals.h_pre_next.clone(),
                Operand::BL => signals.b_l.clone(),
                Operand::BNext => signals.b_next.clone(),
                Operand::GradH => grad_h.clone(),
                Operand::GradHPre => grad_hpre.clone(),
                Operand::Fa => fa.clone(),
                Operand::FaAct => fa_act.clone(),
                Operand::Dfa => dfa.clone(),
                Operand::DfaAct => dfa_act.clone(),
                Operand::Prev => unreachable!("not a leaf"),
            });
        }
        BackwardContext { values, stats, rng }
    }

    /// Builds a context from explicit operand values in [`Operand::LEAVES`] order.
    pub fn from_values(values: Vec<Matrix>, stats: &'a mut StatsStore, rng: &'a mut StepRng) -> Self {
        assert_eq!(values.len(), Operand::LEAVES.len(), "one value per leaf operand");
        BackwardContext { values, stats, rng }
    }

    pub fn value(&self, op: Operand) -> &Matrix {
        &self.values[op.leaf_index().expect("leaf operand")]
    }

    /// Concrete sizes for feasibility checks against this context.
    pub fn shape_env(&self) -> ShapeEnv {
        let w = self.value(Operand::W);
        ShapeEnv::concrete(
            self.value(Operand::HPre).rows(),
            w.rows(),
            w.cols(),
            self.value(Operand::BNext).cols(),
            self.value(Operand::BL).cols(),
        )
    }

    fn target_shape(&self) -> (usize, usize) {
        self.value(Operand::HPre).shape()
    }

    fn resolve(&self, op: OperandRef) -> Matrix {
        let raw = self.value(op.operand);
        if op.stat == StatVariant::Raw {
            return raw.clone();
        }
        let stats = self
            .stats
            .get(StatKey::Operand(op.operand))
            .copied()
            .unwrap_or_else(|| update_running_stats(RunningStats::default(), raw));
        match op.stat {
            StatVariant::RunMean => Matrix::scalar(stats.mean_ema),
            StatVariant::RunStd => Matrix::scalar(stats.std()),
            StatVariant::RunNorm => stats.standardize(raw),
            StatVariant::Raw => unreachable!(),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pushes `v` away from zero to at least `DIV_EPS`, keeping its sign
/// (zero counts as positive).
pub fn guard_denominator(v: f64) -> f64 {
    if fabs(v) >= DIV_EPS {
        v
    } else if v < 0.0 {
        -DIV_EPS
    } else {
        DIV_EPS
    }
}

fn vec_norm(values: impl Iterator<Item = f64> + Clone, p: VecNorm) -> f64 {
    match p {
        VecNorm::L0 => values.filter(|v| *v != 0.0).count() as f64,
        VecNorm::L1 => values.map(fabs).sum(),
        VecNorm::L2 => sqrt(values.map(|v| v * v).sum()),
        VecNorm::Inf => values.map(fabs).fold(0.0, f64::max),
        VecNorm::NegInf => values.map(fabs).fold(f64::INFINITY, f64::min),
    }
}

/// The matrix norm of `x` (numpy conventions for `1`, `inf`, `-inf`).
pub fn matrix_norm(x: &Matrix, q: MatNorm) -> f64 {
    let row_sums = || (0..x.rows()).map(|r| x.row(r).iter().map(|v| fabs(*v)).sum::<f64>());
    match q {
        MatNorm::Fro => sqrt(x.data().iter().map(|v| v * v).sum()),
        MatNorm::L1 => (0..x.cols())
            .map(|c| (0..x.rows()).map(|r| fabs(x.get(r, c))).sum::<f64>())
            .fold(0.0, f64::max),
        MatNorm::Inf => row_sums().fold(0.0, f64::max),
        MatNorm::NegInf => row_sums().fold(f64::INFINITY, f64::min),
    }
}

/// Flattened vector norm of `x`.
pub fn flat_norm(x: &Matrix, p: VecNorm) -> f64 {
    vec_norm(x.data().iter().copied(), p)
}

/// Norm of column `c`.
pub fn column_norm(x: &Matrix, c: usize, p: VecNorm) -> f64 {
    vec_norm((0..x.rows()).map(|r| x.get(r, c)), p)
}

/// Norm of row `r`.
pub fn row_norm(x: &Matrix, r: usize, p: VecNorm) -> f64 {
    vec_norm(x.row(r).iter().copied(), p)
}

/// Applies a unary transform.
///
/// `run` supplies the accumulator for `run_normalize`; it is updated with
/// `x` before standardizing. Without one, `x` is standardized with its own
/// batch statistics.
pub fn eval_unary<R: Rng + ?Sized>(u: Unary, x: &Matrix, rng: &mut R, run: Option<&mut RunningStats>) -> Matrix {
    match u {
        Unary::Ident => x.clone(),
        Unary::Transpose => x.transpose(),
        Unary::Recip => x.map(|v| 1.0 / guard_denominator(v)),
        Unary::Abs => x.map(fabs),
        Unary::Neg => x.map(|v| -v),
        Unary::Gt0 => x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        Unary::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Unary::Sign => x.map(sign),
        Unary::SqrtAbs => x.map(|v| sqrt(fabs(v))),
        Unary::SignSqrt => x.map(|v| sign(v) * sqrt(fabs(v))),
        Unary::Square => x.map(|v| v * v),
        Unary::SignSquare => x.map(|v| sign(v) * v * v),
        Unary::Cube => x.map(|v| v * v * v),
        Unary::Scale(_) => {
            let a = u.param().expect("parameter");
            x.map(|v| a * v)
        }
        Unary::Shift(_) => {
            let b = u.param().expect("parameter");
            x.map(|v| v + b)
        }
        Unary::AddNoise(_) => {
            let g = u.param().expect("parameter");
            let mut out = x.clone();
            for v in out.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += g * z;
            }
            out
        }
        Unary::MulNoise(_) => {
            let g = u.param().expect("parameter");
            let mut out = x.clone();
            for v in out.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v *= 1.0 + g * z;
            }
            out
        }
        Unary::Dropout(_) => {
            let d = u.param().expect("parameter");
            let keep_scale = 1.0 / (1.0 - d);
            let mut out = x.clone();
            for v in out.data_mut() {
                if rng.random::<f64>() < d {
                    *v = 0.0;
                } else {
                    *v *= keep_scale;
                }
            }
            out
        }
        Unary::Clip(_) => {
            let c = u.param().expect("parameter");
            x.map(|v| v.clamp(-c, c))
        }
        Unary::VNorm(p) => {
            let n = flat_norm(x, p) + NORM_EPS;
            x.map(|v| v / n)
        }
        Unary::CNorm(p) => {
            let norms: Vec<f64> = (0..x.cols()).map(|c| column_norm(x, c, p) + NORM_EPS).collect();
            Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) / norms[c])
        }
        Unary::RNorm(p) => {
            let norms: Vec<f64> = (0..x.rows()).map(|r| row_norm(x, r, p) + NORM_EPS).collect();
            Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) / norms[r])
        }
        Unary::MNorm(q) => {
            let n = matrix_norm(x, q) + NORM_EPS;
            x.map(|v| v / n)
        }
        Unary::RunNormalize => match run {
            Some(stats) => {
                stats.update(x);
                stats.standardize(x)
            }
            None => update_running_stats(RunningStats::default(), x).standardize(x),
        },
    }
}

/// Applies a binary function with scalar (`1 x 1`) broadcasting for the
/// elementwise family.
pub fn eval_binary(f: Binary, x: &Matrix, y: &Matrix) -> Result<Matrix, EvalError> {
    let mismatch = || EvalError::Shape {
        step: 0,
        f: f.name(),
        left: x.shape(),
        right: y.shape(),
    };
    let op: fn(f64, f64) -> f64 = match f {
        Binary::KeepLeft => return Ok(x.clone()),
        Binary::MatMul => {
            if x.cols() != y.rows() {
                return Err(mismatch());
            }
            return Ok(x.matmul(y));
        }
        Binary::Add => |a, b| a + b,
        Binary::Sub => |a, b| a - b,
        Binary::MulElem => |a, b| a * b,
        Binary::DivElem => |a, b| a / guard_denominator(b),
        Binary::Min => f64::min,
        Binary::Max => f64::max,
    };
    if x.shape() == y.shape() {
        Ok(x.zip_map(y, op))
    } else if y.is_scalar() {
        let b = y.get(0, 0);
        Ok(x.map(|a| op(a, b)))
    } else if x.is_scalar() {
        let a = x.get(0, 0);
        Ok(y.map(|b| op(a, b)))
    } else {
        Err(mismatch())
    }
}

/// Evaluates `e` at one hidden layer, producing `b^p_i`.
///
/// Every leaf operand the equation reads has its running statistics updated
/// once, before any statistics variant is read.
pub fn eval_equation(e: &Equation, ctx: &mut BackwardContext<'_>) -> Result<Matrix, EvalError> {
    for op in e.leaf_operands() {
        let value = &ctx.values[op.leaf_index().expect("leaf")];
        ctx.stats.entry(StatKey::Operand(op)).update(value);
    }
    let mut prev: Option<Matrix> = None;
    for (idx, step) in e.steps().iter().enumerate() {
        let mut args: [Option<Matrix>; 2] = [None, None];
        for (slot, (op, u)) in [(step.op1, step.u1), (step.op2, step.u2)].into_iter().enumerate() {
            let input = if op.is_prev() {
                prev.take().expect("chained step has a previous result")
            } else {
                ctx.resolve(op)
            };
            let run = if u == Unary::RunNormalize {
                Some(ctx.stats.entry(StatKey::Site {
                    step: idx as u8,
                    slot: slot as u8,
                }))
            } else {
                None
            };
            args[slot] = Some(eval_unary(u, &input, ctx.rng, run));
        }
        let [x, y] = args;
        let (x, y) = (x.expect("left"), y.expect("right"));
        let out = eval_binary(step.f, &x, &y).map_err(|err| match err {
            EvalError::Shape { f, left, right, .. } => EvalError::Shape {
                step: idx + 1,
                f,
                left,
                right,
            },
            other => other,
        })?;
        prev = Some(out);
    }
    let out = prev.expect("nonempty equation");
    let expected = ctx.target_shape();
    if out.shape() != expected {
        return Err(EvalError::ResultShape {
            got: out.shape(),
            expected,
        });
    }
    if !out.is_finite() {
        return Err(EvalError::NonFinite);
    }
    Ok(out)
}
