//! Concrete evaluation of update equations on matrices.

mod eval;
mod matrix;

pub use eval::{
    column_norm, eval_binary, eval_equation, eval_unary, flat_norm, guard_denominator, matrix_norm, row_norm,
    update_running_stats, Activation, BackwardContext, EvalError, LayerSignals, RunningStats, StatKey, StatsStore,
    StepRng, DIV_EPS, EMA_DECAY, NORM_EPS, VAR_EPS,
};
pub use matrix::Matrix;
