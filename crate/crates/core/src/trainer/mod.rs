//! From-scratch MLP training with equation-driven backward passes.

mod backward;
mod model;
mod optim;
mod train;

pub use backward::{
    backward_reference, backward_with_equation, finite_difference_grad, max_relative_error, output_signal,
    EquationState,
};
pub use model::{forward, softmax_cross_entropy, ForwardError, LayerCache, MlpModel};
pub use optim::{lr_at, optimizer_step, Optimizer, OptimizerKind, Schedule, WARMUP_FRACTION};
pub use train::{
    builtin, builtin_equations, check_for_widths, train_and_evaluate, train_on, EarlyStop, FitnessRecord,
    TrainConfig, TrainOutcome,
};
