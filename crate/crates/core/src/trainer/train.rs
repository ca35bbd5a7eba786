use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::{backward_with_equation, EquationState};
use super::model::MlpModel;
use super::optim::{lr_at, Optimizer, OptimizerKind, Schedule};
use crate::dsl::{check_feasible, Equation, Operand, ShapeEnv};
use crate::task::{Dataset, Split};
use crate::tensor::Activation;

/// Stop a run whose validation accuracy is still near chance part-way in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    /// The check happens after `ceil(epochs * check_fraction)` epochs.
    pub check_fraction: f64,
    /// Required margin above chance accuracy.
    pub margin: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            check_fraction: 0.25,
            margin: 0.05,
        }
    }
}

impl EarlyStop {
    pub fn check_epoch(&self, epochs: usize) -> usize {
        let e = libm::ceil(epochs as f64 * self.check_fraction) as usize;
        e.clamp(1, epochs.max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Hidden-layer widths; input and output widths come from the task.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub schedule: Schedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: alloc::vec![32, 32],
            activation: Activation::Tanh,
            epochs: 20,
            batch_size: 16,
            lr: 0.1,
            schedule: Schedule::Constant,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            early_stop: Some(EarlyStop::default()),
        }
    }
}

impl TrainConfig {
    pub fn widths(&self, features: usize, classes: usize) -> Vec<usize> {
        let mut w = alloc::vec![features];
        w.extend_from_slice(&self.hidden);
        w.push(classes);
        w
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessRecord {
    pub key: String,
    /// Validation accuracy after the last completed epoch (0 if none).
    pub val_acc: f64,
    pub test_acc: Option<f64>,
    pub epochs_completed: usize,
    pub failed: bool,
    pub early_stopped: bool,
    pub reason: Option<String>,
    /// Filled in by callers that can read a clock.
    pub wall_clock_secs: f64,
    pub seed: u64,
}

impl FitnessRecord {
    pub fn failure(key: String, seed: u64, reason: String) -> Self {
        FitnessRecord {
            key,
            val_acc: 0.0,
            test_acc: None,
            epochs_completed: 0,
            failed: true,
            early_stopped: false,
            reason: Some(reason),
            wall_clock_secs: 0.0,
            seed,
        }
    }
}

/// The three classic rules written in the equation language, in order:
/// back-propagation, feedback alignment, direct feedback alignment.
pub fn builtin_equations() -> [(&'static str, Equation); 3] {
    [
        ("backprop", Equation::keep_left_of(Operand::GradHPre)),
        ("feedback_alignment", Equation::keep_left_of(Operand::FaAct)),
        ("dfa", Equation::keep_left_of(Operand::DfaAct)),
    ]
}

/// Looks up a builtin by name (`backprop`, `feedback_alignment`/`fa`, `dfa`).
pub fn builtin(name: &str) -> Option<Equation> {
    let name = if name == "fa" { "feedback_alignment" } else { name };
    builtin_equations().into_iter().find(|(n, _)| *n == name).map(|(_, e)| e)
}

/// Checks `e` against the concrete shapes of every hidden layer of a model.
pub fn check_for_widths(e: &Equation, widths: &[usize], batch: usize) -> Result<(), crate::dsl::ShapeError> {
    let out = *widths.last().expect("widths");
    for i in 1..widths.len().saturating_sub(1) {
        let env = ShapeEnv::concrete(batch, widths[i - 1], widths[i], widths[i + 1], out);
        check_feasible(e, &env)?;
    }
    Ok(())
}

/// Training run plus the model it produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: FitnessRecord,
    pub model: MlpModel,
}

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_EQUATION: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains on `train`, tracking accuracy on `val` each epoch and on `test`
/// at the end. Early stopping only applies when `val` is given.
pub fn train_on(e: &Equation, train: &Split, val: Option<&Split>, test: Option<&Split>, classes: usize, config: &TrainConfig) -> TrainOutcome {
    let key = e.canonical_key();
    let widths = config.widths(train.x.cols(), classes);
    let mut init_rng = stream(config.seed, STREAM_INIT);
    let mut model = MlpModel::new(&widths, config.activation, &mut init_rng);
    let batch_size = config.batch_size.max(1);
    let mut record = FitnessRecord {
        key,
        val_acc: 0.0,
        test_acc: None,
        epochs_completed: 0,
        failed: false,
        early_stopped: false,
        reason: None,
        wall_clock_secs: 0.0,
        seed: config.seed,
    };
    // Every minibatch size (including a short last one) must be feasible.
    let mut batch_sizes = alloc::vec![batch_size.min(train.len().max(1))];
    if !train.len().is_multiple_of(batch_size) && train.len() > batch_size {
        batch_sizes.push(train.len() % batch_size);
    }
    for &b in &batch_sizes {
        if let Err(err) = check_for_widths(e, &widths, b) {
            record.failed = true;
            record.reason = Some(format!("infeasible for model shapes: {err}"));
            return TrainOutcome { record, model };
        }
    }

    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut state = EquationState::new(widths.len() - 2, 0);
    state.rng = stream(config.seed, STREAM_EQUATION);
    let mut optimizer = Optimizer::new(config.optimizer);
    let steps_per_epoch = train.len().div_ceil(batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let chance = val.map(|v| v.majority_rate(classes)).unwrap_or(0.0);
    let check_epoch = config.early_stop.map(|es| es.check_epoch(config.epochs));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch_size) {
            let batch = train.select(chunk);
            let cache = match model.forward(&batch.x, &batch.labels) {
                Ok(c) => c,
                Err(err) => {
                    record.failed = true;
                    record.reason = Some(format!("forward error: {err}"));
                    break 'epochs;
                }
            };
            if !cache.loss.is_finite() {
                record.failed = true;
                record.reason = Some(format!("non-finite loss in epoch {}", epoch + 1));
                break 'epochs;
            }
            let deltas = match backward_with_equation(&model, &cache, e, &mut state) {
                Ok(d) => d,
                Err(err) => {
                    record.failed = true;
                    record.reason = Some(format!("equation failed in epoch {}: {err}", epoch + 1));
                    break 'epochs;
                }
            };
            let lr = lr_at(config.schedule, step, total_steps, config.lr);
            optimizer.step(&mut model.weights, &deltas, lr);
            step += 1;
        }
        if !model.is_finite() {
            record.failed = true;
            record.reason = Some(format!("non-finite weights in epoch {}", epoch + 1));
            break;
        }
        record.epochs_completed = epoch + 1;
        if let Some(v) = val {
            record.val_acc = model.accuracy(&v.x, &v.labels);
        }
        if let (Some(es), Some(at), Some(_)) = (config.early_stop, check_epoch, val) {
            if epoch + 1 == at && epoch + 1 < config.epochs && record.val_acc < chance + es.margin {
                record.early_stopped = true;
                record.reason = Some(format!(
                    "early stop after epoch {}: accuracy {:.4} below chance {:.4} + {}",
                    epoch + 1,
                    record.val_acc,
                    chance,
                    es.margin
                ));
                break;
            }
        }
    }
    if !record.failed {
        if let Some(t) = test {
            record.test_acc = Some(model.accuracy(&t.x, &t.labels));
        }
    }
    TrainOutcome { record, model }
}

/// Trains a fresh model whose hidden-layer signals come from `e` and scores
/// it on the validation split (and the test split at the end).
pub fn train_and_evaluate(e: &Equation, task: &Dataset, config: &TrainConfig) -> FitnessRecord {
    train_on(e, &task.train, Some(&task.val), Some(&task.test), task.classes, config).record
}
