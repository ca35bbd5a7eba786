use alloc::vec::Vec;

use rand::SeedableRng;

use super::model::{forward, LayerCache, MlpModel};
use crate::dsl::Equation;
use crate::tensor::{eval_equation, BackwardContext, EvalError, LayerSignals, Matrix, StatsStore, StepRng};

/// Mutable state an equation carries across backward passes of one run.
#[derive(Clone, Debug)]
pub struct EquationState {
    /// Running statistics, one store per hidden layer.
    pub stats: Vec<StatsStore>,
    pub rng: StepRng,
}

impl EquationState {
    pub fn new(hidden_layers: usize, seed: u64) -> Self {
        EquationState {
            stats: (0..hidden_layers).map(|_| StatsStore::default()).collect(),
            rng: StepRng::seed_from_u64(seed),
        }
    }

    pub fn for_model(model: &MlpModel, seed: u64) -> Self {
        EquationState::new(model.depth().saturating_sub(1), seed)
    }
}

/// `∂J/∂logits` per sample: softmax minus one-hot.
pub fn output_signal(cache: &LayerCache) -> Matrix {
    let mut b = cache.probs.clone();
    for (r, &y) in cache.labels.iter().enumerate() {
        b[(r, y)] -= 1.0;
    }
    b
}

fn weight_delta(input: &Matrix, signal: &Matrix, batch: usize) -> Matrix {
    let mut d = input.t_matmul(signal);
    let inv = 1.0 / batch.max(1) as f64;
    for v in d.data_mut() {
        *v *= inv;
    }
    d
}

/// Analytic chain-rule gradient of the mean loss for every weight matrix.
pub fn backward_reference(model: &MlpModel, cache: &LayerCache) -> Vec<Matrix> {
    let depth = model.depth();
    let batch = cache.batch();
    let mut deltas = alloc::vec![Matrix::zeros(0, 0); depth];
    let mut signal = output_signal(cache);
    deltas[depth - 1] = weight_delta(&cache.post[depth - 1], &signal, batch);
    for k in (0..depth - 1).rev() {
        // b_{k+1} = b^p_{k+2} · W_{k+2}ᵀ, then through σ'(h^p_{k+1}).
        let upstream = signal.matmul_t(&model.weights[k + 1]);
        let act = model.activation;
        signal = upstream.zip_map(&cache.pre[k], |b, p| b * act.derivative(p));
        deltas[k] = weight_delta(&cache.post[k], &signal, batch);
    }
    deltas
}

/// Weight deltas with every hidden-layer signal `b^p_i` produced by `e`.
///
/// The output layer keeps the analytic softmax cross-entropy signal. Each
/// hidden layer sees the signal `e` produced for the layer above it.
pub fn backward_with_equation(
    model: &MlpModel,
    cache: &LayerCache,
    e: &Equation,
    state: &mut EquationState,
) -> Result<Vec<Matrix>, EvalError> {
    let depth = model.depth();
    let batch = cache.batch();
    let mut deltas = alloc::vec![Matrix::zeros(0, 0); depth];
    let b_l = output_signal(cache);
    deltas[depth - 1] = weight_delta(&cache.post[depth - 1], &b_l, batch);
    let mut signal = b_l.clone();
    for k in (0..depth - 1).rev() {
        let signals = LayerSignals {
            w: &model.weights[k],
            r: &model.feedback[k],
            s: &model.feedback_bernoulli[k],
            r_l: &model.direct[k],
            h_pre: &cache.pre[k],
            h: &cache.post[k + 1],
            h_pre_next: &cache.pre[k + 1],
            b_l: &b_l,
            b_next: &signal,
            w_next: &model.weights[k + 1],
            r_next: &model.feedback[k + 1],
            activation: model.activation,
        };
        let mut ctx = BackwardContext::assemble(&signals, &mut state.stats[k], &mut state.rng);
        let next = eval_equation(e, &mut ctx)?;
        deltas[k] = weight_delta(&cache.post[k], &next, batch);
        signal = next;
    }
    Ok(deltas)
}

/// Central-difference gradient of the mean loss, one weight at a time.
pub fn finite_difference_grad(model: &MlpModel, x: &Matrix, labels: &[usize], eps: f64) -> Vec<Matrix> {
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.depth());
    for k in 0..model.depth() {
        let (rows, cols) = model.weights[k].shape();
        let mut grad = Matrix::zeros(rows, cols);
        for idx in 0..rows * cols {
            let original = probe.weights[k].data()[idx];
            probe.weights[k].data_mut()[idx] = original + eps;
            let plus = forward(&probe, x, labels).expect("shapes").loss;
            probe.weights[k].data_mut()[idx] = original - eps;
            let minus = forward(&probe, x, labels).expect("shapes").loss;
            probe.weights[k].data_mut()[idx] = original;
            grad.data_mut()[idx] = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)` across all matrices.
pub fn max_relative_error(a: &[Matrix], b: &[Matrix], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(ma, mb)| {
            assert_eq!(ma.shape(), mb.shape());
            ma.data().iter().zip(mb.data()).map(|(&x, &y)| {
                let scale = x.abs().max(y.abs()).max(floor);
                (x - y).abs() / scale
            })
        })
        .fold(0.0, f64::max)
}
