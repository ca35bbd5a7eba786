use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Activation, Matrix};

/// A bias-free multilayer perceptron `n_0 -> n_1 -> ... -> n_L` with a
/// linear output layer feeding softmax cross-entropy.
///
/// Besides the trained weights it carries the fixed random matrices used by
/// the feedback-alignment operands.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    widths: Vec<usize>,
    /// `weights[k]` is `W_{k+1}`, shaped `n_k x n_{k+1}`.
    pub weights: Vec<Matrix>,
    /// Gaussian `R_{k+1}`, shaped like `weights[k]`.
    pub feedback: Vec<Matrix>,
    /// Bernoulli `S_{k+1}` in {0, 1}, shaped like `weights[k]`.
    pub feedback_bernoulli: Vec<Matrix>,
    /// Gaussian `R_{L,k+1}` for each hidden layer, shaped `n_L x n_{k+1}`.
    pub direct: Vec<Matrix>,
    pub activation: Activation,
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

impl MlpModel {
    /// Samples weights and feedback matrices with standard deviation
    /// `1/sqrt(rows)` (the fan-in of the forward weight they mirror).
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "widths must be positive");
        let layers = widths.len() - 1;
        let out = widths[layers];
        let weights = (0..layers)
            .map(|k| gaussian(widths[k], widths[k + 1], 1.0 / sqrt(widths[k] as f64), rng))
            .collect();
        let feedback = (0..layers)
            .map(|k| gaussian(widths[k], widths[k + 1], 1.0 / sqrt(widths[k] as f64), rng))
            .collect();
        let feedback_bernoulli = (0..layers)
            .map(|k| Matrix::from_fn(widths[k], widths[k + 1], |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 }))
            .collect();
        let direct = (0..layers.saturating_sub(1))
            .map(|k| gaussian(out, widths[k + 1], 1.0 / sqrt(out as f64), rng))
            .collect();
        MlpModel {
            widths: widths.to_vec(),
            weights,
            feedback,
            feedback_bernoulli,
            direct,
            activation,
        }
    }

    /// Builds a model around explicit weights; feedback matrices are zero.
    pub fn from_weights(weights: Vec<Matrix>, activation: Activation) -> Self {
        assert!(!weights.is_empty());
        let mut widths = alloc::vec![weights[0].rows()];
        for (k, w) in weights.iter().enumerate() {
            assert_eq!(w.rows(), widths[k], "weight {k} shape");
            widths.push(w.cols());
        }
        let out = *widths.last().expect("widths");
        let layers = weights.len();
        let feedback = weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let feedback_bernoulli = weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let direct = (0..layers - 1).map(|k| Matrix::zeros(out, widths[k + 1])).collect();
        MlpModel {
            widths,
            weights,
            feedback,
            feedback_bernoulli,
            direct,
            activation,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum()
    }

    /// Runs the forward pass and caches every activation.
    pub fn forward(&self, x: &Matrix, labels: &[usize]) -> Result<LayerCache, ForwardError> {
        forward(self, x, labels)
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let mut h = x.clone();
        for (k, w) in self.weights.iter().enumerate() {
            let pre = h.matmul(w);
            h = if k + 1 < self.depth() {
                pre.map(|v| self.activation.apply(v))
            } else {
                pre
            };
        }
        (0..h.rows()).map(|r| argmax(h.row(r))).collect()
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self.predict(x).iter().zip(labels).filter(|(p, y)| p == y).count();
        hits as f64 / labels.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ForwardError {
    #[error("input has {got} features, model expects {expected}")]
    Features { expected: usize, got: usize },
    #[error("{rows} input rows but {labels} labels")]
    Labels { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCache {
    /// `pre[k]` is `h^p_{k+1}`; the last entry holds the logits.
    pub pre: Vec<Matrix>,
    /// `post[k]` is `h_k`: `post[0]` is the input batch.
    pub post: Vec<Matrix>,
    /// Softmax of the logits.
    pub probs: Matrix,
    pub labels: Vec<usize>,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
}

impl LayerCache {
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }
}

/// Row-wise softmax and the mean cross-entropy against `labels`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (Matrix, f64) {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| exp(v - max)).sum();
        for (c, v) in row.iter().enumerate() {
            probs[(r, c)] = exp(v - max) / sum;
        }
        total += max + log(sum) - row[labels[r]];
    }
    let n = logits.rows().max(1) as f64;
    (probs, total / n)
}

pub fn forward(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<LayerCache, ForwardError> {
    if x.cols() != model.widths[0] {
        return Err(ForwardError::Features {
            expected: model.widths[0],
            got: x.cols(),
        });
    }
    if x.rows() != labels.len() {
        return Err(ForwardError::Labels {
            rows: x.rows(),
            labels: labels.len(),
        });
    }
    let classes = *model.widths.last().expect("widths");
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(ForwardError::LabelRange { label, classes });
    }
    let depth = model.depth();
    let mut pre = Vec::with_capacity(depth);
    let mut post = Vec::with_capacity(depth);
    post.push(x.clone());
    for (k, w) in model.weights.iter().enumerate() {
        let hp = post[k].matmul(w);
        if k + 1 < depth {
            post.push(hp.map(|v| model.activation.apply(v)));
        }
        pre.push(hp);
    }
    let (probs, loss) = softmax_cross_entropy(pre.last().expect("layers"), labels);
    Ok(LayerCache {
        pre,
        post,
        probs,
        labels: labels.to_vec(),
        loss,
    })
}
