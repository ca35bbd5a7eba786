use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::cos;

use crate::tensor::Matrix;

/// Fraction of the run spent on linear warmup under [`Schedule::CosineWarmup`].
pub const WARMUP_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Heavy-ball momentum with the given coefficient.
    Momentum(f64),
}

impl OptimizerKind {
    /// SGD with momentum 0.9.
    pub const MOMENTUM: OptimizerKind = OptimizerKind::Momentum(0.9);
}

/// Optimizer plus its per-weight state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    velocity: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            velocity: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    /// SGD: `W -= lr·Δ`. Momentum: `v = μ·v + Δ`, `W -= lr·v`.
    pub fn step(&mut self, weights: &mut [Matrix], deltas: &[Matrix], lr: f64) {
        assert_eq!(weights.len(), deltas.len(), "one delta per weight");
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, d) in weights.iter_mut().zip(deltas) {
                    apply(w, d, lr);
                }
            }
            OptimizerKind::Momentum(mu) => {
                if self.velocity.is_empty() {
                    self.velocity = deltas.iter().map(|d| Matrix::zeros(d.rows(), d.cols())).collect();
                }
                for ((w, d), v) in weights.iter_mut().zip(deltas).zip(&mut self.velocity) {
                    assert_eq!(v.shape(), d.shape(), "delta shape");
                    if mu == 0.0 {
                        v.data_mut().copy_from_slice(d.data());
                    } else {
                        for (vv, dv) in v.data_mut().iter_mut().zip(d.data()) {
                            *vv = mu * *vv + dv;
                        }
                    }
                    apply(w, v, lr);
                }
            }
        }
    }
}

fn apply(w: &mut Matrix, d: &Matrix, lr: f64) {
    assert_eq!(w.shape(), d.shape(), "delta shape");
    for (wv, dv) in w.data_mut().iter_mut().zip(d.data()) {
        *wv -= lr * dv;
    }
}

/// Functional form of [`Optimizer::step`].
pub fn optimizer_step(state: &mut Optimizer, weights: &mut [Matrix], deltas: &[Matrix], lr: f64) {
    state.step(weights, deltas, lr);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Schedule {
    Constant,
    /// Linear warmup over the first 10% of steps, then cosine decay to zero.
    CosineWarmup,
}

/// Learning rate for update `step` of `total_steps`.
pub fn lr_at(schedule: Schedule, step: usize, total_steps: usize, peak: f64) -> f64 {
    match schedule {
        Schedule::Constant => peak,
        Schedule::CosineWarmup => {
            let step = step.min(total_steps) as f64;
            let total = total_steps as f64;
            let warmup = WARMUP_FRACTION * total;
            if step < warmup {
                return peak * step / warmup;
            }
            let span = total - warmup;
            if span <= 0.0 {
                return peak;
            }
            let t = (step - warmup) / span;
            peak * 0.5 * (1.0 + cos(PI * t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_velocity_series() {
        let mut opt = Optimizer::new(OptimizerKind::MOMENTUM);
        let mut w = alloc::vec![Matrix::scalar(0.0)];
        let d = alloc::vec![Matrix::scalar(1.0)];
        let mut seen = Vec::new();
        for _ in 0..3 {
            opt.step(&mut w, &d, 1.0);
            seen.push(opt.velocity()[0].get(0, 0));
        }
        assert!((seen[0] - 1.0).abs() < 1e-15);
        assert!((seen[1] - 1.9).abs() < 1e-15);
        assert!((seen[2] - 2.71).abs() < 1e-15);
        assert!((w[0].get(0, 0) + 5.61).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut w = alloc::vec![Matrix::from_rows(&[[0.3, -1.7]])];
        let before = w.clone();
        Optimizer::new(OptimizerKind::Sgd).step(&mut w, &[Matrix::from_rows(&[[5.0, -2.0]])], 0.0);
        assert_eq!(w, before);
    }

    #[test]
    fn schedule_endpoints() {
        let total = 1000;
        assert_eq!(lr_at(Schedule::CosineWarmup, 0, total, 0.5), 0.0);
        assert!((lr_at(Schedule::CosineWarmup, 100, total, 0.5) - 0.5).abs() < 1e-12);
        assert!(lr_at(Schedule::CosineWarmup, total, total, 0.5).abs() < 1e-12);
        assert!((lr_at(Schedule::CosineWarmup, 50, total, 0.5) - 0.25).abs() < 1e-12);
        assert!((lr_at(Schedule::CosineWarmup, 550, total, 0.5) - 0.25).abs() < 1e-12);
        assert_eq!(lr_at(Schedule::Constant, 999, total, 0.5), 0.5);
    }

    #[test]
    fn schedule_degenerate_totals() {
        assert_eq!(lr_at(Schedule::CosineWarmup, 0, 0, 0.1), 0.1);
        assert_eq!(lr_at(Schedule::CosineWarmup, 0, 1, 0.1), 0.0);
        assert!(lr_at(Schedule::CosineWarmup, 1, 1, 0.1).abs() < 1e-12);
    }
}
