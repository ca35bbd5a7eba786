//! Deterministic classification tasks.

pub mod idx;

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, sin, sqrt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Matrix;

/// Number of full turns of each arm in [`SyntheticKind::Spirals`].
pub const SPIRAL_TURNS: f64 = 1.25;

/// Features and integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(x: Matrix, labels: Vec<usize>) -> Self {
        assert_eq!(x.rows(), labels.len(), "one label per row");
        Split { x, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenates two splits row-wise.
    pub fn concat(&self, other: &Split) -> Split {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Split {
            x: self.x.vstack(&other.x),
            labels,
        }
    }

    /// Frequency of the most common label: the accuracy of always guessing it.
    pub fn majority_rate(&self, classes: usize) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let mut counts = alloc::vec![0usize; classes.max(1)];
        for &l in &self.labels {
            if l < counts.len() {
                counts[l] += 1;
            }
        }
        *counts.iter().max().expect("nonempty") as f64 / self.labels.len() as f64
    }
}

/// Train, validation and test splits of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn features(&self) -> usize {
        self.train.x.cols()
    }

    /// Accuracy of the majority-class guess on the validation split.
    pub fn chance(&self) -> f64 {
        if self.val.is_empty() {
            self.train.majority_rate(self.classes)
        } else {
            self.val.majority_rate(self.classes)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    /// Two isotropic Gaussian blobs centred at (-2, -2) and (2, 2).
    Blobs,
    TwoMoons,
    /// Two interleaved spiral arms.
    Spirals,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::TwoMoons => "two_moons",
            SyntheticKind::Spirals => "spirals",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "blobs" => Some(SyntheticKind::Blobs),
            "two_moons" | "moons" => Some(SyntheticKind::TwoMoons),
            "spirals" => Some(SyntheticKind::Spirals),
            _ => None,
        }
    }

    /// Noise level used when none is given.
    pub fn default_noise(self) -> f64 {
        match self {
            SyntheticKind::Blobs => 0.5,
            SyntheticKind::TwoMoons => 0.1,
            SyntheticKind::Spirals => 0.05,
        }
    }
}

/// Parameters of a synthetic two-class task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Standard deviation of the Gaussian noise added to each coordinate.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            n_train: 400,
            n_val: 200,
            n_test: 200,
            noise: kind.default_noise(),
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

fn sample_point<R: Rng + ?Sized>(kind: SyntheticKind, label: usize, noise: f64, rng: &mut R) -> [f64; 2] {
    let base = match kind {
        SyntheticKind::Blobs => {
            let c = if label == 0 { -2.0 } else { 2.0 };
            [c, c]
        }
        SyntheticKind::TwoMoons => {
            let t = rng.random::<f64>() * PI;
            if label == 0 {
                [cos(t), sin(t)]
            } else {
                [1.0 - cos(t), 0.5 - sin(t)]
            }
        }
        SyntheticKind::Spirals => {
            // Radius grows with the angle; the second arm is the first rotated by π.
            let t = 0.15 + 0.85 * sqrt(rng.random::<f64>());
            let theta = 2.0 * PI * SPIRAL_TURNS * t + if label == 0 { 0.0 } else { PI };
            [t * cos(theta), t * sin(theta)]
        }
    };
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    [base[0] + noise * nx, base[1] + noise * ny]
}

/// Per-feature mean and population standard deviation of `x`.
pub fn feature_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows().max(1) as f64;
    let mut means = alloc::vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = alloc::vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), m) in stds.iter_mut().zip(x.row(r)).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = sqrt(*s / n);
    }
    (means, stds)
}

/// Standardizes every split with the training split's statistics.
/// Constant features are only centred.
pub fn standardize(dataset: &mut Dataset) {
    let (means, stds) = feature_stats(&dataset.train.x);
    for split in [&mut dataset.train, &mut dataset.val, &mut dataset.test] {
        let cols = split.x.cols();
        for (i, v) in split.x.data_mut().iter_mut().enumerate() {
            let c = i % cols;
            let s = if stds[c] > 0.0 { stds[c] } else { 1.0 };
            *v = (*v - means[c]) / s;
        }
    }
}

/// Shuffles `all` with `seed` and cuts it into disjoint train/val/test splits.
pub fn split_dataset(all: &Split, n_train: usize, n_val: usize, n_test: usize, classes: usize, seed: u64) -> Dataset {
    assert!(n_train + n_val + n_test <= all.len(), "not enough samples for the requested splits");
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let train = all.select(&order[..n_train]);
    let val = all.select(&order[n_train..n_train + n_val]);
    let test = all.select(&order[n_train + n_val..n_train + n_val + n_test]);
    Dataset {
        train,
        val,
        test,
        classes,
    }
}

/// Generates a standardized synthetic dataset. Deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Dataset {
    let total = spec.total();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(total * 2);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % 2;
        let p = sample_point(spec.kind, label, spec.noise, &mut rng);
        data.extend_from_slice(&p);
        labels.push(label);
    }
    let all = Split::new(Matrix::from_vec(total, 2, data), labels);
    let mut dataset = split_dataset(&all, spec.n_train, spec.n_val, spec.n_test, 2, spec.seed);
    standardize(&mut dataset);
    dataset
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec::new(SyntheticKind::Blobs, 1);
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a, b);
        let c = generate(&SyntheticSpec::new(SyntheticKind::Blobs, 2));
        assert_ne!(a.train.x, c.train.x);
    }

    #[test]
    fn standardized_with_train_statistics() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::TwoMoons, SyntheticKind::Spirals] {
            let d = generate(&SyntheticSpec::new(kind, 3));
            let (m, s) = feature_stats(&d.train.x);
            for c in 0..2 {
                assert!(m[c].abs() < 1e-10, "{kind:?} mean {}", m[c]);
                assert!((s[c] - 1.0).abs() < 1e-10, "{kind:?} std {}", s[c]);
            }
        }
    }

    #[test]
    fn balanced_and_sized() {
        let spec = SyntheticSpec::new(SyntheticKind::TwoMoons, 4);
        let d = generate(&spec);
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (400, 200, 200));
        let total_ones: usize = [&d.train, &d.val, &d.test].iter().map(|s| s.labels.iter().sum::<usize>()).sum();
        assert_eq!(total_ones, spec.total() / 2);
        assert!((d.chance() - 0.5).abs() < 0.1);
    }

    #[test]
    fn majority_rate() {
        let s = Split::new(Matrix::zeros(4, 1), alloc::vec![0, 1, 1, 1]);
        assert_eq!(s.majority_rate(2), 0.75);
    }
}
