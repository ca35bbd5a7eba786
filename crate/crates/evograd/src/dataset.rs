//! Task specifications, including tasks read from IDX files.

use std::fs;
use std::path::{Path, PathBuf};

use evograd_core::task::idx::{decode_images, decode_labels, IdxError};
use evograd_core::task::{generate, split_dataset, standardize, Dataset, Split, SyntheticKind, SyntheticSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    Synthetic(SyntheticKind),
    IdxFiles { images: PathBuf, labels: PathBuf },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Synthetic(k) => k.name(),
            TaskKind::IdxFiles { .. } => "idx",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Ignored for IDX files.
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn synthetic(kind: SyntheticKind, seed: u64) -> Self {
        let s = SyntheticSpec::new(kind, seed);
        DatasetSpec {
            kind: TaskKind::Synthetic(kind),
            n_train: s.n_train,
            n_val: s.n_val,
            n_test: s.n_test,
            noise: s.noise,
            seed,
        }
    }

    /// IDX task; zero split sizes mean 60/20/20 of whatever the files hold.
    pub fn idx(images: impl Into<PathBuf>, labels: impl Into<PathBuf>, seed: u64) -> Self {
        DatasetSpec {
            kind: TaskKind::IdxFiles {
                images: images.into(),
                labels: labels.into(),
            },
            n_train: 0,
            n_val: 0,
            n_test: 0,
            noise: 0.0,
            seed,
        }
    }

    /// Builds the standardized dataset.
    pub fn build(&self) -> Result<Dataset, DatasetError> {
        match &self.kind {
            TaskKind::Synthetic(kind) => Ok(generate(&SyntheticSpec {
                kind: *kind,
                n_train: self.n_train,
                n_val: self.n_val,
                n_test: self.n_test,
                noise: self.noise,
                seed: self.seed,
            })),
            TaskKind::IdxFiles { images, labels } => {
                let all = load_idx(images, labels)?;
                let classes = all.labels.iter().max().map_or(0, |&m| m + 1);
                let (n_train, n_val, n_test) = if self.n_train + self.n_val + self.n_test == 0 {
                    let n = all.len();
                    let train = n * 3 / 5;
                    let val = n / 5;
                    (train, val, n - train - val)
                } else {
                    (self.n_train, self.n_val, self.n_test)
                };
                if n_train + n_val + n_test > all.len() {
                    return Err(DatasetError::TooFewSamples {
                        requested: n_train + n_val + n_test,
                        available: all.len(),
                    });
                }
                let mut d = split_dataset(&all, n_train, n_val, n_test, classes, self.seed);
                standardize(&mut d);
                Ok(d)
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Idx {
        path: PathBuf,
        #[source]
        source: IdxError,
    },
    #[error("requested {requested} samples but the files hold {available}")]
    TooFewSamples { requested: usize, available: usize },
}

/// Reads an image file and a label file; pixels are scaled to [0, 1].
pub fn load_idx(images: &Path, labels: &Path) -> Result<Split, DatasetError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DatasetError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let img = decode_images(&read(images)?).map_err(|source| DatasetError::Idx {
        path: images.to_path_buf(),
        source,
    })?;
    let lab = decode_labels(&read(labels)?).map_err(|source| DatasetError::Idx {
        path: labels.to_path_buf(),
        source,
    })?;
    if img.count != lab.len() {
        return Err(DatasetError::Idx {
            path: labels.to_path_buf(),
            source: IdxError::CountMismatch {
                images: img.count,
                labels: lab.len(),
            },
        });
    }
    Ok(Split::new(img.to_matrix(), lab.into_iter().map(usize::from).collect()))
}
