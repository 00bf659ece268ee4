//! Public/private splitting and the sealed labeled copy of the public side.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Who opened the sealed public labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelAccess {
    /// The vanilla-generation baseline, which declares its need for labels.
    VanillaGeneration,
    /// Evaluation-only analyses (memorization gap, reporting).
    Evaluation,
}

/// Labeled public data that records every access.
#[derive(Debug)]
pub struct SealedLabels {
    data: Dataset,
    log: Mutex<Vec<LabelAccess>>,
}

impl SealedLabels {
    fn new(data: Dataset) -> Self {
        SealedLabels {
            data,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn unseal(&self, access: LabelAccess) -> &Dataset {
        self.log.lock().expect("access log poisoned").push(access);
        &self.data
    }

    pub fn access_log(&self) -> Vec<LabelAccess> {
        self.log.lock().expect("access log poisoned").clone()
    }
}

impl Clone for SealedLabels {
    fn clone(&self) -> Self {
        SealedLabels {
            data: self.data.clone(),
            log: Mutex::new(self.access_log()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub public: Dataset,
    pub private: Dataset,
    pub public_labeled: bool,
    /// Original indices of the public and private examples.
    pub public_indices: Vec<usize>,
    pub private_indices: Vec<usize>,
    sealed: SealedLabels,
}

impl SplitDataset {
    pub fn sealed_public(&self) -> &SealedLabels {
        &self.sealed
    }

    /// Rebuilds a split from stored public/private files.
    pub fn from_parts(public_labeled: Dataset, private: Dataset, keep_public_labels: bool) -> Self {
        let public = if keep_public_labels {
            public_labeled.clone()
        } else {
            public_labeled.with_labels_erased()
        };
        let n_pub = public.len();
        SplitDataset {
            public_indices: (0..n_pub).collect(),
            private_indices: (n_pub..n_pub + private.len()).collect(),
            public,
            private,
            public_labeled: keep_public_labels,
            sealed: SealedLabels::new(public_labeled),
        }
    }
}

/// Number of public examples for `n` examples at `ratio`: `round(ratio * n)`
/// with halves rounded up, clamped so both sides are nonempty.
pub fn public_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

pub fn split(dataset: &Dataset, public_ratio: f64, seed: u64, keep_public_labels: bool) -> Result<SplitDataset> {
    if !(public_ratio > 0.0 && public_ratio < 1.0) {
        return Err(Error::Invalid(format!(
            "public_ratio must lie in (0, 1), got {public_ratio}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Invalid(format!("cannot split a dataset of {n} example(s)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_pub = public_size(n, public_ratio);
    let mut public_indices = order[..n_pub].to_vec();
    let mut private_indices = order[n_pub..].to_vec();
    public_indices.sort_unstable();
    private_indices.sort_unstable();

    let public_labeled = dataset.subset(&public_indices);
    let public = if keep_public_labels {
        public_labeled.clone()
    } else {
        public_labeled.with_labels_erased()
    };
    Ok(SplitDataset {
        public,
        private: dataset.subset(&private_indices),
        public_labeled: keep_public_labels,
        public_indices,
        private_indices,
        sealed: SealedLabels::new(public_labeled),
    })
}
