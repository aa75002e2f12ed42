//! Candidate embedding storage, size-unifying transforms, and supernet training.

mod io;
mod net;
mod store;
mod train;
mod transform;

use serde::{Deserialize, Serialize};

use crate::data::FieldSchema;
use crate::error::{Error, Result};

pub use io::{load_net, net_checkpoint, net_from_checkpoint, save_net, NetKind, NetMeta};
pub use net::{EmbeddingNet, StepStats};
pub use store::{Scheme, SupernetStore};
pub use train::{
    epoch_batches, evaluate, train_loop, train_standalone, train_supernet, EpochMetrics, TrainConfig, TrainLog,
};
pub use transform::{Transform, TransformBank};

/// RNG stream ids. Keys depend on sizes, not candidate positions, so a
/// table of a given (field, size) starts from the same values whichever
/// candidate set or layout holds it.
pub const MAIN_KEY: u64 = 1;
pub const BATCH_KEY: u64 = 2;
pub const SAMPLER_KEY: u64 = 3;

pub fn table_key(field: usize, size: usize) -> u64 {
    0x2000_0000 + (field as u64) * 0x1_0000 + size as u64
}

pub fn bank_key(size: usize) -> u64 {
    0x1000_0000 + size as u64
}

/// Strictly ascending candidate embedding sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CandidateSet {
    sizes: Vec<usize>,
}

impl CandidateSet {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::config("candidate set is empty"));
        }
        if sizes[0] == 0 {
            return Err(Error::config("candidate sizes must be at least 1"));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!("candidate sizes must be strictly ascending: {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn max_size(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn size(&self, j: usize) -> Result<usize> {
        self.sizes
            .get(j)
            .copied()
            .ok_or_else(|| Error::config(format!("candidate index {j} out of range (T = {})", self.len())))
    }

    pub fn index_of(&self, size: usize) -> Option<usize> {
        self.sizes.iter().position(|&d| d == size)
    }

    /// Index of the candidate closest to `target`, smaller one on ties.
    pub fn nearest(&self, target: usize) -> usize {
        let mut best = 0;
        for (j, &d) in self.sizes.iter().enumerate() {
            if d.abs_diff(target) < self.sizes[best].abs_diff(target) {
                best = j;
            }
        }
        best
    }

    pub fn mean_size(&self) -> f64 {
        self.sizes.iter().sum::<usize>() as f64 / self.len() as f64
    }
}

impl Default for CandidateSet {
    fn default() -> Self {
        Self { sizes: vec![2, 8, 16, 32, 64] }
    }
}

impl TryFrom<Vec<usize>> for CandidateSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CandidateSet> for Vec<usize> {
    fn from(c: CandidateSet) -> Self {
        c.sizes
    }
}

pub const UES_REFERENCE_SIZE: usize = 32;

/// Embedding parameters held by a supernet store of the given scheme.
pub fn supernet_param_count(cardinalities: &[usize], candidates: &CandidateSet, scheme: Scheme) -> u64 {
    let n: u64 = cardinalities.iter().map(|&c| c as u64).sum();
    match scheme {
        Scheme::Independent => n * candidates.sizes().iter().map(|&d| d as u64).sum::<u64>(),
        Scheme::Shared => n * candidates.max_size() as u64,
    }
}

/// Σ_i n_i · d_i.
pub fn assignment_param_count(cardinalities: &[usize], sizes: &[usize]) -> Result<u64> {
    if cardinalities.len() != sizes.len() {
        return Err(Error::config("assignment length differs from field count"));
    }
    Ok(cardinalities.iter().zip(sizes).map(|(&n, &d)| n as u64 * d as u64).sum())
}

/// Parameter reduction against an all-32 baseline; negative when larger.
pub fn param_reduction(cardinalities: &[usize], sizes: &[usize]) -> Result<f64> {
    let used = assignment_param_count(cardinalities, sizes)?;
    let base: u64 = cardinalities.iter().map(|&n| n as u64 * UES_REFERENCE_SIZE as u64).sum();
    if base == 0 {
        return Err(Error::config("all fields have zero cardinality"));
    }
    Ok(1.0 - used as f64 / base as f64)
}

pub fn schema_cardinalities(schemas: &[FieldSchema]) -> Vec<usize> {
    schemas.iter().map(|s| s.cardinality).collect()
}

#[cfg(test)]
mod tests;
