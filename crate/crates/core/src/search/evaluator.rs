use std::collections::HashMap;

use rayon::prelude::*;

use crate::analysis::auc;
use crate::data::{DatasetSplit, Part, Sample};
use crate::error::{Error, Result};
use crate::nn::log_loss;
use crate::rng::RngStream;
use crate::sampling::SubnetSelection;
use crate::supernet::EmbeddingNet;

/// Scores full-inclusion subnets of a frozen net on one fixed validation
/// subsample. Results are memoized per assignment.
pub struct SubnetEvaluator<'a> {
    net: &'a EmbeddingNet,
    samples: Vec<Sample>,
    labels: Vec<f64>,
    cache: HashMap<Vec<usize>, (f64, f64)>,
}

impl<'a> SubnetEvaluator<'a> {
    pub fn new(net: &'a EmbeddingNet, data: &DatasetSplit, batches: usize, batch_size: usize, rng: &RngStream) -> Result<Self> {
        let val = data.part(Part::Validation);
        if val.is_empty() {
            return Err(Error::config("validation split is empty"));
        }
        let mut idx: Vec<usize> = (0..val.len()).collect();
        rng.clone().shuffle(&mut idx);
        idx.truncate(batches * batch_size);
        idx.sort_unstable();
        let samples: Vec<Sample> = idx.iter().map(|&k| val[k].clone()).collect();
        Ok(Self::from_samples(net, samples))
    }

    pub fn from_samples(net: &'a EmbeddingNet, samples: Vec<Sample>) -> Self {
        let labels = samples.iter().map(|s| s.label).collect();
        Self { net, samples, labels, cache: HashMap::new() }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// (AUC, log loss) of one assignment, uncached.
    pub fn metrics(&self, assignment: &[usize]) -> Result<(f64, f64)> {
        let sel = SubnetSelection::all_included(assignment.to_vec());
        let probs = self.net.predict_all(&self.samples, &sel)?;
        Ok((auc(&probs, &self.labels)?, log_loss(&probs, &self.labels)?))
    }

    /// Metrics for several assignments. Uncached ones are computed in
    /// parallel; the output follows the input order.
    pub fn metrics_many(&mut self, assignments: &[Vec<usize>]) -> Result<Vec<(f64, f64)>> {
        let mut todo: Vec<Vec<usize>> = assignments.iter().filter(|a| !self.cache.contains_key(*a)).cloned().collect();
        todo.sort();
        todo.dedup();
        let fresh: Vec<Result<(f64, f64)>> = todo.par_iter().map(|a| self.metrics(a)).collect();
        for (a, r) in todo.into_iter().zip(fresh) {
            self.cache.insert(a, r?);
        }
        Ok(assignments.iter().map(|a| self.cache[a]).collect())
    }

    pub fn auc_many(&mut self, assignments: &[Vec<usize>]) -> Result<Vec<f64>> {
        Ok(self.metrics_many(assignments)?.into_iter().map(|m| m.0).collect())
    }
}
