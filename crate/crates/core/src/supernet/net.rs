use std::collections::BTreeMap;

use crate::data::{FieldSchema, Sample};
use crate::dlrm::{MainModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_with_logits, sigmoid_scalar, Adam, Module};
use crate::rng::RngStream;
use crate::sampling::SubnetSelection;
use crate::tensor::Matrix;

use super::{CandidateSet, Scheme, SupernetStore, TransformBank, MAIN_KEY};

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Per-sample ‖∂ℓ/∂e_i‖₁ averaged over the batch, per field (0 for excluded fields).
    pub grad_mean: Vec<f64>,
    /// Per-sample ‖e_i‖₁ averaged over the batch, per field.
    pub value_mean: Vec<f64>,
}

/// Embedding storage + size-unifying transforms + main model.
///
/// The same type serves as the supernet (multi-candidate store) and as a
/// stand-alone model (fixed store with one table per field).
#[derive(Debug, Clone)]
pub struct EmbeddingNet {
    pub store: SupernetStore,
    pub bank: TransformBank,
    pub main: MainModel,
    pub config: ModelConfig,
}

fn group_by_candidate(sel: &SubnetSelection) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (&c, &inc)) in sel.candidate.iter().zip(&sel.included).enumerate() {
        if inc {
            groups.entry(c).or_default().push(i);
        }
    }
    groups
}

fn vstack(parts: &[&Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |m| m.cols());
    let mut data = Vec::with_capacity(parts.iter().map(|m| m.len()).sum());
    for p in parts {
        data.extend_from_slice(p.as_slice());
    }
    let rows = parts.iter().map(|m| m.rows()).sum();
    Matrix::from_vec(rows, cols, data).expect("vstack of equal-width parts")
}

impl EmbeddingNet {
    /// A supernet over every candidate size.
    pub fn supernet(
        schemas: &[FieldSchema],
        candidates: &CandidateSet,
        scheme: Scheme,
        config: &ModelConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        config.validate()?;
        let main = MainModel::new(schemas, config, &mut rng.fork(MAIN_KEY))?;
        let bank = TransformBank::new(candidates, config.unified_dim, config.transform_depth, rng);
        let store = SupernetStore::new(schemas, candidates, scheme, rng);
        Ok(Self { store, bank, main, config: config.clone() })
    }

    /// A stand-alone model with the given per-field candidate indices.
    pub fn standalone(
        schemas: &[FieldSchema],
        candidates: &CandidateSet,
        assignment: &[usize],
        config: &ModelConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        config.validate()?;
        let main = MainModel::new(schemas, config, &mut rng.fork(MAIN_KEY))?;
        let mut used = vec![false; candidates.len()];
        for &j in assignment {
            candidates.size(j)?;
            used[j] = true;
        }
        let bank = TransformBank::with_used(candidates, &used, config.unified_dim, config.transform_depth, rng);
        let store = SupernetStore::fixed(schemas, candidates, assignment, rng)?;
        Ok(Self { store, bank, main, config: config.clone() })
    }

    pub fn num_fields(&self) -> usize {
        self.store.num_fields()
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.store.candidates
    }

    /// Selection that includes every field at its stored candidate (fixed stores only).
    pub fn fixed_selection(&self) -> Result<SubnetSelection> {
        self.store
            .assignment()
            .map(|a| SubnetSelection::all_included(a.to_vec()))
            .ok_or_else(|| Error::config("model has no fixed assignment"))
    }

    fn check_selection(&self, sel: &SubnetSelection) -> Result<()> {
        if sel.candidate.len() != self.num_fields() || sel.included.len() != self.num_fields() {
            return Err(Error::config("selection length differs from field count"));
        }
        if let Some(&bad) = sel.candidate.iter().find(|&&c| c >= self.candidates().len()) {
            return Err(Error::config(format!("candidate index {bad} out of range")));
        }
        Ok(())
    }

    /// Unified embedding block `batch × (M·d_f)` in inference mode. Excluded
    /// fields are zero.
    pub fn forward_block(&self, batch: &[&Sample], sel: &SubnetSelection) -> Result<Matrix> {
        self.check_selection(sel)?;
        let d = self.config.unified_dim;
        let b = batch.len();
        let mut block = Matrix::zeros(b, self.num_fields() * d);
        for (i, (&c, &inc)) in sel.candidate.iter().zip(&sel.included).enumerate() {
            if !inc {
                continue;
            }
            let e = self.store.lookup(i, c, batch)?;
            let out = self.bank.get(c)?.forward(&e)?;
            for r in 0..b {
                block.row_mut(r)[i * d..(i + 1) * d].copy_from_slice(out.row(r));
            }
        }
        Ok(block)
    }

    pub fn logits(&self, batch: &[&Sample], sel: &SubnetSelection) -> Result<Vec<f64>> {
        let block = self.forward_block(batch, sel)?;
        self.main.forward(&block, batch, &sel.included)
    }

    pub fn predict(&self, batch: &[&Sample], sel: &SubnetSelection) -> Result<Vec<f64>> {
        Ok(self.logits(batch, sel)?.into_iter().map(sigmoid_scalar).collect())
    }

    /// Predictions over a whole sample list, in chunks of the configured batch size.
    pub fn predict_all(&self, samples: &[Sample], sel: &SubnetSelection) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            out.extend(self.predict(&refs, sel)?);
        }
        Ok(out)
    }

    /// Training-mode forward (batch statistics in every batch norm). Returns
    /// the per-field lookups and the logits; the layers cache what backward needs.
    fn forward_train_logits(&mut self, batch: &[&Sample], sel: &SubnetSelection) -> Result<(Vec<Option<Matrix>>, Vec<f64>)> {
        self.check_selection(sel)?;
        if batch.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        let m = self.num_fields();
        let d = self.config.unified_dim;
        let b = batch.len();
        let mut lookups: Vec<Option<Matrix>> = vec![None; m];
        let mut block = Matrix::zeros(b, m * d);
        for (&c, fields) in &group_by_candidate(sel) {
            for &i in fields {
                lookups[i] = Some(self.store.lookup(i, c, batch)?);
            }
            let parts: Vec<&Matrix> = fields.iter().map(|&i| lookups[i].as_ref().expect("looked up")).collect();
            let out = self.bank.get_mut(c)?.forward_train(&vstack(&parts))?;
            for (slot, &i) in fields.iter().enumerate() {
                for r in 0..b {
                    block.row_mut(r)[i * d..(i + 1) * d].copy_from_slice(out.row(slot * b + r));
                }
            }
        }
        let logits = self.main.forward_train(&block, batch, &sel.included)?;
        Ok((lookups, logits))
    }

    /// Logits as seen by a training step on this batch.
    pub fn train_logits(&mut self, batch: &[&Sample], sel: &SubnetSelection) -> Result<Vec<f64>> {
        Ok(self.forward_train_logits(batch, sel)?.1)
    }

    /// Mean loss and gradients for one batch, without touching parameters.
    /// Gradients are left accumulated in the parameters.
    pub fn loss_and_grad(&mut self, batch: &[&Sample], sel: &SubnetSelection) -> Result<StepStats> {
        let (lookups, logits) = self.forward_train_logits(batch, sel)?;
        let m = self.num_fields();
        let d = self.config.unified_dim;
        let b = batch.len();
        let groups = group_by_candidate(sel);

        let labels: Vec<f64> = batch.iter().map(|s| s.label).collect();
        let (loss, dlogits) = cross_entropy_with_logits(&logits, &labels)?;
        let dblock = self.main.backward(&dlogits, batch, &sel.included)?;
        dblock.check_finite("gradient of embedding block")?;

        let mut grad_mean = vec![0.0; m];
        let mut value_mean = vec![0.0; m];
        for (&c, fields) in &groups {
            let mut dstack = Matrix::zeros(b * fields.len(), d);
            for (slot, &i) in fields.iter().enumerate() {
                for r in 0..b {
                    dstack.row_mut(slot * b + r).copy_from_slice(&dblock.row(r)[i * d..(i + 1) * d]);
                }
            }
            let de = self.bank.get_mut(c)?.backward(&dstack)?;
            let w = de.cols();
            for (slot, &i) in fields.iter().enumerate() {
                let gi = Matrix::from_vec(b, w, de.as_slice()[slot * b * w..(slot + 1) * b * w].to_vec())?;
                // per-sample L1 norms averaged over the batch; `gi` holds gradients of the
                // batch-mean loss, so its plain sum is already the mean per-sample norm
                grad_mean[i] = gi.as_slice().iter().map(|v| v.abs()).sum::<f64>();
                value_mean[i] =
                    lookups[i].as_ref().map_or(0.0, |e| e.as_slice().iter().map(|v| v.abs()).sum::<f64>() / b as f64);
                self.store.accumulate_grad(i, c, batch, &gi)?;
            }
        }
        Ok(StepStats { loss, grad_mean, value_mean })
    }

    /// Forward, backward, and an optimizer step on every touched parameter.
    pub fn train_step(&mut self, batch: &[&Sample], sel: &SubnetSelection, adam: &Adam) -> Result<StepStats> {
        let stats = self.loss_and_grad(batch, sel);
        if stats.is_ok() {
            self.main.step(adam);
            self.bank.step(adam);
            self.store.step(adam);
        }
        self.zero_grad();
        stats
    }

    pub fn zero_grad(&mut self) {
        self.main.zero_grad();
        self.bank.zero_grad();
        self.store.zero_grad();
    }

    /// Order-sensitive digest of every parameter value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (_, t) in self.store.tables() {
            t.weight.value.as_slice().iter().for_each(|&v| mix(v));
        }
        for (_, p) in self.bank.params() {
            p.value.as_slice().iter().for_each(|&v| mix(v));
        }
        for (_, p) in self.main.params() {
            p.value.as_slice().iter().for_each(|&v| mix(v));
        }
        h
    }
}
