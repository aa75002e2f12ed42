use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingTable;
use crate::data::{FieldSchema, Sample};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, Module, Parameter};
use crate::rng::RngStream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[serde(alias = "WideDeep")]
    WideDeep,
    #[serde(rename = "deepfm", alias = "DeepFM", alias = "deep_fm")]
    DeepFM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Unified embedding width fed to the main model.
    #[serde(default = "default_unified")]
    pub unified_dim: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Per-value linear term (wide part / first-order term).
    #[serde(default = "default_true")]
    pub wide: bool,
    /// Depth of each size-unifying transform (affine + batch norm per layer).
    #[serde(default = "default_transform_depth")]
    pub transform_depth: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 64, 1]
}
fn default_unified() -> usize {
    16
}
fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    512
}
fn default_true() -> bool {
    true
}
fn default_transform_depth() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::DeepFM,
            hidden: default_hidden(),
            unified_dim: default_unified(),
            lr: default_lr(),
            batch_size: default_batch(),
            wide: true,
            transform_depth: default_transform_depth(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.last() != Some(&1) {
            return Err(Error::config("last hidden width must be 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.unified_dim == 0 {
            return Err(Error::config("unified_dim must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if self.transform_depth == 0 {
            return Err(Error::config("transform_depth must be at least 1"));
        }
        Ok(())
    }
}

/// The main network over a unified embedding block of shape `batch × (M·d_f)`.
///
/// logit = MLP(block) + [DeepFM] Σ_{i<j} ⟨e_i, e_j⟩ + [wide] Σ_i w_i[x_i]
#[derive(Debug, Clone)]
pub struct MainModel {
    pub architecture: Architecture,
    pub num_fields: usize,
    pub unified_dim: usize,
    pub mlp: Mlp,
    /// One scalar weight per vocabulary entry and field; `None` when the wide part is off.
    pub linear: Option<Vec<EmbeddingTable>>,
    fm_cache: Option<Matrix>,
}

impl MainModel {
    pub fn new(schemas: &[FieldSchema], config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let m = schemas.len();
        let mlp = Mlp::new(m * config.unified_dim, &config.hidden, rng)?;
        let linear = config.wide.then(|| {
            schemas
                .iter()
                .enumerate()
                .map(|(i, s)| EmbeddingTable::from_matrix(i, Matrix::zeros(s.cardinality, 1)))
                .collect()
        });
        Ok(Self {
            architecture: config.architecture,
            num_fields: m,
            unified_dim: config.unified_dim,
            mlp,
            linear,
            fm_cache: None,
        })
    }

    fn check_block(&self, block: &Matrix, batch: usize) -> Result<()> {
        let expected = self.num_fields * self.unified_dim;
        if block.cols() != expected || block.rows() != batch {
            return Err(Error::config(format!(
                "embedding block is {:?}, expected ({batch}, {expected})",
                block.shape()
            )));
        }
        Ok(())
    }

    /// Σ_{i<j} ⟨e_i, e_j⟩ = ½(‖Σ e‖² − Σ‖e‖²) per row.
    pub fn fm_term(&self, block: &Matrix) -> Vec<f64> {
        let d = self.unified_dim;
        (0..block.rows())
            .map(|r| {
                let row = block.row(r);
                let mut total = 0.0;
                for c in 0..d {
                    let mut s = 0.0;
                    let mut sq = 0.0;
                    for i in 0..self.num_fields {
                        let v = row[i * d + c];
                        s += v;
                        sq += v * v;
                    }
                    total += 0.5 * (s * s - sq);
                }
                total
            })
            .collect()
    }

    fn linear_term(&self, batch: &[&Sample], included: &[bool]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; batch.len()];
        if let Some(tables) = &self.linear {
            let mut buf = [0.0];
            for (i, t) in tables.iter().enumerate() {
                if !included[i] {
                    continue;
                }
                for (o, s) in out.iter_mut().zip(batch) {
                    t.lookup(&s.fields[i], 1, &mut buf)?;
                    *o += buf[0];
                }
            }
        }
        Ok(out)
    }

    fn combine(&self, mlp_out: &Matrix, block: &Matrix, batch: &[&Sample], included: &[bool]) -> Result<Vec<f64>> {
        let mut logits: Vec<f64> = (0..mlp_out.rows()).map(|r| mlp_out.get(r, 0)).collect();
        if self.architecture == Architecture::DeepFM {
            for (l, f) in logits.iter_mut().zip(self.fm_term(block)) {
                *l += f;
            }
        }
        for (l, w) in logits.iter_mut().zip(self.linear_term(batch, included)?) {
            *l += w;
        }
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("main model logit {bad}")));
        }
        Ok(logits)
    }

    pub fn forward(&self, block: &Matrix, batch: &[&Sample], included: &[bool]) -> Result<Vec<f64>> {
        self.check_block(block, batch.len())?;
        let out = self.mlp.forward(block)?;
        self.combine(&out, block, batch, included)
    }

    pub fn forward_train(&mut self, block: &Matrix, batch: &[&Sample], included: &[bool]) -> Result<Vec<f64>> {
        self.check_block(block, batch.len())?;
        let out = self.mlp.forward_train(block)?;
        self.fm_cache = Some(block.clone());
        self.combine(&out, block, batch, included)
    }

    /// Returns `∂L/∂block` and accumulates gradients of the MLP and linear weights.
    pub fn backward(&mut self, dlogits: &[f64], batch: &[&Sample], included: &[bool]) -> Result<Matrix> {
        let block = self
            .fm_cache
            .take()
            .ok_or_else(|| Error::config("main model backward without cached forward"))?;
        let dy = Matrix::from_vec(dlogits.len(), 1, dlogits.to_vec())?;
        let mut dblock = self.mlp.backward(&dy)?;
        if self.architecture == Architecture::DeepFM {
            let d = self.unified_dim;
            for (r, &g) in dlogits.iter().enumerate() {
                let row = block.row(r);
                let mut sums = vec![0.0; d];
                for i in 0..self.num_fields {
                    for c in 0..d {
                        sums[c] += row[i * d + c];
                    }
                }
                let drow = dblock.row_mut(r);
                for i in 0..self.num_fields {
                    for c in 0..d {
                        drow[i * d + c] += g * (sums[c] - row[i * d + c]);
                    }
                }
            }
        }
        if let Some(tables) = &mut self.linear {
            let dl = Matrix::from_vec(dlogits.len(), 1, dlogits.to_vec())?;
            for (i, t) in tables.iter_mut().enumerate() {
                if included[i] {
                    t.accumulate_grad(batch, &dl)?;
                }
            }
        }
        Ok(dblock)
    }

    pub fn step(&mut self, adam: &Adam) {
        adam.step_all(self.mlp.params_mut());
        if let Some(tables) = &mut self.linear {
            for t in tables {
                t.step(adam);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.mlp.zero_grad();
        if let Some(tables) = &mut self.linear {
            tables.iter_mut().for_each(EmbeddingTable::zero_grad);
        }
    }
}

impl Module for MainModel {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out: Vec<(String, &Parameter)> =
            self.mlp.params().into_iter().map(|(n, p)| (format!("mlp.{n}"), p)).collect();
        if let Some(tables) = &self.linear {
            for (i, t) in tables.iter().enumerate() {
                out.push((format!("linear.{i}"), &t.weight));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.mlp.params_mut();
        if let Some(tables) = &mut self.linear {
            out.extend(tables.iter_mut().map(|t| &mut t.weight));
        }
        out
    }

    fn zero_grad(&mut self) {
        MainModel::zero_grad(self);
    }
}
