//! Retraining a fresh model at the searched sizes, plus cost accounting.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{schema_hash, DatasetSplit, FieldSchema, Part};
use crate::dlrm::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::rng::RngStream;
use crate::supernet::{
    evaluate, param_reduction, schema_cardinalities, train_standalone, CandidateSet, EmbeddingNet, TrainConfig, TrainLog,
};
use crate::tensor::Matrix;

/// Row-wise argmax of `P`; ties go to the lower index (the smaller size).
pub fn extract_assignment(p: &Matrix) -> Vec<usize> {
    (0..p.rows())
        .map(|i| {
            let row = p.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Per-field sizes tied to a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeAssignment {
    pub fields: Vec<String>,
    pub sizes: Vec<usize>,
    pub schema_hash: String,
}

impl SizeAssignment {
    pub fn new(schemas: &[FieldSchema], sizes: Vec<usize>) -> Result<Self> {
        if schemas.len() != sizes.len() {
            return Err(Error::config("assignment length differs from field count"));
        }
        Ok(Self { fields: schemas.iter().map(|s| s.name.clone()).collect(), sizes, schema_hash: schema_hash(schemas) })
    }

    pub fn uniform(schemas: &[FieldSchema], size: usize) -> Self {
        Self::new(schemas, vec![size; schemas.len()]).expect("lengths match")
    }

    /// Candidate indices; every size must be in `candidates`.
    pub fn indices(&self, candidates: &CandidateSet) -> Result<Vec<usize>> {
        self.sizes
            .iter()
            .map(|&d| candidates.index_of(d).ok_or_else(|| Error::config(format!("size {d} is not a candidate"))))
            .collect()
    }

    /// `{field_name: size}` in field order.
    pub fn to_map(&self) -> serde_json::Map<String, serde_json::Value> {
        self.fields.iter().zip(&self.sizes).map(|(f, &d)| (f.clone(), d.into())).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "assignment": self.to_map(), "schema_hash": self.schema_hash })
    }

    pub fn from_json(value: &serde_json::Value, schemas: &[FieldSchema]) -> Result<Self> {
        let found = schema_hash(schemas);
        if let Some(h) = value.get("schema_hash").and_then(|h| h.as_str()) {
            if h != found {
                return Err(Error::SchemaMismatch { expected: h.to_string(), found });
            }
        }
        let map = value
            .get("assignment")
            .and_then(|a| a.as_object())
            .ok_or_else(|| Error::config("assignment JSON needs an \"assignment\" object"))?;
        let mut sizes = Vec::with_capacity(schemas.len());
        for s in schemas {
            let d = map
                .get(&s.name)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::config(format!("assignment lacks field {}", s.name)))?;
            if d == 0 {
                return Err(Error::config(format!("field {} has size 0", s.name)));
            }
            sizes.push(d as usize);
        }
        if map.len() != schemas.len() {
            return Err(Error::config("assignment names fields absent from the schema"));
        }
        Self::new(schemas, sizes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(&self.to_json(), path)
    }

    pub fn load(path: impl AsRef<Path>, schemas: &[FieldSchema]) -> Result<Self> {
        Self::from_json(&read_json(path)?, schemas)
    }
}

pub fn write_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json(path: impl AsRef<Path>) -> Result<serde_json::Value> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-sample multiply-add counts of a retrained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flops {
    /// Mean pooling of multi-valued fields: `(L_i − 1)·d_i` adds; one-hot lookups are copies.
    pub lookup: u64,
    /// `d_i·d_f` for the first transform layer, `d_f²` per further layer (batch norm folds into it).
    pub transform: u64,
    /// Σ in·out over the MLP layers.
    pub mlp: u64,
    /// DeepFM: `(2M + 1)·d_f` for the pairwise term; plus `M` for the linear term when enabled.
    pub interaction: u64,
    pub total: u64,
}

/// Closed-form FLOPs estimate. `values_per_field` is the mean number of values
/// per sample for each field (1 for one-hot fields).
pub fn flops_estimate(sizes: &[usize], values_per_field: &[f64], config: &ModelConfig) -> Result<Flops> {
    if sizes.len() != values_per_field.len() {
        return Err(Error::config("values_per_field length differs from assignment"));
    }
    let m = sizes.len() as u64;
    let df = config.unified_dim as u64;
    let lookup = sizes
        .iter()
        .zip(values_per_field)
        .map(|(&d, &l)| ((l - 1.0).max(0.0) * d as f64).round() as u64)
        .sum();
    let extra = (config.transform_depth.max(1) as u64 - 1) * df * df;
    let transform = sizes.iter().map(|&d| d as u64 * df + extra).sum();
    let mut width = m * df;
    let mut mlp = 0;
    for &h in &config.hidden {
        mlp += width * h as u64;
        width = h as u64;
    }
    let mut interaction = if config.wide { m } else { 0 };
    if config.architecture == Architecture::DeepFM {
        interaction += (2 * m + 1) * df;
    }
    Ok(Flops { lookup, transform, mlp, interaction, total: lookup + transform + mlp + interaction })
}

pub fn mean_values_per_field(data: &DatasetSplit) -> Vec<f64> {
    let train = data.part(Part::Train);
    (0..data.num_fields())
        .map(|i| {
            if train.is_empty() {
                1.0
            } else {
                train.iter().map(|s| s.fields[i].len() as f64).sum::<f64>() / train.len() as f64
            }
        })
        .collect()
}

/// Short digest of any serializable configuration.
pub fn config_hash(value: &impl Serialize) -> Result<String> {
    let text = serde_json::to_string(value)?;
    Ok(Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub assignment: serde_json::Map<String, serde_json::Value>,
    pub auc: f64,
    pub logloss: f64,
    pub p_r: f64,
    pub flops: Flops,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub net: EmbeddingNet,
    pub log: TrainLog,
    pub report: RetrainReport,
}

/// Copies supernet weights for the assigned candidates into a fixed net.
pub fn inherit_weights(target: &mut EmbeddingNet, supernet: &EmbeddingNet) -> Result<()> {
    let assignment = target.fixed_selection()?.candidate;
    for (i, &j) in assignment.iter().enumerate() {
        let (src, w) = supernet.store.view(i, j)?;
        let values = src.weight.value.columns(0, w);
        let (dst, _) = target.store.view_mut(i, j)?;
        if dst.weight.value.shape() != values.shape() {
            return Err(Error::config("supernet table shape differs from target"));
        }
        dst.weight.value = values;
        dst.weight.reset_state();
    }
    for (j, t) in supernet.bank.present() {
        if let Ok(dst) = target.bank.get_mut(j) {
            for (d, s) in dst.params_mut().into_iter().zip(t.params()) {
                d.value = s.1.value.clone();
                d.reset_state();
            }
        }
    }
    for (d, s) in target.main.params_mut().into_iter().zip(supernet.main.params()) {
        d.value = s.1.value.clone();
        d.reset_state();
    }
    Ok(())
}

/// Trains a fresh model at `assignment` and reports test metrics.
#[allow(clippy::too_many_arguments)]
pub fn retrain(
    data: &DatasetSplit,
    candidates: &CandidateSet,
    assignment: &SizeAssignment,
    model: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
    inherit_from: Option<&EmbeddingNet>,
) -> Result<RetrainOutcome> {
    if assignment.schema_hash != data.schema_hash() {
        return Err(Error::SchemaMismatch { expected: assignment.schema_hash.clone(), found: data.schema_hash() });
    }
    let indices = assignment.indices(candidates)?;
    let rng = RngStream::new(seed);
    let mut net = EmbeddingNet::standalone(&data.schemas, candidates, &indices, model, &rng)?;
    if let Some(sup) = inherit_from {
        inherit_weights(&mut net, sup)?;
    }
    let log = train_standalone(&mut net, data, train, &rng)?;
    let (auc, logloss) = evaluate(&net, data.part(Part::Test), &net.fixed_selection()?)?;
    let report = RetrainReport {
        assignment: assignment.to_map(),
        auc,
        logloss,
        p_r: param_reduction(&schema_cardinalities(&data.schemas), &assignment.sizes)?,
        flops: flops_estimate(&assignment.sizes, &mean_values_per_field(data), model)?,
        seed,
        config_hash: config_hash(&(model, train, candidates, inherit_from.is_some()))?,
    };
    Ok(RetrainOutcome { net, log, report })
}
