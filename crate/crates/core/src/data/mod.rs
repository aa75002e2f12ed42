//! Field schemas, samples, chronological splits, and the on-disk split cache.

mod csv_load;
mod preprocess;
mod synthetic;

pub use csv_load::{load_csv, ColumnKind, ColumnSpec, LabelRule, SchemaConfig};
pub use preprocess::{mlens_labelize, timestamp_expand, QuantileBuckets, DEFAULT_NUM_BUCKETS};
pub use synthetic::{generate_synthetic, SyntheticField, SyntheticModel, SyntheticSpec};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    /// Number of distinct indices, including any reserved index.
    pub cardinality: usize,
    #[serde(default)]
    pub multi_valued: bool,
}

impl FieldSchema {
    pub fn one_hot(name: impl Into<String>, cardinality: usize) -> Self {
        Self { name: name.into(), cardinality, multi_valued: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// One index list per field; singleton for one-hot fields.
    pub fields: Vec<Vec<u32>>,
    pub label: f64,
    pub timestamp: Option<i64>,
}

/// Split proportions, train:validation:test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio(pub u32, pub u32, pub u32);

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio(8, 1, 1)
    }
}

impl SplitRatio {
    /// `(train, validation)` counts for `n` samples; test takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize) {
        let total = (self.0 + self.1 + self.2).max(1) as usize;
        let train = n * self.0 as usize / total;
        let val = n * self.1 as usize / total;
        (train, val)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub schemas: Vec<FieldSchema>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub fn num_fields(&self) -> usize {
        self.schemas.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.schemas.iter().map(|s| s.cardinality).collect()
    }

    pub fn part(&self, part: Part) -> &[Sample] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    /// Splits an ordered sample list by `ratio`, keeping order.
    pub fn from_ordered(schemas: Vec<FieldSchema>, mut samples: Vec<Sample>, ratio: SplitRatio) -> Self {
        let (n_train, n_val) = ratio.counts(samples.len());
        let test = samples.split_off(n_train + n_val);
        let validation = samples.split_off(n_train);
        Self { schemas, train: samples, validation, test }
    }

    pub fn schema_hash(&self) -> String {
        schema_hash(&self.schemas)
    }

    /// Checks every sample against the schemas.
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for s in &self.schemas {
            if s.cardinality == 0 {
                return Err(Error::data(format!("field {} has zero cardinality", s.name)));
            }
            if !names.insert(&s.name) {
                return Err(Error::data(format!("duplicate field name {}", s.name)));
            }
        }
        for part in [&self.train, &self.validation, &self.test] {
            for (k, sample) in part.iter().enumerate() {
                validate_sample(&self.schemas, sample).map_err(|e| match e {
                    Error::Data { message, .. } => Error::data(format!("sample {k}: {message}")),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Checkpoint::new(serde_json::json!({
            "kind": "dataset_split",
            "schemas": self.schemas,
            "schema_hash": self.schema_hash(),
        }));
        for (name, part) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            let (flat, lens, meta) = encode_part(part, self.schemas.len());
            c.push(format!("{name}.indices"), flat);
            c.push(format!("{name}.lengths"), lens);
            c.push(format!("{name}.label_time"), meta);
        }
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Checkpoint::load(path)?;
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("dataset_split") {
            return Err(Error::Checkpoint("container does not hold a dataset split".into()));
        }
        let schemas: Vec<FieldSchema> = serde_json::from_value(c.meta["schemas"].clone())?;
        let m = schemas.len();
        let mut parts = Vec::with_capacity(3);
        for name in ["train", "validation", "test"] {
            parts.push(decode_part(
                c.get(&format!("{name}.indices"))?,
                c.get(&format!("{name}.lengths"))?,
                c.get(&format!("{name}.label_time"))?,
                m,
            )?);
        }
        let test = parts.pop().unwrap_or_default();
        let validation = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        let split = Self { schemas, train, validation, test };
        split.validate()?;
        Ok(split)
    }
}

pub fn validate_sample(schemas: &[FieldSchema], sample: &Sample) -> Result<()> {
    if sample.fields.len() != schemas.len() {
        return Err(Error::data(format!(
            "sample has {} fields, schema has {}",
            sample.fields.len(),
            schemas.len()
        )));
    }
    if sample.label != 0.0 && sample.label != 1.0 {
        return Err(Error::data(format!("label {} is not binary", sample.label)));
    }
    for (schema, idx) in schemas.iter().zip(&sample.fields) {
        if idx.is_empty() {
            return Err(Error::data(format!("field {} has no value", schema.name)));
        }
        if !schema.multi_valued && idx.len() != 1 {
            return Err(Error::data(format!("one-hot field {} carries {} indices", schema.name, idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= schema.cardinality) {
            return Err(Error::data(format!(
                "index {bad} out of range for field {} (cardinality {})",
                schema.name, schema.cardinality
            )));
        }
    }
    Ok(())
}

/// Stable short hash of the field schemas; ties checkpoints to datasets.
pub fn schema_hash(schemas: &[FieldSchema]) -> String {
    let mut h = Sha256::new();
    for s in schemas {
        h.update(s.name.as_bytes());
        h.update([0u8]);
        h.update((s.cardinality as u64).to_le_bytes());
        h.update([s.multi_valued as u8]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn encode_part(part: &[Sample], m: usize) -> (Matrix, Matrix, Matrix) {
    let mut flat = Vec::new();
    let mut lens = Vec::with_capacity(part.len() * m);
    let mut meta = Vec::with_capacity(part.len() * 3);
    for s in part {
        for idx in &s.fields {
            lens.push(idx.len() as f64);
            flat.extend(idx.iter().map(|&i| i as f64));
        }
        meta.push(s.label);
        meta.push(s.timestamp.is_some() as u8 as f64);
        meta.push(s.timestamp.unwrap_or(0) as f64);
    }
    let n_flat = flat.len();
    (
        Matrix::from_vec(1, n_flat, flat).expect("flat"),
        Matrix::from_vec(part.len(), m, lens).expect("lens"),
        Matrix::from_vec(part.len(), 3, meta).expect("meta"),
    )
}

fn decode_part(flat: &Matrix, lens: &Matrix, meta: &Matrix, m: usize) -> Result<Vec<Sample>> {
    if lens.cols() != m || meta.rows() != lens.rows() || meta.cols() != 3 {
        return Err(Error::Checkpoint("split records have inconsistent shapes".into()));
    }
    let flat = flat.as_slice();
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(lens.rows());
    for r in 0..lens.rows() {
        let mut fields = Vec::with_capacity(m);
        for &len in lens.row(r) {
            let len = len as usize;
            let end = cursor + len;
            if end > flat.len() {
                return Err(Error::Checkpoint("split index records truncated".into()));
            }
            fields.push(flat[cursor..end].iter().map(|&v| v as u32).collect());
            cursor = end;
        }
        let row = meta.row(r);
        out.push(Sample {
            fields,
            label: row[0],
            timestamp: (row[1] != 0.0).then_some(row[2] as i64),
        });
    }
    Ok(out)
}
