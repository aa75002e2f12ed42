//! Synthetic CTR data with known field importance.
//!
//! Each field value carries a standardized scalar effect `z` and a latent
//! vector `u ∈ R^k`. The label logit is
//!
//! ```text
//! bias + main_scale · Σ_i w_i z_i[v_i]
//!      + interaction_scale · Σ_{i<j} w_i w_j ⟨u_i[v_i], u_j[v_j]⟩
//!      + noise · N(0, 1)
//! ```
//!
//! where `w_i` is the informativeness of field `i`. The interaction term is
//! rank `k`, so fields that interact need embeddings of width ≥ `k` to be
//! modeled fully; a field with `w_i = 0` carries no signal at all.

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, FieldSchema, Sample, SplitRatio};
use crate::error::{Error, Result};
use crate::nn::sigmoid_scalar;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticField {
    pub name: String,
    pub cardinality: usize,
    pub informativeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub fields: Vec<SyntheticField>,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_main_scale")]
    pub main_scale: f64,
    #[serde(default = "default_interaction_scale")]
    pub interaction_scale: f64,
    #[serde(default)]
    pub bias: f64,
    /// Zipf exponent of value frequencies; 0 draws values uniformly.
    #[serde(default)]
    pub value_skew: f64,
    #[serde(default)]
    pub split: SplitRatio,
}

fn default_latent_dim() -> usize {
    8
}
fn default_main_scale() -> f64 {
    2.0
}
fn default_interaction_scale() -> f64 {
    1.5
}

impl SyntheticSpec {
    pub fn new(fields: Vec<(usize, f64)>, n_samples: usize, seed: u64) -> Self {
        Self {
            fields: fields
                .into_iter()
                .enumerate()
                .map(|(i, (cardinality, informativeness))| SyntheticField {
                    name: format!("f{i}"),
                    cardinality,
                    informativeness,
                })
                .collect(),
            n_samples,
            seed,
            noise: 0.0,
            latent_dim: default_latent_dim(),
            main_scale: default_main_scale(),
            interaction_scale: default_interaction_scale(),
            bias: 0.0,
            value_skew: 0.0,
            split: SplitRatio::default(),
        }
    }

    /// The acceptance oracle dataset: two informative fields of 1000
    /// long-tailed values and one 50-value noise field. The interaction term
    /// dominates so that embedding width matters.
    pub fn oracle(n_samples: usize, seed: u64) -> Self {
        let mut s = Self::new(vec![(1000, 1.0), (1000, 1.0), (50, 0.0)], n_samples, seed);
        s.fields[2].name = "noise".into();
        s.main_scale = 1.0;
        s.interaction_scale = 3.0;
        s.value_skew = 1.2;
        s
    }

    pub fn validate(&self, require_signal: bool) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::config("synthetic spec needs at least one field"));
        }
        for f in &self.fields {
            if f.cardinality == 0 {
                return Err(Error::config(format!("field {} has zero cardinality", f.name)));
            }
            if !(0.0..=1.0).contains(&f.informativeness) {
                return Err(Error::config(format!("field {} informativeness outside [0, 1]", f.name)));
            }
        }
        if require_signal && self.fields.iter().all(|f| f.informativeness <= 0.0) {
            return Err(Error::config("at least one field must be informative"));
        }
        if !(self.value_skew >= 0.0 && self.value_skew.is_finite()) {
            return Err(Error::config("value_skew must be finite and non-negative"));
        }
        if self.latent_dim == 0 || self.noise < 0.0 {
            return Err(Error::config("latent_dim must be positive and noise non-negative"));
        }
        Ok(())
    }

    /// Field indices ordered from most to least informative (stable on ties).
    pub fn importance_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.fields.len()).collect();
        idx.sort_by(|&a, &b| self.fields[b].informativeness.total_cmp(&self.fields[a].informativeness));
        idx
    }

    pub fn schemas(&self) -> Vec<FieldSchema> {
        self.fields.iter().map(|f| FieldSchema::one_hot(f.name.clone(), f.cardinality)).collect()
    }
}

/// Per-value effects drawn for one spec; exposes the exact label probability.
pub struct SyntheticModel {
    main: Vec<Vec<f64>>,
    latent: Vec<Vec<Vec<f64>>>,
    spec: SyntheticSpec,
}

impl SyntheticModel {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let root = RngStream::new(spec.seed);
        let k = spec.latent_dim;
        let latent_std = (1.0 / (k as f64).sqrt()).sqrt();
        let mut main = Vec::with_capacity(spec.fields.len());
        let mut latent = Vec::with_capacity(spec.fields.len());
        for (i, f) in spec.fields.iter().enumerate() {
            let mut rng = root.fork(1000 + i as u64);
            let mut z: Vec<f64> = (0..f.cardinality).map(|_| rng.normal()).collect();
            standardize(&mut z);
            main.push(z);
            latent.push(
                (0..f.cardinality)
                    .map(|_| (0..k).map(|_| latent_std * rng.normal()).collect())
                    .collect(),
            );
        }
        Self { main, latent, spec: spec.clone() }
    }

    pub fn logit(&self, values: &[u32]) -> f64 {
        let s = &self.spec;
        let mut z = s.bias;
        for (i, f) in s.fields.iter().enumerate() {
            z += s.main_scale * f.informativeness * self.main[i][values[i] as usize];
        }
        for i in 0..s.fields.len() {
            for j in i + 1..s.fields.len() {
                let w = s.fields[i].informativeness * s.fields[j].informativeness;
                if w == 0.0 {
                    continue;
                }
                let ui = &self.latent[i][values[i] as usize];
                let uj = &self.latent[j][values[j] as usize];
                let dot: f64 = ui.iter().zip(uj).map(|(a, b)| a * b).sum();
                z += s.interaction_scale * w * dot;
            }
        }
        z
    }

    pub fn probability(&self, values: &[u32]) -> f64 {
        sigmoid_scalar(self.logit(values))
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    if v.len() < 2 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    (0..n)
        .map(|r| {
            acc += (r as f64 + 1.0).powf(-s);
            acc
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    spec.validate(false)?;
    let model = SyntheticModel::new(spec);
    let mut rng = RngStream::new(spec.seed).fork(1);
    let cdfs: Vec<Option<Vec<f64>>> = spec
        .fields
        .iter()
        .map(|f| (spec.value_skew > 0.0).then(|| zipf_cdf(f.cardinality, spec.value_skew)))
        .collect();
    let mut samples = Vec::with_capacity(spec.n_samples);
    for t in 0..spec.n_samples {
        let values: Vec<u32> = spec
            .fields
            .iter()
            .zip(&cdfs)
            .map(|(f, cdf)| match cdf {
                None => rng.below(f.cardinality) as u32,
                Some(c) => {
                    let u = rng.uniform() * c[c.len() - 1];
                    c.partition_point(|&x| x <= u).min(c.len() - 1) as u32
                }
            })
            .collect();
        let mut z = model.logit(&values);
        if spec.noise > 0.0 {
            z += spec.noise * rng.normal();
        }
        let label = rng.bernoulli(sigmoid_scalar(z)) as u8 as f64;
        samples.push(Sample {
            fields: values.into_iter().map(|v| vec![v]).collect(),
            label,
            timestamp: Some(t as i64),
        });
    }
    Ok(DatasetSplit::from_ordered(spec.schemas(), samples, spec.split))
}
