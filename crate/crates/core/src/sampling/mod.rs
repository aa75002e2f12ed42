//! Two-layer adaptive sampling of subnets during supernet training, plus the
//! fixed-rate baseline samplers used for consistency ablations.
//!
//! The first layer (embedding-table sampling) draws one candidate size per
//! field from the rows of `P_E`; the second layer (feature sampling) keeps each
//! field with probability `P_F[i]`. After every training step the rates move:
//!
//! * `P_E` row `i` is shifted by `-η_E · standardize(Var(E_{i,·}))`, so
//!   candidates whose tables have lower variance (less trained) are drawn more.
//! * `P_F[i]` is shifted by `+η_F · standardize(g_i)` over the fields sampled
//!   this step, with `g_i = λ_FS·mean|∂L/∂e_i| + (1-λ_FS)·mean|e_i|`.
//!
//! The literal update averages `Var(E_{·,j})` over all `T` candidates and scales
//! the norms by `1/(M·T)`; averaging over candidates cannot separate them, so
//! variances here are kept per candidate and standardized within each field,
//! and the norm scaling is absorbed by taking means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Matrix;

pub const FS_MAX_REDRAWS: usize = 16;
pub const BASELINE_INCLUSION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Adaptive,
    /// Field kept with p = 0.6, candidate uniform.
    Random,
    /// Field kept with p = 0.6, candidate ∝ its size.
    VanillaUniform,
    /// Field kept with p ∝ cardinality (mean 0.6), candidate ∝ its size.
    WeightUniform,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] =
        [SamplerKind::Adaptive, SamplerKind::Random, SamplerKind::VanillaUniform, SamplerKind::WeightUniform];

    pub fn label(&self) -> &'static str {
        match self {
            SamplerKind::Adaptive => "adaptive",
            SamplerKind::Random => "random",
            SamplerKind::VanillaUniform => "vanilla",
            SamplerKind::WeightUniform => "weight",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(SamplerKind::Adaptive),
            "random" => Ok(SamplerKind::Random),
            "vanilla" | "vanilla_uniform" => Ok(SamplerKind::VanillaUniform),
            "weight" | "weight_uniform" => Ok(SamplerKind::WeightUniform),
            other => Err(Error::config(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default = "d_lambda_fs")]
    pub lambda_fs: f64,
    #[serde(default = "d_eta")]
    pub eta_e: f64,
    #[serde(default = "d_eta")]
    pub eta_f: f64,
    #[serde(default = "d_p_min")]
    pub p_min: f64,
    #[serde(default = "d_p_max")]
    pub p_max: f64,
    /// Floor on every `P_E` entry.
    #[serde(default = "d_eps")]
    pub pe_floor: f64,
    #[serde(default = "d_init_pf")]
    pub init_pf: f64,
}

fn d_lambda_fs() -> f64 {
    0.6
}
fn d_eta() -> f64 {
    0.05
}
fn d_p_min() -> f64 {
    0.1
}
fn d_p_max() -> f64 {
    0.95
}
fn d_eps() -> f64 {
    1e-3
}
fn d_init_pf() -> f64 {
    0.6
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::new(SamplerKind::Adaptive)
    }
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            lambda_fs: d_lambda_fs(),
            eta_e: d_eta(),
            eta_f: d_eta(),
            p_min: d_p_min(),
            p_max: d_p_max(),
            pe_floor: d_eps(),
            init_pf: d_init_pf(),
        }
    }

    pub fn validate(&self, num_candidates: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_fs) {
            return Err(Error::config("lambda_fs must lie in [0, 1]"));
        }
        if self.eta_e < 0.0 || self.eta_f < 0.0 {
            return Err(Error::config("step sizes must be non-negative"));
        }
        if !(0.0 < self.p_min && self.p_min <= self.p_max && self.p_max <= 1.0) {
            return Err(Error::config("need 0 < p_min <= p_max <= 1"));
        }
        if self.pe_floor <= 0.0 || self.pe_floor * num_candidates as f64 > 1.0 {
            return Err(Error::config("pe_floor must be positive and pe_floor·T <= 1"));
        }
        Ok(())
    }
}

/// Field-level sampled architecture: one candidate per field plus an inclusion flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubnetSelection {
    pub candidate: Vec<usize>,
    pub included: Vec<bool>,
}

impl SubnetSelection {
    pub fn all_included(candidate: Vec<usize>) -> Self {
        let included = vec![true; candidate.len()];
        Self { candidate, included }
    }

    pub fn num_fields(&self) -> usize {
        self.candidate.len()
    }
}

/// Adaptive rates `P_E` (M×T, rows on the simplex) and `P_F` (M, clamped).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRates {
    pub pe: Matrix,
    pub pf: Vec<f64>,
    pub config: SamplerConfig,
}

impl SampleRates {
    pub fn new(num_fields: usize, num_candidates: usize, config: SamplerConfig) -> Result<Self> {
        config.validate(num_candidates)?;
        let init_pf = config.init_pf.clamp(config.p_min, config.p_max);
        Ok(Self {
            pe: Matrix::filled(num_fields, num_candidates, 1.0 / num_candidates as f64),
            pf: vec![init_pf; num_fields],
            config,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.pf.len()
    }

    pub fn draw(&self, rng: &mut RngStream) -> SubnetSelection {
        let candidate = es_sample(&self.pe, rng);
        let included = fs_sample(&self.pf, rng);
        SubnetSelection { candidate, included }
    }

    /// Shifts each `P_E` row against its standardized per-candidate table variances.
    pub fn update_pe(&mut self, variances: &Matrix) -> Result<()> {
        if variances.shape() != self.pe.shape() {
            return Err(Error::shape("update_pe", self.pe.shape(), variances.shape()));
        }
        let eta = self.config.eta_e;
        let floor = self.config.pe_floor;
        for i in 0..self.pe.rows() {
            let Some(z) = standardize(variances.row(i)) else { continue };
            let row = self.pe.row_mut(i);
            for (p, s) in row.iter_mut().zip(&z) {
                *p -= eta * s;
            }
            project_simplex_floor(row, floor);
        }
        Ok(())
    }

    /// Shifts `P_F` of the fields sampled this step toward the ones with larger
    /// gradient/value magnitude. `grad_mean[i]` and `value_mean[i]` are only read
    /// for sampled fields.
    pub fn update_pf(&mut self, sampled: &[bool], grad_mean: &[f64], value_mean: &[f64]) -> Result<()> {
        let m = self.pf.len();
        if sampled.len() != m || grad_mean.len() != m || value_mean.len() != m {
            return Err(Error::config("update_pf inputs must have one entry per field"));
        }
        let fields: Vec<usize> = (0..m).filter(|&i| sampled[i]).collect();
        let lambda = self.config.lambda_fs;
        let scores: Vec<f64> =
            fields.iter().map(|&i| lambda * grad_mean[i] + (1.0 - lambda) * value_mean[i]).collect();
        let Some(z) = standardize(&scores) else { return Ok(()) };
        for (&i, s) in fields.iter().zip(z) {
            self.pf[i] = (self.pf[i] + self.config.eta_f * s).clamp(self.config.p_min, self.config.p_max);
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.pe.rows() {
            let row = self.pe.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NonFinite(format!("P_E row {i} sums to {sum}")));
            }
            if let Some(p) = row.iter().find(|&&p| p < self.config.pe_floor - 1e-12 || !p.is_finite()) {
                return Err(Error::NonFinite(format!("P_E row {i} has entry {p} below floor")));
            }
        }
        for (i, &p) in self.pf.iter().enumerate() {
            if !(self.config.p_min..=self.config.p_max).contains(&p) {
                return Err(Error::NonFinite(format!("P_F[{i}] = {p} escaped its clamps")));
            }
        }
        Ok(())
    }
}

/// Zero-mean, unit-variance rescaling. `None` when fewer than two entries or
/// when all entries are equal.
pub fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1e-300)) || !sd.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (x - mean) / sd).collect())
}

/// Maps `row` onto `{p : Σp = 1, p ≥ floor}` by pinning entries at the floor
/// and rescaling the remaining mass.
pub fn project_simplex_floor(row: &mut [f64], floor: f64) {
    let t = row.len();
    let mut fixed = vec![false; t];
    for _ in 0..=t {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_target = 1.0 - floor * n_fixed as f64;
        let free_sum: f64 = row.iter().zip(&fixed).filter(|(_, &f)| !f).map(|(p, _)| p.max(0.0)).sum();
        let n_free = t - n_fixed;
        for (p, &f) in row.iter_mut().zip(&fixed) {
            if f {
                *p = floor;
            } else if free_sum > 0.0 {
                *p = p.max(0.0) * free_target / free_sum;
            } else {
                *p = free_target / n_free as f64;
            }
        }
        let mut changed = false;
        for (p, f) in row.iter_mut().zip(fixed.iter_mut()) {
            if !*f && *p < floor {
                *f = true;
                *p = floor;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// One categorical draw per `P_E` row.
pub fn es_sample(pe: &Matrix, rng: &mut RngStream) -> Vec<usize> {
    (0..pe.rows()).map(|i| rng.categorical(pe.row(i))).collect()
}

/// Independent Bernoulli per field. An all-excluded draw is redrawn up to
/// `FS_MAX_REDRAWS` times, after which the field with the largest rate is kept.
pub fn fs_sample(pf: &[f64], rng: &mut RngStream) -> Vec<bool> {
    let mut flags = vec![false; pf.len()];
    for _ in 0..=FS_MAX_REDRAWS {
        for (f, &p) in flags.iter_mut().zip(pf) {
            *f = rng.bernoulli(p);
        }
        if flags.iter().any(|&f| f) || pf.is_empty() {
            return flags;
        }
    }
    let best = pf
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > pf[best] { i } else { best });
    flags[best] = true;
    flags
}

/// Inclusion and candidate probabilities of a fixed-rate baseline sampler.
pub fn baseline_rates(
    kind: SamplerKind,
    cardinalities: &[usize],
    sizes: &[usize],
    p_min: f64,
    p_max: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = sizes.len();
    let m = cardinalities.len();
    let size_total: f64 = sizes.iter().map(|&d| d as f64).sum();
    let proportional: Vec<f64> = sizes.iter().map(|&d| d as f64 / size_total).collect();
    let uniform = vec![1.0 / t as f64; t];
    match kind {
        SamplerKind::Adaptive => Err(Error::config("adaptive sampling is not a baseline")),
        SamplerKind::Random => Ok((vec![BASELINE_INCLUSION; m], uniform)),
        SamplerKind::VanillaUniform => Ok((vec![BASELINE_INCLUSION; m], proportional)),
        SamplerKind::WeightUniform => {
            let total: f64 = cardinalities.iter().map(|&n| n as f64).sum();
            let inclusion = cardinalities
                .iter()
                .map(|&n| (BASELINE_INCLUSION * n as f64 * m as f64 / total).clamp(p_min, p_max))
                .collect();
            Ok((inclusion, proportional))
        }
    }
}

pub fn baseline_sample(
    kind: SamplerKind,
    cardinalities: &[usize],
    sizes: &[usize],
    p_min: f64,
    p_max: f64,
    rng: &mut RngStream,
) -> Result<SubnetSelection> {
    let (inclusion, cand) = baseline_rates(kind, cardinalities, sizes, p_min, p_max)?;
    let candidate = (0..cardinalities.len()).map(|_| rng.categorical(&cand)).collect();
    let included = fs_sample(&inclusion, rng);
    Ok(SubnetSelection { candidate, included })
}

/// A sampler bound to one training run.
#[derive(Debug, Clone)]
pub enum Sampler {
    Adaptive(SampleRates),
    Baseline { kind: SamplerKind, inclusion: Vec<f64>, candidate: Vec<f64> },
}

impl Sampler {
    pub fn new(config: &SamplerConfig, cardinalities: &[usize], sizes: &[usize]) -> Result<Self> {
        config.validate(sizes.len())?;
        match config.kind {
            SamplerKind::Adaptive => {
                Ok(Sampler::Adaptive(SampleRates::new(cardinalities.len(), sizes.len(), config.clone())?))
            }
            kind => {
                let (inclusion, candidate) =
                    baseline_rates(kind, cardinalities, sizes, config.p_min, config.p_max)?;
                Ok(Sampler::Baseline { kind, inclusion, candidate })
            }
        }
    }

    pub fn kind(&self) -> SamplerKind {
        match self {
            Sampler::Adaptive(_) => SamplerKind::Adaptive,
            Sampler::Baseline { kind, .. } => *kind,
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> SubnetSelection {
        match self {
            Sampler::Adaptive(r) => r.draw(rng),
            Sampler::Baseline { inclusion, candidate, .. } => {
                let c = (0..inclusion.len()).map(|_| rng.categorical(candidate)).collect();
                SubnetSelection { candidate: c, included: fs_sample(inclusion, rng) }
            }
        }
    }

    pub fn rates(&self) -> Option<&SampleRates> {
        match self {
            Sampler::Adaptive(r) => Some(r),
            Sampler::Baseline { .. } => None,
        }
    }

    pub fn rates_mut(&mut self) -> Option<&mut SampleRates> {
        match self {
            Sampler::Adaptive(r) => Some(r),
            Sampler::Baseline { .. } => None,
        }
    }
}
