//! Policy-gradient search over per-field embedding sizes on a frozen supernet.

mod evaluator;
mod policy;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::activation::softmax_rows_backward;
use crate::nn::{Adam, Module, Precision};
use crate::retrain::extract_assignment;
use crate::rng::RngStream;
use crate::supernet::EmbeddingNet;
use crate::tensor::Matrix;

pub use evaluator::SubnetEvaluator;
pub use policy::{PolicyConfig, PolicyNet};

pub const POLICY_KEY: u64 = 4;
pub const EVAL_SUBSAMPLE_KEY: u64 = 5;
pub const ACTION_KEY: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Effect-first: λ_r = 0.0025, λ_c = 0.08.
    Effect,
    /// Resource-first: λ_r = 0.005, λ_c = 0.04.
    Resource,
}

impl Mode {
    pub fn penalty(self) -> PenaltyConfig {
        match self {
            Mode::Effect => PenaltyConfig { lambda_r: 0.0025, lambda_c: 0.08 },
            Mode::Resource => PenaltyConfig { lambda_r: 0.005, lambda_c: 0.04 },
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "effect" => Ok(Mode::Effect),
            "resource" => Ok(Mode::Resource),
            other => Err(Error::config(format!("unknown search mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda_r: f64,
    pub lambda_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Penalty {
    pub total: f64,
    pub resource: f64,
    pub competition: f64,
}

/// `λ_r/M Σ_i Σ_j d_j P_ij − λ_c/M Σ_i ‖P_i − 1/T‖₂`.
pub fn compute_penalty(p: &Matrix, sizes: &[usize], cfg: &PenaltyConfig) -> Penalty {
    let (m, t) = p.shape();
    let mf = m.max(1) as f64;
    let u = 1.0 / t as f64;
    let mut resource = 0.0;
    let mut spread = 0.0;
    for i in 0..m {
        let row = p.row(i);
        resource += row.iter().zip(sizes).map(|(pi, &d)| pi * d as f64).sum::<f64>();
        spread += row.iter().map(|pi| (pi - u) * (pi - u)).sum::<f64>().sqrt();
    }
    let resource = cfg.lambda_r * resource / mf;
    let competition = -cfg.lambda_c * spread / mf;
    Penalty { total: resource + competition, resource, competition }
}

/// `∂penalty/∂P`. Rows at exactly uniform take the zero subgradient.
pub fn penalty_grad(p: &Matrix, sizes: &[usize], cfg: &PenaltyConfig) -> Matrix {
    let (m, t) = p.shape();
    let mf = m.max(1) as f64;
    let u = 1.0 / t as f64;
    let mut g = Matrix::zeros(m, t);
    for i in 0..m {
        let row = p.row(i);
        let norm = row.iter().map(|pi| (pi - u) * (pi - u)).sum::<f64>().sqrt();
        for (j, o) in g.row_mut(i).iter_mut().enumerate() {
            *o = cfg.lambda_r * sizes[j] as f64 / mf;
            if norm > 0.0 {
                *o -= cfg.lambda_c * (row[j] - u) / norm / mf;
            }
        }
    }
    g
}

/// Mean row entropy in nats.
pub fn mean_entropy(p: &Matrix) -> f64 {
    let m = p.rows().max(1) as f64;
    (0..p.rows())
        .map(|i| -p.row(i).iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
        .sum::<f64>()
        / m
}

/// Σ_i n_i Σ_j d_j P_ij.
pub fn expected_param_count(p: &Matrix, sizes: &[usize], cardinalities: &[usize]) -> f64 {
    (0..p.rows())
        .map(|i| cardinalities[i] as f64 * p.row(i).iter().zip(sizes).map(|(x, &d)| x * d as f64).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lambda_r: f64,
    pub lambda_c: f64,
    #[serde(default = "one")]
    pub lambda_rew: f64,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_steps")]
    pub max_steps: usize,
    #[serde(default = "d_entropy")]
    pub entropy_threshold: f64,
    #[serde(default = "yes")]
    pub use_baseline: bool,
    #[serde(default = "d_decay")]
    pub baseline_decay: f64,
    #[serde(default = "d_batches")]
    pub eval_batches: usize,
    #[serde(default = "d_batch")]
    pub eval_batch_size: usize,
    /// Assignments drawn and evaluated per policy update.
    #[serde(default = "d_samples")]
    pub samples_per_step: usize,
    /// Every field starts at the candidate nearest this size.
    #[serde(default = "d_initial")]
    pub initial_size: usize,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub precision: Precision,
}

fn one() -> f64 {
    1.0
}
fn d_lr() -> f64 {
    0.0005
}
fn d_steps() -> usize {
    500
}
fn d_entropy() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}
fn d_decay() -> f64 {
    0.9
}
fn d_batches() -> usize {
    20
}
fn d_batch() -> usize {
    512
}
fn d_samples() -> usize {
    1
}
fn d_initial() -> usize {
    16
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::preset(Mode::Effect)
    }
}

impl SearchConfig {
    pub fn preset(mode: Mode) -> Self {
        let p = mode.penalty();
        Self {
            lambda_r: p.lambda_r,
            lambda_c: p.lambda_c,
            lambda_rew: one(),
            lr: d_lr(),
            max_steps: d_steps(),
            entropy_threshold: d_entropy(),
            use_baseline: true,
            baseline_decay: d_decay(),
            eval_batches: d_batches(),
            eval_batch_size: d_batch(),
            samples_per_step: d_samples(),
            initial_size: d_initial(),
            policy: PolicyConfig::default(),
            precision: Precision::F64,
        }
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig { lambda_r: self.lambda_r, lambda_c: self.lambda_c }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_c >= 0.0) {
            return Err(Error::config("λ_r and λ_c must be non-negative"));
        }
        if !(self.lambda_rew > 0.0 && self.lambda_rew.is_finite()) {
            return Err(Error::config("λ_rew must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("search learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::config("baseline decay must lie in [0, 1)"));
        }
        if self.eval_batches == 0 || self.eval_batch_size == 0 || self.samples_per_step == 0 {
            return Err(Error::config("evaluation batches and samples per step must be positive"));
        }
        self.policy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub reward: f64,
    pub penalty: f64,
    pub resource: f64,
    pub competition: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub p: Matrix,
    /// Candidate index per field.
    pub assignment: Vec<usize>,
    /// Embedding size per field.
    pub sizes: Vec<usize>,
    pub history: Vec<StepRecord>,
    pub converged: bool,
}

fn composite_loss(p: &Matrix, actions: &[Vec<usize>], advantages: &[f64], sizes: &[usize], pen: &PenaltyConfig) -> (f64, Penalty) {
    let n = actions.len() as f64;
    let mut pg = 0.0;
    for (a, &adv) in actions.iter().zip(advantages) {
        let logp: f64 = a.iter().enumerate().map(|(i, &j)| p.get(i, j).ln()).sum();
        pg -= logp * adv / n;
    }
    let penalty = compute_penalty(p, sizes, pen);
    (pg + penalty.total, penalty)
}

/// `−(1/n) Σ_k adv_k Σ_i log P[i, a_ki] + penalty(P)`, evaluated without caching.
pub fn reinforce_loss(
    policy: &PolicyNet,
    state: &[usize],
    actions: &[Vec<usize>],
    advantages: &[f64],
    sizes: &[usize],
    pen: &PenaltyConfig,
) -> Result<f64> {
    let p = policy.forward(state)?;
    Ok(composite_loss(&p, actions, advantages, sizes, pen).0)
}

/// Accumulates the gradient of [`reinforce_loss`] into the policy.
pub fn reinforce_grad(
    policy: &mut PolicyNet,
    state: &[usize],
    actions: &[Vec<usize>],
    advantages: &[f64],
    sizes: &[usize],
    pen: &PenaltyConfig,
) -> Result<(f64, Penalty, Matrix)> {
    if actions.len() != advantages.len() || actions.is_empty() {
        return Err(Error::config("need one advantage per sampled action"));
    }
    let p = policy.forward_train(state)?;
    let (loss, penalty) = composite_loss(&p, actions, advantages, sizes, pen);
    let mut dz = softmax_rows_backward(&p, &penalty_grad(&p, sizes, pen));
    let n = actions.len() as f64;
    for (a, &adv) in actions.iter().zip(advantages) {
        for (i, &j) in a.iter().enumerate() {
            for (c, o) in dz.row_mut(i).iter_mut().enumerate() {
                let ind = if c == j { 1.0 } else { 0.0 };
                *o -= adv / n * (ind - p.get(i, c));
            }
        }
    }
    policy.backward_logits(&dz)?;
    Ok((loss, penalty, p))
}

/// One policy update.
pub fn reinforce_step(
    policy: &mut PolicyNet,
    adam: &Adam,
    state: &[usize],
    actions: &[Vec<usize>],
    advantages: &[f64],
    sizes: &[usize],
    pen: &PenaltyConfig,
) -> Result<(f64, Penalty, Matrix)> {
    let out = reinforce_grad(policy, state, actions, advantages, sizes, pen);
    if out.is_ok() {
        adam.step_all(policy.params_mut());
    }
    policy.zero_grad();
    out
}

/// The search loop against an arbitrary reward function.
pub fn run_search_with(
    policy: &mut PolicyNet,
    sizes: &[usize],
    config: &SearchConfig,
    rng: &RngStream,
    mut reward: impl FnMut(&[Vec<usize>]) -> Result<Vec<f64>>,
) -> Result<SearchOutcome> {
    config.validate()?;
    if sizes.len() != policy.num_candidates() {
        return Err(Error::config("candidate count differs between policy and size list"));
    }
    let m = policy.num_fields();
    let pen = config.penalty();
    let adam = Adam::new(config.lr).with_precision(config.precision);
    let nearest = crate::supernet::CandidateSet::new(sizes.to_vec())?.nearest(config.initial_size);
    let mut state = vec![nearest; m];
    let mut action_rng = rng.fork(ACTION_KEY);
    let mut baseline: Option<f64> = None;
    let mut history = Vec::new();
    let mut converged = false;

    for step in 0..config.max_steps {
        let p = policy.forward(&state)?;
        let entropy = mean_entropy(&p);
        if entropy < config.entropy_threshold {
            converged = true;
            break;
        }
        let actions: Vec<Vec<usize>> = (0..config.samples_per_step)
            .map(|_| (0..m).map(|i| action_rng.categorical(p.row(i))).collect())
            .collect();
        let rewards = reward(&actions)?;
        if let Some(k) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!(
                "reward {} at search step {step} for assignment {:?}",
                rewards[k], actions[k]
            )));
        }
        let scaled: Vec<f64> = rewards.iter().map(|r| config.lambda_rew * r).collect();
        let mean_reward = scaled.iter().sum::<f64>() / scaled.len() as f64;
        let b = if config.use_baseline { *baseline.get_or_insert(mean_reward) } else { 0.0 };
        let advantages: Vec<f64> = scaled.iter().map(|r| r - b).collect();
        let (_, penalty, _) = reinforce_step(policy, &adam, &state, &actions, &advantages, sizes, &pen)?;
        if config.use_baseline {
            baseline = Some(config.baseline_decay * b + (1.0 - config.baseline_decay) * mean_reward);
        }
        history.push(StepRecord {
            step,
            reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            penalty: penalty.total,
            resource: penalty.resource,
            competition: penalty.competition,
            entropy,
        });
        state = actions.into_iter().next_back().expect("samples_per_step >= 1");
    }
    let p = policy.forward(&state)?;
    if !converged {
        converged = mean_entropy(&p) < config.entropy_threshold;
    }
    let assignment = extract_assignment(&p);
    let out_sizes = assignment.iter().map(|&j| sizes[j]).collect();
    Ok(SearchOutcome { p, assignment, sizes: out_sizes, history, converged })
}

/// Full search on a frozen supernet. The supernet is only read.
pub fn run_search(net: &EmbeddingNet, data: &DatasetSplit, config: &SearchConfig, rng: &RngStream) -> Result<SearchOutcome> {
    config.validate()?;
    let sizes = net.candidates().sizes().to_vec();
    let mut policy = PolicyNet::new(net.num_fields(), sizes.len(), config.policy.clone(), &mut rng.fork(POLICY_KEY))?;
    // every field starts from uniform probabilities
    policy.zero_head();
    let mut evaluator = SubnetEvaluator::new(net, data, config.eval_batches, config.eval_batch_size, &rng.fork(EVAL_SUBSAMPLE_KEY))?;
    run_search_with(&mut policy, &sizes, config, rng, |actions| evaluator.auc_many(actions))
}

pub fn write_history_csv(history: &[StepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `P` as CSV: a header of candidate sizes, then one row per field.
pub fn write_matrix_csv(p: &Matrix, sizes: &[usize], field_names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("field");
    for d in sizes {
        text.push_str(&format!(",d{d}"));
    }
    text.push('\n');
    for (i, name) in field_names.iter().enumerate() {
        text.push_str(name);
        for v in p.row(i) {
            text.push_str(&format!(",{v:?}"));
        }
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
