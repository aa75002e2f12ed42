use serde::{Deserialize, Serialize};

use crate::analysis::auc;
use crate::data::{DatasetSplit, Part, Sample};
use crate::error::{Error, Result};
use crate::nn::{log_loss, Adam, Precision};
use crate::rng::RngStream;
use crate::sampling::{Sampler, SubnetSelection};

use super::{EmbeddingNet, BATCH_KEY, SAMPLER_KEY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Cap on batches per epoch (the rest of the shuffled epoch is skipped).
    #[serde(default)]
    pub max_batches: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1, precision: Precision::F64, max_batches: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub auc: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean batch loss of every step, in order.
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
}

/// Shuffled index batches for one epoch; a trailing batch of fewer than two
/// rows is dropped (batch norm needs two).
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size.max(2)).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// Validation (or test) AUC and log loss of one selection.
pub fn evaluate(net: &EmbeddingNet, samples: &[Sample], sel: &SubnetSelection) -> Result<(f64, f64)> {
    let probs = net.predict_all(samples, sel)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    Ok((auc(&probs, &labels)?, log_loss(&probs, &labels)?))
}

/// Generic epoch loop. `on_batch` performs one update and returns the batch loss.
/// When `eval` is given, validation metrics are recorded after every epoch.
pub fn train_loop(
    net: &mut EmbeddingNet,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    rng: &RngStream,
    eval: Option<&SubnetSelection>,
    mut on_batch: impl FnMut(&mut EmbeddingNet, &[&Sample], &Adam) -> Result<f64>,
) -> Result<TrainLog> {
    let train = data.part(Part::Train);
    if train.len() < 2 && cfg.epochs > 0 {
        return Err(Error::config("training split needs at least two samples"));
    }
    let adam = Adam::new(net.config.lr).with_precision(cfg.precision);
    let mut batch_rng = rng.fork(BATCH_KEY);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut batches = epoch_batches(train.len(), net.config.batch_size, &mut batch_rng);
        if let Some(cap) = cfg.max_batches {
            batches.truncate(cap);
        }
        for b in &batches {
            let refs: Vec<&Sample> = b.iter().map(|&k| &train[k]).collect();
            let loss = on_batch(net, &refs, &adam)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            log.losses.push(loss);
        }
        if let Some(sel) = eval {
            let (a, l) = evaluate(net, data.part(Part::Validation), sel)?;
            log::debug!("epoch {epoch}: validation auc {a:.4} logloss {l:.4}");
            log.epochs.push(EpochMetrics { epoch, split: "validation".into(), auc: a, logloss: l });
        }
    }
    Ok(log)
}

/// Supernet training: per batch draw a subnet, take one gradient step on it,
/// then adapt the sampler from the embedding variances and field statistics.
pub fn train_supernet(
    net: &mut EmbeddingNet,
    data: &DatasetSplit,
    sampler: &mut Sampler,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainLog> {
    if net.store.scheme().is_none() {
        return Err(Error::config("train_supernet needs a multi-candidate store"));
    }
    let mut sample_rng = rng.fork(SAMPLER_KEY);
    train_loop(net, data, cfg, rng, None, |net, batch, adam| {
        let sel = sampler.draw(&mut sample_rng);
        let stats = net.train_step(batch, &sel, adam)?;
        if let Some(rates) = sampler.rates_mut() {
            rates.update_pe(&net.store.variances())?;
            rates.update_pf(&sel.included, &stats.grad_mean, &stats.value_mean)?;
        }
        Ok(stats.loss)
    })
}

/// Trains a fixed-assignment model on every field, recording validation metrics per epoch.
pub fn train_standalone(net: &mut EmbeddingNet, data: &DatasetSplit, cfg: &TrainConfig, rng: &RngStream) -> Result<TrainLog> {
    let sel = net.fixed_selection()?;
    let eval_sel = sel.clone();
    train_loop(net, data, cfg, rng, Some(&eval_sel), |net, batch, adam| Ok(net.train_step(batch, &sel, adam)?.loss))
}
