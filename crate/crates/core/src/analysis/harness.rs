use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::search::{run_search, SearchConfig, SubnetEvaluator};
use crate::supernet::{EmbeddingNet, TrainConfig};

use super::kendall_tau;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub k: usize,
    pub standalone_epochs: usize,
    pub seed: u64,
    pub eval_batches: usize,
    pub eval_batch_size: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { k: 20, standalone_epochs: 2, seed: 0, eval_batches: 20, eval_batch_size: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub sizes: Vec<usize>,
    pub inherited_auc: f64,
    pub inherited_logloss: f64,
    pub standalone_auc: f64,
    pub standalone_logloss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub tau_auc: f64,
    pub tau_logloss: f64,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    pub fn from_rows(rows: Vec<ConsistencyRow>) -> Result<Self> {
        let col = |f: fn(&ConsistencyRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let tau_auc = kendall_tau(&col(|r| r.inherited_auc), &col(|r| r.standalone_auc))?;
        let tau_logloss = kendall_tau(&col(|r| r.inherited_logloss), &col(|r| r.standalone_logloss))?;
        Ok(Self { k: rows.len(), tau_auc, tau_logloss, rows })
    }
}

/// `k` distinct assignments drawn uniformly from `T^M`, sorted. Capped at `T^M`.
pub fn sample_assignments(num_fields: usize, num_candidates: usize, k: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let space = (num_candidates as f64).powi(num_fields as i32);
    let k = if (k as f64) > space {
        log::warn!("requested {k} architectures but only {space} exist; using all");
        space as usize
    } else {
        k
    };
    let mut out = BTreeSet::new();
    if k as f64 == space {
        let mut cur = vec![0; num_fields];
        loop {
            out.insert(cur.clone());
            let mut i = 0;
            while i < num_fields && cur[i] + 1 == num_candidates {
                cur[i] = 0;
                i += 1;
            }
            if i == num_fields {
                break;
            }
            cur[i] += 1;
        }
    } else {
        while out.len() < k {
            out.insert((0..num_fields).map(|_| rng.below(num_candidates)).collect::<Vec<_>>());
        }
    }
    out.into_iter().collect()
}

/// Kendall tau between inherited-weight and stand-alone rankings of `k` random subnets.
pub fn consistency_eval(
    supernet: &EmbeddingNet,
    data: &DatasetSplit,
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    let mut reports = consistency_eval_many(&[supernet], data, cfg)?;
    Ok(reports.remove(0))
}

/// [`consistency_eval`] for several supernets built over the same candidates
/// and model config. The architectures, the validation subsample and the
/// stand-alone leg depend only on `cfg.seed`, so they are computed once.
pub fn consistency_eval_many(
    supernets: &[&EmbeddingNet],
    data: &DatasetSplit,
    cfg: &ConsistencyConfig,
) -> Result<Vec<ConsistencyReport>> {
    if cfg.k < 2 {
        return Err(Error::config("consistency needs at least two architectures"));
    }
    let first = *supernets.first().ok_or_else(|| Error::config("no supernet given"))?;
    if supernets.iter().any(|n| n.candidates() != first.candidates() || n.config != first.config) {
        return Err(Error::config("supernets differ in candidates or model config"));
    }
    let rng = RngStream::new(cfg.seed);
    let archs = sample_assignments(first.num_fields(), first.candidates().len(), cfg.k, &mut rng.fork(1));
    let mut inherited = Vec::with_capacity(supernets.len());
    let mut samples = Vec::new();
    for net in supernets {
        let mut evaluator = SubnetEvaluator::new(net, data, cfg.eval_batches, cfg.eval_batch_size, &rng.fork(2))?;
        inherited.push(evaluator.metrics_many(&archs)?);
        samples = evaluator.samples().to_vec();
    }
    let train_cfg = TrainConfig { epochs: cfg.standalone_epochs, ..TrainConfig::default() };
    let standalone: Vec<Result<(f64, f64)>> = archs
        .par_iter()
        .map(|a| {
            let net_rng = RngStream::new(cfg.seed);
            let mut net = EmbeddingNet::standalone(&data.schemas, first.candidates(), a, &first.config, &net_rng)?;
            train_standalone_quiet(&mut net, data, &train_cfg, &net_rng)?;
            SubnetEvaluator::from_samples(&net, samples.clone()).metrics(a)
        })
        .collect();
    let standalone: Vec<(f64, f64)> = standalone.into_iter().collect::<Result<_>>()?;
    let sizes = first.candidates().sizes();
    inherited
        .into_iter()
        .map(|inh| {
            let rows = archs
                .iter()
                .zip(inh)
                .zip(&standalone)
                .map(|((a, inh), sa)| ConsistencyRow {
                    sizes: a.iter().map(|&j| sizes[j]).collect(),
                    inherited_auc: inh.0,
                    inherited_logloss: inh.1,
                    standalone_auc: sa.0,
                    standalone_logloss: sa.1,
                })
                .collect();
            ConsistencyReport::from_rows(rows)
        })
        .collect()
}

fn train_standalone_quiet(net: &mut EmbeddingNet, data: &DatasetSplit, cfg: &TrainConfig, rng: &RngStream) -> Result<()> {
    // per-epoch validation metrics are not needed here
    let sel = net.fixed_selection()?;
    crate::supernet::train_loop(net, data, cfg, rng, None, |net, batch, adam| Ok(net.train_step(batch, &sel, adam)?.loss))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub fields: Vec<String>,
    pub sizes: Vec<usize>,
    /// Searched sizes per run.
    pub runs: Vec<Vec<usize>>,
    /// `histogram[i][j]`: runs assigning field `i` to candidate `j`.
    pub histogram: Vec<Vec<usize>>,
    pub modal_size: Vec<usize>,
    pub mode_frequency: Vec<f64>,
}

impl StabilityReport {
    /// Builds the report from per-run candidate indices. Mode ties go to the smaller size.
    pub fn from_runs(fields: Vec<String>, sizes: Vec<usize>, runs: &[Vec<usize>]) -> Result<Self> {
        let m = fields.len();
        let t = sizes.len();
        let mut histogram = vec![vec![0usize; t]; m];
        for r in runs {
            if r.len() != m {
                return Err(Error::config("run assignment length differs from field count"));
            }
            for (i, &j) in r.iter().enumerate() {
                *histogram[i]
                    .get_mut(j)
                    .ok_or_else(|| Error::config(format!("candidate index {j} out of range")))? += 1;
            }
        }
        let mut modal_size = Vec::with_capacity(m);
        let mut mode_frequency = Vec::with_capacity(m);
        for h in &histogram {
            let mut best = 0;
            for j in 1..t {
                if h[j] > h[best] {
                    best = j;
                }
            }
            modal_size.push(sizes[best]);
            mode_frequency.push(if runs.is_empty() { 0.0 } else { h[best] as f64 / runs.len() as f64 });
        }
        let runs = runs.iter().map(|r| r.iter().map(|&j| sizes[j]).collect()).collect();
        Ok(Self { fields, sizes, runs, histogram, modal_size, mode_frequency })
    }

    /// Field × size histogram as CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["field".to_string()];
        header.extend(self.sizes.iter().map(|d| format!("d{d}")));
        header.push("mode_frequency".into());
        w.write_record(&header)?;
        for (i, f) in self.fields.iter().enumerate() {
            let mut rec = vec![f.clone()];
            rec.extend(self.histogram[i].iter().map(|c| c.to_string()));
            rec.push(format!("{}", self.mode_frequency[i]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Repeats the search once per seed on the same frozen supernet.
pub fn stability_eval(
    supernet: &EmbeddingNet,
    data: &DatasetSplit,
    config: &SearchConfig,
    seeds: &[u64],
) -> Result<StabilityReport> {
    let runs: Vec<Result<Vec<usize>>> = seeds
        .par_iter()
        .map(|&s| Ok(run_search(supernet, data, config, &RngStream::new(s))?.assignment))
        .collect();
    let runs: Vec<Vec<usize>> = runs.into_iter().collect::<Result<_>>()?;
    StabilityReport::from_runs(
        data.schemas.iter().map(|s| s.name.clone()).collect(),
        supernet.candidates().sizes().to_vec(),
        &runs,
    )
}
