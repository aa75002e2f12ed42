//! Metrics and the consistency / stability harnesses.

mod harness;
mod metrics;

pub use harness::{
    consistency_eval, consistency_eval_many, sample_assignments, stability_eval, ConsistencyConfig, ConsistencyReport, ConsistencyRow,
    StabilityReport,
};
pub use metrics::{auc, kendall_tau};
