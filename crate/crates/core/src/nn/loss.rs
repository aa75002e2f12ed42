use crate::error::{Error, Result};

use super::activation::sigmoid_scalar;

pub const PROB_CLAMP: f64 = 1e-7;
const LOGIT_CLAMP: f64 = 16.118_095_550_958_316;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::data(format!("label {y} is not in {{0, 1}}")))
    }
}

/// Mean binary cross-entropy of probabilities against labels.
pub fn log_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape("log_loss", (probs.len(), 1), (labels.len(), 1)));
    }
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("log loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        check_label(y)?;
        let p = clamp_prob(p);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Mean cross-entropy on pre-sigmoid logits. Returns the loss and the gradient
/// with respect to each logit, `(ŷ - y) / batch`.
pub fn cross_entropy_with_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::shape("cross_entropy", (logits.len(), 1), (labels.len(), 1)));
    }
    if logits.is_empty() {
        return Err(Error::config("cross entropy of an empty batch"));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        check_label(y)?;
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("logit {z}")));
        }
        // clamping ŷ to [ε, 1 − ε] is clamping z to ±ln((1 − ε)/ε); the loss is
        // then evaluated as softplus(z) − y·z, which avoids ln(1 − ŷ) cancelling
        let zc = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        loss += zc.max(0.0) + (-zc.abs()).exp().ln_1p() - y * zc;
        grad.push((sigmoid_scalar(z) - y) / n);
    }
    Ok((loss / n, grad))
}
