use serde::{Deserialize, Serialize};

use super::param::Parameter;

/// Numeric precision of trained values. In `F32` mode every updated value is
/// rounded to the nearest 32-bit float, so checkpoints store it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::F64 => x,
            Precision::F32 => x as f32 as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub precision: Precision,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, precision: Precision::F64 }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    /// Dense update. Parameters that received no gradient this step are skipped
    /// entirely, moments included.
    pub fn step(&self, p: &mut Parameter) {
        if !p.touched {
            return;
        }
        p.step += 1;
        let (bc1, bc2) = self.bias_corrections(p.step);
        let n = p.value.len();
        for k in 0..n {
            self.update_one(p, k, bc1, bc2);
        }
    }

    pub fn step_all<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            self.step(p);
        }
    }

    /// Row-sparse update: only the first `width` columns of each listed row move.
    pub fn step_rows(&self, p: &mut Parameter, rows: impl IntoIterator<Item = (usize, usize)>) {
        if !p.touched {
            return;
        }
        p.step += 1;
        let (bc1, bc2) = self.bias_corrections(p.step);
        let cols = p.value.cols();
        for (r, width) in rows {
            for c in 0..width.min(cols) {
                self.update_one(p, r * cols + c, bc1, bc2);
            }
        }
    }

    fn bias_corrections(&self, t: u64) -> (f64, f64) {
        let t = t.min(i32::MAX as u64) as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn update_one(&self, p: &mut Parameter, k: usize, bc1: f64, bc2: f64) {
        let g = p.grad.as_slice()[k];
        let m = &mut p.m.as_mut_slice()[k];
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        let mh = *m / bc1;
        let v = &mut p.v.as_mut_slice()[k];
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let vh = *v / bc2;
        let x = &mut p.value.as_mut_slice()[k];
        *x = self.precision.round(*x - self.lr * mh / (vh.sqrt() + self.eps));
    }
}
