use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::param::{Module, Parameter};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    Train,
    Inference,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

/// Per-column batch normalization with learned scale/shift and running statistics.
///
/// Running statistics are stored as never-trained parameters so that they travel
/// with checkpoints.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Parameter,
    pub running_var: Parameter,
    pub momentum: f64,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Parameter::new(Matrix::filled(1, width, 1.0)),
            beta: Parameter::zeros(1, width),
            running_mean: Parameter::zeros(1, width),
            running_var: Parameter::new(Matrix::filled(1, width, 1.0)),
            momentum: 0.9,
            cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.value.cols()
    }

    /// Inference-mode forward using running statistics.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut y = x.clone();
        let mean = self.running_mean.value.as_slice();
        let var = self.running_var.value.as_slice();
        let g = self.gamma.value.as_slice();
        let b = self.beta.value.as_slice();
        for r in 0..y.rows() {
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = g[c] * (*v - mean[c]) / (var[c] + NORM_EPS).sqrt() + b[c];
            }
        }
        Ok(y)
    }

    /// Train-mode forward: batch statistics, running-statistic update, cache for backward.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let (n, w) = x.shape();
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch normalization needs at least 2 rows in train mode, got {n}"
            )));
        }
        let mut mean = vec![0.0; w];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; w];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();

        let mut xhat = Matrix::zeros(n, w);
        let mut y = Matrix::zeros(n, w);
        let g = self.gamma.value.as_slice();
        let b = self.beta.value.as_slice();
        for r in 0..n {
            for c in 0..w {
                let h = (x.get(r, c) - mean[c]) * inv_std[c];
                xhat.set(r, c, h);
                y.set(r, c, g[c] * h + b[c]);
            }
        }

        let unbias = n as f64 / (n as f64 - 1.0);
        let mom = self.momentum;
        for c in 0..w {
            let rm = &mut self.running_mean.value.as_mut_slice()[c];
            *rm = mom * *rm + (1.0 - mom) * mean[c];
            let rv = &mut self.running_var.value.as_mut_slice()[c];
            *rv = mom * *rv + (1.0 - mom) * var[c] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let BnCache { xhat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::config("batchnorm backward without cached forward"))?;
        let (n, w) = xhat.shape();
        if dy.shape() != (n, w) {
            return Err(Error::shape("batchnorm backward", (n, w), dy.shape()));
        }
        let mut sum_dy = vec![0.0; w];
        let mut sum_dy_xhat = vec![0.0; w];
        for r in 0..n {
            for c in 0..w {
                sum_dy[c] += dy.get(r, c);
                sum_dy_xhat[c] += dy.get(r, c) * xhat.get(r, c);
            }
        }
        for c in 0..w {
            self.gamma.grad.as_mut_slice()[c] += sum_dy_xhat[c];
            self.beta.grad.as_mut_slice()[c] += sum_dy[c];
        }
        self.gamma.mark_touched();
        self.beta.mark_touched();

        let g = self.gamma.value.as_slice();
        let nf = n as f64;
        let mut dx = Matrix::zeros(n, w);
        for r in 0..n {
            for c in 0..w {
                let v = g[c] * inv_std[c] / nf
                    * (nf * dy.get(r, c) - sum_dy[c] - xhat.get(r, c) * sum_dy_xhat[c]);
                dx.set(r, c, v);
            }
        }
        Ok(dx)
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.width() {
            return Err(Error::shape("batchnorm", x.shape(), (1, self.width())));
        }
        x.check_finite("batchnorm input")
    }
}

impl Module for BatchNorm {
    fn params(&self) -> Vec<(String, &Parameter)> {
        vec![
            ("gamma".into(), &self.gamma),
            ("beta".into(), &self.beta),
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

/// Per-row layer normalization with learned scale/shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    cache: Option<LnCache>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Parameter::new(Matrix::filled(1, width, 1.0)),
            beta: Parameter::zeros(1, width),
            cache: None,
        }
    }

    fn normalize(&self, x: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let w = self.gamma.value.cols();
        if x.cols() != w {
            return Err(Error::shape("layernorm", x.shape(), (1, w)));
        }
        let (n, _) = x.shape();
        let mut xhat = Matrix::zeros(n, w);
        let mut y = Matrix::zeros(n, w);
        let mut inv_stds = Vec::with_capacity(n);
        let g = self.gamma.value.as_slice();
        let b = self.beta.value.as_slice();
        for r in 0..n {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_stds.push(inv);
            for c in 0..w {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                y.set(r, c, g[c] * h + b[c]);
            }
        }
        Ok((y, xhat, inv_stds))
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.normalize(x)?.0)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let (y, xhat, inv_std) = self.normalize(x)?;
        self.cache = Some(LnCache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let LnCache { xhat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::config("layernorm backward without cached forward"))?;
        let (n, w) = xhat.shape();
        let g = self.gamma.value.clone();
        let mut dx = Matrix::zeros(n, w);
        for r in 0..n {
            let mut sum_d = 0.0;
            let mut sum_dh = 0.0;
            for c in 0..w {
                let d = dy.get(r, c);
                self.gamma.grad.as_mut_slice()[c] += d * xhat.get(r, c);
                self.beta.grad.as_mut_slice()[c] += d;
                let dh = d * g.get(0, c);
                sum_d += dh;
                sum_dh += dh * xhat.get(r, c);
            }
            let wf = w as f64;
            for c in 0..w {
                let dh = dy.get(r, c) * g.get(0, c);
                dx.set(r, c, inv_std[r] / wf * (wf * dh - sum_d - xhat.get(r, c) * sum_dh));
            }
        }
        self.gamma.mark_touched();
        self.beta.mark_touched();
        Ok(dx)
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<(String, &Parameter)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
