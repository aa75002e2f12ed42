use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Matrix;

use super::param::{Module, Parameter};

/// `y = x·W + b`, with `W` of shape `in x out` and `b` broadcast over rows.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: Parameter,
    pub bias: Parameter,
    cache: Option<Matrix>,
}

impl Affine {
    pub fn new(input: usize, output: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: Parameter::uniform_fan_in(input, output, input, rng),
            bias: Parameter::zeros(1, output),
            cache: None,
        }
    }

    pub fn from_parts(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape("affine bias", weight.shape(), bias.shape()));
        }
        Ok(Self { weight: Parameter::new(weight), bias: Parameter::new(bias), cache: None })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    /// Inference forward; no activation cache.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        affine_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.forward(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::config("affine backward without cached forward"))?;
        if dy.rows() != x.rows() || dy.cols() != self.output_dim() {
            return Err(Error::shape("affine backward", x.shape(), dy.shape()));
        }
        let dw = x.t_matmul(dy)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&dy.sum_rows())?;
        self.weight.mark_touched();
        self.bias.mark_touched();
        dy.matmul_t(&self.weight.value)
    }
}

impl Module for Affine {
    fn params(&self) -> Vec<(String, &Parameter)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn affine_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::shape("affine", x.shape(), w.shape()));
    }
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        for (v, &bias) in y.row_mut(r).iter_mut().zip(b.as_slice()) {
            *v += bias;
        }
    }
    Ok(y)
}
