use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Matrix;

use super::activation::{relu, relu_backward};
use super::affine::Affine;
use super::param::{Module, Parameter};

/// Affine layers with ReLU between them; the last layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Affine>,
    hidden_outputs: Vec<Matrix>,
}

impl Mlp {
    pub fn new(input: usize, widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::config("MLP needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            if w == 0 {
                return Err(Error::config("MLP layer width must be positive"));
            }
            layers.push(Affine::new(prev, w, rng));
            prev = w;
        }
        Ok(Self { layers, hidden_outputs: Vec::new() })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Affine::output_dim).unwrap_or(0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = relu(&h)?;
            }
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.hidden_outputs.clear();
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            h = self.layers[i].forward_train(&h)?;
            if i < last {
                h = relu(&h)?;
                self.hidden_outputs.push(h.clone());
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let out = self
                    .hidden_outputs
                    .pop()
                    .ok_or_else(|| Error::config("MLP backward without cached forward"))?;
                g = relu_backward(&out, &g);
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }

    /// Multiply-adds per sample.
    pub fn flops(&self) -> u64 {
        self.layers.iter().map(|l| (l.input_dim() * l.output_dim()) as u64).sum()
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<(String, &Parameter)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, p)| (format!("layer{i}.{n}"), p)))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
