use crate::error::{Error, Result};
use crate::nn::{relu, Adam, Affine, BatchNorm, Module, Parameter};
use crate::nn::activation::relu_backward;
use crate::rng::RngStream;
use crate::tensor::Matrix;

use super::{bank_key, CandidateSet};

/// Maps width `d_j` to the unified width: `depth` blocks of affine + batch
/// norm, with ReLU between blocks.
#[derive(Debug, Clone)]
pub struct Transform {
    pub input_dim: usize,
    pub blocks: Vec<(Affine, BatchNorm)>,
    relu_outputs: Vec<Matrix>,
}

impl Transform {
    pub fn new(input_dim: usize, unified_dim: usize, depth: usize, rng: &mut RngStream) -> Self {
        let blocks = (0..depth.max(1))
            .map(|k| {
                let inp = if k == 0 { input_dim } else { unified_dim };
                (Affine::new(inp, unified_dim, rng), BatchNorm::new(unified_dim))
            })
            .collect();
        Self { input_dim, blocks, relu_outputs: Vec::new() }
    }

    pub fn output_dim(&self) -> usize {
        self.blocks[0].0.output_dim()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::config(format!(
                "transform for size {} received width {}",
                self.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Inference: batch norm uses running statistics.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (k, (aff, bn)) in self.blocks.iter().enumerate() {
            if k > 0 {
                h = relu(&h)?;
            }
            h = bn.forward(&aff.forward(&h)?)?;
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.relu_outputs.clear();
        let mut h = x.clone();
        for k in 0..self.blocks.len() {
            if k > 0 {
                h = relu(&h)?;
                self.relu_outputs.push(h.clone());
            }
            let (aff, bn) = &mut self.blocks[k];
            h = bn.forward_train(&aff.forward_train(&h)?)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let mut g = dy.clone();
        for k in (0..self.blocks.len()).rev() {
            let (aff, bn) = &mut self.blocks[k];
            g = aff.backward(&bn.backward(&g)?)?;
            if k > 0 {
                let out = self
                    .relu_outputs
                    .pop()
                    .ok_or_else(|| Error::config("transform backward without cached forward"))?;
                g = relu_backward(&out, &g);
            }
        }
        Ok(g)
    }

    pub fn flops(&self) -> u64 {
        self.blocks.iter().map(|(a, _)| (a.input_dim() * a.output_dim()) as u64).sum()
    }
}

impl Module for Transform {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for (k, (a, b)) in self.blocks.iter().enumerate() {
            out.extend(a.params().into_iter().map(|(n, p)| (format!("block{k}.affine.{n}"), p)));
            out.extend(b.params().into_iter().map(|(n, p)| (format!("block{k}.bn.{n}"), p)));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for (a, b) in self.blocks.iter_mut() {
            out.extend(a.params_mut());
            out.extend(b.params_mut());
        }
        out
    }
}

/// One transform per candidate size, shared by every field that selects that size.
#[derive(Debug, Clone)]
pub struct TransformBank {
    pub unified_dim: usize,
    transforms: Vec<Option<Transform>>,
}

impl TransformBank {
    pub fn new(candidates: &CandidateSet, unified_dim: usize, depth: usize, rng: &RngStream) -> Self {
        Self::with_used(candidates, &vec![true; candidates.len()], unified_dim, depth, rng)
    }

    /// Builds transforms only for the candidates flagged in `used`.
    pub fn with_used(
        candidates: &CandidateSet,
        used: &[bool],
        unified_dim: usize,
        depth: usize,
        rng: &RngStream,
    ) -> Self {
        let transforms = candidates
            .sizes()
            .iter()
            .zip(used)
            .map(|(&d, &u)| u.then(|| Transform::new(d, unified_dim, depth, &mut rng.fork(bank_key(d)))))
            .collect();
        Self { unified_dim, transforms }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn get(&self, candidate: usize) -> Result<&Transform> {
        self.transforms
            .get(candidate)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::config(format!("no transform for candidate {candidate}")))
    }

    pub fn get_mut(&mut self, candidate: usize) -> Result<&mut Transform> {
        self.transforms
            .get_mut(candidate)
            .and_then(Option::as_mut)
            .ok_or_else(|| Error::config(format!("no transform for candidate {candidate}")))
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, &Transform)> {
        self.transforms.iter().enumerate().filter_map(|(j, t)| t.as_ref().map(|t| (j, t)))
    }

    pub fn step(&mut self, adam: &Adam) {
        for t in self.transforms.iter_mut().flatten() {
            adam.step_all(t.params_mut());
        }
    }

    pub fn zero_grad(&mut self) {
        for t in self.transforms.iter_mut().flatten() {
            t.zero_grad();
        }
    }
}

impl Module for TransformBank {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for t in self.transforms.iter().flatten() {
            let d = t.input_dim;
            out.extend(t.params().into_iter().map(|(n, p)| (format!("d{d}.{n}"), p)));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.transforms.iter_mut().flatten().flat_map(|t| t.params_mut()).collect()
    }
}
