use std::collections::BTreeMap;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{Adam, Parameter};
use crate::rng::RngStream;
use crate::tensor::Matrix;

/// Embedding table `V_i ∈ R^{n_i × d}` with row-sparse gradients.
///
/// Lookups may read a column prefix (`width < d`), which is how the shared
/// supernet scheme serves smaller candidates from the max-table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub field: usize,
    pub weight: Parameter,
    /// Row → widest column prefix that received gradient since the last step.
    touched: BTreeMap<u32, usize>,
}

/// Bound of the uniform embedding initialization. It is the same for every
/// width and cardinality, so table variance and value magnitude start equal
/// across candidates and fields and grow only with training.
pub const EMBEDDING_INIT: f64 = 0.01;

impl EmbeddingTable {
    pub fn new(field: usize, rows: usize, dim: usize, rng: &mut RngStream) -> Self {
        let data = (0..rows * dim).map(|_| rng.uniform_range(-EMBEDDING_INIT, EMBEDDING_INIT)).collect();
        Self::from_matrix(field, Matrix::from_vec(rows, dim, data).expect("shape matches by construction"))
    }

    pub fn from_matrix(field: usize, value: Matrix) -> Self {
        Self::from_parameter(field, Parameter::new(value))
    }

    fn from_parameter(field: usize, weight: Parameter) -> Self {
        Self { field, weight, touched: BTreeMap::new() }
    }

    pub fn rows(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.value.cols()
    }

    /// One-hot: the indexed row. Multi-hot: mean of the indexed rows.
    pub fn lookup(&self, indices: &[u32], width: usize, out: &mut [f64]) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::data(format!("empty index list for field {}", self.field)));
        }
        if width > self.dim() {
            return Err(Error::config(format!("lookup width {width} exceeds table width {}", self.dim())));
        }
        out[..width].iter_mut().for_each(|v| *v = 0.0);
        let scale = 1.0 / indices.len() as f64;
        for &idx in indices {
            let idx = idx as usize;
            if idx >= self.rows() {
                return Err(Error::data(format!(
                    "index {idx} out of range for field {} ({} rows)",
                    self.field,
                    self.rows()
                )));
            }
            for (o, &v) in out[..width].iter_mut().zip(self.weight.value.row(idx)) {
                *o += v * scale;
            }
        }
        Ok(())
    }

    pub fn lookup_batch(&self, batch: &[&Sample], width: usize) -> Result<Matrix> {
        let mut out = Matrix::zeros(batch.len(), width);
        for (r, s) in batch.iter().enumerate() {
            self.lookup(&s.fields[self.field], width, out.row_mut(r))?;
        }
        Ok(out)
    }

    /// Scatters `∂L/∂e` (rows of width ≤ d) back onto the indexed rows.
    pub fn accumulate_grad(&mut self, batch: &[&Sample], grad: &Matrix) -> Result<()> {
        let width = grad.cols();
        if width > self.dim() || grad.rows() != batch.len() {
            return Err(Error::shape("embedding backward", (batch.len(), self.dim()), grad.shape()));
        }
        let cols = self.dim();
        for (r, s) in batch.iter().enumerate() {
            let indices = &s.fields[self.field];
            let scale = 1.0 / indices.len() as f64;
            for &idx in indices {
                let base = idx as usize * cols;
                let g = &mut self.weight.grad.as_mut_slice()[base..base + width];
                for (gv, &d) in g.iter_mut().zip(grad.row(r)) {
                    *gv += d * scale;
                }
                let w = self.touched.entry(idx).or_insert(0);
                *w = (*w).max(width);
            }
        }
        self.weight.mark_touched();
        Ok(())
    }

    /// Rows (with touched widths) that hold gradient right now.
    pub fn touched_rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.touched.iter().map(|(&r, &w)| (r as usize, w))
    }

    /// Adam on the touched rows' touched columns only.
    pub fn step(&mut self, adam: &Adam) {
        let rows: Vec<(usize, usize)> = self.touched_rows().collect();
        adam.step_rows(&mut self.weight, rows);
    }

    pub fn zero_grad(&mut self) {
        let cols = self.dim();
        for (&r, &w) in &self.touched {
            let base = r as usize * cols;
            self.weight.grad.as_mut_slice()[base..base + w].iter_mut().for_each(|g| *g = 0.0);
        }
        self.touched.clear();
        self.weight.touched = false;
    }

    /// Population variance of the first `width` columns.
    pub fn variance(&self, width: usize) -> f64 {
        let n = (self.rows() * width) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut sq = 0.0;
        for r in 0..self.rows() {
            for &v in &self.weight.value.row(r)[..width] {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        (sq / n - mean * mean).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(idx: Vec<u32>) -> Sample {
        Sample { fields: vec![idx], label: 0.0, timestamp: None }
    }

    #[test]
    fn one_hot_and_mean_pooling() {
        let t = EmbeddingTable::from_matrix(0, Matrix::identity(2));
        let mut out = [0.0; 2];
        t.lookup(&[1], 2, &mut out).unwrap();
        assert_eq!(out, [0.0, 1.0]);
        t.lookup(&[0, 1], 2, &mut out).unwrap();
        assert_eq!(out, [0.5, 0.5]);
        assert_eq!(t.lookup(&[], 2, &mut out).unwrap_err().kind(), "data");
    }

    #[test]
    fn gradient_only_touches_indexed_rows() {
        let mut t = EmbeddingTable::from_matrix(0, Matrix::zeros(4, 3));
        let s = sample(vec![1, 3]);
        t.accumulate_grad(&[&s], &Matrix::from_rows(&[vec![2.0, 4.0]])).unwrap();
        for r in 0..4 {
            let row = t.weight.grad.row(r);
            if r == 1 || r == 3 {
                assert_eq!(row, &[1.0, 2.0, 0.0]);
            } else {
                assert!(row.iter().all(|&g| g == 0.0));
            }
        }
        assert_eq!(t.touched_rows().collect::<Vec<_>>(), vec![(1, 2), (3, 2)]);
        t.zero_grad();
        assert!(t.weight.grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn variance_of_prefix() {
        let t = EmbeddingTable::from_matrix(0, Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, -10.0]]));
        assert!((t.variance(1) - 1.0).abs() < 1e-12);
        // values {1, 10, 3, -10}: mean 1, mean square 52.5
        assert!((t.variance(2) - 51.5).abs() < 1e-12);
    }
}
