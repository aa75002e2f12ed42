use crate::rng::RngStream;
use crate::tensor::Matrix;

/// A trainable tensor with its gradient and Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
    pub(crate) m: Matrix,
    pub(crate) v: Matrix,
    pub(crate) step: u64,
    /// Set when a backward pass wrote into `grad` since the last `zero_grad`.
    pub(crate) touched: bool,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step: 0,
            touched: false,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_fan_in(rows: usize, cols: usize, fan_in: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self::new(Matrix::from_vec(rows, cols, data).expect("shape matches by construction"))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        if self.touched {
            self.grad.fill(0.0);
            self.touched = false;
        }
    }

    pub fn mark_touched(&mut self) {
        self.touched = true;
    }

    pub fn is_touched(&self) -> bool {
        self.touched
    }

    pub fn num_values(&self) -> usize {
        self.value.len()
    }

    /// Drops optimizer state, keeping the value.
    pub fn reset_state(&mut self) {
        let (r, c) = self.shape();
        self.grad = Matrix::zeros(r, c);
        self.m = Matrix::zeros(r, c);
        self.v = Matrix::zeros(r, c);
        self.step = 0;
        self.touched = false;
    }
}

/// Anything that owns parameters. Order of `params` is stable and defines
/// checkpoint record order.
pub trait Module {
    fn params(&self) -> Vec<(String, &Parameter)>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.num_values()).sum()
    }
}
