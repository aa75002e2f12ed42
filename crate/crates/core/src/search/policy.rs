use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::softmax_rows_backward;
use crate::nn::{relu, softmax_rows, Affine, LayerNorm, Module, Parameter};
use crate::nn::activation::relu_backward;
use crate::rng::RngStream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { d_model: 32, heads: 4, ffn: 64 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::config("policy widths must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config("d_model must be divisible by the head count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Cache {
    state: Vec<usize>,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Vec<Matrix>,
    ffn_hidden: Matrix,
    probs: Matrix,
}

/// Transformer policy: one token per field (field embedding + embedding of
/// the field's current size), one post-norm encoder block, and a per-token
/// head giving T logits.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub field_emb: Parameter,
    pub size_emb: Parameter,
    pub wq: Affine,
    pub wk: Affine,
    pub wv: Affine,
    pub wo: Affine,
    pub ln1: LayerNorm,
    pub ff1: Affine,
    pub ff2: Affine,
    pub ln2: LayerNorm,
    pub head: Affine,
    cache: Option<Cache>,
}

fn set_columns(dst: &mut Matrix, start: usize, src: &Matrix) {
    for r in 0..src.rows() {
        dst.row_mut(r)[start..start + src.cols()].copy_from_slice(src.row(r));
    }
}

impl PolicyNet {
    pub fn new(num_fields: usize, num_candidates: usize, config: PolicyConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        if num_fields == 0 || num_candidates == 0 {
            return Err(Error::config("policy needs at least one field and one candidate"));
        }
        let d = config.d_model;
        Ok(Self {
            field_emb: Parameter::uniform_fan_in(num_fields, d, d, rng),
            size_emb: Parameter::uniform_fan_in(num_candidates, d, d, rng),
            wq: Affine::new(d, d, rng),
            wk: Affine::new(d, d, rng),
            wv: Affine::new(d, d, rng),
            wo: Affine::new(d, d, rng),
            ln1: LayerNorm::new(d),
            ff1: Affine::new(d, config.ffn, rng),
            ff2: Affine::new(config.ffn, d, rng),
            ln2: LayerNorm::new(d),
            head: Affine::new(d, num_candidates, rng),
            config,
            cache: None,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.field_emb.value.rows()
    }

    pub fn num_candidates(&self) -> usize {
        self.size_emb.value.rows()
    }

    /// Zeroes the output head so every row of P is uniform.
    pub fn zero_head(&mut self) {
        self.head.weight.value.fill(0.0);
        self.head.bias.value.fill(0.0);
    }

    fn tokens(&self, state: &[usize]) -> Result<Matrix> {
        if state.len() != self.num_fields() {
            return Err(Error::config(format!("state has {} entries, policy has {} fields", state.len(), self.num_fields())));
        }
        let d = self.config.d_model;
        let mut x = Matrix::zeros(state.len(), d);
        for (i, &s) in state.iter().enumerate() {
            if s >= self.num_candidates() {
                return Err(Error::config(format!("state entry {s} out of range")));
            }
            let f = self.field_emb.value.row(i);
            let z = self.size_emb.value.row(s);
            for (o, (a, b)) in x.row_mut(i).iter_mut().zip(f.iter().zip(z)) {
                *o = a + b;
            }
        }
        Ok(x)
    }

    fn attention(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let h = self.config.heads;
        let dh = self.config.d_model / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(q.rows(), self.config.d_model);
        let mut attn = Vec::with_capacity(h);
        for head in 0..h {
            let (qh, kh, vh) = (q.columns(head * dh, dh), k.columns(head * dh, dh), v.columns(head * dh, dh));
            let mut s = qh.matmul_t(&kh)?;
            s.scale(scale);
            let a = softmax_rows(&s)?;
            set_columns(&mut out, head * dh, &a.matmul(&vh)?);
            attn.push(a);
        }
        Ok((out, attn))
    }

    /// Row-stochastic transition matrix `P` (M × T) for the given state.
    pub fn forward(&self, state: &[usize]) -> Result<Matrix> {
        let x0 = self.tokens(state)?;
        let (q, k, v) = (self.wq.forward(&x0)?, self.wk.forward(&x0)?, self.wv.forward(&x0)?);
        let (o, _) = self.attention(&q, &k, &v)?;
        let x1 = self.ln1.forward(&x0.add(&self.wo.forward(&o)?)?)?;
        let f = self.ff2.forward(&relu(&self.ff1.forward(&x1)?)?)?;
        let x2 = self.ln2.forward(&x1.add(&f)?)?;
        softmax_rows(&self.head.forward(&x2)?)
    }

    pub fn forward_train(&mut self, state: &[usize]) -> Result<Matrix> {
        let x0 = self.tokens(state)?;
        let q = self.wq.forward_train(&x0)?;
        let k = self.wk.forward_train(&x0)?;
        let v = self.wv.forward_train(&x0)?;
        let (o, attn) = self.attention(&q, &k, &v)?;
        let x1 = self.ln1.forward_train(&x0.add(&self.wo.forward_train(&o)?)?)?;
        let ffn_hidden = relu(&self.ff1.forward_train(&x1)?)?;
        let f = self.ff2.forward_train(&ffn_hidden)?;
        let x2 = self.ln2.forward_train(&x1.add(&f)?)?;
        let probs = softmax_rows(&self.head.forward_train(&x2)?)?;
        self.cache = Some(Cache { state: state.to_vec(), q, k, v, attn, ffn_hidden, probs: probs.clone() });
        Ok(probs)
    }

    /// Backward from `∂L/∂logits` (pre-softmax). Accumulates gradients.
    pub fn backward_logits(&mut self, dlogits: &Matrix) -> Result<()> {
        let c = self.cache.take().ok_or_else(|| Error::config("policy backward without cached forward"))?;
        if dlogits.shape() != c.probs.shape() {
            return Err(Error::shape("policy backward", c.probs.shape(), dlogits.shape()));
        }
        let dx2 = self.head.backward(dlogits)?;
        let dsum2 = self.ln2.backward(&dx2)?;
        let dh = self.ff2.backward(&dsum2)?;
        let mut dx1 = self.ff1.backward(&relu_backward(&c.ffn_hidden, &dh))?;
        dx1.add_assign(&dsum2)?;
        let dsum1 = self.ln1.backward(&dx1)?;
        let do_ = self.wo.backward(&dsum1)?;

        let h = self.config.heads;
        let dhd = self.config.d_model / h;
        let scale = 1.0 / (dhd as f64).sqrt();
        let n = c.q.rows();
        let (mut dq, mut dk, mut dv) =
            (Matrix::zeros(n, self.config.d_model), Matrix::zeros(n, self.config.d_model), Matrix::zeros(n, self.config.d_model));
        for (head, a) in c.attn.iter().enumerate() {
            let (qh, kh, vh) = (c.q.columns(head * dhd, dhd), c.k.columns(head * dhd, dhd), c.v.columns(head * dhd, dhd));
            let doh = do_.columns(head * dhd, dhd);
            let da = doh.matmul_t(&vh)?;
            set_columns(&mut dv, head * dhd, &a.t_matmul(&doh)?);
            let mut ds = softmax_rows_backward(a, &da);
            ds.scale(scale);
            set_columns(&mut dq, head * dhd, &ds.matmul(&kh)?);
            set_columns(&mut dk, head * dhd, &ds.t_matmul(&qh)?);
        }
        let mut dx0 = dsum1;
        dx0.add_assign(&self.wq.backward(&dq)?)?;
        dx0.add_assign(&self.wk.backward(&dk)?)?;
        dx0.add_assign(&self.wv.backward(&dv)?)?;

        for (i, &s) in c.state.iter().enumerate() {
            let g = dx0.row(i);
            for (t, &v) in self.field_emb.grad.row_mut(i).iter_mut().zip(g) {
                *t += v;
            }
            for (t, &v) in self.size_emb.grad.row_mut(s).iter_mut().zip(g) {
                *t += v;
            }
        }
        self.field_emb.mark_touched();
        self.size_emb.mark_touched();
        Ok(())
    }

    /// Backward from `∂L/∂P`.
    pub fn backward(&mut self, dprobs: &Matrix) -> Result<()> {
        let p = self.cache.as_ref().map(|c| c.probs.clone()).ok_or_else(|| Error::config("policy backward without cached forward"))?;
        self.backward_logits(&softmax_rows_backward(&p, dprobs))
    }
}

impl Module for PolicyNet {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out = vec![("field_emb".to_string(), &self.field_emb), ("size_emb".to_string(), &self.size_emb)];
        for (name, a) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            out.extend(a.params().into_iter().map(|(n, p)| (format!("{name}.{n}"), p)));
        }
        out.extend(self.ln1.params().into_iter().map(|(n, p)| (format!("ln1.{n}"), p)));
        out.extend(self.ff1.params().into_iter().map(|(n, p)| (format!("ff1.{n}"), p)));
        out.extend(self.ff2.params().into_iter().map(|(n, p)| (format!("ff2.{n}"), p)));
        out.extend(self.ln2.params().into_iter().map(|(n, p)| (format!("ln2.{n}"), p)));
        out.extend(self.head.params().into_iter().map(|(n, p)| (format!("head.{n}"), p)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.field_emb, &mut self.size_emb];
        out.extend(self.wq.params_mut());
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        out.extend(self.ln1.params_mut());
        out.extend(self.ff1.params_mut());
        out.extend(self.ff2.params_mut());
        out.extend(self.ln2.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}
