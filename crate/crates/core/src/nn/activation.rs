use crate::error::Result;
use crate::tensor::Matrix;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Matrix) -> Result<Matrix> {
    x.check_finite("relu input")?;
    Ok(x.map(|v| v.max(0.0)))
}

/// Gradient through ReLU given the layer *output*.
pub fn relu_backward(output: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (g, &y) in dx.as_mut_slice().iter_mut().zip(output.as_slice()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

pub fn sigmoid(x: &Matrix) -> Result<Matrix> {
    x.check_finite("sigmoid input")?;
    Ok(x.map(sigmoid_scalar))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Result<Matrix> {
    x.check_finite("softmax input")?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient through a row softmax given its output `p` and `∂L/∂p`.
pub fn softmax_rows_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row(r);
        let dr = dp.row(r);
        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (c, o) in dz.row_mut(r).iter_mut().enumerate() {
            *o = pr[c] * (dr[c] - dot);
        }
    }
    dz
}
