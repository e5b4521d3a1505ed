//! Row-level numeric kernels shared by inference and training.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Layer norm of one row. Returns the output, the normalized input and `1/std`.
pub fn layer_norm_row(
    x: ArrayView1<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let xhat = x.mapv(|v| (v - mean) * rstd);
    let y = &xhat * gain + bias;
    (y, xhat, rstd)
}

/// In-place numerically stable softmax; returns nothing, rows sum to one.
pub fn softmax_inplace(mut v: ArrayViewMut1<f64>) {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    v.mapv_inplace(|x| (x - max).exp());
    let sum = v.sum();
    v.mapv_inplace(|x| x / sum);
}

pub fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
