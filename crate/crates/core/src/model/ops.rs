//! Row-wise building blocks with their adjoints.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

/// Saved state of a layer norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn layer_norm(x: ArrayView2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let out = &normalized * &gain + &bias;
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `dx` and accumulates `dgain`, `dbias`.
pub fn layer_norm_backward(
    dy: ArrayView2<f64>,
    gain: ArrayView1<f64>,
    cache: &LayerNormCache,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(&dy * &cache.normalized).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = &dy * &gain;
    for ((mut row, xhat), &s) in dx.rows_mut().into_iter().zip(cache.normalized.rows()).zip(&cache.inv_std) {
        let mean = row.sum() / d;
        let proj = row.dot(&xhat) / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| *g = s * (*g - mean - xh * proj));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU; smooth everywhere, which keeps finite
/// difference checks free of kinks.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `(gelu(x), gelu'(x))` sharing one tanh.
pub fn gelu_and_grad(x: f64) -> (f64, f64) {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    (y, dy)
}

/// Row-wise log-softmax cross entropy. Returns per-row losses and, in place
/// of `logits`, the probabilities.
pub fn softmax_cross_entropy(logits: &mut Array2<f64>, targets: &[usize]) -> Vec<f64> {
    let mut losses = Vec::with_capacity(targets.len());
    for (mut row, &t) in logits.rows_mut().into_iter().zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        losses.push(total.ln() - row[t].ln());
        row.mapv_inplace(|v| v / total);
    }
    losses
}
