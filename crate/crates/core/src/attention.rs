//! Single-head causal attention with a composite positional kernel.
//!
//! `score[m][n] = (q_m·k_n · w(m-n) + b(m-n)) / √d` for `n ≤ m`; entries above
//! the diagonal (and outside an optional window) hold `-∞` and are skipped
//! by the Softmax.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{KerpleError, Result};
use crate::kernel::{BiasMatrix, WeightMatrix};

/// Per-head queries, keys and values, each `L x d`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionInput<'a> {
    pub queries: ArrayView2<'a, f64>,
    pub keys: ArrayView2<'a, f64>,
    pub values: ArrayView2<'a, f64>,
}

impl<'a> AttentionInput<'a> {
    pub fn new(queries: ArrayView2<'a, f64>, keys: ArrayView2<'a, f64>, values: ArrayView2<'a, f64>) -> Result<Self> {
        let (l, d) = queries.dim();
        if l == 0 || d == 0 {
            return Err(KerpleError::Dimension("attention needs L >= 1 and d >= 1".into()));
        }
        if keys.dim() != (l, d) || values.nrows() != l {
            return Err(KerpleError::Dimension(format!(
                "queries {:?}, keys {:?}, values {:?}",
                queries.dim(),
                keys.dim(),
                values.dim()
            )));
        }
        if !queries.iter().chain(keys.iter()).chain(values.iter()).all(|x| x.is_finite()) {
            return Err(KerpleError::NonFinite("attention input".into()));
        }
        Ok(Self { queries, keys, values })
    }

    pub fn length(&self) -> usize {
        self.queries.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.queries.ncols()
    }
}

/// Which key positions a query may see. `window = Some(w)` keeps only the
/// `w` most recent positions `m-w+1 ..= m`.
#[inline]
pub fn visible(m: usize, n: usize, window: Option<usize>) -> bool {
    n <= m && window.map_or(true, |w| m - n < w)
}

/// Row-stochastic, lower-triangular attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(pub Array2<f64>);

impl AttentionWeights {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn length(&self) -> usize {
        self.0.nrows()
    }
}

pub fn composite_scores(input: &AttentionInput, bias: &BiasMatrix, weight: Option<&WeightMatrix>) -> Result<Array2<f64>> {
    composite_scores_windowed(input, bias, weight, None)
}

/// [`composite_scores`] with an optional hard attention window.
pub fn composite_scores_windowed(
    input: &AttentionInput,
    bias: &BiasMatrix,
    weight: Option<&WeightMatrix>,
    window: Option<usize>,
) -> Result<Array2<f64>> {
    let l = input.length();
    if bias.length() < l || weight.is_some_and(|w| w.length() < l) {
        return Err(KerpleError::Dimension(format!(
            "kernel matrices of length {} for a length-{l} input",
            bias.length()
        )));
    }
    if window == Some(0) {
        return Err(KerpleError::InvalidArgument("attention window must be at least 1".into()));
    }
    let scale = 1.0 / (input.head_dim() as f64).sqrt();
    let mut scores = input.queries.dot(&input.keys.t());
    for (m, mut row) in scores.rows_mut().into_iter().enumerate() {
        let lo = window.map_or(0, |w| (m + 1).saturating_sub(w));
        let (b, w) = (bias.row(m), weight.map(|w| w.row(m)));
        for (n, s) in row.iter_mut().enumerate() {
            if n < lo || n > m {
                *s = f64::NEG_INFINITY;
            } else {
                let wv = w.map_or(1.0, |w| w[n]);
                *s = (*s * wv + b[n]) * scale;
            }
        }
    }
    Ok(scores)
}

/// Row-wise Softmax over the finite entries of each row, stabilized by
/// subtracting the row maximum. `-∞` entries get weight exactly 0.
pub fn causal_softmax(scores: &Array2<f64>) -> Result<AttentionWeights> {
    let (l, cols) = scores.dim();
    if l != cols {
        return Err(KerpleError::Dimension(format!("score matrix is {l}x{cols}")));
    }
    let mut out = Array2::<f64>::zeros((l, l));
    for m in 0..l {
        let row = scores.row(m);
        let mut max = f64::NEG_INFINITY;
        for n in 0..=m {
            let s = row[n];
            if s.is_nan() {
                return Err(KerpleError::NonFinite(format!("score row {m}")));
            }
            if s > max {
                max = s;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(KerpleError::InvalidArgument(format!("score row {m} is fully masked")));
        }
        let mut total = 0.0;
        for n in 0..=m {
            if row[n] != f64::NEG_INFINITY {
                let e = (row[n] - max).exp();
                out[[m, n]] = e;
                total += e;
            }
        }
        out.row_mut(m).iter_mut().take(m + 1).for_each(|x| *x /= total);
    }
    Ok(AttentionWeights(out))
}

/// `o_m = Σ_n a[m][n] v_n`.
pub fn attend(weights: &AttentionWeights, values: ArrayView2<f64>) -> Result<Array2<f64>> {
    if weights.0.ncols() != values.nrows() {
        return Err(KerpleError::Dimension(format!(
            "{} attention columns for {} value rows",
            weights.0.ncols(),
            values.nrows()
        )));
    }
    Ok(weights.0.dot(&values))
}

/// Adjoint of [`causal_softmax`]: given `∂L/∂a`, returns `∂L/∂score`.
pub fn softmax_backward(weights: &AttentionWeights, d_weights: &Array2<f64>) -> Array2<f64> {
    let a = &weights.0;
    let mut ds = a * d_weights;
    let dots = ds.sum_axis(Axis(1));
    for (m, mut row) in ds.rows_mut().into_iter().enumerate() {
        let dot = dots[m];
        for (x, &am) in row.iter_mut().zip(a.row(m)) {
            *x -= am * dot;
        }
    }
    ds
}

/// Gradients flowing out of [`composite_scores_windowed`].
#[derive(Debug, Clone)]
pub struct ScoreGrads {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    /// `∂L/∂b(d)` summed over every visible pair at distance `d`.
    pub bias_by_distance: Vec<f64>,
    /// `∂L/∂w(d)`, same layout; all zeros when no weight matrix is used.
    pub weight_by_distance: Vec<f64>,
}

/// Adjoint of [`composite_scores_windowed`] given `∂L/∂score`.
pub fn composite_scores_backward(
    input: &AttentionInput,
    weight: Option<&WeightMatrix>,
    d_scores: &Array2<f64>,
    window: Option<usize>,
) -> ScoreGrads {
    let l = input.length();
    let scale = 1.0 / (input.head_dim() as f64).sqrt();
    let mut bias_by_distance = vec![0.0; l];
    let mut weight_by_distance = vec![0.0; l];
    // g = ∂L/∂(q·k)
    let mut g = Array2::<f64>::zeros((l, l));
    let qk = weight.map(|_| input.queries.dot(&input.keys.t()));
    for m in 0..l {
        for n in 0..=m {
            if !visible(m, n, window) {
                continue;
            }
            let gs = d_scores[[m, n]] * scale;
            bias_by_distance[m - n] += gs;
            match (weight, &qk) {
                (Some(w), Some(qk)) => {
                    g[[m, n]] = gs * w.get(m, n);
                    weight_by_distance[m - n] += gs * qk[[m, n]];
                }
                _ => g[[m, n]] = gs,
            }
        }
    }
    ScoreGrads {
        queries: g.dot(&input.keys),
        keys: g.t().dot(&input.queries),
        bias_by_distance,
        weight_by_distance,
    }
}

/// Debug dump of attention maps; columns `head,m,n,weight` over the causal triangle.
pub fn write_attention_csv<W: Write>(mut w: W, maps: &[(usize, &AttentionWeights)]) -> Result<()> {
    writeln!(w, "head,m,n,weight")?;
    for (head, a) in maps {
        let l = a.length();
        for m in 0..l {
            for n in 0..=m {
                writeln!(w, "{head},{m},{n},{}", a.0[[m, n]])?;
            }
        }
    }
    Ok(())
}
