//! Shift-invariant positional kernels and the bias/weight matrices they induce.
//!
//! Every variant is a closed-form function of the non-negative positional
//! difference `d = m - n`. Bias variants return the conditionally positive
//! definite part only; the constant that would make the kernel positive
//! definite is never materialized because Softmax absorbs it.

mod catalog;
mod param;
mod t5;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KerpleError, Result};

pub use catalog::{kernel_curves, write_kernel_curves_csv, Catalog, CatalogEntry, CurvePoint};
pub use param::{Bijection, ParamVector};
pub use t5::{t5_bucket_index, T5_EXACT_BUCKETS, T5_MAX_DISTANCE, T5_NUM_BUCKETS};

/// The closed set of kernel variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `-r1 * d^r2`, `r1 > 0`, `0 < r2 <= 2`.
    Power,
    /// `-r1 * ln(1 + r2 * d)`, `r1, r2 > 0`.
    Log,
    /// `-r1 * ln(1 + r2 * d^r3)`, `r1, r2 > 0`, `0 < r3 <= 2`.
    ThreeParaLog,
    /// Power bias `-r1 * d^r2` plus weight `exp(-r3 * d^r4)`.
    BiasPlusWeight,
    /// Gaussian bias `r1 * exp(-r2 * d^2)`.
    GaussBias2,
    /// Generalized Gaussian bias `r1 * exp(-r2 * d^r3)`.
    GaussBias3,
    /// Gaussian weight `exp(-r1 * d^2)`.
    GaussWeight1,
    /// Generalized Gaussian weight `exp(-r1 * d^r2)`.
    GaussWeight2,
    /// Linear bias with the fixed per-head slope `2^(-8(h+1)/H)`, `h` zero-based.
    Alibi,
    /// 32 learned values per head indexed by log-binned distance.
    T5Bucket,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Power,
        Variant::Log,
        Variant::ThreeParaLog,
        Variant::BiasPlusWeight,
        Variant::GaussBias2,
        Variant::GaussBias3,
        Variant::GaussWeight1,
        Variant::GaussWeight2,
        Variant::Alibi,
        Variant::T5Bucket,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Power => "power",
            Variant::Log => "log",
            Variant::ThreeParaLog => "three_para_log",
            Variant::BiasPlusWeight => "bias_plus_weight",
            Variant::GaussBias2 => "gauss_bias2",
            Variant::GaussBias3 => "gauss_bias3",
            Variant::GaussWeight1 => "gauss_weight1",
            Variant::GaussWeight2 => "gauss_weight2",
            Variant::Alibi => "alibi",
            Variant::T5Bucket => "t5_bucket",
        }
    }

    /// Number of trainable scalars per head.
    pub fn arity(self) -> usize {
        match self {
            Variant::Alibi => 0,
            Variant::GaussWeight1 => 1,
            Variant::Power | Variant::Log | Variant::GaussBias2 | Variant::GaussWeight2 => 2,
            Variant::ThreeParaLog | Variant::GaussBias3 => 3,
            Variant::BiasPlusWeight => 4,
            Variant::T5Bucket => T5_NUM_BUCKETS,
        }
    }

    pub fn bijections(self) -> Vec<Bijection> {
        use Bijection::*;
        match self {
            Variant::Power => vec![Positive, Interval02],
            Variant::Log | Variant::GaussBias2 => vec![Positive, Positive],
            Variant::ThreeParaLog | Variant::GaussBias3 => vec![Positive, Positive, Interval02],
            Variant::BiasPlusWeight => vec![Positive, Interval02, Positive, Interval02],
            Variant::GaussWeight1 => vec![Positive],
            Variant::GaussWeight2 => vec![Positive, Interval02],
            Variant::Alibi => vec![],
            Variant::T5Bucket => vec![Identity; T5_NUM_BUCKETS],
        }
    }

    pub fn has_weight(self) -> bool {
        matches!(
            self,
            Variant::BiasPlusWeight | Variant::GaussWeight1 | Variant::GaussWeight2
        )
    }

    /// True for the variants whose bias is conditionally positive definite
    /// with zero self-distance value and strictly decreasing in distance.
    pub fn is_cpd(self) -> bool {
        matches!(
            self,
            Variant::Power | Variant::Log | Variant::ThreeParaLog | Variant::BiasPlusWeight | Variant::Alibi
        )
    }

    fn param_names(self) -> &'static [&'static str] {
        match self {
            Variant::Power | Variant::GaussWeight2 => &["r1", "r2"],
            Variant::Log | Variant::GaussBias2 => &["r1", "r2"],
            Variant::ThreeParaLog | Variant::GaussBias3 => &["r1", "r2", "r3"],
            Variant::BiasPlusWeight => &["r1", "r2", "r3", "r4"],
            Variant::GaussWeight1 => &["r1"],
            Variant::Alibi => &[],
            Variant::T5Bucket => &["bucket"],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = KerpleError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| KerpleError::InvalidArgument(format!("unknown kernel variant `{s}`")))
    }
}

/// ALiBi slopes `2^(-8h/H)` for heads `h = 1..=H`.
pub fn alibi_slopes(num_heads: usize) -> Vec<f64> {
    (1..=num_heads).map(|h| alibi_slope(h - 1, num_heads)).collect()
}

/// Slope of the zero-based head `head_index` out of `num_heads`.
pub fn alibi_slope(head_index: usize, num_heads: usize) -> f64 {
    (-8.0 * (head_index + 1) as f64 / num_heads as f64).exp2()
}

/// One head's kernel: a variant plus its constrained parameters.
///
/// Construction validates the parameters, so evaluation is infallible.
/// [`KernelSpec::relaxed`] admits power exponents above 2 for probing the
/// boundary of conditional positive definiteness; such specs cannot be
/// converted to trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    variant: Variant,
    params: Vec<f64>,
    head_index: usize,
    num_heads: usize,
    relaxed: bool,
}

impl KernelSpec {
    pub fn new(variant: Variant, params: Vec<f64>, head_index: usize, num_heads: usize) -> Result<Self> {
        let spec = Self {
            variant,
            params,
            head_index,
            num_heads,
            relaxed: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Like [`KernelSpec::new`] but exponent parameters only need to be positive.
    pub fn relaxed(variant: Variant, params: Vec<f64>) -> Result<Self> {
        let spec = Self {
            variant,
            params,
            head_index: 0,
            num_heads: 1,
            relaxed: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-head convenience constructor used heavily in tests and checks.
    pub fn single(variant: Variant, params: &[f64]) -> Result<Self> {
        Self::new(variant, params.to_vec(), 0, 1)
    }

    pub fn alibi(head_index: usize, num_heads: usize) -> Result<Self> {
        Self::new(Variant::Alibi, vec![], head_index, num_heads)
    }

    /// Initial parameters for training. Power and log kernels start at the
    /// ALiBi slope of their head with unit exponent/rate, so the untrained
    /// model already reproduces the linear bias (power) or its logarithmic
    /// analogue.
    pub fn initial(variant: Variant, head_index: usize, num_heads: usize) -> Result<Self> {
        let slope = alibi_slope(head_index, num_heads);
        let params = match variant {
            Variant::Power | Variant::Log => vec![slope, 1.0],
            Variant::ThreeParaLog => vec![slope, 1.0, 1.0],
            Variant::BiasPlusWeight => vec![slope, 1.0, 0.01, 1.0],
            Variant::GaussBias2 => vec![1.0, slope * slope],
            Variant::GaussBias3 => vec![1.0, slope, 1.0],
            Variant::GaussWeight1 => vec![slope * slope],
            Variant::GaussWeight2 => vec![slope, 1.0],
            Variant::Alibi => vec![],
            Variant::T5Bucket => vec![0.0; T5_NUM_BUCKETS],
        };
        Self::new(variant, params, head_index, num_heads)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn head_index(&self) -> usize {
        self.head_index
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    /// ALiBi slope for this head. Only meaningful for [`Variant::Alibi`].
    pub fn slope(&self) -> f64 {
        alibi_slope(self.head_index, self.num_heads)
    }

    fn validate(&self) -> Result<()> {
        let v = self.variant;
        if self.num_heads == 0 || self.head_index >= self.num_heads {
            return Err(KerpleError::InvalidArgument(format!(
                "head index {} not in [0, {})",
                self.head_index, self.num_heads
            )));
        }
        if self.params.len() != v.arity() {
            return Err(KerpleError::InvalidArgument(format!(
                "{v} kernel takes {} parameters, got {}",
                v.arity(),
                self.params.len()
            )));
        }
        let names = v.param_names();
        for (i, (&p, b)) in self.params.iter().zip(v.bijections()).enumerate() {
            let name = names.get(i).copied().unwrap_or("bucket");
            let (ok, domain) = match b {
                Bijection::Positive => (p > 0.0 && p.is_finite(), "(0, inf)"),
                Bijection::Interval02 if self.relaxed => (p > 0.0 && p.is_finite(), "(0, inf)"),
                Bijection::Interval02 => (p > 0.0 && p <= 2.0, "(0, 2]"),
                Bijection::Identity => (p.is_finite(), "finite"),
            };
            if !ok {
                return Err(KerpleError::Domain {
                    variant: v.name(),
                    name,
                    value: p,
                    domain,
                });
            }
        }
        Ok(())
    }

    /// Bias at integer distance `d = m - n`. Negative distances only matter
    /// for the T5 buckets; every other variant is symmetric.
    pub fn eval_bias(&self, distance: i64) -> f64 {
        if self.variant == Variant::T5Bucket {
            return self.params[t5_bucket_index(distance)];
        }
        self.bias_at(distance.unsigned_abs() as f64)
    }

    /// Bias at a real-valued distance; used for Gram matrices on arbitrary
    /// point sets. T5 buckets round to the nearest integer distance.
    pub fn bias_at(&self, x: f64) -> f64 {
        let d = x.abs();
        let p = &self.params;
        let value = match self.variant {
            Variant::Power | Variant::BiasPlusWeight => -p[0] * pow(d, p[1]),
            Variant::Log => -p[0] * (p[1] * d).ln_1p(),
            Variant::ThreeParaLog => -p[0] * (p[1] * pow(d, p[2])).ln_1p(),
            Variant::GaussBias2 => p[0] * (-p[1] * d * d).exp(),
            Variant::GaussBias3 => p[0] * (-p[1] * pow(d, p[2])).exp(),
            Variant::GaussWeight1 | Variant::GaussWeight2 => 0.0,
            Variant::Alibi => -self.slope() * d,
            Variant::T5Bucket => self.params[t5_bucket_index(x.round() as i64)],
        };
        // -0.0 -> 0.0
        value + 0.0
    }

    /// Multiplicative weight on `q·k` at distance `d`; in `(0, 1]`.
    pub fn eval_weight(&self, distance: i64) -> Result<f64> {
        self.weight_at(distance.unsigned_abs() as f64)
    }

    pub fn weight_at(&self, x: f64) -> Result<f64> {
        let d = x.abs();
        let p = &self.params;
        match self.variant {
            Variant::BiasPlusWeight => Ok((-p[2] * pow(d, p[3])).exp()),
            Variant::GaussWeight1 => Ok((-p[0] * d * d).exp()),
            Variant::GaussWeight2 => Ok((-p[0] * pow(d, p[1])).exp()),
            v => Err(KerpleError::Usage {
                op: "eval_weight",
                variant: v.name(),
            }),
        }
    }

    /// Partial derivatives of the bias at distance `d` with respect to each
    /// constrained parameter, written into `out` (length = arity).
    pub fn bias_param_grad(&self, distance: i64, out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let d = distance.unsigned_abs() as f64;
        let p = &self.params;
        match self.variant {
            Variant::Power | Variant::BiasPlusWeight => {
                let dp = pow(d, p[1]);
                out[0] = -dp;
                out[1] = -p[0] * dp * ln0(d);
            }
            Variant::Log => {
                out[0] = -(p[1] * d).ln_1p();
                out[1] = -p[0] * d / (1.0 + p[1] * d);
            }
            Variant::ThreeParaLog => {
                let dp = pow(d, p[2]);
                let inner = 1.0 + p[1] * dp;
                out[0] = -(p[1] * dp).ln_1p();
                out[1] = -p[0] * dp / inner;
                out[2] = -p[0] * p[1] * dp * ln0(d) / inner;
            }
            Variant::GaussBias2 => {
                let e = (-p[1] * d * d).exp();
                out[0] = e;
                out[1] = -p[0] * d * d * e;
            }
            Variant::GaussBias3 => {
                let dp = pow(d, p[2]);
                let e = (-p[1] * dp).exp();
                out[0] = e;
                out[1] = -p[0] * dp * e;
                out[2] = -p[0] * p[1] * dp * ln0(d) * e;
            }
            Variant::GaussWeight1 | Variant::GaussWeight2 | Variant::Alibi => {}
            Variant::T5Bucket => out[t5_bucket_index(distance)] = 1.0,
        }
    }

    /// Partial derivatives of the weight at distance `d`; zeros for bias-only variants.
    pub fn weight_param_grad(&self, distance: i64, out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let d = distance.unsigned_abs() as f64;
        let p = &self.params;
        match self.variant {
            Variant::BiasPlusWeight => {
                let dp = pow(d, p[3]);
                let w = (-p[2] * dp).exp();
                out[2] = -dp * w;
                out[3] = -p[2] * dp * ln0(d) * w;
            }
            Variant::GaussWeight1 => out[0] = -d * d * (-p[0] * d * d).exp(),
            Variant::GaussWeight2 => {
                let dp = pow(d, p[1]);
                let w = (-p[0] * dp).exp();
                out[0] = -dp * w;
                out[1] = -p[0] * dp * ln0(d) * w;
            }
            _ => {}
        }
    }
}

// 0^p = 0 for every admissible p > 0.
fn pow(d: f64, p: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        d.powf(p)
    }
}

// d^p ln d -> 0 as d -> 0, so the log factor may be taken as 0 there.
fn ln0(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        d.ln()
    }
}

/// `L x L` lower-triangular matrix indexed `[m][n]`; entries with `n > m`
/// are zero and unused.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMatrix {
    length: usize,
    values: Vec<f64>,
}

impl TriMatrix {
    fn from_fn(length: usize, f: impl Fn(usize) -> f64) -> Self {
        let by_distance: Vec<f64> = (0..length).map(&f).collect();
        let mut values = vec![0.0; length * length];
        for m in 0..length {
            for n in 0..=m {
                values[m * length + n] = by_distance[m - n];
            }
        }
        Self { length, values }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.length + n]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.length..m * self.length + m + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Adds `c` to every causal entry.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for m in 0..self.length {
            for n in 0..=m {
                out.values[m * self.length + n] += c;
            }
        }
        out
    }
}

pub type BiasMatrix = TriMatrix;
pub type WeightMatrix = TriMatrix;

/// Materializes the bias (and weight, for weight-bearing variants) matrices
/// at any length, including lengths never seen during training.
pub fn build_matrices(spec: &KernelSpec, length: usize) -> (BiasMatrix, Option<WeightMatrix>) {
    let bias = TriMatrix::from_fn(length, |d| spec.eval_bias(d as i64));
    let weight = spec.variant.has_weight().then(|| {
        TriMatrix::from_fn(length, |d| {
            spec.eval_weight(d as i64).expect("weight-bearing variant")
        })
    });
    (bias, weight)
}
