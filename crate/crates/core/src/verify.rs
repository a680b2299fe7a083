//! Numerical checks of (conditional) positive definiteness.
//!
//! A kernel is checked on a finite grid of points by sampling coefficient
//! vectors and evaluating the quadratic form `cᵀ K c`. The CPD check restricts
//! the coefficients to the sum-zero subspace. [`shift_search`] finds a
//! power-of-two constant that makes the shifted Gram matrix PSD.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KerpleError, Result};
use crate::kernel::KernelSpec;

/// Tolerance for the sum-zero quadratic form check.
pub const TOL_CPD: f64 = 1e-8;
/// Tolerance on the smallest eigenvalue of a shifted Gram matrix.
pub const TOL_PSD: f64 = 1e-8;
/// Largest constant probed by [`shift_search`].
pub const SHIFT_SEARCH_LIMIT: f64 = 18446744073709551616.0; // 2^64

const SYMMETRY_TOL: f64 = 1e-12;

/// Consecutive integer positions `0..n`.
pub fn integer_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    points: Vec<f64>,
    entries: DMatrix<f64>,
}

impl GramMatrix {
    /// Gram matrix of a shift-invariant kernel given as a function of the
    /// positional difference.
    pub fn from_fn(points: &[f64], kernel: impl Fn(f64) -> f64) -> Result<Self> {
        if points.is_empty() {
            return Err(KerpleError::InvalidArgument("Gram matrix needs at least one point".into()));
        }
        let n = points.len();
        let entries = DMatrix::from_fn(n, n, |i, j| kernel(points[i] - points[j]));
        Ok(Self {
            points: points.to_vec(),
            entries,
        })
    }

    pub fn from_spec(spec: &KernelSpec, points: &[f64]) -> Result<Self> {
        Self::from_fn(points, |x| spec.bias_at(x))
    }

    /// Wraps explicit entries, rejecting non-symmetric input.
    pub fn from_entries(points: Vec<f64>, entries: DMatrix<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 || entries.nrows() != n || entries.ncols() != n {
            return Err(KerpleError::Dimension(format!(
                "{} points but a {}x{} matrix",
                n,
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(KerpleError::InvalidArgument(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { points, entries })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `c + K` elementwise.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            points: self.points.clone(),
            entries: self.entries.add_scalar(c),
        }
    }
}

/// `Σᵢ Σⱼ cᵢ cⱼ K[i][j]` as a literal double sum.
pub fn quadratic_form(gram: &GramMatrix, coeffs: &[f64]) -> Result<f64> {
    let n = gram.len();
    if coeffs.len() != n {
        return Err(KerpleError::Dimension(format!(
            "{} coefficients for a {n}-point Gram matrix",
            coeffs.len()
        )));
    }
    let k = &gram.entries;
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += coeffs[j] * k[(i, j)];
        }
        total += coeffs[i] * row;
    }
    Ok(total)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(gram: &GramMatrix) -> f64 {
    SymmetricEigen::new(gram.entries.clone()).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    /// Minimum quadratic form value over all trials.
    pub worst_value: f64,
    /// Coefficients that produced [`CheckOutcome::worst_value`].
    pub witness: Vec<f64>,
    pub trials: usize,
}

/// Samples `trials` standard-normal coefficient vectors and evaluates the
/// quadratic form. With `sum_zero` each vector is first centred (the CPD
/// condition); without it the sweep tests plain positive definiteness.
pub fn quadratic_form_sweep(
    gram: &GramMatrix,
    trials: usize,
    seed: u64,
    sum_zero: bool,
    tol: f64,
) -> Result<CheckOutcome> {
    if trials == 0 {
        return Err(KerpleError::InvalidArgument("trials must be at least 1".into()));
    }
    let n = gram.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut witness = vec![0.0; n];
    let mut coeffs = vec![0.0; n];
    for _ in 0..trials {
        for c in coeffs.iter_mut() {
            *c = StandardNormal.sample(&mut rng);
        }
        if sum_zero {
            let mean = coeffs.iter().sum::<f64>() / n as f64;
            coeffs.iter_mut().for_each(|c| *c -= mean);
        }
        let q = quadratic_form(gram, &coeffs)?;
        if q < worst {
            worst = q;
            witness.copy_from_slice(&coeffs);
        }
    }
    Ok(CheckOutcome {
        passed: worst >= -tol,
        worst_value: worst,
        witness,
        trials,
    })
}

/// Conditional positive definiteness of `spec`'s bias on `points`.
pub fn check_cpd(spec: &KernelSpec, points: &[f64], trials: usize, seed: u64) -> Result<CheckOutcome> {
    check_cpd_fn(|x| spec.bias_at(x), points, trials, seed)
}

/// [`check_cpd`] for an arbitrary shift-invariant kernel function.
pub fn check_cpd_fn(kernel: impl Fn(f64) -> f64, points: &[f64], trials: usize, seed: u64) -> Result<CheckOutcome> {
    if points.len() < 2 {
        return Err(KerpleError::InvalidArgument("CPD check needs at least two points".into()));
    }
    let gram = GramMatrix::from_fn(points, kernel)?;
    quadratic_form_sweep(&gram, trials, seed, true, TOL_CPD)
}

/// Positive definiteness sweep with unconstrained coefficients.
pub fn check_pd_fn(kernel: impl Fn(f64) -> f64, points: &[f64], trials: usize, seed: u64) -> Result<CheckOutcome> {
    let gram = GramMatrix::from_fn(points, kernel)?;
    quadratic_form_sweep(&gram, trials, seed, false, TOL_CPD)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSearchResult {
    pub constant: f64,
    /// `(c, min eigenvalue of c + K)` for every probe, in order.
    pub probes: Vec<(f64, f64)>,
    pub points: Vec<f64>,
}

impl ShiftSearchResult {
    pub fn final_min_eigenvalue(&self) -> f64 {
        self.probes.last().map(|p| p.1).unwrap_or(f64::NAN)
    }
}

/// Geometric search `c = 1, 2, 4, …` for a constant making `c + k̃` PSD on
/// `points`. The constant is only certified on this grid.
pub fn shift_search(spec: &KernelSpec, points: &[f64]) -> Result<ShiftSearchResult> {
    if !spec.variant().is_cpd() {
        return Err(KerpleError::Usage {
            op: "shift_search",
            variant: spec.variant().name(),
        });
    }
    shift_search_fn(|x| spec.bias_at(x), points)
}

pub fn shift_search_fn(kernel: impl Fn(f64) -> f64, points: &[f64]) -> Result<ShiftSearchResult> {
    let gram = GramMatrix::from_fn(points, kernel)?;
    let mut probes = Vec::new();
    let mut c = 1.0;
    loop {
        let lambda = min_eigenvalue(&gram.shifted(c));
        probes.push((c, lambda));
        if lambda >= -TOL_PSD {
            return Ok(ShiftSearchResult {
                constant: c,
                probes,
                points: points.to_vec(),
            });
        }
        if c >= SHIFT_SEARCH_LIMIT {
            return Err(KerpleError::ShiftSearchExhausted {
                last_constant: c,
                min_eigenvalue: lambda,
            });
        }
        c *= 2.0;
    }
}

/// `-(-k̃)^α`, which stays CPD for `0 < α < 1` when `k̃ ≤ 0` is CPD.
pub fn fractional_power(kernel: impl Fn(f64) -> f64, alpha: f64) -> impl Fn(f64) -> f64 {
    move |x| -(-kernel(x)).max(0.0).powf(alpha)
}

/// `-ln(1 - k̃)`, CPD whenever `k̃ ≤ 0` is CPD.
pub fn log_transform(kernel: impl Fn(f64) -> f64) -> impl Fn(f64) -> f64 {
    move |x| -(-kernel(x)).ln_1p()
}
