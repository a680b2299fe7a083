//! Effective length of trained kernels.
//!
//! The effective length of a head is the smallest distance at which its
//! bias drops strictly below a threshold (default `-2`). Counting, for each
//! distance `D`, the heads whose effective length is at most `D` gives a
//! cumulative curve that summarizes how far the model looks back.

use std::io::Write;

use serde::Serialize;

use crate::error::{KerpleError, Result};
use crate::kernel::{KernelSpec, Variant};

pub const DEFAULT_THRESHOLD: f64 = -2.0;
pub const DEFAULT_MAX_DISTANCE: usize = 20_480;

/// Distance at which a strictly decreasing bias crosses `threshold`, as a
/// real number. Only defined for the variants with an invertible bias.
fn crossing(spec: &KernelSpec, threshold: f64) -> Option<f64> {
    let p = spec.params();
    let t = -threshold;
    match spec.variant() {
        Variant::Power | Variant::BiasPlusWeight => Some((t / p[0]).powf(1.0 / p[1])),
        Variant::Log => Some((t / p[0]).exp_m1() / p[1]),
        Variant::ThreeParaLog => Some(((t / p[0]).exp_m1() / p[1]).powf(1.0 / p[2])),
        Variant::Alibi => Some(t / spec.slope()),
        _ => None,
    }
}

/// Smallest integer distance `d ≤ max_distance` with `bias(d) < threshold`,
/// or `None` if the bias stays at or above it.
///
/// Variants with a closed-form inverse are solved directly and then nudged
/// to the exact integer boundary. Others are scanned, after checking that
/// the bias is non-increasing over the whole range; a bias that rises
/// somewhere is an error because the crossing would not be unique.
pub fn effective_length(spec: &KernelSpec, threshold: f64, max_distance: usize) -> Result<Option<usize>> {
    if !(threshold < 0.0 && threshold.is_finite()) {
        return Err(KerpleError::InvalidArgument(format!("threshold {threshold} must be negative")));
    }
    let below = |d: usize| spec.eval_bias(d as i64) < threshold;
    if let Some(x) = crossing(spec, threshold) {
        if x.is_nan() || x > max_distance as f64 + 1.0 {
            return Ok(None);
        }
        let mut d = (x.floor() as usize + 1).min(max_distance + 1);
        while d > 0 && below(d - 1) {
            d -= 1;
        }
        while d <= max_distance && !below(d) {
            d += 1;
        }
        return Ok((d <= max_distance).then_some(d));
    }
    let values: Vec<f64> = (0..=max_distance).map(|d| spec.eval_bias(d as i64)).collect();
    if let Some(d) = values.windows(2).position(|w| w[1] > w[0]) {
        return Err(KerpleError::InvalidArgument(format!(
            "{} bias increases between distances {d} and {}; effective length needs a non-increasing bias",
            spec.variant(),
            d + 1
        )));
    }
    Ok(values.iter().position(|&b| b < threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveLengthCurve {
    /// Per-head effective length; `None` when the threshold is never crossed.
    pub effective: Vec<Option<usize>>,
    pub grid: Vec<usize>,
    /// `counts[i]` = number of heads with effective length `≤ grid[i]`.
    pub counts: Vec<usize>,
}

pub fn default_grid() -> Vec<usize> {
    (0..=DEFAULT_MAX_DISTANCE).collect()
}

/// Cumulative head counts over `grid` at the default threshold.
pub fn cumulative_curve(specs: &[KernelSpec], grid: &[usize]) -> Result<EffectiveLengthCurve> {
    cumulative_curve_with(specs, grid, DEFAULT_THRESHOLD)
}

pub fn cumulative_curve_with(specs: &[KernelSpec], grid: &[usize], threshold: f64) -> Result<EffectiveLengthCurve> {
    if specs.is_empty() {
        return Err(KerpleError::InvalidArgument("need at least one head".into()));
    }
    let max = grid.iter().copied().max().unwrap_or(0);
    let effective = specs
        .iter()
        .map(|s| effective_length(s, threshold, max))
        .collect::<Result<Vec<_>>>()?;
    let counts = grid
        .iter()
        .map(|&g| effective.iter().filter(|e| e.is_some_and(|e| e <= g)).count())
        .collect();
    Ok(EffectiveLengthCurve {
        effective,
        grid: grid.to_vec(),
        counts,
    })
}

/// Columns: `head,variant,effective_length` (`none` if never crossed).
pub fn write_effective_lengths_csv<W: Write>(mut w: W, specs: &[KernelSpec], curve: &EffectiveLengthCurve) -> Result<()> {
    writeln!(w, "head,variant,effective_length")?;
    for (h, (s, e)) in specs.iter().zip(&curve.effective).enumerate() {
        match e {
            Some(e) => writeln!(w, "{h},{},{e}", s.variant())?,
            None => writeln!(w, "{h},{},none", s.variant())?,
        }
    }
    Ok(())
}

/// Columns: `distance,count`.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &EffectiveLengthCurve) -> Result<()> {
    writeln!(w, "distance,count")?;
    for (d, c) in curve.grid.iter().zip(&curve.counts) {
        writeln!(w, "{d},{c}")?;
    }
    Ok(())
}
