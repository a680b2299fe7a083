//! Unconstrained storage for trainable kernel parameters.
//!
//! Every trainable scalar lives on the real line and is pushed through a
//! smooth monotone bijection onto its constraint domain before use. Gradient
//! updates therefore never leave the domain.

use serde::{Deserialize, Serialize};

use super::{KernelSpec, Variant};
use crate::error::Result;

/// Map from an unconstrained raw value onto a parameter's domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bijection {
    /// `exp`: ℝ → (0, ∞).
    Positive,
    /// `2·sigmoid`: ℝ → (0, 2). The endpoint 2 is only reached in the limit.
    Interval02,
    Identity,
}

impl Bijection {
    pub fn constrain(self, raw: f64) -> f64 {
        match self {
            Bijection::Positive => raw.exp(),
            Bijection::Interval02 => 2.0 * sigmoid(raw),
            Bijection::Identity => raw,
        }
    }

    pub fn unconstrain(self, value: f64) -> f64 {
        match self {
            Bijection::Positive => value.ln(),
            Bijection::Interval02 => value.ln() - (2.0 - value).ln(),
            Bijection::Identity => value,
        }
    }

    /// Derivative of [`Bijection::constrain`] at `raw`.
    pub fn derivative(self, raw: f64) -> f64 {
        match self {
            Bijection::Positive => raw.exp(),
            Bijection::Interval02 => {
                let s = sigmoid(raw);
                2.0 * s * (1.0 - s)
            }
            Bijection::Identity => 1.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw trainable parameters of one head's kernel together with the per-slot
/// bijections that produce the constrained values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub raw: Vec<f64>,
    pub mapping: Vec<Bijection>,
}

impl ParamVector {
    /// Builds the raw vector for a trainable spec. Fixed variants (ALiBi)
    /// produce an empty vector.
    pub fn from_spec(spec: &KernelSpec) -> Self {
        let mapping = spec.variant().bijections();
        let raw = spec
            .params()
            .iter()
            .zip(&mapping)
            .map(|(&p, b)| b.unconstrain(p))
            .collect();
        Self { raw, mapping }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn constrained(&self) -> Vec<f64> {
        self.raw
            .iter()
            .zip(&self.mapping)
            .map(|(&r, b)| b.constrain(r))
            .collect()
    }

    /// Chain rule: converts gradients w.r.t. constrained values into
    /// gradients w.r.t. the raw slots.
    pub fn chain(&self, constrained_grad: &[f64]) -> Vec<f64> {
        self.raw
            .iter()
            .zip(&self.mapping)
            .zip(constrained_grad)
            .map(|((&r, b), g)| g * b.derivative(r))
            .collect()
    }

    pub fn to_spec(&self, variant: Variant, head_index: usize, num_heads: usize) -> Result<KernelSpec> {
        KernelSpec::new(variant, self.constrained(), head_index, num_heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn positive_round_trip(p in 1e-6f64..1e6) {
            let b = Bijection::Positive;
            let back = b.constrain(b.unconstrain(p));
            prop_assert!((back - p).abs() <= 1e-12 * p.max(1.0));
        }

        #[test]
        fn interval_round_trip(p in 1e-6f64..(2.0 - 1e-6)) {
            let b = Bijection::Interval02;
            prop_assert!((b.constrain(b.unconstrain(p)) - p).abs() <= 1e-12);
        }

        #[test]
        fn maps_are_monotone_and_in_domain(x in -30.0f64..30.0, dx in 1e-3f64..1.0) {
            for b in [Bijection::Positive, Bijection::Interval02] {
                let lo = b.constrain(x);
                let hi = b.constrain(x + dx);
                prop_assert!(lo > 0.0 && hi > lo);
            }
            prop_assert!(Bijection::Interval02.constrain(x) <= 2.0);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for b in [Bijection::Positive, Bijection::Interval02, Bijection::Identity] {
            for x in [-3.0, -0.2, 0.0, 0.7, 4.0] {
                let h = 1e-6;
                let fd = (b.constrain(x + h) - b.constrain(x - h)) / (2.0 * h);
                assert!((fd - b.derivative(x)).abs() < 1e-8, "{b:?} at {x}");
            }
        }
    }

    #[test]
    fn interval_endpoint_is_asymptotic() {
        assert!(Bijection::Interval02.constrain(10.0) < 2.0);
        assert!(Bijection::Interval02.unconstrain(2.0).is_infinite());
    }
}
