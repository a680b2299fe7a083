//! Paired two-sided t-test with its own special functions.

use serde::Serialize;

use crate::error::{KerpleError, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let step = d * c;
        h *= step;
        if (step - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, 0.5 * df, 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Significant,
    NotSignificant,
    /// The differences have zero variance.
    Degenerate,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Significant => "significant",
            Verdict::NotSignificant => "not_significant",
            Verdict::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Mean of `a - b`.
    pub mean_diff: f64,
    pub verdict: Verdict,
}

/// Paired two-sided t-test on `a - b`.
///
/// When every difference is identical the statistic is undefined; the
/// result is then `Degenerate` with `p = 1` if the differences are all zero
/// and `p = 0` (and `t = ±∞`) otherwise.
pub fn paired_ttest(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(KerpleError::Dimension(format!("{} vs {} paired samples", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(KerpleError::InvalidArgument("a paired t-test needs at least two pairs".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(KerpleError::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(KerpleError::NonFinite("t-test sample".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let df = diffs.len() - 1;
    let mean = diffs.iter().sum::<f64>() / n;
    if diffs.iter().all(|&d| d == diffs[0]) {
        let (t, p) = if diffs[0] == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(diffs[0]), 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            mean_diff: diffs[0],
            verdict: Verdict::Degenerate,
        });
    }
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    let p = student_t_two_sided(t, df as f64);
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: mean,
        verdict: if p < alpha {
            Verdict::Significant
        } else {
            Verdict::NotSignificant
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

    fn reference_p(t: f64, df: f64) -> f64 {
        2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs())
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        for x in [0.1, 0.7, 3.3, 12.5, 150.0] {
            assert!((ln_gamma(x) - statrs_ln_gamma(x)).abs() < 1e-11 * statrs_ln_gamma(x).abs().max(1.0));
        }
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        for x in [0.01, 0.2, 0.5, 0.77, 0.99] {
            assert!((regularized_incomplete_beta(x, 1.0, 1.0) - x).abs() < 1e-14);
            assert!((regularized_incomplete_beta(x, 3.0, 1.0) - x.powi(3)).abs() < 1e-13);
            assert!((regularized_incomplete_beta(x, 1.0, 4.0) - (1.0 - (1.0 - x).powi(4))).abs() < 1e-13);
            let s = regularized_incomplete_beta(x, 2.5, 0.5) + regularized_incomplete_beta(1.0 - x, 0.5, 2.5);
            assert!((s - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn tail_matches_reference_distribution() {
        for df in [1.0, 2.0, 4.0, 9.0, 30.0] {
            for t in [0.0, 0.3, 1.0, 2.1, 4.4, 12.0] {
                let (mine, reference) = (student_t_two_sided(t, df), reference_p(t, df));
                assert!((mine - reference).abs() < 1e-10, "df {df} t {t}: {mine} vs {reference}");
            }
        }
    }

    #[test]
    fn one_to_five_differences() {
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_ttest(&a, &b, 0.05).unwrap();
        assert!((r.t - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((r.p - reference_p(r.t, 4.0)).abs() < 1e-10);
        assert_eq!(r.df, 4);
        assert_eq!(r.verdict, Verdict::Significant);
    }

    #[test]
    fn degenerate_conventions() {
        let a = [1.0, 2.0, 3.0];
        let r = paired_ttest(&a, &a, 0.05).unwrap();
        assert_eq!((r.t, r.p, r.verdict), (0.0, 1.0, Verdict::Degenerate));
        let b = [0.5, 1.5, 2.5];
        let r = paired_ttest(&a, &b, 0.05).unwrap();
        assert_eq!((r.t, r.p, r.verdict), (f64::INFINITY, 0.0, Verdict::Degenerate));
    }

    #[test]
    fn symmetric_differences_give_zero_t() {
        let r = paired_ttest(&[1.0, -1.0, 2.0, -2.0], &[0.0; 4], 0.05).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-15);
        assert_eq!(r.verdict, Verdict::NotSignificant);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(paired_ttest(&[1.0], &[2.0], 0.05).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[2.0], 0.05).is_err());
        assert!(paired_ttest(&[1.0, f64::NAN], &[2.0, 1.0], 0.05).is_err());
        assert!(paired_ttest(&[1.0, 3.0], &[2.0, 1.0], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn swapping_samples_negates_t(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..12)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = paired_ttest(&a, &b, 0.05).unwrap();
            let ba = paired_ttest(&b, &a, 0.05).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }
    }
}
