//! Interface exchange kinetics `h(c_f, c_s)`.
//!
//! Only a closed set of globally Lipschitz laws is offered so that the
//! Lipschitz constant is known in closed form.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the sampling box `[-R, R]²` used by [`lipschitz_certificate`].
pub const CERTIFICATE_RADIUS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum KineticsError {
    #[error("rate constant {name} = {value} must be finite and non-negative")]
    InvalidRate { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum KineticsSpec {
    /// `h(a, b) = k (a - b)`.
    Linear {
        k: f64,
    },
    /// `h(a, b) = k1 a/(1+|a|) - k2 b/(1+|b|)`.
    Saturating {
        k1: f64,
        k2: f64,
    },
    Zero,
}

impl KineticsSpec {
    pub fn validate(&self) -> Result<(), KineticsError> {
        let check = |name: &'static str, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(KineticsError::InvalidRate { name, value })
            }
        };
        match *self {
            KineticsSpec::Linear { k } => check("k", k),
            KineticsSpec::Saturating { k1, k2 } => {
                check("k1", k1)?;
                check("k2", k2)
            }
            KineticsSpec::Zero => Ok(()),
        }
    }

    /// Lipschitz constant with respect to the ℓ¹ norm on `(a, b)`, i.e. the
    /// largest of the two partial-derivative bounds.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            KineticsSpec::Linear { k } => k,
            KineticsSpec::Saturating { k1, k2 } => k1.max(k2),
            KineticsSpec::Zero => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            KineticsSpec::Zero => true,
            KineticsSpec::Linear { k } => k == 0.0,
            KineticsSpec::Saturating { k1, k2 } => k1 == 0.0 && k2 == 0.0,
        }
    }

    /// `∂h/∂a` and `∂h/∂b`.
    pub fn partials(&self, a: f64, b: f64) -> (f64, f64) {
        match *self {
            KineticsSpec::Linear { k } => (k, -k),
            KineticsSpec::Saturating { k1, k2 } => {
                (k1 / (1.0 + a.abs()).powi(2), -k2 / (1.0 + b.abs()).powi(2))
            }
            KineticsSpec::Zero => (0.0, 0.0),
        }
    }
}

/// Exchange rate from the fluid into the solid.
#[inline]
pub fn eval_h(spec: &KineticsSpec, a: f64, b: f64) -> f64 {
    match *spec {
        KineticsSpec::Linear { k } => k * (a - b),
        KineticsSpec::Saturating { k1, k2 } => k1 * a / (1.0 + a.abs()) - k2 * b / (1.0 + b.abs()),
        KineticsSpec::Zero => 0.0,
    }
}

/// Radical inverse of `i` in `base`.
fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut x = 0.0;
    while i > 0 {
        x += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    x
}

/// The first `count` points of the Halton(2, 3) sequence mapped to `[-R, R]²`.
pub fn halton_points(count: usize) -> Vec<(f64, f64)> {
    (1..=count)
        .map(|i| {
            (
                CERTIFICATE_RADIUS * (2.0 * radical_inverse(i, 2) - 1.0),
                CERTIFICATE_RADIUS * (2.0 * radical_inverse(i, 3) - 1.0),
            )
        })
        .collect()
}

/// Sampled supremum of `|h(p) - h(q)| / ‖p - q‖₁` over pairs of Halton points
/// and over axis-aligned pairs that probe each argument separately.
pub fn lipschitz_certificate(spec: &KineticsSpec, samples: usize) -> f64 {
    let pts = halton_points(samples.max(2));
    let vals: Vec<f64> = pts.iter().map(|&(a, b)| eval_h(spec, a, b)).collect();
    let mut best: f64 = 0.0;
    for p in 0..pts.len() {
        for q in p + 1..pts.len() {
            let d = (pts[p].0 - pts[q].0).abs() + (pts[p].1 - pts[q].1).abs();
            if d > 0.0 {
                best = best.max((vals[p] - vals[q]).abs() / d);
            }
        }
        // Axis-aligned partner points at the coordinates of the next sample.
        let (a, b) = pts[p];
        let (a2, b2) = pts[(p + 1) % pts.len()];
        if a2 != a {
            best = best.max((eval_h(spec, a2, b) - vals[p]).abs() / (a2 - a).abs());
        }
        if b2 != b {
            best = best.max((eval_h(spec, a, b2) - vals[p]).abs() / (b2 - b).abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas() {
        assert_eq!(eval_h(&KineticsSpec::Linear { k: 1.0 }, 0.7, 0.7), 0.0);
        assert_eq!(eval_h(&KineticsSpec::Linear { k: 2.0 }, 3.0, 1.0), 4.0);
        assert_eq!(
            eval_h(&KineticsSpec::Saturating { k1: 1.0, k2: 1.0 }, 1.0, 0.0),
            0.5
        );
        assert_eq!(eval_h(&KineticsSpec::Zero, 5.0, -3.0), 0.0);
    }

    #[test]
    fn certificates_do_not_exceed_constants() {
        let specs = [
            KineticsSpec::Zero,
            KineticsSpec::Linear { k: 3.0 },
            KineticsSpec::Saturating { k1: 1.0, k2: 1.0 },
            KineticsSpec::Saturating { k1: 0.3, k2: 2.0 },
        ];
        for s in specs {
            let c = lipschitz_certificate(&s, 400);
            assert!(c <= s.lipschitz_constant() + 1e-9, "{s:?}: {c}");
        }
        assert_eq!(lipschitz_certificate(&KineticsSpec::Zero, 50), 0.0);
        // Axis-aligned probes recover the linear rate itself.
        let lin = lipschitz_certificate(&KineticsSpec::Linear { k: 3.0 }, 100);
        assert!((lin - 3.0).abs() < 1e-12);
    }

    #[test]
    fn halton_start() {
        let p = halton_points(3);
        assert_eq!(p[0], (0.0, CERTIFICATE_RADIUS * (2.0 / 3.0 - 1.0)));
        assert_eq!(p[1].0, -5.0);
    }

    #[test]
    fn partials_match_finite_differences() {
        let s = KineticsSpec::Saturating { k1: 1.3, k2: 0.7 };
        for &(a, b) in &[(0.3, -0.2), (2.0, 5.0), (-1.5, 0.4)] {
            let (da, db) = s.partials(a, b);
            let eps = 1e-6;
            let fa = (eval_h(&s, a + eps, b) - eval_h(&s, a - eps, b)) / (2.0 * eps);
            let fb = (eval_h(&s, a, b + eps) - eval_h(&s, a, b - eps)) / (2.0 * eps);
            assert!((da - fa).abs() < 1e-8 && (db - fb).abs() < 1e-8);
        }
    }

    #[test]
    fn serde_shape() {
        let k: KineticsSpec = serde_json::from_str(r#"{"variant": "linear", "k": 1.0}"#).unwrap();
        assert_eq!(k, KineticsSpec::Linear { k: 1.0 });
        let z: KineticsSpec = serde_json::from_str(r#"{"variant": "zero"}"#).unwrap();
        assert_eq!(z, KineticsSpec::Zero);
    }
}
