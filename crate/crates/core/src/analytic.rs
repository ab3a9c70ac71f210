//! Closed-form limits of the two-point polymer.
//!
//! The limiting mean overlap `α₋(β)` is the smaller root of
//!
//! ```text
//! P_β(x) = 3β²x² − (5β² + 4)x + 2(1 + β²)
//! ```
//!
//! and the free energy is `p(β) = −(β²/2)·α₋(β)`. The mean overlap approaches
//! its limit at least as fast as `e^{−λt}` with `λ = −3β²(1 + α₋) + 5β² + 4`.
//!
//! On a grid over `[1e−3, 1e2]`, `α₋` increases with `β` from `1/2` towards
//! `2/3` (the smaller root of `3x² − 5x + 2`), and `λ` increases from `4`
//! towards `6`. Only `α₋ ∈ (0, 1)` is asserted as a hard invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::NeumaierSum;

/// Inverse temperature, `β ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "beta must be finite and nonnegative, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn squared(self) -> f64 {
        self.0 * self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Beta {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Beta::new(value)
    }
}

impl From<Beta> for f64 {
    fn from(beta: Beta) -> f64 {
        beta.0
    }
}

/// Every exact quantity attached to one value of `β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSolution {
    pub beta: f64,
    /// Midpoint of the roots, `(5β² + 4) / (6β²)`; `+∞` at `β = 0`.
    pub a: f64,
    pub alpha_minus: f64,
    /// `+∞` at `β = 0`.
    pub alpha_plus: f64,
    pub free_energy: f64,
    pub rate_lambda: f64,
    /// Set when the values are the `β → 0⁺` limit rather than a root solve.
    pub is_limit: bool,
}

/// `P_β(x)`, evaluated as `β²(3x − 2)(x − 1) − 2(2x − 1)`.
///
/// The factored form gives `P_β(1) = −2` exactly for every `β`.
pub fn eval_poly(beta: Beta, x: f64) -> Result<f64> {
    if beta.is_zero() {
        return Err(Error::ZeroBeta("the overlap polynomial"));
    }
    Ok(beta.squared() * (3.0 * x - 2.0) * (x - 1.0) - 2.0 * (2.0 * x - 1.0))
}

/// Roots and derived constants of `P_β`.
///
/// With `A = 3β²`, `B = 5β² + 4`, `C = 2(1 + β²)` the discriminant is
/// `β⁴ + 16β² + 16 > 0`. The larger root comes from `q = (B + √disc)/2` as
/// `q/A`, the smaller one as `C/q`; no cancellation occurs for small `β` and
/// `α₋` never divides by `β²`.
pub fn solve_alpha(beta: Beta) -> AnalyticSolution {
    let b2 = beta.squared();
    let sqrt_disc = (b2 * b2 + 16.0 * b2 + 16.0).sqrt();
    let q = 0.5 * (5.0 * b2 + 4.0 + sqrt_disc);
    let alpha_minus = 2.0 * (1.0 + b2) / q;
    // λ = 3β²(α₊ − 1) = (4 − β² + √disc)/2, rewritten without cancellation.
    let rate_lambda = 2.0 + 8.0 * (b2 + 1.0) / (sqrt_disc + b2);
    if beta.is_zero() {
        return AnalyticSolution {
            beta: 0.0,
            a: f64::INFINITY,
            alpha_minus,
            alpha_plus: f64::INFINITY,
            free_energy: 0.0,
            rate_lambda,
            is_limit: true,
        };
    }
    AnalyticSolution {
        beta: beta.value(),
        a: (5.0 * b2 + 4.0) / (6.0 * b2),
        alpha_minus,
        alpha_plus: q / (3.0 * b2),
        free_energy: -0.5 * b2 * alpha_minus,
        rate_lambda,
        is_limit: false,
    }
}

/// `p(β) = −(β²/2)·α₋(β)`; zero at `β = 0`.
pub fn free_energy(beta: Beta) -> f64 {
    solve_alpha(beta).free_energy
}

/// Mean and variance of the overlap under its stationary law.
///
/// The overlap solves `dI = P_β(I) dt + β(1 − I)√(2(2I − 1)) dW`, whose
/// stationary density in `2I − 1 = tanh² y` is proportional to
/// `exp(−(4/β²) sinh² y)` on `y ≥ 0`. The trapezoid rule is spectrally
/// accurate for this integrand. At `β = 0` the law is a point mass at 1/2.
pub fn stationary_overlap_moments(beta: Beta) -> (f64, f64) {
    if beta.is_zero() {
        return (0.5, 0.0);
    }
    const NODES: usize = 2000;
    let c = 4.0 / beta.squared();
    // the weight is below e^{-800} past this point
    let y_max = (800.0 / c).sqrt().asinh();
    let h = y_max / NODES as f64;
    let (mut w0, mut w1, mut w2) = (NeumaierSum::new(), NeumaierSum::new(), NeumaierSum::new());
    for k in 0..=NODES {
        let y = k as f64 * h;
        let end = if k == 0 || k == NODES { 0.5 } else { 1.0 };
        let w = end * (-c * y.sinh().powi(2)).exp();
        let t2 = y.tanh().powi(2);
        w0.add(w);
        w1.add(w * t2);
        w2.add(w * t2 * t2);
    }
    let (m1, m2) = (w1.value() / w0.value(), w2.value() / w0.value());
    let mean = 0.5 * (1.0 + m1);
    let var = 0.25 * (m2 - m1 * m1);
    (mean, var.max(0.0))
}
