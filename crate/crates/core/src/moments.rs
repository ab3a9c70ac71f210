//! Exact second moments of `(X₁, X₂)`.
//!
//! Itô's formula on the SDE system closes at second order:
//!
//! ```text
//! m₁₁' = (β² − 2) m₁₁ + 2 m₁₂
//! m₂₂' = (β² − 2) m₂₂ + 2 m₁₂
//! m₁₂' = m₁₁ + m₂₂ − 2 m₁₂
//! ```
//!
//! The last line comes from `d(X₁X₂) = X₁dX₂ + X₂dX₁` (the two Brownian
//! motions are independent, so there is no bracket term), whose drift is
//! `X₁(X₁ − X₂) + X₂(X₂ − X₁) = X₁² + X₂² − 2X₁X₂`.
//!
//! For `s = m₁₁ + m₂₂` and `d = m₁₂` the system reduces to
//! `s' = (β² − 2)s + 4d`, `d' = s − 2d`, while `m₁₁ − m₂₂` decays on its own
//! as `e^{(β² − 2)t}`. The reduced matrix has trace `β² − 4`, determinant
//! `−2β²` and discriminant `β⁴ + 16 > 0`, so its eigenvalues are real and
//! distinct for every `β`.
//!
//! The overlap `E[I_t]` is not a function of these moments; nothing here
//! says anything about it.

use serde::{Deserialize, Serialize};

use crate::analytic::Beta;
use crate::error::{Error, Result};
use crate::sde::StepScheme;

/// `(E[X₁²], E[X₂²], E[X₁X₂])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub m11: f64,
    pub m22: f64,
    pub m12: f64,
}

impl MomentVector {
    pub const INITIAL: Self = Self { m11: 1.0, m22: 0.0, m12: 0.0 };

    /// `E[N_t]`
    pub fn mean_n(&self) -> f64 {
        self.m11 + self.m22
    }

    /// `E[Z_t²]`
    pub fn ez2(&self) -> f64 {
        self.m11 + self.m22 + 2.0 * self.m12
    }
}

/// Eigen-decomposition of the reduced `(s, d)` system.
struct ReducedFlow {
    beta2: f64,
    mu_plus: f64,
    mu_minus: f64,
}

impl ReducedFlow {
    fn new(beta: Beta) -> Self {
        let beta2 = beta.squared();
        let trace = beta2 - 4.0;
        let det = -2.0 * beta2;
        let root = (beta2 * beta2 + 16.0).sqrt();
        // Larger-magnitude eigenvalue first, the other from the determinant.
        let (mu_plus, mu_minus) = if trace <= 0.0 {
            let mu_minus = 0.5 * (trace - root);
            (det / mu_minus, mu_minus)
        } else {
            let mu_plus = 0.5 * (trace + root);
            (mu_plus, det / mu_plus)
        };
        Self { beta2, mu_plus, mu_minus }
    }

    /// `(s(t), d(t))` from `(1, 0)` by Sylvester's formula.
    fn at(&self, t: f64) -> (f64, f64) {
        let gap = self.mu_plus - self.mu_minus;
        let ep = (self.mu_plus * t).exp();
        let em = (self.mu_minus * t).exp();
        let a = self.beta2 - 2.0;
        let s = (ep * (a - self.mu_minus) - em * (a - self.mu_plus)) / gap;
        let d = (ep - em) / gap;
        (s, d)
    }

    /// `∫₀ᵗ s(u) du`.
    fn integral_s(&self, t: f64) -> f64 {
        let a = self.beta2 - 2.0;
        let gap = self.mu_plus - self.mu_minus;
        let int_exp = |mu: f64| if mu == 0.0 { t } else { (mu * t).exp_m1() / mu };
        ((a - self.mu_minus) * int_exp(self.mu_plus) - (a - self.mu_plus) * int_exp(self.mu_minus)) / gap
    }
}

/// Closed-form second moments at time `t`.
pub fn moment_flow(beta: Beta, t: f64) -> Result<MomentVector> {
    check_time(t)?;
    let (s, d) = ReducedFlow::new(beta).at(t);
    let diff = ((beta.squared() - 2.0) * t).exp();
    Ok(MomentVector {
        m11: 0.5 * (s + diff),
        m22: 0.5 * (s - diff),
        m12: d,
    })
}

/// `E[Z_t²] = s(t) + 2d(t)`.
pub fn exact_ez2(beta: Beta, t: f64) -> Result<f64> {
    Ok(moment_flow(beta, t)?.ez2())
}

/// `E[Z_t²]` through the bracket: `1 + β² ∫₀ᵗ E[N_u] du`.
pub fn ez2_via_bracket(beta: Beta, t: f64) -> Result<f64> {
    check_time(t)?;
    if beta.is_zero() {
        return Ok(1.0);
    }
    let flow = ReducedFlow::new(beta);
    Ok(1.0 + beta.squared() * flow.integral_s(t))
}

/// Relative disagreement of the two `E[Z_t²]` routes.
pub fn ez2_consistency(beta: Beta, t: f64) -> Result<f64> {
    let direct = exact_ez2(beta, t)?;
    let bracket = ez2_via_bracket(beta, t)?;
    Ok((direct - bracket).abs() / direct.abs().max(1.0))
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

type Sym2 = [[f64; 2]; 2];

fn to_matrix(m: &MomentVector) -> Sym2 {
    [[m.m11, m.m12], [m.m12, m.m22]]
}

fn from_matrix(s: &Sym2) -> MomentVector {
    MomentVector {
        m11: s[0][0],
        m22: s[1][1],
        m12: 0.5 * (s[0][1] + s[1][0]),
    }
}

/// Exact second moments of a discrete scheme after `n_steps` steps of `dt`.
///
/// Each scheme is linear in the state with step-independent random
/// coefficients, so `E[x xᵀ]` evolves by a deterministic linear map:
///
/// * Euler: `S ← A S Aᵀ + β²dt·diag(S)` with `A = I + dt·L`;
/// * Milstein: as Euler with `β²dt + β⁴dt²/2` in place of `β²dt`;
/// * splitting: `x' = D₂ R D₁ x` with `R = e^{L dt}` and independent
///   mean-one lognormal diagonals, so `E[d_i d_j] = e^{β²dt/2}` if `i = j`
///   and `1` otherwise.
///
/// Clamping is ignored, which is exact for splitting and negligible for the
/// other two when `β²dt` is small. The result measures the weak error of a
/// scheme free of Monte Carlo noise.
pub fn scheme_moments(beta: Beta, dt: f64, n_steps: u64, scheme: StepScheme) -> MomentVector {
    let b2 = beta.squared();
    let mut s = to_matrix(&MomentVector::INITIAL);
    match scheme {
        StepScheme::Euler | StepScheme::Milstein => {
            let a = [[1.0 - dt, dt], [dt, 1.0 - dt]];
            let noise = match scheme {
                StepScheme::Euler => b2 * dt,
                _ => b2 * dt + 0.5 * b2 * b2 * dt * dt,
            };
            for _ in 0..n_steps {
                let mut next = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        let mut acc = 0.0;
                        for k in 0..2 {
                            for l in 0..2 {
                                acc += a[i][k] * a[j][l] * s[k][l];
                            }
                        }
                        next[i][j] = acc;
                    }
                }
                next[0][0] += noise * s[0][0];
                next[1][1] += noise * s[1][1];
                s = next;
            }
        }
        StepScheme::Splitting => {
            let e = (-2.0 * dt).exp();
            let r = [[0.5 * (1.0 + e), 0.5 * (1.0 - e)], [0.5 * (1.0 - e), 0.5 * (1.0 + e)]];
            // Independent half-step factors, each with second moment e^{β²dt/2}.
            let boost = (0.5 * b2 * dt).exp();
            let lognormal = |idx: [usize; 4]| {
                let mut f = 1.0;
                if idx[0] == idx[1] {
                    f *= boost;
                }
                if idx[2] == idx[3] {
                    f *= boost;
                }
                f
            };
            for _ in 0..n_steps {
                let mut next = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        let mut acc = 0.0;
                        for k in 0..2 {
                            for l in 0..2 {
                                acc += r[i][k] * r[j][l] * lognormal([i, j, k, l]) * s[k][l];
                            }
                        }
                        next[i][j] = acc;
                    }
                }
                s = next;
            }
        }
    }
    from_matrix(&s)
}
