//! Time stepping for the two-point stochastic heat equation
//!
//! ```text
//! dX₁ = (X₂ − X₁) dt + β X₁ dB₁
//! dX₂ = (X₁ − X₂) dt + β X₂ dB₂
//! ```
//!
//! started from `(X₁, X₂) = (1, 0)`, in the Itô sense. `X_i(t)` is the
//! point-to-point partition function `Z_t(1, i)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytic::Beta;
use crate::ensemble::ModelParams;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepScheme {
    /// Euler–Maruyama, negative components clamped to zero.
    Euler,
    /// Euler plus the diagonal Itô correction `(β²/2)·x_i·(dB_i² − dt)`.
    Milstein,
    /// Strang splitting: exact geometric half-steps around the exact heat
    /// semigroup, the half-step increments resolved by a Brownian bridge.
    /// Positivity preserving, an exact martingale, weak order 2.
    #[default]
    Splitting,
}

impl StepScheme {
    pub const ALL: [StepScheme; 3] = [StepScheme::Euler, StepScheme::Milstein, StepScheme::Splitting];

    pub fn name(self) -> &'static str {
        match self {
            StepScheme::Euler => "euler",
            StepScheme::Milstein => "milstein",
            StepScheme::Splitting => "splitting",
        }
    }
}

impl fmt::Display for StepScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(StepScheme::Euler),
            "milstein" => Ok(StepScheme::Milstein),
            "splitting" => Ok(StepScheme::Splitting),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

/// `(X₁(t), X₂(t)) = (Z_t(1,1), Z_t(1,2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolymerState {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
}

impl PolymerState {
    /// The chain starts at site 1: `X₁(0) = 1`, `X₂(0) = 0`.
    pub const fn initial() -> Self {
        Self { t: 0.0, x1: 1.0, x2: 0.0 }
    }

    pub fn z(&self) -> f64 {
        self.x1 + self.x2
    }

    pub fn observables(&self) -> Result<Observables> {
        derive_observables(self)
    }
}

/// Brownian increments of the two sites over one step.
///
/// `mid_i = B_i(t + dt/2) − (B_i(t) + B_i(t + dt))/2` is the bridge deviation
/// at the half step, `N(0, dt/4)` and independent of `db_i`. Only splitting
/// reads it; zero means the conditional mean of the half-step value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseIncrement {
    pub db1: f64,
    pub db2: f64,
    pub mid1: f64,
    pub mid2: f64,
}

impl NoiseIncrement {
    pub const ZERO: Self = Self::new(0.0, 0.0);

    /// Increments with the half-step values at their bridge means.
    pub const fn new(db1: f64, db2: f64) -> Self {
        Self { db1, db2, mid1: 0.0, mid2: 0.0 }
    }
}

/// `Z_t`, `N_t = X₁² + X₂²`, the overlap `I_t = N_t / Z_t²` and `log Z_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observables {
    pub z: f64,
    pub n: f64,
    pub overlap: f64,
    pub log_z: f64,
}

pub fn derive_observables(state: &PolymerState) -> Result<Observables> {
    let z = state.x1 + state.x2;
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::ZeroPartition { t: state.t });
    }
    // (a² + b²)/(a + b)² = 1/2 + (a − b)²/(2(a + b)²) stays in [1/2, 1] under rounding.
    let r = (state.x1 - state.x2) / z;
    Ok(Observables {
        z,
        n: state.x1 * state.x1 + state.x2 * state.x2,
        overlap: 0.5 + 0.5 * r * r,
        log_z: z.ln(),
    })
}

/// One scheme at fixed `(β, dt)` with its precomputed constants.
#[derive(Clone, Debug)]
pub struct Stepper {
    scheme: StepScheme,
    beta: f64,
    dt: f64,
    /// `e^{−2dt}`: decay of `x₁ − x₂` under the heat semigroup.
    damping: f64,
    /// `−β²dt/4`
    half_ito: f64,
    milstein_coef: f64,
    clamp_events: u64,
}

impl Stepper {
    pub fn new(beta: Beta, dt: f64, scheme: StepScheme) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        let b = beta.value();
        Ok(Self {
            scheme,
            beta: b,
            dt,
            damping: (-2.0 * dt).exp(),
            half_ito: -0.25 * b * b * dt,
            milstein_coef: 0.5 * b * b,
            clamp_events: 0,
        })
    }

    pub fn scheme(&self) -> StepScheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Components clamped to zero so far (Euler and Milstein only).
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    #[inline]
    pub fn advance(&mut self, state: PolymerState, noise: NoiseIncrement) -> Result<PolymerState> {
        let PolymerState { t, x1, x2 } = state;
        let (y1, y2) = match self.scheme {
            StepScheme::Euler => {
                let drift = (x2 - x1) * self.dt;
                let y1 = x1 + drift + self.beta * x1 * noise.db1;
                let y2 = x2 - drift + self.beta * x2 * noise.db2;
                (self.clamp(y1), self.clamp(y2))
            }
            StepScheme::Milstein => {
                let drift = (x2 - x1) * self.dt;
                let c = self.milstein_coef;
                let y1 = x1 + drift + self.beta * x1 * noise.db1 + c * x1 * (noise.db1 * noise.db1 - self.dt);
                let y2 = x2 - drift + self.beta * x2 * noise.db2 + c * x2 * (noise.db2 * noise.db2 - self.dt);
                (self.clamp(y1), self.clamp(y2))
            }
            StepScheme::Splitting => {
                let (h1, h2) = (0.5 * noise.db1, 0.5 * noise.db2);
                let a1 = (self.beta * (h1 + noise.mid1) + self.half_ito).exp();
                let a2 = (self.beta * (h2 + noise.mid2) + self.half_ito).exp();
                let (u1, u2) = self.heat_flow(x1 * a1, x2 * a2);
                let b1 = (self.beta * (h1 - noise.mid1) + self.half_ito).exp();
                let b2 = (self.beta * (h2 - noise.mid2) + self.half_ito).exp();
                (u1 * b1, u2 * b2)
            }
        };
        let t = t + self.dt;
        if !y1.is_finite() || !y2.is_finite() {
            return Err(Error::NonFinite { t, x1: y1, x2: y2 });
        }
        Ok(PolymerState { t, x1: y1, x2: y2 })
    }

    /// Exact `e^{L dt}`: the mean is preserved and the difference decays.
    #[inline]
    fn heat_flow(&self, x1: f64, x2: f64) -> (f64, f64) {
        let mean = 0.5 * (x1 + x2);
        let half_diff = 0.5 * (x1 - x2) * self.damping;
        (mean + half_diff, mean - half_diff)
    }

    #[inline]
    fn clamp(&mut self, x: f64) -> f64 {
        if x < 0.0 {
            self.clamp_events += 1;
            0.0
        } else {
            x
        }
    }
}

/// One step of `scheme`.
pub fn step(
    state: PolymerState,
    dt: f64,
    noise: NoiseIncrement,
    scheme: StepScheme,
    beta: Beta,
) -> Result<PolymerState> {
    Stepper::new(beta, dt, scheme)?.advance(state, noise)
}

/// A fixed step `dt` with observations every `stride_steps` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: u64,
    pub stride_steps: u64,
}

fn whole_multiple(total: f64, unit: f64, what: &str) -> Result<u64> {
    let ratio = total / unit;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::invalid(format!(
            "{what}: {total} is not a whole multiple of {unit}"
        )));
    }
    Ok(k as u64)
}

impl TimeGrid {
    pub fn new(dt: f64, horizon: f64, stride: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) || !(stride > 0.0) {
            return Err(Error::invalid("dt, horizon and stride must be positive"));
        }
        if stride < dt {
            return Err(Error::invalid(format!("output stride {stride} is below dt {dt}")));
        }
        let n_steps = whole_multiple(horizon, dt, "horizon / dt")?;
        let stride_steps = whole_multiple(stride, dt, "stride / dt")?;
        if n_steps % stride_steps != 0 {
            return Err(Error::invalid(format!(
                "horizon {horizon} is not a whole number of output strides {stride}"
            )));
        }
        Ok(Self { dt, n_steps, stride_steps })
    }

    pub fn n_outputs(&self) -> usize {
        (self.n_steps / self.stride_steps) as usize + 1
    }

    pub fn output_times(&self) -> Vec<f64> {
        (0..self.n_outputs())
            .map(|k| (k as u64 * self.stride_steps) as f64 * self.dt)
            .collect()
    }
}

/// States at the output times of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub samples: Vec<PolymerState>,
    pub clamp_events: u64,
}

/// Integrates from the initial state on `grid`, consuming one increment per step.
pub fn integrate<I>(beta: Beta, scheme: StepScheme, grid: &TimeGrid, noise: I) -> Result<PathRecord>
where
    I: IntoIterator<Item = NoiseIncrement>,
{
    let mut stepper = Stepper::new(beta, grid.dt, scheme)?;
    let mut noise = noise.into_iter();
    let mut state = PolymerState::initial();
    let mut samples = Vec::with_capacity(grid.n_outputs());
    samples.push(state);
    for k in 1..=grid.n_steps {
        let inc = noise
            .next()
            .ok_or_else(|| Error::invalid(format!("noise exhausted after {} steps", k - 1)))?;
        state = stepper.advance(state, inc)?;
        // Pin the clock to the grid.
        state.t = k as f64 * grid.dt;
        if k % grid.stride_steps == 0 {
            derive_observables(&state)?;
            samples.push(state);
        }
    }
    Ok(PathRecord {
        samples,
        clamp_events: stepper.clamp_events(),
    })
}

/// Path `path_index` of the ensemble described by `params`.
pub fn simulate_path(params: &ModelParams, path_index: u64) -> Result<PathRecord> {
    let grid = params.time_grid()?;
    let noise = NoiseStream::for_path(params.master_seed, path_index, params.dt);
    integrate(params.beta, params.scheme, &grid, noise).map_err(|e| Error::Path {
        path: path_index,
        source: Box::new(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn beta(v: f64) -> Beta {
        Beta::new(v).unwrap()
    }

    #[test]
    fn euler_zero_noise_relaxes() {
        let s = step(PolymerState::initial(), 0.1, NoiseIncrement::ZERO, StepScheme::Euler, beta(1.0)).unwrap();
        assert!((s.t - 0.1).abs() < 1e-15);
        assert!((s.x1 - 0.9).abs() < 1e-15);
        assert!((s.x2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn splitting_symmetric_fixed_point() {
        let start = PolymerState { t: 0.0, x1: 1.0, x2: 1.0 };
        for dt in [1e-3, 0.1, 2.0] {
            let s = step(start, dt, NoiseIncrement::ZERO, StepScheme::Splitting, beta(0.0)).unwrap();
            assert_eq!((s.x1, s.x2), (1.0, 1.0));
            assert_eq!(s.t, dt);
        }
        // With beta > 0 and zero increments the Itô factor e^{−β²dt/2} remains.
        let s = step(start, 0.1, NoiseIncrement::ZERO, StepScheme::Splitting, beta(1.0)).unwrap();
        assert!((s.x1 - (-0.05f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn splitting_single_step_by_hand() {
        let (b, dt) = (0.7, 0.05);
        let noise = NoiseIncrement {
            db1: 0.2,
            db2: -0.1,
            mid1: 0.03,
            mid2: -0.04,
        };
        let s = step(PolymerState::initial(), dt, noise, StepScheme::Splitting, beta(b)).unwrap();
        // Half-step increments: B(dt/2) = db/2 + mid, then db/2 − mid.
        let f = |h: f64| (b * h - b * b * dt / 4.0).exp();
        let (p, q) = ((1.0 + (-2.0 * dt).exp()) / 2.0, (1.0 - (-2.0 * dt).exp()) / 2.0);
        let u1 = p * f(0.13);
        let u2 = q * f(0.13);
        assert!((s.x1 - u1 * f(0.07)).abs() < 1e-15);
        assert!((s.x2 - u2 * f(-0.01)).abs() < 1e-15);
    }

    #[test]
    fn milstein_adds_ito_correction() {
        let (b, dt) = (1.0, 0.01);
        let noise = NoiseIncrement::new(0.3, 0.0);
        let e = step(PolymerState::initial(), dt, noise, StepScheme::Euler, beta(b)).unwrap();
        let m = step(PolymerState::initial(), dt, noise, StepScheme::Milstein, beta(b)).unwrap();
        assert!((m.x1 - e.x1 - 0.5 * (0.09 - dt)).abs() < 1e-15);
        assert!((m.x2 - e.x2).abs() < 1e-15);
    }

    #[test]
    fn euler_clamps_and_counts() {
        let mut stepper = Stepper::new(beta(2.0), 0.01, StepScheme::Euler).unwrap();
        let s = stepper
            .advance(PolymerState::initial(), NoiseIncrement::new(-1.0, 0.0))
            .unwrap();
        assert_eq!(s.x1, 0.0);
        assert_eq!(stepper.clamp_events(), 1);
    }

    #[test]
    fn overflow_is_reported() {
        let err = step(
            PolymerState::initial(),
            1.0,
            NoiseIncrement::new(1e4, 0.0),
            StepScheme::Splitting,
            beta(10.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn observables_examples() {
        let o = PolymerState::initial().observables().unwrap();
        assert_eq!((o.z, o.n, o.overlap, o.log_z), (1.0, 1.0, 1.0, 0.0));
        let o = PolymerState { t: 0.0, x1: 1.0, x2: 1.0 }.observables().unwrap();
        assert_eq!((o.z, o.n, o.overlap), (2.0, 2.0, 0.5));
        let o = PolymerState { t: 0.0, x1: 3.0, x2: 1.0 }.observables().unwrap();
        assert_eq!((o.z, o.n, o.overlap), (4.0, 10.0, 10.0 / 16.0));
        let err = PolymerState { t: 1.0, x1: 0.0, x2: 0.0 }.observables().unwrap_err();
        assert!(matches!(err, Error::ZeroPartition { .. }));
    }

    #[test]
    fn time_grid_validation() {
        let g = TimeGrid::new(1e-3, 5.0, 0.1).unwrap();
        assert_eq!((g.n_steps, g.stride_steps, g.n_outputs()), (5000, 100, 51));
        assert!((g.output_times()[50] - 5.0).abs() < 1e-12);
        assert!(TimeGrid::new(0.3, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.1, 1.0, 0.05).is_err());
        assert!(TimeGrid::new(0.1, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn zero_noise_flow_matches_heat_semigroup() {
        let grid = TimeGrid::new(1e-3, 3.0, 0.5).unwrap();
        let rec = integrate(beta(0.0), StepScheme::Splitting, &grid, std::iter::repeat(NoiseIncrement::ZERO)).unwrap();
        for s in &rec.samples {
            assert!((s.x1 + s.x2 - 1.0).abs() < 1e-9);
            assert!((s.x1 - s.x2 - (-2.0 * s.t).exp()).abs() < 1e-9);
        }
        // Euler reproduces the flow to O(dt).
        let rec = integrate(beta(0.0), StepScheme::Euler, &grid, std::iter::repeat(NoiseIncrement::ZERO)).unwrap();
        for s in &rec.samples {
            assert!((s.x1 + s.x2 - 1.0).abs() < 1e-9);
            assert!((s.x1 - s.x2 - (-2.0 * s.t).exp()).abs() < 5e-3);
        }
    }

    #[test]
    fn beta_zero_path_keeps_z_one_and_relaxes_overlap() {
        let params = ModelParams {
            beta: beta(0.0),
            horizon: 5.0,
            ..ModelParams::default()
        };
        let rec = simulate_path(&params, 17).unwrap();
        for s in &rec.samples {
            let o = s.observables().unwrap();
            assert!((o.z - 1.0).abs() < 1e-12);
            assert!((o.overlap - 0.5 * (1.0 + (-4.0 * s.t).exp())).abs() < 1e-9);
        }
    }

    #[test]
    fn simulate_path_is_deterministic() {
        let params = ModelParams {
            beta: beta(1.0),
            horizon: 2.0,
            ..ModelParams::default()
        };
        let a = simulate_path(&params, 3).unwrap();
        let b = simulate_path(&params, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_path(&params, 4).unwrap());
    }

    // Strong self-convergence: one path at dt against the same Brownian path
    // resolved 10x finer.
    #[test]
    fn splitting_strong_self_convergence() {
        let (b, horizon) = (beta(1.0), 1.0);
        let fine_dt = 1e-3;
        let fine_noise: Vec<NoiseIncrement> = NoiseStream::for_path(11, 0, fine_dt).take(1000).collect();
        let coarse = |factor: usize| -> Vec<NoiseIncrement> {
            fine_noise
                .chunks(factor)
                .map(|c| {
                    let (first, _) = c.split_at(factor / 2);
                    let db1: f64 = c.iter().map(|n| n.db1).sum();
                    let db2: f64 = c.iter().map(|n| n.db2).sum();
                    NoiseIncrement {
                        db1,
                        db2,
                        mid1: first.iter().map(|n| n.db1).sum::<f64>() - 0.5 * db1,
                        mid2: first.iter().map(|n| n.db2).sum::<f64>() - 0.5 * db2,
                    }
                })
                .collect()
        };
        let reference = {
            let g = TimeGrid::new(fine_dt, horizon, horizon).unwrap();
            *integrate(b, StepScheme::Splitting, &g, fine_noise.iter().copied()).unwrap().samples.last().unwrap()
        };
        let err = |factor: usize| {
            let dt = fine_dt * factor as f64;
            let g = TimeGrid::new(dt, horizon, horizon).unwrap();
            let end = *integrate(b, StepScheme::Splitting, &g, coarse(factor)).unwrap().samples.last().unwrap();
            (end.x1 - reference.x1).abs().max((end.x2 - reference.x2).abs())
        };
        // dt = 0.01 against dt = 0.001
        assert!(err(10) < 0.05 * reference.x1.max(reference.x2), "strong error {}", err(10));
        assert!(err(10) < err(100));
    }

    proptest! {
        #[test]
        fn splitting_preserves_positivity_and_overlap_range(
            x1 in 1e-6f64..10.0,
            x2 in 0.0f64..10.0,
            db1 in -3.0f64..3.0,
            db2 in -3.0f64..3.0,
            b in 0.0f64..4.0,
            dt in 1e-4f64..0.5,
        ) {
            let s = step(PolymerState { t: 0.0, x1, x2 }, dt, NoiseIncrement::new(db1, db2), StepScheme::Splitting, beta(b)).unwrap();
            prop_assert!(s.x1 > 0.0 && s.x2 > 0.0);
            let o = s.observables().unwrap();
            prop_assert!((0.5..=1.0).contains(&o.overlap));
        }

        #[test]
        fn overlap_in_range_for_nonnegative_states(x1 in 0.0f64..1e6, x2 in 0.0f64..1e6) {
            prop_assume!(x1 + x2 > 0.0);
            let o = PolymerState { t: 0.0, x1, x2 }.observables().unwrap();
            prop_assert!((0.5..=1.0).contains(&o.overlap));
        }
    }
}
