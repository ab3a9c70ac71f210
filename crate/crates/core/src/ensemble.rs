//! Parallel ensembles of SDE paths and the estimators built on them.
//!
//! Paths are grouped into fixed chunks of [`CHUNK_PATHS`]; each chunk is
//! summarised independently and the summaries are merged in chunk order, so
//! an ensemble is bit-identical for any number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{stationary_overlap_moments, AnalyticSolution, Beta};
use crate::error::{Error, Result};
use crate::sde::{self, StepScheme, TimeGrid};
use crate::stats::{trapezoid, Summary};

pub const CHUNK_PATHS: u64 = 256;

/// Physical input plus discretisation and sampling controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Beta,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: u64,
    pub scheme: StepScheme,
    pub output_stride: f64,
    pub master_seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            beta: Beta::new(1.0).expect("valid"),
            dt: 1e-3,
            horizon: 10.0,
            n_paths: 10_000,
            scheme: StepScheme::Splitting,
            output_stride: 0.1,
            master_seed: 42,
        }
    }
}

impl ModelParams {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.dt, self.horizon, self.output_stride)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.time_grid()?;
        if grid.n_outputs() < 11 {
            return Err(Error::invalid(format!(
                "horizon / stride gives {} output points; at least 10 intervals are needed",
                grid.n_outputs()
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::invalid("at least two paths are needed for standard errors"));
        }
        Ok(())
    }
}

/// Per-time Monte Carlo means and their standard errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

impl SeriesEstimate {
    fn from_summaries(s: &[Summary]) -> Self {
        Self {
            mean: s.iter().map(|s| s.mean).collect(),
            std_err: s.iter().map(Summary::std_err).collect(),
        }
    }

    fn truncated(&self, len: usize) -> Self {
        Self {
            mean: self.mean[..len].to_vec(),
            std_err: self.std_err[..len].to_vec(),
        }
    }
}

/// Ensemble estimates of `E[I_t]`, `E[Z_t]`, `E[log Z_t]`, `E[N_t]`, `E[Z_t²]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub times: Vec<f64>,
    pub overlap: SeriesEstimate,
    pub z: SeriesEstimate,
    pub log_z: SeriesEstimate,
    pub n: SeriesEstimate,
    pub z2: SeriesEstimate,
    pub n_paths: u64,
    pub clamp_events: u64,
}

impl EnsembleCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Index of the output time within `1e−9` of `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    /// The curve restricted to `[0, t_max]`. A curve computed to a longer
    /// horizon restricts to exactly the curve of the shorter run.
    pub fn truncated(&self, t_max: f64) -> Self {
        let len = self
            .times
            .iter()
            .take_while(|&&t| t <= t_max * (1.0 + 1e-12))
            .count();
        Self {
            times: self.times[..len].to_vec(),
            overlap: self.overlap.truncated(len),
            z: self.z.truncated(len),
            log_z: self.log_z.truncated(len),
            n: self.n.truncated(len),
            z2: self.z2.truncated(len),
            n_paths: self.n_paths,
            clamp_events: self.clamp_events,
        }
    }

    fn interpolate(&self, series: &[f64], t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return series[0];
        }
        if k >= self.times.len() {
            return series[series.len() - 1];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        series[k - 1] * (1.0 - w) + series[k] * w
    }
}

const N_SERIES: usize = 5;

struct ChunkSummary {
    series: [Vec<Summary>; N_SERIES],
    clamp_events: u64,
}

fn summarise_chunk(params: &ModelParams, grid: &TimeGrid, first: u64, last: u64) -> Result<ChunkSummary> {
    let n_out = grid.n_outputs();
    let width = (last - first) as usize;
    let mut values: [Vec<f64>; N_SERIES] = std::array::from_fn(|_| vec![0.0; n_out * width]);
    let mut clamp_events = 0;
    for (p, path) in (first..last).enumerate() {
        let record = sde::simulate_path(params, path)?;
        clamp_events += record.clamp_events;
        for (k, state) in record.samples.iter().enumerate() {
            let o = state.observables().map_err(|e| Error::Path {
                path,
                source: Box::new(e),
            })?;
            let idx = k * width + p;
            values[0][idx] = o.overlap;
            values[1][idx] = o.z;
            values[2][idx] = o.log_z;
            values[3][idx] = o.n;
            values[4][idx] = o.z * o.z;
        }
    }
    let series = values.map(|v| v.chunks(width).map(Summary::from_slice).collect());
    Ok(ChunkSummary { series, clamp_events })
}

/// Runs `params.n_paths` paths on the current rayon pool.
pub fn run_ensemble(params: &ModelParams) -> Result<EnsembleCurve> {
    params.validate()?;
    let grid = params.time_grid()?;
    let n_chunks = params.n_paths.div_ceil(CHUNK_PATHS);
    let chunks: Vec<Result<ChunkSummary>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let first = c * CHUNK_PATHS;
            let last = (first + CHUNK_PATHS).min(params.n_paths);
            summarise_chunk(params, &grid, first, last)
        })
        .collect();

    let n_out = grid.n_outputs();
    let mut merged: [Vec<Summary>; N_SERIES] = std::array::from_fn(|_| vec![Summary::default(); n_out]);
    let mut clamp_events = 0;
    for chunk in chunks {
        let chunk = chunk?;
        clamp_events += chunk.clamp_events;
        for (acc, part) in merged.iter_mut().zip(chunk.series.iter()) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a = a.merge(*b);
            }
        }
    }
    let [overlap, z, log_z, n, z2] = merged.map(|s| SeriesEstimate::from_summaries(&s));
    Ok(EnsembleCurve {
        times: grid.output_times(),
        overlap,
        z,
        log_z,
        n,
        z2,
        n_paths: params.n_paths,
        clamp_events,
    })
}

/// The two routes to the free energy at the curve's horizon `T`, plus the
/// two-point extrapolation `(E[log Z_T] − E[log Z_{T/2}]) / (T/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimates {
    /// `E[log Z_T] / T`
    pub direct: f64,
    pub direct_se: f64,
    /// `−(β²/2)·(1/T)∫₀ᵀ E[I_s] ds`, trapezoidal.
    pub via_overlap: f64,
    pub via_overlap_se: f64,
    pub extrapolated: f64,
    pub extrapolated_se: f64,
}

pub fn free_energy_estimators(curve: &EnsembleCurve, beta: Beta) -> Result<FreeEnergyEstimates> {
    if curve.len() < 11 {
        return Err(Error::invalid(format!(
            "free-energy estimators need at least 11 output times, got {}",
            curve.len()
        )));
    }
    let horizon = curve.horizon();
    let last = curve.len() - 1;
    let half_coef = -0.5 * beta.squared();

    let direct = curve.log_z.mean[last] / horizon;
    let direct_se = curve.log_z.std_err[last] / horizon;

    let via_overlap = half_coef * trapezoid(&curve.times, &curve.overlap.mean) / horizon;
    // Bounded by the time-average of the pointwise errors.
    let via_overlap_se = 0.5 * beta.squared() * trapezoid(&curve.times, &curve.overlap.std_err) / horizon;

    let half = 0.5 * horizon;
    let log_z_half = curve.interpolate(&curve.log_z.mean, half);
    let se_half = curve.interpolate(&curve.log_z.std_err, half);
    let extrapolated = (curve.log_z.mean[last] - log_z_half) / half;
    let extrapolated_se = (curve.log_z.std_err[last] + se_half) / half;

    Ok(FreeEnergyEstimates {
        direct,
        direct_se,
        via_overlap,
        via_overlap_se,
        extrapolated,
        extrapolated_se,
    })
}

/// Simulated limits and rates set against their closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub beta: f64,
    pub horizon: f64,
    pub n_paths: u64,
    pub clamp_events: u64,
    /// Mean of `E[I_t]` over the last 20% of output times.
    pub overlap_limit_hat: f64,
    /// Mean of the pointwise standard errors over the same window (an upper
    /// bound on the standard error of the window average).
    pub overlap_limit_se: f64,
    pub alpha_minus_ref: f64,
    /// Mean overlap under the stationary law of the overlap diffusion.
    pub stationary_overlap_ref: f64,
    /// `|overlap_limit_hat − α₋|`.
    pub abs_error: f64,
    /// Fitted decay exponent of `E[I_t] − α₋`; absent when no output time
    /// has an excess above five standard errors.
    pub rate_hat: Option<f64>,
    pub rate_fit_points: usize,
    pub rate_ref: f64,
    pub fe_hat_direct: f64,
    pub fe_hat_overlap: f64,
    pub fe_hat_extrapolated: f64,
    pub fe_estimates: FreeEnergyEstimates,
    pub fe_ref: f64,
    /// `min_t (E[I_t] − α₋ + 3·SE)`; nonnegative when the lower bound holds.
    pub lower_bound_margin: f64,
    /// `min_t ((1 − α₋)e^{−λt} + 3·SE − (E[I_t] − α₋))`; nonnegative when the
    /// Gronwall envelope holds.
    pub envelope_margin: f64,
    /// `E[I_t]` strictly decreases over the first output intervals.
    pub initial_decrease: bool,
}

impl ConvergenceReport {
    pub fn summary_line(&self) -> String {
        format!(
            "beta={} alpha_hat={:.6} alpha={:.6} stationary={:.6} err={:.2e} p_hat={:.6} p={:.6}",
            self.beta,
            self.overlap_limit_hat,
            self.alpha_minus_ref,
            self.stationary_overlap_ref,
            self.abs_error,
            self.fe_hat_extrapolated,
            self.fe_ref
        )
    }
}

/// Pointwise margins of the lower bound `E[I_t] ≥ α₋` and the Gronwall envelope
/// `E[I_t] − α₋ ≤ (1 − α₋)e^{−λt}`, each with a `3·SE` allowance.
pub fn inequality_margins(curve: &EnsembleCurve, analytic: &AnalyticSolution) -> (f64, f64) {
    let alpha = analytic.alpha_minus;
    let mut lower = f64::INFINITY;
    let mut envelope = f64::INFINITY;
    for ((&t, &u), &se) in curve.times.iter().zip(&curve.overlap.mean).zip(&curve.overlap.std_err) {
        lower = lower.min(u - alpha + 3.0 * se);
        let bound = (1.0 - alpha) * (-analytic.rate_lambda * t).exp();
        envelope = envelope.min(bound + 3.0 * se - (u - alpha));
    }
    (lower, envelope)
}

const INITIAL_WINDOW: usize = 5;

pub fn fit_convergence(curve: &EnsembleCurve, analytic: &AnalyticSolution) -> Result<ConvergenceReport> {
    let beta = Beta::new(analytic.beta)?;
    let fe = free_energy_estimators(curve, beta)?;
    let horizon = curve.horizon();
    let alpha = analytic.alpha_minus;

    let tail_start = curve.times.partition_point(|&t| t < 0.8 * horizon * (1.0 - 1e-12));
    let tail = tail_start..curve.len();
    let n_tail = tail.len() as f64;
    let overlap_limit_hat = curve.overlap.mean[tail.clone()].iter().sum::<f64>() / n_tail;
    let overlap_limit_se = curve.overlap.std_err[tail].iter().sum::<f64>() / n_tail;

    // Noise-gated window: consecutive times from t > 0 where the excess is
    // more than five standard errors.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 1..curve.len() {
        let excess = curve.overlap.mean[k] - alpha;
        if !(excess > 5.0 * curve.overlap.std_err[k]) || excess <= 0.0 {
            break;
        }
        xs.push(curve.times[k]);
        ys.push(excess.ln());
    }
    let rate_hat = (xs.len() >= 2).then(|| -least_squares_slope(&xs, &ys));

    let (lower_bound_margin, envelope_margin) = inequality_margins(curve, analytic);
    let window = INITIAL_WINDOW.min(curve.len() - 1);
    let initial_decrease = curve.overlap.mean[..=window].windows(2).all(|w| w[1] < w[0]);

    Ok(ConvergenceReport {
        beta: analytic.beta,
        horizon,
        n_paths: curve.n_paths,
        clamp_events: curve.clamp_events,
        overlap_limit_hat,
        overlap_limit_se,
        alpha_minus_ref: alpha,
        stationary_overlap_ref: stationary_overlap_moments(Beta::new(analytic.beta)?).0,
        abs_error: (overlap_limit_hat - alpha).abs(),
        rate_hat,
        rate_fit_points: xs.len(),
        rate_ref: analytic.rate_lambda,
        fe_hat_direct: fe.direct,
        fe_hat_overlap: fe.via_overlap,
        fe_hat_extrapolated: fe.extrapolated,
        fe_estimates: fe,
        fe_ref: analytic.free_energy,
        lower_bound_margin,
        envelope_margin,
        initial_decrease,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
