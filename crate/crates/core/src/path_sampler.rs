//! Feynman–Kac estimates of `Z_t(1, y)` in a frozen environment.
//!
//! Paths of the symmetric two-state chain (rate-1 exponential holding times)
//! are weighted by `exp(βH_t(ω) − tβ²/2)` with `H_t(ω) = ∫₀ᵗ dB_{ω(s)}(s)`.
//! The environment is a pair of Brownian motions known on a grid of step
//! `dt_env`. Inside a grid cell the Brownian motion at a jump time is drawn
//! from its bridge law given everything already fixed, which makes `H_t`
//! exact in law; the average over chains then estimates
//! `E[Z_t(1, y) | grid]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::Beta;
use crate::error::{Error, Result};
use crate::rng::{keyed_stream, Domain};
use crate::sde::NoiseIncrement;
use crate::stats::{NeumaierSum, Summary};

/// A site of the state space `{1, 2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    One,
    Two,
}

impl Site {
    pub fn flipped(self) -> Self {
        match self {
            Site::One => Site::Two,
            Site::Two => Site::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Site::One => 0,
            Site::Two => 1,
        }
    }
}

/// A càdlàg path of the chain on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPath {
    pub start: Site,
    /// Strictly increasing, all in `(0, horizon]`.
    pub jump_times: Vec<f64>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn state_at(&self, t: f64) -> Site {
        let jumps = self.jump_times.partition_point(|&s| s <= t);
        if jumps % 2 == 0 {
            self.start
        } else {
            self.start.flipped()
        }
    }

    pub fn terminal(&self) -> Site {
        if self.jump_times.len().is_multiple_of(2) {
            self.start
        } else {
            self.start.flipped()
        }
    }

    /// Time spent at `site` during `[0, horizon]`.
    pub fn occupation(&self, site: Site) -> f64 {
        self.segments()
            .filter(|&(s, _, _)| s == site)
            .map(|(_, a, b)| b - a)
            .sum()
    }

    /// `(site, start, end)` of each holding interval.
    pub fn segments(&self) -> impl Iterator<Item = (Site, f64, f64)> + '_ {
        let bounds = std::iter::once(0.0)
            .chain(self.jump_times.iter().copied())
            .chain(std::iter::once(self.horizon));
        let ends = bounds.clone().skip(1);
        let mut site = self.start;
        bounds.zip(ends).map(move |(a, b)| {
            let out = (site, a, b);
            site = site.flipped();
            out
        })
    }
}

/// Samples the chain from site 1 on `[0, horizon]`.
pub fn sample_chain<R: Rng + ?Sized>(horizon: f64, rng: &mut R) -> ChainPath {
    let mut jump_times = Vec::new();
    let mut t: f64 = Exp1.sample(rng);
    while t <= horizon {
        jump_times.push(t);
        let hold: f64 = Exp1.sample(rng);
        t += hold;
    }
    ChainPath {
        start: Site::One,
        jump_times,
        horizon,
    }
}

/// Two Brownian motions sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentGrid {
    dt_env: f64,
    increments: [Vec<f64>; 2],
    /// `B_i(k·dt_env)`, `k = 0..=cells`.
    cumulative: [Vec<f64>; 2],
}

impl EnvironmentGrid {
    pub fn from_increments(dt_env: f64, site1: Vec<f64>, site2: Vec<f64>) -> Result<Self> {
        if !(dt_env > 0.0) {
            return Err(Error::invalid(format!("dt_env must be positive, got {dt_env}")));
        }
        if site1.len() != site2.len() || site1.is_empty() {
            return Err(Error::invalid("environment sites need equal, nonzero lengths"));
        }
        let prefix = |inc: &[f64]| {
            let mut acc = NeumaierSum::new();
            std::iter::once(0.0)
                .chain(inc.iter().map(|&v| {
                    acc.add(v);
                    acc.value()
                }))
                .collect::<Vec<_>>()
        };
        let cumulative = [prefix(&site1), prefix(&site2)];
        Ok(Self {
            dt_env,
            increments: [site1, site2],
            cumulative,
        })
    }

    /// Environment `index` of the family seeded by `master_seed`: independent
    /// `N(0, dt_env)` increments on `horizon / dt_env` cells.
    pub fn generate(master_seed: u64, index: u64, dt_env: f64, horizon: f64) -> Result<Self> {
        let cells = (horizon / dt_env).round();
        if cells < 1.0 || ((horizon / dt_env) - cells).abs() > 1e-9 * cells {
            return Err(Error::invalid(format!(
                "horizon {horizon} is not a whole number of cells of {dt_env}"
            )));
        }
        let cells = cells as usize;
        let sd = dt_env.sqrt();
        let draw = |site: u64| -> Vec<f64> {
            let mut rng = keyed_stream(master_seed, Domain::Environment, index, site);
            (0..cells)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect()
        };
        let site1 = draw(0);
        let site2 = draw(1);
        Self::from_increments(dt_env, site1, site2)
    }

    /// Sums blocks of `factor` cells: the same Brownian paths on a coarser grid.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.cells().is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "cannot coarsen {} cells by {factor}",
                self.cells()
            )));
        }
        let block = |inc: &[f64]| inc.chunks(factor).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        Self::from_increments(
            self.dt_env * factor as f64,
            block(&self.increments[0]),
            block(&self.increments[1]),
        )
    }

    pub fn dt_env(&self) -> f64 {
        self.dt_env
    }

    pub fn cells(&self) -> usize {
        self.increments[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.cells() as f64 * self.dt_env
    }

    pub fn increments(&self, site: Site) -> &[f64] {
        &self.increments[site.index()]
    }

    /// `B_site(k·dt_env)`.
    pub fn value_at_node(&self, site: Site, k: usize) -> f64 {
        self.cumulative[site.index()][k]
    }

    /// The increments as SDE noise, one step per cell.
    pub fn noise(&self) -> impl Iterator<Item = NoiseIncrement> + '_ {
        self.increments[0]
            .iter()
            .zip(&self.increments[1])
            .map(|(&db1, &db2)| NoiseIncrement::new(db1, db2))
    }
}

/// How a cell containing a jump is apportioned between the two sites.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellRule {
    /// Brownian bridge draws at the jump times; exact in law.
    #[default]
    Bridge,
    /// The whole cell goes to the site occupied at the cell midpoint.
    /// Cheaper, with an `O(dt_env)` bias.
    Midpoint,
}

/// Sequential bridge sampler for one site.
struct BridgeCursor {
    /// Last point fixed inside the current cell, if any.
    last: Option<(usize, f64, f64)>,
}

impl BridgeCursor {
    fn value<R: Rng + ?Sized>(&mut self, env: &EnvironmentGrid, site: Site, t: f64, rng: &mut R) -> f64 {
        let dt = env.dt_env;
        let cells = env.cells();
        let pos = t / dt;
        let k = pos.floor() as usize;
        if k >= cells {
            return env.value_at_node(site, cells);
        }
        let node_t = k as f64 * dt;
        if t <= node_t {
            return env.value_at_node(site, k);
        }
        let (lt, lv) = match self.last {
            Some((cell, lt, lv)) if cell == k && lt <= t => (lt, lv),
            _ => (node_t, env.value_at_node(site, k)),
        };
        let rt = (k + 1) as f64 * dt;
        let rv = env.value_at_node(site, k + 1);
        let span = rt - lt;
        let w = (t - lt) / span;
        let var = ((t - lt) * (rt - t) / span).max(0.0);
        let z: f64 = StandardNormal.sample(rng);
        let v = lv + w * (rv - lv) + var.sqrt() * z;
        self.last = Some((k, t, v));
        v
    }
}

/// `H_t(ω) = ∫₀ᵗ dB_{ω(s)}(s)` for one chain path.
///
/// `rng` supplies the bridge draws and is unused under [`CellRule::Midpoint`].
pub fn hamiltonian<R: Rng + ?Sized>(
    path: &ChainPath,
    env: &EnvironmentGrid,
    rule: CellRule,
    rng: &mut R,
) -> Result<f64> {
    let covered = env.horizon();
    if path.horizon > covered * (1.0 + 1e-12) {
        return Err(Error::EnvironmentCoverage {
            covered,
            needed: path.horizon,
        });
    }
    let mut h = NeumaierSum::new();
    match rule {
        CellRule::Bridge => {
            let mut cursors = [BridgeCursor { last: None }, BridgeCursor { last: None }];
            // Value of B_site at the start of the current segment.
            let mut start_value = [0.0, 0.0];
            let mut site = path.start;
            for &tau in &path.jump_times {
                let i = site.index();
                let end = cursors[i].value(env, site, tau, rng);
                h.add(end - start_value[i]);
                site = site.flipped();
                let j = site.index();
                start_value[j] = cursors[j].value(env, site, tau, rng);
            }
            let i = site.index();
            let end = cursors[i].value(env, site, path.horizon, rng);
            h.add(end - start_value[i]);
        }
        CellRule::Midpoint => {
            let dt = env.dt_env;
            let cells = env.cells() as f64;
            let first_cell = |t: f64| ((t / dt - 0.5).ceil()).clamp(0.0, cells) as usize;
            for (site, a, b) in path.segments() {
                let (ka, kb) = (first_cell(a), first_cell(b));
                h.add(env.value_at_node(site, kb) - env.value_at_node(site, ka));
            }
        }
    }
    Ok(h.value())
}

/// Monte Carlo estimate of `Z_t` and `Z_t(1, ·)` in one environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    /// Defined as `z_to[0] + z_to[1]`.
    pub z_total: f64,
    /// Estimates of `Z_t(1, 1)` and `Z_t(1, 2)`.
    pub z_to: [f64; 2],
    pub n_paths: u64,
    pub std_err: f64,
    pub std_err_to: [f64; 2],
    /// Effective sample size `(Σw)² / Σw²`.
    pub effective_samples: f64,
    /// All weights identical at `β > 0`, or fewer than two effective samples.
    pub degenerate: bool,
}

/// Chain sampler with its own keyed random streams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSampler {
    pub beta: Beta,
    pub rule: CellRule,
    pub master_seed: u64,
}

const CHUNK_CHAINS: u64 = 4096;

struct ChainChunk {
    total: Summary,
    to: [Summary; 2],
    sum_w2: f64,
}

impl PathSampler {
    pub fn new(beta: Beta, rule: CellRule, master_seed: u64) -> Self {
        Self { beta, rule, master_seed }
    }

    fn chunk_rng(&self, env_key: u64, chunk: u64) -> ChaCha8Rng {
        keyed_stream(self.master_seed, Domain::Chain, env_key, chunk)
    }

    /// Averages the weights of `n_chains` fresh chains over `env`. `env_key`
    /// selects the chain streams, so different environments never share chains.
    pub fn estimate(&self, env: &EnvironmentGrid, env_key: u64, n_chains: u64) -> Result<PartitionEstimate> {
        if n_chains < 2 {
            return Err(Error::invalid(format!("need at least 2 chains, got {n_chains}")));
        }
        let horizon = env.horizon();
        let beta = self.beta.value();
        let compensator = 0.5 * beta * beta * horizon;
        let n_chunks = n_chains.div_ceil(CHUNK_CHAINS);
        let chunks: Vec<Result<ChainChunk>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let first = c * CHUNK_CHAINS;
                let width = ((first + CHUNK_CHAINS).min(n_chains) - first) as usize;
                let mut rng = self.chunk_rng(env_key, c);
                let mut w = Vec::with_capacity(width);
                let mut w_to = [Vec::with_capacity(width), Vec::with_capacity(width)];
                let mut sum_w2 = NeumaierSum::new();
                for _ in 0..width {
                    let path = sample_chain(horizon, &mut rng);
                    let h = hamiltonian(&path, env, self.rule, &mut rng)?;
                    let weight = (beta * h - compensator).exp();
                    let end = path.terminal().index();
                    w.push(weight);
                    sum_w2.add(weight * weight);
                    w_to[end].push(weight);
                    w_to[1 - end].push(0.0);
                }
                Ok(ChainChunk {
                    total: Summary::from_slice(&w),
                    to: [Summary::from_slice(&w_to[0]), Summary::from_slice(&w_to[1])],
                    sum_w2: sum_w2.value(),
                })
            })
            .collect();

        let mut total = Summary::default();
        let mut to = [Summary::default(); 2];
        let mut sum_w2 = NeumaierSum::new();
        for chunk in chunks {
            let chunk = chunk?;
            total = total.merge(chunk.total);
            to[0] = to[0].merge(chunk.to[0]);
            to[1] = to[1].merge(chunk.to[1]);
            sum_w2.add(chunk.sum_w2);
        }
        let n = n_chains as f64;
        let sum_w = total.mean * n;
        let effective_samples = if sum_w2.value() > 0.0 {
            sum_w * sum_w / sum_w2.value()
        } else {
            0.0
        };
        let z_to = [to[0].mean, to[1].mean];
        Ok(PartitionEstimate {
            z_total: z_to[0] + z_to[1],
            z_to,
            n_paths: n_chains,
            std_err: total.std_err(),
            std_err_to: [to[0].std_err(), to[1].std_err()],
            effective_samples,
            degenerate: (beta > 0.0 && total.m2 == 0.0) || effective_samples < 2.0,
        })
    }
}

/// `P(ω(T) = 1), P(ω(T) = 2)` from site 1: `(1 ± e^{−2T})/2`.
pub fn transition_probabilities(horizon: f64) -> [f64; 2] {
    let e = (-2.0 * horizon).exp();
    [0.5 * (1.0 + e), 0.5 * (1.0 - e)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let s = Summary::from_slice(xs);
        (s.mean, s.std_err())
    }

    #[test]
    fn chain_jump_count_has_mean_horizon() {
        let mut r = rng(1);
        let counts: Vec<f64> = (0..100_000).map(|_| sample_chain(10.0, &mut r).jump_times.len() as f64).collect();
        let (m, se) = mean_se(&counts);
        assert!((m - 10.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn no_jump_probability_is_exp_minus_t() {
        let mut r = rng(2);
        let n = 100_000;
        let hits: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(sample_chain(1.0, &mut r).jump_times.is_empty())))
            .collect();
        let (m, se) = mean_se(&hits);
        assert!((m - (-1.0f64).exp()).abs() < 3.0 * se);
    }

    #[test]
    fn occupation_fraction_tends_to_half() {
        let mut r = rng(3);
        let fr: Vec<f64> = (0..10_000).map(|_| sample_chain(50.0, &mut r).occupation(Site::One) / 50.0).collect();
        let (m, se) = mean_se(&fr);
        // E[occupation of site 1]/T = 1/2 + (1 − e^{−2T})/(4T)
        let exact = 0.5 + (1.0 - (-100.0f64).exp()) / 200.0;
        assert!((m - exact).abs() < 3.0 * se);
        assert!((m - 0.5).abs() < 0.02);
    }

    #[test]
    fn chain_structure() {
        let mut r = rng(4);
        for _ in 0..100 {
            let p = sample_chain(3.0, &mut r);
            assert_eq!(p.start, Site::One);
            assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
            assert!(p.jump_times.iter().all(|&t| t > 0.0 && t <= 3.0));
            assert_eq!(p.state_at(0.0), Site::One);
            assert_eq!(p.state_at(3.0), p.terminal());
            let total = p.occupation(Site::One) + p.occupation(Site::Two);
            assert!((total - 3.0).abs() < 1e-12);
        }
    }

    fn fixed_path() -> ChainPath {
        ChainPath {
            start: Site::One,
            jump_times: vec![0.123, 0.1234, 0.5, 0.77],
            horizon: 1.0,
        }
    }

    #[test]
    fn hamiltonian_without_jumps_is_site_one_increment() {
        let env = EnvironmentGrid::from_increments(0.25, vec![0.1, -0.2, 0.4, 0.05], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let path = ChainPath { start: Site::One, jump_times: vec![], horizon: 1.0 };
        for rule in [CellRule::Bridge, CellRule::Midpoint] {
            let h = hamiltonian(&path, &env, rule, &mut rng(0)).unwrap();
            assert!((h - 0.35).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_environment_gives_zero() {
        let env = EnvironmentGrid::from_increments(0.1, vec![0.0; 10], vec![0.0; 10]).unwrap();
        let path = fixed_path();
        assert_eq!(hamiltonian(&path, &env, CellRule::Midpoint, &mut rng(0)).unwrap(), 0.0);
        // Bridge draws still add zero-mean noise inside cells with jumps.
        let h: Vec<f64> = (0..20_000)
            .map(|s| hamiltonian(&path, &env, CellRule::Bridge, &mut rng(s)).unwrap())
            .collect();
        assert!(mean_se(&h).0.abs() < 4.0 * mean_se(&h).1);
    }

    #[test]
    fn midpoint_rule_assigns_whole_cells() {
        let env = EnvironmentGrid::from_increments(0.5, vec![1.0, 10.0], vec![100.0, 1000.0]).unwrap();
        // Site 1 until 0.3 (midpoint 0.25 lies in it), site 2 after.
        let path = ChainPath { start: Site::One, jump_times: vec![0.3], horizon: 1.0 };
        assert_eq!(hamiltonian(&path, &env, CellRule::Midpoint, &mut rng(0)).unwrap(), 1001.0);
    }

    #[test]
    fn coverage_is_checked() {
        let env = EnvironmentGrid::from_increments(0.1, vec![0.0; 5], vec![0.0; 5]).unwrap();
        let err = hamiltonian(&fixed_path(), &env, CellRule::Bridge, &mut rng(0)).unwrap_err();
        assert!(matches!(err, Error::EnvironmentCoverage { .. }));
    }

    #[test]
    fn hamiltonian_has_mean_zero_and_variance_t() {
        let path = fixed_path();
        for rule in [CellRule::Bridge, CellRule::Midpoint] {
            let mut bridge = rng(9);
            let hs: Vec<f64> = (0..100_000)
                .map(|e| {
                    let env = EnvironmentGrid::generate(5, e, 0.01, 1.0).unwrap();
                    hamiltonian(&path, &env, rule, &mut bridge).unwrap()
                })
                .collect();
            let s = Summary::from_slice(&hs);
            assert!(s.mean.abs() < 3.0 * s.std_err(), "{rule:?} mean {}", s.mean);
            // var of the sample variance of a N(0,1) sample: 2/(n−1)
            let var_se = (2.0f64 / 99_999.0).sqrt();
            assert!((s.variance() - 1.0).abs() < 3.0 * var_se, "{rule:?} var {}", s.variance());
        }
    }

    #[test]
    fn beta_zero_weights_count_terminal_states() {
        let env = EnvironmentGrid::generate(1, 0, 0.01, 1.5).unwrap();
        let sampler = PathSampler::new(Beta::new(0.0).unwrap(), CellRule::Bridge, 7);
        let est = sampler.estimate(&env, 0, 50_000).unwrap();
        assert!((est.z_total - 1.0).abs() < 1e-15);
        assert_eq!(est.std_err, 0.0);
        assert!(!est.degenerate);
        let exact = transition_probabilities(1.5);
        for y in 0..2 {
            assert!((est.z_to[y] - exact[y]).abs() < 3.0 * est.std_err_to[y], "{y}");
        }
    }

    #[test]
    fn decomposition_is_exact_and_deterministic() {
        let env = EnvironmentGrid::generate(1, 3, 0.01, 1.0).unwrap();
        let sampler = PathSampler::new(Beta::new(0.8).unwrap(), CellRule::Bridge, 7);
        let a = sampler.estimate(&env, 3, 10_000).unwrap();
        assert_eq!(a.z_total, a.z_to[0] + a.z_to[1]);
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap()
            .install(|| sampler.estimate(&env, 3, 10_000).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, sampler.estimate(&env, 4, 10_000).unwrap());
    }

    #[test]
    fn too_few_chains_rejected() {
        let env = EnvironmentGrid::generate(1, 0, 0.1, 1.0).unwrap();
        let sampler = PathSampler::new(Beta::new(1.0).unwrap(), CellRule::Bridge, 0);
        assert!(sampler.estimate(&env, 0, 1).is_err());
    }

    #[test]
    fn environment_average_of_z_is_one() {
        let sampler = PathSampler::new(Beta::new(1.0).unwrap(), CellRule::Bridge, 11);
        let zs: Vec<f64> = (0..2000)
            .map(|e| {
                let env = EnvironmentGrid::generate(2, e, 0.05, 1.0).unwrap();
                sampler.estimate(&env, e, 64).unwrap().z_total
            })
            .collect();
        let (m, se) = mean_se(&zs);
        assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn coarsening_preserves_the_path() {
        let env = EnvironmentGrid::generate(3, 1, 0.01, 1.0).unwrap();
        let coarse = env.coarsened(5).unwrap();
        assert_eq!(coarse.cells(), 20);
        assert!((coarse.dt_env() - 0.05).abs() < 1e-15);
        for k in 0..=20 {
            for site in [Site::One, Site::Two] {
                let diff = coarse.value_at_node(site, k) - env.value_at_node(site, 5 * k);
                assert!(diff.abs() < 1e-12);
            }
        }
        assert!(env.coarsened(3).is_err());
        assert!(env.coarsened(0).is_err());
    }
}
