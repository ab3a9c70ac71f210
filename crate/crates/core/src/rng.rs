//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream selected by
//! `(master seed, domain, key, stream)`, so a path or an environment is a pure
//! function of the master seed and its index, whatever thread computes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::sde::NoiseIncrement;

/// Independent families of streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SdePath = 0x5d3e_0001,
    Environment = 0x5d3e_0002,
    Chain = 0x5d3e_0003,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `stream` of the generator keyed by `(master_seed, domain, key)`.
pub fn keyed_stream(master_seed: u64, domain: Domain, key: u64, stream: u64) -> ChaCha8Rng {
    let mut state = master_seed;
    let a = splitmix64(&mut state);
    state = a ^ domain as u64;
    let b = splitmix64(&mut state);
    state = b ^ key;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng
}

/// Brownian increments over steps of length `dt`, with the half-step bridge
/// deviations.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl NoiseStream {
    pub fn new(rng: ChaCha8Rng, dt: f64) -> Self {
        Self {
            rng,
            sqrt_dt: dt.sqrt(),
        }
    }

    /// Noise driving SDE path `path` of the ensemble seeded by `master_seed`.
    pub fn for_path(master_seed: u64, path: u64, dt: f64) -> Self {
        Self::new(keyed_stream(master_seed, Domain::SdePath, 0, path), dt)
    }
}

impl Iterator for NoiseStream {
    type Item = NoiseIncrement;

    #[inline]
    fn next(&mut self) -> Option<NoiseIncrement> {
        let mut z = [0.0f64; 4];
        for v in &mut z {
            *v = StandardNormal.sample(&mut self.rng);
        }
        Some(NoiseIncrement {
            db1: self.sqrt_dt * z[0],
            db2: self.sqrt_dt * z[1],
            mid1: 0.5 * self.sqrt_dt * z[2],
            mid2: 0.5 * self.sqrt_dt * z[3],
        })
    }
}
