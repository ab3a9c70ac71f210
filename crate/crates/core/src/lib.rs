//! Continuous-time directed polymer on the two-point state space `{1, 2}`.
//!
//! The point-to-point partition functions `X_i(t) = Z_t(1, i)` solve a linear
//! SDE system with multiplicative noise. This crate provides
//!
//! * closed forms for the limiting mean overlap, the free energy and the
//!   Gronwall rate ([`analytic`]),
//! * time steppers for the SDE system ([`sde`]),
//! * exact second-moment dynamics used as a deterministic oracle ([`moments`]),
//! * a Feynman–Kac estimator of `Z_t(1, y)` that samples Markov-chain paths in
//!   a frozen Brownian environment ([`path_sampler`]),
//! * a reproducible parallel ensemble driver with free-energy and overlap
//!   estimators ([`ensemble`]),
//! * file formats ([`output`]) and the verification suite ([`verify`]).
//!
//! Stochastic integrals are understood in the Itô sense throughout.

pub mod analytic;
pub mod ensemble;
mod error;
pub mod moments;
pub mod output;
pub mod path_sampler;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod verify;

pub use analytic::{AnalyticSolution, Beta};
pub use ensemble::{ConvergenceReport, EnsembleCurve, ModelParams};
pub use error::{Error, Result};
pub use moments::MomentVector;
pub use sde::{NoiseIncrement, PolymerState, StepScheme};
