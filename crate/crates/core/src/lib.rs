//! Simulator and analytic-formula library for a resonantly driven
//! two-level atom in a leaky cavity under continuous homodyne
//! photodetection.
//!
//! The crate builds the truncated atom-field Hilbert space, the exact
//! and approximate smooth propagators with their operator
//! factorizations, the unconditional Lindblad dynamics and its
//! steady state, photocount-conditioned states in both the exact
//! (Dyson) and closed-form pictures, and the diffusive-limit
//! stochastic master equation with simulated difference photocurrent.

pub mod conditional;
pub mod diffusive;
pub mod disentangle;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod io;
pub mod jumps;
pub mod linalg;
pub mod params;

pub use error::{Result, SimError};
pub use params::SystemParams;
