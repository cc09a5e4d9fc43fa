//! Simulation and estimation toolkit for parametric noise spectroscopy with a
//! flux-modulated tunable transmon.
//!
//! The crate is organised bottom-up:
//! [`device`] holds the circuit model, [`noisegen`] the flux-noise processes,
//! [`dephasing`] the two-level decoherence engine, [`spectroscopy`] the scan and
//! peak-resolution pipeline, [`estimation`] the closed-form precision bounds,
//! [`multilevel`] the leakage analysis, [`relaxation`] the finite-T1 study and
//! [`cli`] the command-line plumbing.

pub mod cli;
pub mod dephasing;
pub mod device;
pub mod error;
pub mod estimation;
pub mod fit;
pub mod multilevel;
pub mod noisegen;
pub mod par;
pub mod quad;
pub mod relaxation;
pub mod spectroscopy;

pub use error::{Error, Result};

use std::f64::consts::PI;

/// Convert a plain frequency in Hz to angular frequency in rad/s.
pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

/// Convert an angular frequency in rad/s to Hz.
pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Convert a flux given in micro flux quanta to reduced flux `pi * Phi / Phi0`.
pub fn micro_phi0_to_reduced(v: f64) -> f64 {
    PI * 1e-6 * v
}

/// Half a flux quantum in reduced units; the first minimum of the gap.
pub const PHI_MAX: f64 = PI / 2.0;
