//! Qubit energy relaxation driven by an ensemble of resonant two-level-system
//! (TLS) defects.
//!
//! The pipeline is:
//!
//! 1. [`device`]: transmon geometry and the single-photon electric field over
//!    the chip surface (loaded from a grid file or synthesized analytically).
//! 2. [`stm`]: a standard-tunneling-model ensemble of defects sampled over the
//!    chip, ranked by their effective coupling to the qubit.
//! 3. [`model`]: the single-excitation Hamiltonian and phonon-emission channels
//!    for the strongest retained defects.
//! 4. [`dynamics`]: Lindblad integration (full density matrix) and the
//!    equivalent non-Hermitian amplitude evolution.
//! 5. [`analysis`]: T1/T2 extraction, oscillation detection and the derived
//!    studies (TLS-count convergence, T1min thresholds).
//! 6. [`ensemble`]: configuration, trial ensembles, sweeps and CSV output.

pub mod analysis;
pub mod constants;
pub mod device;
pub mod dynamics;
pub mod ensemble;
mod error;
pub mod model;
pub mod ode;
pub mod stm;

pub use error::{Error, Result};
