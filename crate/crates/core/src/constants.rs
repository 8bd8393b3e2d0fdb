//! Physical constants and unit conversions (SI unless noted).

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// One Debye in C·m.
pub const DEBYE: f64 = 3.335_64e-30;

/// Root-mean-square angular average of the TLS–TLS interaction constant, J·m³.
pub const C_RMS: f64 = 1.6e-48;

/// Smallest pair separation used in the 1/r³ interaction, m.
pub const MIN_PAIR_SEPARATION: f64 = 1e-9;

pub const UM: f64 = 1e-6;
pub const NM: f64 = 1e-9;

/// rad/s → rad/μs.
pub const PER_SECOND_TO_PER_MICROSECOND: f64 = 1e-6;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
