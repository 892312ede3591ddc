//! Physical constants, CODATA 2018.

/// Elementary charge (C). Exact.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Boltzmann constant (J/K). Exact.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Unified atomic mass unit (kg).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of a singly charged ⁴⁰Ca⁺ ion (kg), as used for the 7 T trap examples.
pub const CA40_ION_MASS: f64 = 6.6359e-26;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Converts a frequency in hertz to an angular frequency in rad/s.
#[inline]
pub fn hz_to_rad(nu: f64) -> f64 {
    TWO_PI * nu
}

/// Converts an angular frequency in rad/s to hertz.
#[inline]
pub fn rad_to_hz(omega: f64) -> f64 {
    omega / TWO_PI
}
