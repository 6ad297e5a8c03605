//! Unit conventions.
//!
//! Internally every frequency is an angular frequency in rad/us and every
//! time is in us. Configuration files and CSV output use ordinary frequency
//! in MHz (value = omega / 2pi), powers in pW (input) and fW (output).

use std::f64::consts::TAU;

/// Ordinary frequency in MHz to angular frequency in rad/us.
#[inline]
pub fn mhz(f: f64) -> f64 {
    TAU * f
}

/// Angular frequency in rad/us to ordinary frequency in MHz.
#[inline]
pub fn to_mhz(omega: f64) -> f64 {
    omega / TAU
}

/// Mass of a 85Rb atom divided by hbar, in us/um^2.
///
/// With energies in units of hbar*rad/us and lengths in um, an acceleration in
/// um/us^2 is `force / RB85_MASS_OVER_HBAR`.
pub const RB85_MASS_OVER_HBAR: f64 = 84.911_789_738 * 1.660_539_066_60e-27 / 1.054_571_817e-34 * 1e-6;

/// Planck constant times speed of light, in J*m.
pub const HC: f64 = 6.626_070_15e-34 * 2.997_924_58e8;
