//! Physical constants and the adopted phasor convention.
//!
//! Time convention is e^{+jωt} with propagation factor e^{−jkr}; all
//! quantities are SI.

use std::f64::consts::PI;

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;

/// Vacuum permeability (H/m).
pub const MU0: f64 = 4.0e-7 * PI;

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 1.0 / (MU0 * C0 * C0);

/// Free-space wave impedance η₀ = √(μ₀/ε₀) (Ω).
pub const ETA0: f64 = 376.730_313_461_770_7;

/// Wavenumber k = 2πf/c (rad/m).
pub fn wavenumber(frequency_hz: f64) -> f64 {
    2.0 * PI * frequency_hz / C0
}

/// Free-space wavelength λ = c/f (m).
pub fn wavelength(frequency_hz: f64) -> f64 {
    C0 / frequency_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta0_matches_sqrt_mu_over_eps() {
        assert!((ETA0 - (MU0 / EPS0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn wavelength_at_781_25_mhz() {
        let lambda = wavelength(781.25e6);
        assert!((lambda - 0.383_734_346_24).abs() < 1e-9);
        assert!((wavenumber(781.25e6) - 2.0 * PI / lambda).abs() < 1e-12);
    }
}
