//! Physical constants and the reporting convention.
//!
//! Every solver works in SI units. Natural-unit normalization (velocities in
//! units of c, squared masses in units of (hbar * omega0)^2) is applied only
//! when results are reported.

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Reduced Planck constant, J s.
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub speed_of_light: f64,
    pub reduced_planck: f64,
    /// Report velocities in units of c and m_eff^2 normalized by (hbar omega0)^2.
    pub natural_units: bool,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            speed_of_light: SPEED_OF_LIGHT,
            reduced_planck: REDUCED_PLANCK,
            natural_units: true,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_of_light > 0.0 && self.reduced_planck > 0.0) {
            return Err(Error::invalid("physical constants must be strictly positive"));
        }
        Ok(())
    }

    /// Angular frequency of a monochromatic photon of the given vacuum wavelength.
    pub fn angular_frequency(&self, wavelength_m: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.speed_of_light / wavelength_m
    }

    /// Photon energy hbar * omega in joules.
    pub fn photon_energy(&self, omega: f64) -> f64 {
        self.reduced_planck * omega
    }

    /// Converts a velocity in m/s to the reporting unit.
    pub fn report_velocity(&self, v_si: f64) -> f64 {
        if self.natural_units {
            v_si / self.speed_of_light
        } else {
            v_si
        }
    }

    /// Converts a squared-mass density expressed as (energy)^2 in J^2 to the
    /// reporting unit.
    pub fn report_mass_sq(&self, m2_joule_sq: f64, omega0: f64) -> f64 {
        if self.natural_units {
            let e0 = self.photon_energy(omega0);
            m2_joule_sq / (e0 * e0)
        } else {
            m2_joule_sq
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn telecom_frequency() {
        let pc = PhysicalConstants::default();
        let w = pc.angular_frequency(1550e-9);
        assert!((w - 1.2153e15).abs() / w < 1e-4);
    }

    #[test]
    fn natural_unit_reporting() {
        let pc = PhysicalConstants::default();
        assert_eq!(pc.report_velocity(SPEED_OF_LIGHT), 1.0);
        let e0 = pc.photon_energy(1e15);
        assert!((pc.report_mass_sq(e0 * e0, 1e15) - 1.0).abs() < 1e-15);
        let si = PhysicalConstants {
            natural_units: false,
            ..pc
        };
        assert_eq!(si.report_velocity(3.0), 3.0);
    }

    #[test]
    fn rejects_nonpositive() {
        let pc = PhysicalConstants {
            speed_of_light: 0.0,
            ..Default::default()
        };
        assert!(pc.validate().is_err());
    }
}
