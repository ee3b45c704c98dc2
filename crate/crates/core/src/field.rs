//! Two-beam interferometer field and its analytic weak values.
//!
//! Each beam is a 2D paraxial Gaussian beam (one transverse dimension) with
//! amplitude factor sqrt(w0/w) and Gouy phase atan(zeta/z_R)/2. The beam is
//! evaluated through its complex beam parameter q = zeta - i z_R, which is
//! regular at the focus, and its gradient is taken from the closed form so
//! the weak values carry no finite-difference error.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::ScanGrid;
use crate::units::SPEED_OF_LIGHT;

/// Sites with |psi|^2 / max|psi|^2 below this are treated as nodes.
pub const NODE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams {
    pub wavelength: f64,
    /// 1/e^2 intensity radius at the focus.
    pub waist_w0: f64,
    /// Signed angle of the propagation axis from +z, rotating toward +x.
    pub crossing_half_angle: f64,
    pub amplitude: f64,
    /// Transverse displacement of the beam axis from the origin.
    pub axis_offset: f64,
}

impl BeamParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("waist_w0", self.waist_w0),
            ("crossing_half_angle", self.crossing_half_angle),
            ("amplitude", self.amplitude),
            ("axis_offset", self.axis_offset),
        ] {
            ensure_finite(name, v)?;
        }
        if self.wavelength <= 0.0 {
            return Err(Error::invalid("wavelength must be positive"));
        }
        if self.waist_w0 <= self.wavelength {
            return Err(Error::invalid("waist must exceed the wavelength"));
        }
        if self.crossing_half_angle.abs() >= std::f64::consts::FRAC_PI_4 {
            return Err(Error::invalid("crossing angle outside paraxial range"));
        }
        Ok(())
    }

    pub fn rayleigh_range(&self) -> f64 {
        std::f64::consts::PI * self.waist_w0 * self.waist_w0 / self.wavelength
    }

    /// (xi, zeta) coordinates of a lab-frame point in the beam frame.
    pub fn beam_frame(&self, x: f64, z: f64) -> (f64, f64) {
        let (s, c) = self.crossing_half_angle.sin_cos();
        (x * c - z * s - self.axis_offset, x * s + z * c)
    }
}

/// Complex amplitude and its lab-frame gradient at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub psi: Complex64,
    pub d_dx: Complex64,
    pub d_dz: Complex64,
}

impl FieldSample {
    pub const ZERO: FieldSample = FieldSample {
        psi: Complex64::new(0.0, 0.0),
        d_dx: Complex64::new(0.0, 0.0),
        d_dz: Complex64::new(0.0, 0.0),
    };

    pub fn intensity(&self) -> f64 {
        self.psi.norm_sqr()
    }

    /// Local weak momentum Re[-i grad(psi) / psi] = Im[grad(psi) / psi].
    pub fn weak_momentum(&self) -> (f64, f64) {
        ((self.d_dx / self.psi).im, (self.d_dz / self.psi).im)
    }

    /// Current density Im[psi* grad(psi)], i.e. |psi|^2 times the weak momentum.
    pub fn current(&self) -> (f64, f64) {
        (
            (self.psi.conj() * self.d_dx).im,
            (self.psi.conj() * self.d_dz).im,
        )
    }

    fn add(self, other: FieldSample, phase: Complex64) -> FieldSample {
        FieldSample {
            psi: self.psi + phase * other.psi,
            d_dx: self.d_dx + phase * other.d_dx,
            d_dz: self.d_dz + phase * other.d_dz,
        }
    }
}

fn beam_sample(params: &BeamParams, x: f64, z: f64, omega: f64) -> FieldSample {
    let k = omega / SPEED_OF_LIGHT;
    let z_r = params.rayleigh_range();
    let (xi, zeta) = params.beam_frame(x, z);
    let q = Complex64::new(zeta, -z_r);
    let i = Complex64::i();
    // ln psi = ln A - ln(1 + i zeta/z_R)/2 + i k xi^2 / (2q) + i k zeta
    let gouy = (Complex64::new(1.0, zeta / z_r)).sqrt();
    let psi = params.amplitude / gouy * (i * k * xi * xi / (2.0 * q)).exp() * (i * k * zeta).exp();

    let d_zeta = -1.0 / (2.0 * q) - i * k * xi * xi / (2.0 * q * q) + i * k;
    let d_xi = i * k * xi / q;
    let (s, c) = params.crossing_half_angle.sin_cos();
    FieldSample {
        psi,
        d_dx: psi * (s * d_zeta + c * d_xi),
        d_dz: psi * (c * d_zeta - s * d_xi),
    }
}

/// Complex amplitude of a single paraxial beam at `(x, z)`.
pub fn beam_amplitude(params: &BeamParams, point: (f64, f64), omega: f64) -> Result<Complex64> {
    Ok(beam_with_gradient(params, point, omega)?.psi)
}

/// Single-beam amplitude together with its analytic gradient.
pub fn beam_with_gradient(params: &BeamParams, point: (f64, f64), omega: f64) -> Result<FieldSample> {
    params.validate()?;
    ensure_finite("x", point.0)?;
    ensure_finite("z", point.1)?;
    ensure_finite("omega", omega)?;
    if omega <= 0.0 {
        return Err(Error::invalid("omega must be positive"));
    }
    Ok(beam_sample(params, point.0, point.1, omega))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferometerConfig {
    pub beam1: BeamParams,
    pub beam2: BeamParams,
    /// Relative phase applied to beam 2.
    pub arm_phase: f64,
    pub omega: f64,
}

impl InterferometerConfig {
    /// Symmetric pair of beams crossing at +-theta, sharing wavelength and waist.
    pub fn symmetric(wavelength: f64, waist_w0: f64, half_angle: f64, arm_phase: f64) -> Self {
        let beam = BeamParams {
            wavelength,
            waist_w0,
            crossing_half_angle: half_angle,
            amplitude: 1.0,
            axis_offset: 0.0,
        };
        Self {
            beam1: beam,
            beam2: BeamParams {
                crossing_half_angle: -half_angle,
                ..beam
            },
            arm_phase,
            omega: 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / wavelength,
        }
    }

    /// Half angle giving a fringe period `period` at `wavelength`.
    pub fn half_angle_for_period(wavelength: f64, period: f64) -> f64 {
        (wavelength / (2.0 * period)).asin()
    }

    pub fn validate(&self) -> Result<()> {
        self.beam1.validate()?;
        self.beam2.validate()?;
        ensure_finite("arm_phase", self.arm_phase)?;
        ensure_finite("omega", self.omega)?;
        if self.beam1.wavelength != self.beam2.wavelength {
            return Err(Error::invalid("both beams must share one wavelength"));
        }
        let expected = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / self.beam1.wavelength;
        if ((self.omega - expected) / expected).abs() > 1e-12 {
            return Err(Error::invalid("omega inconsistent with the beam wavelength"));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        self.omega / SPEED_OF_LIGHT
    }

    /// Fringe period of the symmetric plane-wave limit.
    pub fn fringe_period(&self) -> f64 {
        let s = (self.beam1.crossing_half_angle - self.beam2.crossing_half_angle) / 2.0;
        self.beam1.wavelength / (2.0 * s.sin().abs())
    }

    /// Field and gradient at one point for an arbitrary arm phase.
    pub fn sample_with_phase(&self, x: f64, z: f64, arm_phase: f64) -> FieldSample {
        let b1 = beam_sample(&self.beam1, x, z, self.omega);
        if self.beam2.amplitude == 0.0 {
            return b1;
        }
        let b2 = beam_sample(&self.beam2, x, z, self.omega);
        b1.add(b2, Complex64::from_polar(1.0, arm_phase))
    }

    pub fn sample(&self, x: f64, z: f64) -> FieldSample {
        self.sample_with_phase(x, z, self.arm_phase)
    }
}

impl Default for InterferometerConfig {
    /// 1550 nm, 8.3 um waist, crossing angle for a 3 um fringe period, in phase.
    fn default() -> Self {
        let wavelength = 1550e-9;
        Self::symmetric(
            wavelength,
            8.3e-6,
            Self::half_angle_for_period(wavelength, 3.0e-6),
            0.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub grid: ScanGrid,
    pub amplitudes: Vec<Complex64>,
}

impl FieldMap {
    pub fn intensities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn max_intensity(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max)
    }
}

/// psi = psi1 + exp(i delta) psi2 on every site.
pub fn superposed_field(config: &InterferometerConfig, grid: &ScanGrid) -> Result<FieldMap> {
    config.validate()?;
    grid.validate()?;
    let amplitudes = (0..grid.len())
        .into_par_iter()
        .map(|s| {
            let (x, z) = grid.site(s);
            config.sample(x, z).psi
        })
        .collect();
    Ok(FieldMap {
        grid: *grid,
        amplitudes,
    })
}

/// Per-site weak values. Masked sites hold NaN in every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakValueMap {
    pub grid: ScanGrid,
    pub kx: Vec<f64>,
    pub kz: Vec<f64>,
    pub omega: Vec<f64>,
    pub residual_norm: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WeakValueMap {
    pub fn masked(grid: ScanGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            kx: vec![f64::NAN; n],
            kz: vec![f64::NAN; n],
            omega: vec![f64::NAN; n],
            residual_norm: vec![f64::NAN; n],
            mask: vec![true; n],
        }
    }

    pub fn set(&mut self, s: usize, kx: f64, kz: f64, omega: f64, residual: f64) {
        self.kx[s] = kx;
        self.kz[s] = kz;
        self.omega[s] = omega;
        self.residual_norm[s] = residual;
        self.mask[s] = false;
    }

    pub fn is_masked(&self, s: usize) -> bool {
        self.mask[s]
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }
}

/// Ground-truth weak values from the closed-form gradient of the beams.
///
/// Momentum is Re[-i grad(psi)/psi]; the energy channel is the photon
/// frequency on every site (monochromatic field). Sites below
/// [`NODE_THRESHOLD`] relative intensity are masked.
pub fn analytic_weak_values(config: &InterferometerConfig, grid: &ScanGrid) -> Result<WeakValueMap> {
    config.validate()?;
    grid.validate()?;
    let samples: Vec<FieldSample> = (0..grid.len())
        .into_par_iter()
        .map(|s| {
            let (x, z) = grid.site(s);
            config.sample(x, z)
        })
        .collect();
    let max_i = samples.iter().map(FieldSample::intensity).fold(0.0, f64::max);
    let mut wv = WeakValueMap::masked(*grid);
    if max_i == 0.0 {
        return Ok(wv);
    }
    for (s, f) in samples.iter().enumerate() {
        if f.intensity() / max_i < NODE_THRESHOLD {
            continue;
        }
        let (kx, kz) = f.weak_momentum();
        wv.set(s, kx, kz, config.omega, 0.0);
    }
    Ok(wv)
}

/// Expected photon counts N = rate * T * |psi|^2 / max|psi|^2.
pub fn intensity_map(field: &FieldMap, rate: f64, accumulation_s: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && accumulation_s > 0.0) {
        return Err(Error::invalid("rate and accumulation time must be positive"));
    }
    let max_i = field.max_intensity();
    if max_i == 0.0 {
        return Ok(vec![0.0; field.amplitudes.len()]);
    }
    let scale = rate * accumulation_s / max_i;
    Ok(field.amplitudes.iter().map(|a| a.norm_sqr() * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn beam() -> BeamParams {
        BeamParams {
            wavelength: 1550e-9,
            waist_w0: 8.3e-6,
            crossing_half_angle: 0.0,
            amplitude: 1.0,
            axis_offset: 0.0,
        }
    }

    fn omega() -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / 1550e-9
    }

    /// Direct transcription of the textbook amplitude, valid for zeta != 0.
    fn explicit_formula(p: &BeamParams, x: f64, z: f64) -> Complex64 {
        let k = 2.0 * PI / p.wavelength;
        let zr = p.rayleigh_range();
        let (xi, zeta) = p.beam_frame(x, z);
        let w = p.waist_w0 * (1.0 + (zeta / zr).powi(2)).sqrt();
        let r = zeta * (1.0 + (zr / zeta).powi(2));
        let mag = p.amplitude * (p.waist_w0 / w).sqrt() * (-xi * xi / (w * w)).exp();
        let phase = k * zeta + k * xi * xi / (2.0 * r) - 0.5 * (zeta / zr).atan();
        Complex64::from_polar(mag, phase)
    }

    #[test]
    fn focus_on_axis_is_unity() {
        let a = beam_amplitude(&beam(), (0.0, 0.0), omega()).unwrap();
        assert!((a - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rayleigh_point_magnitude() {
        let b = beam();
        let a = beam_amplitude(&b, (0.0, b.rayleigh_range()), omega()).unwrap();
        assert!((a.norm() - 2f64.powf(-0.25)).abs() < 1e-12);
    }

    #[test]
    fn waist_edge_magnitude() {
        let b = beam();
        let a = beam_amplitude(&b, (b.waist_w0, 0.0), omega()).unwrap();
        assert!((a.norm() - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn q_form_matches_explicit_formula() {
        let mut b = beam();
        b.crossing_half_angle = 0.2;
        b.axis_offset = 1.3e-6;
        for &(x, z) in &[(3e-6, 7e-6), (-5e-6, -4e-6), (1e-6, 140e-6), (-8e-6, 2e-6)] {
            let a = beam_amplitude(&b, (x, z), omega()).unwrap();
            let e = explicit_formula(&b, x, z);
            // the common carrier phase k*zeta is large, so compare relative to |a|
            assert!((a - e).norm() < 1e-9 * a.norm(), "{a} vs {e}");
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let cfg = InterferometerConfig::default();
        let h = cfg.beam1.wavelength / 1e3;
        for &(x, z) in &[(0.3e-6, 0.1e-6), (2.2e-6, -4.0e-6), (-6.1e-6, 5.5e-6)] {
            let f = cfg.sample(x, z);
            // fourth-order stencil; the second-order one is limited by (k h)^2 / 6
            let d = |f: &dyn Fn(f64) -> Complex64| (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
            let fx = d(&|t| cfg.sample(x + t, z).psi);
            let fz = d(&|t| cfg.sample(x, z + t).psi);
            assert!((fx - f.d_dx).norm() / f.d_dx.norm() < 1e-6);
            assert!((fz - f.d_dz).norm() / f.d_dz.norm() < 1e-6);
        }
    }

    #[test]
    fn equal_beams_out_of_phase_cancel_on_axis() {
        let mut cfg = InterferometerConfig::default();
        cfg.arm_phase = PI;
        let f = cfg.sample(0.0, 2.0e-6);
        assert!(f.psi.norm() < 1e-15);
    }

    #[test]
    fn zero_second_beam_is_identity() {
        let mut cfg = InterferometerConfig::default();
        cfg.beam2.amplitude = 0.0;
        let grid = ScanGrid::new(-2e-6, -2e-6, 0.5e-6, 0.5e-6, 9, 9).unwrap();
        let map = superposed_field(&cfg, &grid).unwrap();
        for (s, a) in map.amplitudes.iter().enumerate() {
            let (x, z) = grid.site(s);
            let b = beam_amplitude(&cfg.beam1, (x, z), cfg.omega).unwrap();
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn plane_wave_limit_fringes() {
        // waist >> window: intensity follows 4 cos^2(k sin(theta) x)
        let wavelength = 1550e-9;
        let theta = 0.2;
        let cfg = InterferometerConfig::symmetric(wavelength, 0.5, theta, 0.0);
        let k = 2.0 * PI / wavelength;
        for &x in &[0.0, 0.7e-6, 1.9e-6, -2.4e-6] {
            let i = cfg.sample(x, 0.0).intensity();
            let expect = 4.0 * (k * theta.sin() * x).cos().powi(2);
            assert!((i - expect).abs() < 1e-6, "{i} vs {expect}");
        }
    }

    #[test]
    fn single_plane_wave_is_momentum_eigenstate() {
        let theta = 0.3;
        let mut cfg = InterferometerConfig::symmetric(1550e-9, 1.0, theta, 0.0);
        cfg.beam2.amplitude = 0.0;
        let grid = ScanGrid::new(-4e-6, -4e-6, 1e-6, 1e-6, 9, 9).unwrap();
        let wv = analytic_weak_values(&cfg, &grid).unwrap();
        let k = cfg.wavenumber();
        for s in 0..grid.len() {
            assert!((wv.kx[s] - k * theta.sin()).abs() / k < 1e-9);
            assert!((wv.kz[s] - k * theta.cos()).abs() / k < 1e-9);
        }
    }

    #[test]
    fn equal_plane_waves_have_no_transverse_weak_momentum() {
        let theta = 0.25;
        let cfg = InterferometerConfig::symmetric(1550e-9, 2.0, theta, 0.0);
        let k = cfg.wavenumber();
        for &(x, z) in &[(0.4e-6, 0.0), (1.1e-6, 3e-6), (-2.3e-6, -1e-6)] {
            let (kx, kz) = cfg.sample(x, z).weak_momentum();
            assert!(kx.abs() / k < 1e-6);
            assert!((kz - k * theta.cos()).abs() / k < 1e-6);
        }
    }

    #[test]
    fn gouy_shift_on_axis() {
        let mut cfg = InterferometerConfig::default();
        cfg.beam1.crossing_half_angle = 0.0;
        cfg.beam2.amplitude = 0.0;
        let (kx, kz) = cfg.sample(0.0, 0.0).weak_momentum();
        let expect = cfg.wavenumber() - 1.0 / (2.0 * cfg.beam1.rayleigh_range());
        assert!(kx.abs() < 1e-6);
        assert!((kz - expect).abs() / expect < 1e-14);
    }

    #[test]
    fn mirror_symmetry_of_default_config() {
        let cfg = InterferometerConfig::default();
        let grid = ScanGrid::default();
        let wv = analytic_weak_values(&cfg, &grid).unwrap();
        let field = superposed_field(&cfg, &grid).unwrap();
        let scale = cfg.wavenumber();
        for j in (0..grid.nz).step_by(5) {
            for i in 0..grid.nx {
                let a = grid.index(i, j);
                let b = grid.index(grid.nx - 1 - i, j);
                assert!((wv.kx[a] + wv.kx[b]).abs() / scale < 1e-10);
                let (ia, ib) = (field.amplitudes[a].norm_sqr(), field.amplitudes[b].norm_sqr());
                assert!((ia - ib).abs() < 1e-10 * ia.max(ib).max(1e-300));
            }
        }
    }

    #[test]
    fn omega_channel_constant() {
        let cfg = InterferometerConfig::default();
        let wv = analytic_weak_values(&cfg, &ScanGrid::default()).unwrap();
        assert!(wv
            .omega
            .iter()
            .zip(&wv.mask)
            .all(|(w, m)| *m || *w == cfg.omega));
    }

    #[test]
    fn node_sites_are_masked() {
        let mut cfg = InterferometerConfig::default();
        cfg.arm_phase = PI;
        let grid = ScanGrid::default();
        let wv = analytic_weak_values(&cfg, &grid).unwrap();
        let center = grid.index(90, 20);
        assert!(wv.is_masked(center));
        assert!(wv.kx[center].is_nan());
    }

    #[test]
    fn intensity_normalization() {
        let cfg = InterferometerConfig::default();
        let grid = ScanGrid::default();
        let field = superposed_field(&cfg, &grid).unwrap();
        let n = intensity_map(&field, 1000.0, 3.0).unwrap();
        let max = n.iter().cloned().fold(0.0, f64::max);
        assert!((max - 3000.0).abs() < 1e-9);
        assert!(n.iter().all(|v| *v >= 0.0));
        assert!(intensity_map(&field, 0.0, 3.0).is_err());
    }

    #[test]
    fn coherent_sum_quadruples_single_beam() {
        let cfg = InterferometerConfig::symmetric(1550e-9, 1.0, 0.2, 0.0);
        let mut single = cfg;
        single.beam2.amplitude = 0.0;
        let both = cfg.sample(0.0, 0.0).intensity();
        let one = single.sample(0.0, 0.0).intensity();
        assert!((both / one - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_beams() {
        let mut b = beam();
        b.crossing_half_angle = 1.0;
        assert!(beam_amplitude(&b, (0.0, 0.0), omega()).is_err());
        let mut b = beam();
        b.waist_w0 = 1e-7;
        assert!(beam_amplitude(&b, (0.0, 0.0), omega()).is_err());
        assert!(beam_amplitude(&beam(), (f64::NAN, 0.0), omega()).is_err());
    }
}
