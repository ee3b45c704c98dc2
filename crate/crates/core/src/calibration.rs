//! Recovery of plate coupling coefficients from calibration scans.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::LeastSquares;
use crate::pointer::Coupling;
use crate::rng::{self, Domain};
use crate::units::SPEED_OF_LIGHT;

/// Designs whose standardized condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibSample {
    /// Momentum along the plate normal, rad/m.
    pub k_perp: f64,
    /// rad/s
    pub omega: f64,
    /// rad
    pub phi: f64,
    pub incidence_deg: f64,
    pub tilt_deg: f64,
    pub wavelength_nm: f64,
}

impl CalibSample {
    pub fn new(k_perp: f64, omega: f64, phi: f64) -> Self {
        Self {
            k_perp,
            omega,
            phi,
            incidence_deg: 0.0,
            tilt_deg: 0.0,
            wavelength_nm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_se: f64,
    pub b_se: f64,
    pub c_se: f64,
    pub residual_rms: f64,
    pub n: usize,
}

impl CouplingFit {
    pub fn coupling(&self) -> Coupling {
        Coupling {
            a: self.a,
            b: self.b,
            c: self.c,
        }
    }

    /// Whether every coefficient of `truth` lies within `k` standard errors.
    pub fn covers(&self, truth: Coupling, k: f64) -> bool {
        (self.a - truth.a).abs() <= k * self.a_se
            && (self.b - truth.b).abs() <= k * self.b_se
            && (self.c - truth.c).abs() <= k * self.c_se
    }
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Ordinary least squares of phi = a k_perp + b omega + c.
///
/// Regressors are centered and standardized before the QR solve and the
/// coefficients mapped back, so k (~1e6) and omega (~1e15) share one scale.
/// Standard errors come from s^2 (X^T X)^-1 with s^2 = RSS / (n - 3); an
/// exactly determined fit reports zero standard errors.
pub fn fit_linear_coupling(samples: &[CalibSample]) -> Result<CouplingFit> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::DegenerateCalibration(format!("{n} samples cannot determine three coefficients")));
    }
    if samples
        .iter()
        .any(|s| !(s.k_perp.is_finite() && s.omega.is_finite() && s.phi.is_finite()))
    {
        return Err(Error::invalid("calibration samples must be finite"));
    }
    let (mk, sk) = mean_std(samples.iter().map(|s| s.k_perp));
    let (mw, sw) = mean_std(samples.iter().map(|s| s.omega));
    if !(sk > 0.0 && sw > 0.0) {
        return Err(Error::DegenerateCalibration(
            "k_perp or omega does not vary across the samples".into(),
        ));
    }

    let design: Vec<f64> = samples
        .iter()
        .flat_map(|s| [1.0, (s.k_perp - mk) / sk, (s.omega - mw) / sw])
        .collect();
    let ls = LeastSquares::new(&design, n, 3);
    let cond = ls.condition_number();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::DegenerateCalibration(format!(
            "k_perp and omega are collinear (condition number {cond:e})"
        )));
    }
    let phi: Vec<f64> = samples.iter().map(|s| s.phi).collect();
    let (t, rss_norm) = ls.solve(&phi);

    let a = t[1] / sk;
    let b = t[2] / sw;
    let c = t[0] - a * mk - b * mw;

    // theta = M theta' with theta = (a, b, c), theta' = (c', a', b')
    let m = [
        [0.0, 1.0 / sk, 0.0],
        [0.0, 0.0, 1.0 / sw],
        [1.0, -mk / sk, -mw / sw],
    ];
    let dof = n - 3;
    let s2 = if dof > 0 { rss_norm * rss_norm / dof as f64 } else { 0.0 };
    let inv = ls.normal_inverse();
    let var = |r: usize| -> f64 {
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += m[r][i] * inv[i * 3 + j] * m[r][j];
            }
        }
        (s2 * v).max(0.0)
    };

    Ok(CouplingFit {
        a,
        b,
        c,
        a_se: var(0).sqrt(),
        b_se: var(1).sqrt(),
        c_se: var(2).sqrt(),
        residual_rms: rss_norm / (n as f64).sqrt(),
        n,
    })
}

pub fn predict_phi(fit: &CouplingFit, k_perp: f64, omega: f64) -> f64 {
    fit.a * k_perp + fit.b * omega + fit.c
}

/// Sample layout of a calibration campaign: every plate-beam angle is
/// combined with every tilt and every wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProtocol {
    pub incidence_deg: Vec<f64>,
    pub tilt_deg: Vec<f64>,
    pub wavelength_nm: Vec<f64>,
}

impl Default for CalibrationProtocol {
    fn default() -> Self {
        Self {
            incidence_deg: vec![35.0, 45.0, 55.0],
            tilt_deg: linspace(-1.5, 1.5, 7),
            wavelength_nm: linspace(1529.83, 1564.95, 8),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl CalibrationProtocol {
    pub fn len(&self) -> usize {
        self.incidence_deg.len() * self.tilt_deg.len() * self.wavelength_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noise-free samples for `coupling`; k_perp = (2 pi / lambda) cos(incidence + tilt).
    pub fn samples(&self, coupling: Coupling) -> Vec<CalibSample> {
        let mut out = Vec::with_capacity(self.len());
        for &inc in &self.incidence_deg {
            for &tilt in &self.tilt_deg {
                for &wl in &self.wavelength_nm {
                    let lambda = wl * 1e-9;
                    let k = 2.0 * std::f64::consts::PI / lambda;
                    let omega = k * SPEED_OF_LIGHT;
                    let k_perp = k * (inc + tilt).to_radians().cos();
                    out.push(CalibSample {
                        k_perp,
                        omega,
                        phi: coupling.a * k_perp + coupling.b * omega + coupling.c,
                        incidence_deg: inc,
                        tilt_deg: tilt,
                        wavelength_nm: wl,
                    });
                }
            }
        }
        out
    }

    /// Samples with independent Gaussian readout noise on phi, drawn from
    /// the calibration stream `index` of `seed`.
    pub fn noisy_samples(&self, coupling: Coupling, sigma_phi: f64, seed: u64, index: u64) -> Vec<CalibSample> {
        let mut rng = rng::stream(seed, Domain::Calibration, index);
        let mut s = self.samples(coupling);
        for smp in &mut s {
            let g: f64 = rng.sample(StandardNormal);
            smp.phi += sigma_phi * g;
        }
        s
    }
}
