//! Polarization-pointer forward model.
//!
//! A birefringent plate rotates the photon polarization by an angle that is
//! linear in the local weak momentum and energy. The rotation is read out as
//! H/V photon counts, optionally corrupted by shot noise, detector dark
//! counts, and a random walk of the interferometer arm phase.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::field::{FieldSample, InterferometerConfig, NODE_THRESHOLD};
use crate::grid::ScanGrid;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpticAxis {
    AlongX,
    AlongY,
}

impl OpticAxis {
    pub fn label(&self) -> &'static str {
        match self {
            OpticAxis::AlongX => "along-x",
            OpticAxis::AlongY => "along-y",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "along-x" | "x" => Ok(OpticAxis::AlongX),
            "along-y" | "y" => Ok(OpticAxis::AlongY),
            _ => Err(Error::invalid(format!("unknown optic axis {s:?}"))),
        }
    }
}

/// Linear coupling coefficients of one plate family: phi = a k + b omega + c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    /// rad m
    pub a: f64,
    /// rad s
    pub b: f64,
    /// rad
    pub c: f64,
}

/// Calibrated coupling of the plate with its optic axis along x.
pub const COUPLING_ALONG_X: Coupling = Coupling {
    a: 2.04e-7,
    b: -2.75e-15,
    c: 4.08,
};

/// Calibrated coupling of the plate with its optic axis along y.
pub const COUPLING_ALONG_Y: Coupling = Coupling {
    a: 1.64e-7,
    b: -2.71e-15,
    c: 4.21,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PlateConfig {
    pub id: String,
    pub optic_axis: OpticAxis,
    /// Rotation of the plate normal about y; the normal is (sin, cos) in (x, z).
    pub tilt: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlateConfig {
    pub fn new(id: impl Into<String>, optic_axis: OpticAxis, tilt: f64, coupling: Coupling) -> Self {
        Self {
            id: id.into(),
            optic_axis,
            tilt,
            a: coupling.a,
            b: coupling.b,
            c: coupling.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tilt", self.tilt), ("a", self.a), ("b", self.b), ("c", self.c)] {
            ensure_finite(name, v)?;
        }
        Ok(())
    }

    /// Coefficients (a_x, a_z) of the momentum components.
    pub fn momentum_coefficients(&self) -> (f64, f64) {
        let (s, c) = self.tilt.sin_cos();
        (self.a * s, self.a * c)
    }
}

/// Both optic-axis families at tilts of -10, 0 and +10 degrees.
pub fn default_plates() -> Vec<PlateConfig> {
    plates_for(&[-10.0, 0.0, 10.0], COUPLING_ALONG_X, COUPLING_ALONG_Y)
}

pub fn plates_for(tilts_deg: &[f64], along_x: Coupling, along_y: Coupling) -> Vec<PlateConfig> {
    let mut plates = Vec::with_capacity(2 * tilts_deg.len());
    for (axis, coupling) in [(OpticAxis::AlongX, along_x), (OpticAxis::AlongY, along_y)] {
        for &t in tilts_deg {
            plates.push(PlateConfig::new(
                format!("{}@{}deg", axis.label(), t),
                axis,
                t.to_radians(),
                coupling,
            ));
        }
    }
    plates
}

/// phi = a (kx sin(alpha) + kz cos(alpha)) + b omega + c.
pub fn coupling_phase(plate: &PlateConfig, kx: f64, kz: f64, omega: f64) -> f64 {
    let (ax, az) = plate.momentum_coefficients();
    ax * kx + az * kz + plate.b * omega + plate.c
}

/// How the arm-phase random walk is replayed across the plate passes of one
/// scan step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayPolicy {
    /// Each plate pass sees its own walk state (six consecutive states per site).
    PerPass,
    /// All plate passes of a site share one walk state.
    Shared,
}

impl ReplayPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            ReplayPolicy::PerPass => "per-pass",
            ReplayPolicy::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-pass" => Ok(ReplayPolicy::PerPass),
            "shared" => Ok(ReplayPolicy::Shared),
            _ => Err(Error::invalid(format!("unknown replay policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Dark counts per second, per detector.
    pub dark_rate: f64,
    /// Standard deviation of the arm-phase increment per walk state, rad.
    pub phase_walk_sigma: f64,
    pub shot_noise: bool,
    pub rng_seed: u64,
    pub replay: ReplayPolicy,
}

impl NoiseModel {
    pub fn off(rng_seed: u64) -> Self {
        Self {
            dark_rate: 0.0,
            phase_walk_sigma: 0.0,
            shot_noise: false,
            rng_seed,
            replay: ReplayPolicy::PerPass,
        }
    }

    /// Frozen experimental preset: SNSPD-class dark counts, a slow phase drift
    /// and Poisson statistics.
    pub fn preset(rng_seed: u64) -> Self {
        Self {
            dark_rate: 20.0,
            phase_walk_sigma: 2e-3,
            shot_noise: true,
            rng_seed,
            replay: ReplayPolicy::PerPass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::invalid("dark rate must be non-negative"));
        }
        if !(self.phase_walk_sigma >= 0.0 && self.phase_walk_sigma.is_finite()) {
            return Err(Error::invalid("phase walk sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.dark_rate == 0.0 && self.phase_walk_sigma == 0.0 && !self.shot_noise
    }
}

/// Source brightness and detector integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    /// Detected photon rate at the brightest site, counts/s.
    pub rate: f64,
    /// Accumulation time per record, s.
    pub accumulation_s: f64,
    /// Width of the slit aperture in x; zero samples the field at a point.
    pub slit_width: f64,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            rate: 1000.0,
            accumulation_s: 3.0,
            slit_width: 0.0,
        }
    }
}

impl Acquisition {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid("rate must be positive"));
        }
        if !(self.accumulation_s > 0.0 && self.accumulation_s.is_finite()) {
            return Err(Error::invalid("accumulation time must be positive"));
        }
        if !(self.slit_width >= 0.0 && self.slit_width.is_finite()) {
            return Err(Error::invalid("slit width must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountPair {
    pub h: f64,
    pub v: f64,
}

impl CountPair {
    pub fn total(&self) -> f64 {
        self.h + self.v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub grid: ScanGrid,
    pub plates: Vec<PlateConfig>,
    pub accumulation_s: f64,
    /// Extra H-V phase of the pointer state. Carried for completeness; the
    /// count-ratio readout does not depend on it.
    pub hv_phase: f64,
    /// Site-major records: `counts[site * plates.len() + plate]`.
    pub counts: Vec<CountPair>,
}

impl MeasurementSet {
    pub fn record(&self, site: usize, plate: usize) -> CountPair {
        self.counts[site * self.plates.len() + plate]
    }

    pub fn site_records(&self, site: usize) -> &[CountPair] {
        let n = self.plates.len();
        &self.counts[site * n..(site + 1) * n]
    }

    pub fn record_count(&self) -> usize {
        self.counts.len()
    }

    /// Interference fringe: total detected photons per site over all passes.
    pub fn fringe_counts(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|s| self.site_records(s).iter().map(CountPair::total).sum())
            .collect()
    }
}

/// Samples H/V counts for a pointer rotated by `phi`.
///
/// Means are `N cos^2(phi/2) + dark T` and `N sin^2(phi/2) + dark T`; with shot
/// noise on they are Poisson sampled from the stream of `(site, plate)`.
pub fn simulate_counts(
    phi: f64,
    n_expected: f64,
    noise: &NoiseModel,
    accumulation_s: f64,
    site: usize,
    plate: usize,
) -> Result<CountPair> {
    if !(0.0..=PI).contains(&phi) {
        return Err(Error::PhiOutOfRange(phi));
    }
    if !(n_expected >= 0.0 && n_expected.is_finite()) {
        return Err(Error::invalid("expected counts must be non-negative"));
    }
    let dark = noise.dark_rate * accumulation_s;
    let (s, c) = (phi / 2.0).sin_cos();
    let mean_h = n_expected * c * c + dark;
    let mean_v = n_expected * s * s + dark;
    if !noise.shot_noise {
        return Ok(CountPair {
            h: mean_h,
            v: mean_v,
        });
    }
    let mut rng = rng::stream(noise.rng_seed, Domain::Counts, rng::record_index(site, plate));
    Ok(CountPair {
        h: poisson(&mut rng, mean_h),
        v: poisson(&mut rng, mean_v),
    })
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// phi = 2 atan(sqrt(I_V / I_H)); I_H = 0 maps to pi.
pub fn phi_from_counts(i_h: f64, i_v: f64) -> Result<f64> {
    if !(i_h >= 0.0 && i_v >= 0.0 && i_h.is_finite() && i_v.is_finite()) {
        return Err(Error::invalid("counts must be finite and non-negative"));
    }
    if i_h + i_v <= 0.0 {
        return Err(Error::NoSignal);
    }
    Ok(2.0 * i_v.sqrt().atan2(i_h.sqrt()))
}

/// Cumulative arm-phase offsets, one per walk state. State 0 is unperturbed.
pub fn phase_walk(noise: &NoiseModel, states: usize) -> Vec<f64> {
    let mut walk = vec![0.0; states];
    if noise.phase_walk_sigma == 0.0 || states == 0 {
        return walk;
    }
    let mut rng = rng::stream(noise.rng_seed, Domain::PhaseWalk, 0);
    for n in 1..states {
        let g: f64 = rng.sample(StandardNormal);
        walk[n] = walk[n - 1] + noise.phase_walk_sigma * g;
    }
    walk
}

const SLIT_POINTS: usize = 16;

/// Intensity and current at a site, averaged across the slit if it has width.
fn detected(config: &InterferometerConfig, x: f64, z: f64, arm_phase: f64, slit: f64) -> (f64, f64, f64) {
    let one = |x: f64| {
        let f: FieldSample = config.sample_with_phase(x, z, arm_phase);
        let (jx, jz) = f.current();
        (f.intensity(), jx, jz)
    };
    if slit == 0.0 {
        return one(x);
    }
    let mut acc = (0.0, 0.0, 0.0);
    for m in 0..SLIT_POINTS {
        let xm = x + slit * ((m as f64 + 0.5) / SLIT_POINTS as f64 - 0.5);
        let (i, jx, jz) = one(xm);
        acc.0 += i;
        acc.1 += jx;
        acc.2 += jz;
    }
    let n = SLIT_POINTS as f64;
    (acc.0 / n, acc.1 / n, acc.2 / n)
}

/// Full synthetic experiment over every (site, plate) record.
pub fn run_scan(
    config: &InterferometerConfig,
    plates: &[PlateConfig],
    grid: &ScanGrid,
    acquisition: &Acquisition,
    noise: &NoiseModel,
) -> Result<MeasurementSet> {
    config.validate()?;
    grid.validate()?;
    acquisition.validate()?;
    noise.validate()?;
    crate::inversion::build_design(plates)?;

    let n_plates = plates.len();
    let slit = acquisition.slit_width;
    let max_intensity = (0..grid.len())
        .into_par_iter()
        .map(|s| {
            let (x, z) = grid.site(s);
            detected(config, x, z, config.arm_phase, slit).0
        })
        .reduce(|| 0.0, f64::max);

    let states = match noise.replay {
        ReplayPolicy::PerPass => grid.len() * n_plates,
        ReplayPolicy::Shared => grid.len(),
    };
    let walk = phase_walk(noise, states);
    let scale = acquisition.rate * acquisition.accumulation_s;

    let counts: Vec<CountPair> = (0..grid.len() * n_plates)
        .into_par_iter()
        .map(|r| {
            let (site, p) = (r / n_plates, r % n_plates);
            let state = match noise.replay {
                ReplayPolicy::PerPass => r,
                ReplayPolicy::Shared => site,
            };
            let (x, z) = grid.site(site);
            let (intensity, jx, jz) = detected(config, x, z, config.arm_phase + walk[state], slit);
            let rel = if max_intensity > 0.0 {
                intensity / max_intensity
            } else {
                0.0
            };
            let (phi, n_expected) = if rel < NODE_THRESHOLD {
                (PI / 2.0, 0.0)
            } else {
                let phi = coupling_phase(&plates[p], jx / intensity, jz / intensity, config.omega);
                (phi.clamp(0.0, PI), scale * rel)
            };
            simulate_counts(phi, n_expected, noise, acquisition.accumulation_s, site, p)
        })
        .collect::<Result<_>>()?;

    Ok(MeasurementSet {
        grid: *grid,
        plates: plates.to_vec(),
        accumulation_s: acquisition.accumulation_s,
        hv_phase: 0.0,
        counts,
    })
}
