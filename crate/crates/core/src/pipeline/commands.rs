//! Pipeline stages. Each command reads its inputs from files, writes its
//! outputs into the run directory and records digests in the manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::csv;
use super::manifest::RunManifest;
use super::ppm;
use crate::calibration::{fit_linear_coupling, CalibSample, CalibrationProtocol, CouplingFit};
use crate::continuity::{bisect_noise_scale, continuity_report, ContinuityReport, Histogram, ResidualStats};
use crate::dynamics::{
    effective_mass_sq, integrate_all, seed_trajectories, velocity_field, MassDensityMap, Trajectory, VelocityMap,
};
use crate::error::{Error, Result};
use crate::field::{analytic_weak_values, WeakValueMap};
use crate::inversion::{build_design, invert_scan};
use crate::pointer::{run_scan, MeasurementSet};

pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const FRINGE_FILE: &str = "fringe.csv";
pub const CONFIG_FILE: &str = "config.ini";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const WEAK_VALUES_FILE: &str = "weak_values.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const HEATMAP_FILE: &str = "trajectories.ppm";
pub const MASS_FILE: &str = "mass.csv";
pub const MASS_HIST_FILE: &str = "mass_hist.csv";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const RESIDUAL_HIST_E_FILE: &str = "residual_hist_e.csv";
pub const RESIDUAL_HIST_N_FILE: &str = "residual_hist_n.csv";
pub const CONTINUITY_FILE: &str = "continuity.json";
pub const REPORT_FILE: &str = "report.txt";

/// Reference widths of the two residual histograms, 1/s.
pub const REFERENCE_SIGMA_E: f64 = 186.6;
pub const REFERENCE_SIGMA_N: f64 = 362.0;

/// Where a command runs.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, given: Option<&Path>, default: &str) -> PathBuf {
        given.map_or_else(|| self.path(default), Path::to_path_buf)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        csv::write_text(&self.path(name), text)
    }

    fn finish(&self, stage: &str, start: Instant, files: &[&str]) -> Result<()> {
        let mut m = RunManifest::open(&self.out, &self.config)?;
        m.record(stage, start.elapsed().as_secs_f64(), &self.out, files)?;
        m.save(&self.out)
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

// ---- in-memory stages, shared by the commands and the test suites ----

pub fn simulate_measurements(cfg: &RunConfig) -> Result<MeasurementSet> {
    run_scan(&cfg.interferometer()?, &cfg.plates(), &cfg.grid()?, &cfg.acquisition(), &cfg.noise())
}

pub fn invert_measurements(cfg: &RunConfig, ms: &MeasurementSet) -> Result<WeakValueMap> {
    invert_scan(ms, &build_design(&ms.plates)?, cfg.weighting)
}

pub fn velocity_map(cfg: &RunConfig, wv: &WeakValueMap) -> Result<VelocityMap> {
    velocity_field(wv, cfg.interferometer()?.omega, cfg.omega_floor)
}

pub fn mass_map(cfg: &RunConfig, wv: &WeakValueMap) -> Result<MassDensityMap> {
    effective_mass_sq(wv, cfg.interferometer()?.omega)
}

pub fn trace(cfg: &RunConfig, vm: &VelocityMap, intensity: &[f64]) -> Result<Vec<Trajectory>> {
    let seeds = seed_trajectories(intensity, &vm.grid, cfg.seeds, cfg.entry_edge)?;
    integrate_all(vm, &seeds, &cfg.trajectory_options()?)
}

pub fn residuals(cfg: &RunConfig, counts: &[f64], wv: &WeakValueMap) -> Result<ContinuityReport> {
    let vm = velocity_map(cfg, wv)?;
    continuity_report(counts, wv, &vm, cfg.interferometer()?.omega, &cfg.continuity_options())
}

/// Largest per-site relative deviation of `measured` from `reference`:
/// max(|dk| / |k|, |d omega| / omega) over sites unmasked in both.
pub fn max_weak_value_deviation(measured: &WeakValueMap, reference: &WeakValueMap) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for s in 0..measured.grid.len() {
        if measured.mask[s] || reference.mask[s] {
            continue;
        }
        n += 1;
        let dk = (measured.kx[s] - reference.kx[s]).hypot(measured.kz[s] - reference.kz[s]);
        let k = reference.kx[s].hypot(reference.kz[s]);
        let dw = (measured.omega[s] - reference.omega[s]).abs() / reference.omega[s].abs();
        worst = worst.max(dk / k).max(dw);
    }
    (worst, n)
}

// ---- commands ----

pub fn cmd_simulate(ctx: &Context) -> Result<String> {
    let start = Instant::now();
    let ms = simulate_measurements(&ctx.config)?;
    let fringe = ms.fringe_counts();
    ctx.write(CONFIG_FILE, &ctx.config.to_ini())?;
    ctx.write(MEASUREMENTS_FILE, &csv::measurements_to_string(&ms))?;
    ctx.write(FRINGE_FILE, &csv::fringe_to_string(&ms.grid, &fringe))?;
    ctx.finish("simulate", start, &[CONFIG_FILE, MEASUREMENTS_FILE, FRINGE_FILE])?;
    Ok(format!(
        "simulated {} sites x {} plates = {} records; total counts {}",
        ms.grid.len(),
        ms.plates.len(),
        ms.record_count(),
        fringe.iter().sum::<f64>()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsJson {
    pub label: String,
    pub samples: usize,
    pub a_rad_m: f64,
    pub b_rad_s: f64,
    pub c_rad: f64,
    pub a_se_rad_m: f64,
    pub b_se_rad_s: f64,
    pub c_se_rad: f64,
    pub residual_rms_rad: f64,
    /// Predicted rotation at the working wavelength and normal incidence.
    pub phi_at_working_point_rad: f64,
}

fn coefficients(label: &str, fit: &CouplingFit, cfg: &RunConfig) -> Result<CoefficientsJson> {
    let w = cfg.interferometer()?.omega;
    let k = w / crate::units::SPEED_OF_LIGHT;
    Ok(CoefficientsJson {
        label: label.into(),
        samples: fit.n,
        a_rad_m: fit.a,
        b_rad_s: fit.b,
        c_rad: fit.c,
        a_se_rad_m: fit.a_se,
        b_se_rad_s: fit.b_se,
        c_se_rad: fit.c_se,
        residual_rms_rad: fit.residual_rms,
        phi_at_working_point_rad: crate::calibration::predict_phi(fit, k, w),
    })
}

fn write_json<T: Serialize>(ctx: &Context, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    ctx.write(name, &text)
}

/// Fits the coupling of each sample file. Without files, synthesizes the
/// default protocol for both configured plate families with Gaussian readout
/// noise `sigma_phi`, writes the samples, and fits those.
pub fn cmd_calibrate(ctx: &Context, samples: &[PathBuf], sigma_phi: f64) -> Result<String> {
    let start = Instant::now();
    let mut sets: Vec<(String, Vec<CalibSample>)> = Vec::new();
    let mut files: Vec<String> = Vec::new();
    if samples.is_empty() {
        if !(sigma_phi >= 0.0 && sigma_phi.is_finite()) {
            return Err(Error::invalid("sigma_phi must be non-negative"));
        }
        let protocol = CalibrationProtocol::default();
        for (k, (label, coupling)) in [("along-x", ctx.config.along_x), ("along-y", ctx.config.along_y)]
            .into_iter()
            .enumerate()
        {
            let s = protocol.noisy_samples(coupling, sigma_phi, ctx.config.seed, k as u64);
            let name = format!("calib_samples_{label}.csv");
            ctx.write(&name, &csv::calibration_to_string(&s))?;
            files.push(name);
            sets.push((label.to_string(), s));
        }
    } else {
        for p in samples {
            let label = p.file_stem().map_or("samples".into(), |s| s.to_string_lossy().into_owned());
            sets.push((label, csv::read_calibration(p)?));
        }
    }
    let mut out = Vec::new();
    let mut summary = String::new();
    for (label, s) in &sets {
        let fit = fit_linear_coupling(s)?;
        let _ = writeln!(
            summary,
            "{label}: a = {:e} +- {:e} rad m, b = {:e} +- {:e} rad s, c = {} +- {} rad (n = {}, rms {:e} rad)",
            fit.a, fit.a_se, fit.b, fit.b_se, fit.c, fit.c_se, fit.n, fit.residual_rms
        );
        out.push(coefficients(label, &fit, &ctx.config)?);
    }
    write_json(ctx, CALIBRATION_FILE, &out)?;
    files.push(CALIBRATION_FILE.into());
    let refs: Vec<&str> = files.iter().map(String::as_str).collect();
    ctx.finish("calibrate", start, &refs)?;
    Ok(summary.trim_end().to_string())
}

pub fn cmd_invert(ctx: &Context, measurements: Option<&Path>) -> Result<String> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let ms = csv::read_measurements(
        &ctx.input(measurements, MEASUREMENTS_FILE),
        &cfg.grid()?,
        &cfg.plates(),
        cfg.accumulation_s,
    )?;
    let design = build_design(&ms.plates)?;
    let wv = invert_scan(&ms, &design, cfg.weighting)?;
    ctx.write(WEAK_VALUES_FILE, &csv::weak_values_to_string(&wv))?;
    ctx.finish("invert", start, &[WEAK_VALUES_FILE])?;
    Ok(format!(
        "inverted {} of {} sites (design condition number {:.3})",
        wv.unmasked_count(),
        wv.grid.len(),
        design.condition_number
    ))
}

pub fn cmd_trajectories(ctx: &Context, weak_values: Option<&Path>, fringe: Option<&Path>) -> Result<String> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let grid = cfg.grid()?;
    let wv = csv::read_weak_values(&ctx.input(weak_values, WEAK_VALUES_FILE), &grid)?;
    let counts = csv::read_fringe(&ctx.input(fringe, FRINGE_FILE), &grid)?;
    let vm = velocity_map(cfg, &wv)?;
    let trajectories = trace(cfg, &vm, &counts)?;
    ctx.write(TRAJECTORIES_FILE, &csv::trajectories_to_string(&trajectories))?;

    let mut img = ppm::heatmap(&grid, &counts, cfg.heatmap_z_upscale);
    for t in &trajectories {
        ppm::draw_polyline(&mut img, &grid, cfg.heatmap_z_upscale, &t.points);
    }
    let path = ctx.path(HEATMAP_FILE);
    std::fs::write(&path, img.to_bytes()).map_err(|e| Error::io(&path, e))?;
    ctx.finish("trajectories", start, &[TRAJECTORIES_FILE, HEATMAP_FILE])?;

    let mut by_reason = std::collections::BTreeMap::new();
    for t in &trajectories {
        *by_reason.entry(t.termination.label()).or_insert(0usize) += 1;
    }
    let reasons: Vec<String> = by_reason.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("traced {} trajectories ({})", trajectories.len(), reasons.join(", ")))
}

pub fn cmd_mass(ctx: &Context, weak_values: Option<&Path>) -> Result<String> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let wv = csv::read_weak_values(&ctx.input(weak_values, WEAK_VALUES_FILE), &cfg.grid()?)?;
    let mass = mass_map(cfg, &wv)?;
    let vm = velocity_map(cfg, &wv)?;
    let values: Vec<f64> = mass.unmasked().collect();
    let hist = Histogram::build(&values, cfg.bins, cfg.max_bins)?;
    ctx.write(MASS_FILE, &csv::mass_to_string(&mass, &vm))?;
    ctx.write(MASS_HIST_FILE, &csv::histogram_to_string(&hist))?;
    ctx.finish("mass", start, &[MASS_FILE, MASS_HIST_FILE])?;
    let s = MassSummary::of(&values);
    Ok(format!(
        "m2_eff over {} sites: min {}, max {}, negative {}, below -1 {}",
        s.sites, s.min, s.max, s.negative, s.below_minus_one
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSummary {
    pub sites: usize,
    pub min: f64,
    pub max: f64,
    pub negative: usize,
    pub below_minus_one: usize,
}

impl MassSummary {
    pub fn of(values: &[f64]) -> Self {
        let f: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        Self {
            sites: f.len(),
            min: f.iter().copied().fold(f64::INFINITY, f64::min),
            max: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            negative: f.iter().filter(|v| **v < 0.0).count(),
            below_minus_one: f.iter().filter(|v| **v < -1.0).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualJson {
    pub sites: usize,
    pub mean_per_s: f64,
    pub std_per_s: f64,
    pub rms_per_s: f64,
    pub fit_converged: bool,
    pub fit_mu_per_s: Option<f64>,
    pub fit_sigma_per_s: Option<f64>,
    pub fit_sigma_uncertainty_per_s: Option<f64>,
    pub bins: usize,
}

impl ResidualJson {
    fn of(s: &ResidualStats) -> Self {
        Self {
            sites: s.count,
            mean_per_s: s.mean,
            std_per_s: s.std,
            rms_per_s: s.rms,
            fit_converged: s.fit.is_some(),
            fit_mu_per_s: s.fit.map(|f| f.mu),
            fit_sigma_per_s: s.fit.map(|f| f.sigma),
            fit_sigma_uncertainty_per_s: s.fit.map(|f| f.sigma_uncertainty),
            bins: s.histogram.counts.len(),
        }
    }

    /// Fitted width, or the sample standard deviation if the fit failed.
    pub fn sigma(&self) -> f64 {
        self.fit_sigma_per_s.unwrap_or(self.std_per_s)
    }

    pub fn center(&self) -> f64 {
        self.fit_mu_per_s.unwrap_or(self.mean_per_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityJson {
    pub relativistic: ResidualJson,
    pub nonrelativistic: ResidualJson,
    pub sigma_ratio: f64,
}

pub fn cmd_continuity(ctx: &Context, weak_values: Option<&Path>, fringe: Option<&Path>) -> Result<String> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let grid = cfg.grid()?;
    let wv = csv::read_weak_values(&ctx.input(weak_values, WEAK_VALUES_FILE), &grid)?;
    let counts = csv::read_fringe(&ctx.input(fringe, FRINGE_FILE), &grid)?;
    let rep = residuals(cfg, &counts, &wv)?;
    ctx.write(RESIDUALS_FILE, &csv::residuals_to_string(&grid, &rep.r_e, &rep.r_n))?;
    ctx.write(RESIDUAL_HIST_E_FILE, &csv::histogram_to_string(&rep.relativistic.histogram))?;
    ctx.write(RESIDUAL_HIST_N_FILE, &csv::histogram_to_string(&rep.nonrelativistic.histogram))?;
    let json = ContinuityJson {
        relativistic: ResidualJson::of(&rep.relativistic),
        nonrelativistic: ResidualJson::of(&rep.nonrelativistic),
        sigma_ratio: rep.nonrelativistic.sigma() / rep.relativistic.sigma(),
    };
    write_json(ctx, CONTINUITY_FILE, &json)?;
    ctx.finish(
        "continuity",
        start,
        &[RESIDUALS_FILE, RESIDUAL_HIST_E_FILE, RESIDUAL_HIST_N_FILE, CONTINUITY_FILE],
    )?;
    Ok(format!(
        "sigma(R_e) = {:e} 1/s, sigma(R_n) = {:e} 1/s, ratio {:.4}",
        json.relativistic.sigma(),
        json.nonrelativistic.sigma(),
        json.sigma_ratio
    ))
}

/// Summary of a run directory, compared with the reference statistics.
pub fn cmd_report(ctx: &Context, run_dir: Option<&Path>) -> Result<String> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let dir = run_dir.map_or_else(|| ctx.out.clone(), Path::to_path_buf);
    let grid = cfg.grid()?;
    let mut r = String::new();
    let _ = writeln!(r, "config hash: {}", cfg.hash());
    let _ = writeln!(r, "seed: {}", cfg.seed);
    let _ = writeln!(r, "grid: {} x {} = {} sites", grid.nx, grid.nz, grid.len());
    let noise = cfg.noise();
    let _ = writeln!(
        r,
        "noise: dark {} 1/s, phase walk {} rad, shot noise {}",
        noise.dark_rate, noise.phase_walk_sigma, noise.shot_noise
    );

    let wv_path = dir.join(WEAK_VALUES_FILE);
    if !wv_path.exists() {
        return Err(Error::invalid(format!("missing stage output {}", wv_path.display())));
    }
    let wv = csv::read_weak_values(&wv_path, &grid)?;
    let truth = analytic_weak_values(&cfg.interferometer()?, &grid)?;
    let (dev, n) = max_weak_value_deviation(&wv, &truth);
    let _ = writeln!(r, "inverted sites: {} of {}", wv.unmasked_count(), grid.len());
    let _ = writeln!(r, "max weak-value deviation from analytic field: {dev:e} over {n} sites");

    let mass_path = dir.join(MASS_FILE);
    if mass_path.exists() {
        let s = MassSummary::of(&csv::read_mass(&mass_path, &grid)?);
        let _ = writeln!(
            r,
            "m2_eff: min {}, max {}, negative sites {}, below -1 {}",
            s.min, s.max, s.negative, s.below_minus_one
        );
    }
    let traj_path = dir.join(TRAJECTORIES_FILE);
    if traj_path.exists() {
        let t = csv::read_trajectories(&traj_path)?;
        let _ = writeln!(r, "trajectories: {}", t.len());
    }
    let cont_path = dir.join(CONTINUITY_FILE);
    if cont_path.exists() {
        let text = std::fs::read_to_string(&cont_path).map_err(|e| Error::io(&cont_path, e))?;
        let c: ContinuityJson =
            serde_json::from_str(&text).map_err(|e| Error::schema(cont_path.display().to_string(), e.to_string()))?;
        let (se, sn) = (c.relativistic.sigma(), c.nonrelativistic.sigma());
        let _ = writeln!(
            r,
            "sigma(R_e): {se:e} 1/s (reference {REFERENCE_SIGMA_E}), center {:e}",
            c.relativistic.center()
        );
        let _ = writeln!(
            r,
            "sigma(R_n): {sn:e} 1/s (reference {REFERENCE_SIGMA_N}), center {:e}",
            c.nonrelativistic.center()
        );
        let _ = writeln!(
            r,
            "sigma(R_n)/sigma(R_e): {:.4} (reference {:.4})",
            sn / se,
            REFERENCE_SIGMA_N / REFERENCE_SIGMA_E
        );
    }
    ctx.write(REPORT_FILE, &r)?;
    ctx.finish("report", start, &[REPORT_FILE])?;
    Ok(r.trim_end().to_string())
}

/// sigma(R_e) of a full in-memory run with the dark rate and phase walk of
/// `cfg` multiplied by `scale`.
pub fn sigma_re_at_noise_scale(cfg: &RunConfig, scale: f64) -> Result<f64> {
    let mut c = cfg.clone();
    c.dark_rate_per_s *= scale;
    c.phase_walk_sigma_rad *= scale;
    let ms = simulate_measurements(&c)?;
    let wv = invert_measurements(&c, &ms)?;
    Ok(residuals(&c, &ms.fringe_counts(), &wv)?.relativistic.sigma())
}

/// Bisects the noise scale of `cfg` until sigma(R_e) reaches `target`.
pub fn tune_noise_scale(cfg: &RunConfig, target: f64, max_scale: f64) -> Result<f64> {
    bisect_noise_scale(target, 0.0, max_scale, 0.01, 40, |s| sigma_re_at_noise_scale(cfg, s))
}
