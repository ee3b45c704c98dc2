//! Run configuration in a flat INI dialect.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Every physical quantity carries its unit in the key name. Unknown
//! sections, unknown keys and duplicates are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::continuity::{ContinuityOptions, DEFAULT_COUNT_FLOOR, DEFAULT_MAX_BINS};
use crate::dynamics::{Edge, Parameterization, TrajectoryOptions, DEFAULT_OMEGA_FLOOR};
use crate::error::{Error, Result};
use crate::field::InterferometerConfig;
use crate::grid::ScanGrid;
use crate::inversion::Weighting;
use crate::pointer::{plates_for, Acquisition, Coupling, NoiseModel, PlateConfig, ReplayPolicy, COUPLING_ALONG_X, COUPLING_ALONG_Y};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub wavelength_nm: f64,
    pub waist_um: f64,
    pub fringe_period_um: f64,
    pub arm_phase_rad: f64,

    pub x0_um: f64,
    pub z0_um: f64,
    pub dx_nm: f64,
    pub dz_nm: f64,
    pub nx: usize,
    pub nz: usize,

    pub tilts_deg: Vec<f64>,
    pub along_x: Coupling,
    pub along_y: Coupling,

    pub rate_per_s: f64,
    pub accumulation_s: f64,
    pub slit_width_nm: f64,

    pub dark_rate_per_s: f64,
    pub phase_walk_sigma_rad: f64,
    pub shot_noise: bool,
    pub replay: ReplayPolicy,

    pub weighting: Weighting,

    pub seeds: usize,
    pub entry_edge: Edge,
    /// None selects a quarter of the finer grid step.
    pub step_nm: Option<f64>,
    pub max_steps: usize,
    pub parameterization: Parameterization,
    pub omega_floor: f64,

    pub count_floor: f64,
    pub kernel_sigma_nm: f64,
    pub bins: Option<usize>,
    pub max_bins: usize,

    pub heatmap_z_upscale: usize,
}

impl Default for RunConfig {
    /// Default geometry with the frozen noise preset.
    fn default() -> Self {
        let noise = NoiseModel::preset(1);
        let acq = Acquisition::default();
        Self {
            seed: 1,
            wavelength_nm: 1550.0,
            waist_um: 8.3,
            fringe_period_um: 3.0,
            arm_phase_rad: 0.0,
            x0_um: -9.0,
            z0_um: -9.0,
            dx_nm: 100.0,
            dz_nm: 400.0,
            nx: 181,
            nz: 46,
            tilts_deg: vec![-10.0, 0.0, 10.0],
            along_x: COUPLING_ALONG_X,
            along_y: COUPLING_ALONG_Y,
            rate_per_s: acq.rate,
            accumulation_s: acq.accumulation_s,
            slit_width_nm: acq.slit_width * 1e9,
            dark_rate_per_s: noise.dark_rate,
            phase_walk_sigma_rad: noise.phase_walk_sigma,
            shot_noise: noise.shot_noise,
            replay: noise.replay,
            weighting: Weighting::Unweighted,
            seeds: 24,
            entry_edge: Edge::ZMin,
            step_nm: None,
            max_steps: 100_000,
            parameterization: Parameterization::Arclength,
            omega_floor: DEFAULT_OMEGA_FLOOR,
            count_floor: DEFAULT_COUNT_FLOOR,
            kernel_sigma_nm: 0.0,
            bins: None,
            max_bins: DEFAULT_MAX_BINS,
            heatmap_z_upscale: 4,
        }
    }
}

impl RunConfig {
    /// Default geometry with every noise source switched off.
    pub fn noiseless() -> Self {
        Self {
            dark_rate_per_s: 0.0,
            phase_walk_sigma_rad: 0.0,
            shot_noise: false,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = parse_ini(text)?;
        let mut cfg = Self::default();
        let mut t = Taker { kv: &mut kv };

        if let Some(v) = t.take::<u32>("run", "schema_version")? {
            if v != SCHEMA_VERSION {
                return Err(Error::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")));
            }
        }
        t.set(&mut cfg.seed, "run", "seed")?;

        t.set(&mut cfg.wavelength_nm, "interferometer", "wavelength_nm")?;
        t.set(&mut cfg.waist_um, "interferometer", "waist_um")?;
        t.set(&mut cfg.fringe_period_um, "interferometer", "fringe_period_um")?;
        t.set(&mut cfg.arm_phase_rad, "interferometer", "arm_phase_rad")?;

        t.set(&mut cfg.x0_um, "grid", "x0_um")?;
        t.set(&mut cfg.z0_um, "grid", "z0_um")?;
        t.set(&mut cfg.dx_nm, "grid", "dx_nm")?;
        t.set(&mut cfg.dz_nm, "grid", "dz_nm")?;
        t.set(&mut cfg.nx, "grid", "nx")?;
        t.set(&mut cfg.nz, "grid", "nz")?;

        if let Some(s) = t.raw("plates", "tilts_deg") {
            cfg.tilts_deg = s
                .split(',')
                .map(|x| parse_value::<f64>("plates", "tilts_deg", x.trim()))
                .collect::<Result<_>>()?;
        }
        t.set(&mut cfg.along_x.a, "plates", "along_x_a_rad_m")?;
        t.set(&mut cfg.along_x.b, "plates", "along_x_b_rad_s")?;
        t.set(&mut cfg.along_x.c, "plates", "along_x_c_rad")?;
        t.set(&mut cfg.along_y.a, "plates", "along_y_a_rad_m")?;
        t.set(&mut cfg.along_y.b, "plates", "along_y_b_rad_s")?;
        t.set(&mut cfg.along_y.c, "plates", "along_y_c_rad")?;

        t.set(&mut cfg.rate_per_s, "acquisition", "rate_per_s")?;
        t.set(&mut cfg.accumulation_s, "acquisition", "accumulation_s")?;
        t.set(&mut cfg.slit_width_nm, "acquisition", "slit_width_nm")?;

        t.set(&mut cfg.dark_rate_per_s, "noise", "dark_rate_per_s")?;
        t.set(&mut cfg.phase_walk_sigma_rad, "noise", "phase_walk_sigma_rad")?;
        t.set(&mut cfg.shot_noise, "noise", "shot_noise")?;
        if let Some(s) = t.raw("noise", "replay") {
            cfg.replay = ReplayPolicy::parse(&s).map_err(|e| Error::Config(e.to_string()))?;
        }

        if let Some(s) = t.raw("inversion", "weighting") {
            cfg.weighting = match s.as_str() {
                "unweighted" => Weighting::Unweighted,
                "poisson" => Weighting::PoissonCounts,
                _ => return Err(Error::Config(format!("inversion.weighting: unknown value {s:?}"))),
            };
        }

        t.set(&mut cfg.seeds, "trajectory", "seeds")?;
        if let Some(s) = t.raw("trajectory", "entry_edge") {
            cfg.entry_edge = Edge::parse(&s).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(s) = t.raw("trajectory", "step_nm") {
            cfg.step_nm = if s == "auto" {
                None
            } else {
                Some(parse_value("trajectory", "step_nm", &s)?)
            };
        }
        t.set(&mut cfg.max_steps, "trajectory", "max_steps")?;
        if let Some(s) = t.raw("trajectory", "parameterization") {
            cfg.parameterization = match s.as_str() {
                "arclength" => Parameterization::Arclength,
                "raw-velocity" => Parameterization::RawVelocity,
                _ => return Err(Error::Config(format!("trajectory.parameterization: unknown value {s:?}"))),
            };
        }
        t.set(&mut cfg.omega_floor, "trajectory", "omega_floor")?;

        t.set(&mut cfg.count_floor, "continuity", "count_floor")?;
        t.set(&mut cfg.kernel_sigma_nm, "continuity", "kernel_sigma_nm")?;
        if let Some(s) = t.raw("continuity", "bins") {
            cfg.bins = if s == "auto" {
                None
            } else {
                Some(parse_value("continuity", "bins", &s)?)
            };
        }
        t.set(&mut cfg.max_bins, "continuity", "max_bins")?;

        t.set(&mut cfg.heatmap_z_upscale, "output", "heatmap_z_upscale")?;

        if let Some(((section, key), _)) = kv.iter().next() {
            return Err(Error::Config(format!("unknown key {key:?} in section [{section}]")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.interferometer()?.validate()?;
        self.grid()?;
        crate::inversion::build_design(&self.plates())?;
        self.acquisition().validate()?;
        self.noise().validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.seeds == 0 {
            return bad("trajectory.seeds must be at least 1");
        }
        if let Some(s) = self.step_nm {
            if !(s > 0.0 && s.is_finite()) {
                return bad("trajectory.step_nm must be positive");
            }
        }
        if !(self.omega_floor >= 0.0 && self.omega_floor < 1.0) {
            return bad("trajectory.omega_floor must lie in [0, 1)");
        }
        if !(self.count_floor >= 0.0 && self.count_floor < 1.0) {
            return bad("continuity.count_floor must lie in [0, 1)");
        }
        if !(self.kernel_sigma_nm >= 0.0 && self.kernel_sigma_nm.is_finite()) {
            return bad("continuity.kernel_sigma_nm must be non-negative");
        }
        if self.bins == Some(0) || self.max_bins == 0 {
            return bad("continuity bin counts must be positive");
        }
        if self.heatmap_z_upscale == 0 {
            return bad("output.heatmap_z_upscale must be positive");
        }
        Ok(())
    }

    pub fn interferometer(&self) -> Result<InterferometerConfig> {
        let lambda = self.wavelength_nm / 1e9;
        let period = self.fringe_period_um / 1e6;
        if !(period > lambda / 2.0) {
            return Err(Error::Config("fringe period must exceed half the wavelength".into()));
        }
        let half_angle = InterferometerConfig::half_angle_for_period(lambda, period);
        let cfg = InterferometerConfig::symmetric(lambda, self.waist_um / 1e6, half_angle, self.arm_phase_rad);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<ScanGrid> {
        ScanGrid::new(self.x0_um / 1e6, self.z0_um / 1e6, self.dx_nm / 1e9, self.dz_nm / 1e9, self.nx, self.nz)
    }

    pub fn plates(&self) -> Vec<PlateConfig> {
        plates_for(&self.tilts_deg, self.along_x, self.along_y)
    }

    pub fn acquisition(&self) -> Acquisition {
        Acquisition {
            rate: self.rate_per_s,
            accumulation_s: self.accumulation_s,
            slit_width: self.slit_width_nm / 1e9,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            dark_rate: self.dark_rate_per_s,
            phase_walk_sigma: self.phase_walk_sigma_rad,
            shot_noise: self.shot_noise,
            rng_seed: self.seed,
            replay: self.replay,
        }
    }

    pub fn trajectory_options(&self) -> Result<TrajectoryOptions> {
        let mut o = TrajectoryOptions::for_grid(&self.grid()?);
        if let Some(s) = self.step_nm {
            o.step = s / 1e9;
        }
        o.max_steps = self.max_steps;
        o.parameterization = self.parameterization;
        Ok(o)
    }

    pub fn continuity_options(&self) -> ContinuityOptions {
        ContinuityOptions {
            count_floor: self.count_floor,
            kernel_sigma: self.kernel_sigma_nm / 1e9,
            bins: self.bins,
            max_bins: self.max_bins,
        }
    }

    /// Canonical text form; parsing it returns an identical config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, entries: &[(&str, String)]| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        section(
            "run",
            &[("schema_version", SCHEMA_VERSION.to_string()), ("seed", self.seed.to_string())],
        );
        section(
            "interferometer",
            &[
                ("wavelength_nm", self.wavelength_nm.to_string()),
                ("waist_um", self.waist_um.to_string()),
                ("fringe_period_um", self.fringe_period_um.to_string()),
                ("arm_phase_rad", self.arm_phase_rad.to_string()),
            ],
        );
        section(
            "grid",
            &[
                ("x0_um", self.x0_um.to_string()),
                ("z0_um", self.z0_um.to_string()),
                ("dx_nm", self.dx_nm.to_string()),
                ("dz_nm", self.dz_nm.to_string()),
                ("nx", self.nx.to_string()),
                ("nz", self.nz.to_string()),
            ],
        );
        let tilts: Vec<String> = self.tilts_deg.iter().map(|t| t.to_string()).collect();
        section(
            "plates",
            &[
                ("tilts_deg", tilts.join(", ")),
                ("along_x_a_rad_m", self.along_x.a.to_string()),
                ("along_x_b_rad_s", self.along_x.b.to_string()),
                ("along_x_c_rad", self.along_x.c.to_string()),
                ("along_y_a_rad_m", self.along_y.a.to_string()),
                ("along_y_b_rad_s", self.along_y.b.to_string()),
                ("along_y_c_rad", self.along_y.c.to_string()),
            ],
        );
        section(
            "acquisition",
            &[
                ("rate_per_s", self.rate_per_s.to_string()),
                ("accumulation_s", self.accumulation_s.to_string()),
                ("slit_width_nm", self.slit_width_nm.to_string()),
            ],
        );
        section(
            "noise",
            &[
                ("dark_rate_per_s", self.dark_rate_per_s.to_string()),
                ("phase_walk_sigma_rad", self.phase_walk_sigma_rad.to_string()),
                ("shot_noise", self.shot_noise.to_string()),
                ("replay", self.replay.label().to_string()),
            ],
        );
        let weighting = match self.weighting {
            Weighting::Unweighted => "unweighted",
            Weighting::PoissonCounts => "poisson",
        };
        section("inversion", &[("weighting", weighting.to_string())]);
        let param = match self.parameterization {
            Parameterization::Arclength => "arclength",
            Parameterization::RawVelocity => "raw-velocity",
        };
        section(
            "trajectory",
            &[
                ("seeds", self.seeds.to_string()),
                ("entry_edge", self.entry_edge.label().to_string()),
                ("step_nm", self.step_nm.map_or("auto".into(), |v| v.to_string())),
                ("max_steps", self.max_steps.to_string()),
                ("parameterization", param.to_string()),
                ("omega_floor", self.omega_floor.to_string()),
            ],
        );
        section(
            "continuity",
            &[
                ("count_floor", self.count_floor.to_string()),
                ("kernel_sigma_nm", self.kernel_sigma_nm.to_string()),
                ("bins", self.bins.map_or("auto".into(), |v| v.to_string())),
                ("max_bins", self.max_bins.to_string()),
            ],
        );
        section("output", &[("heatmap_z_upscale", self.heatmap_z_upscale.to_string())]);
        s
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_ini().as_bytes()))
    }
}

type KeyMap = BTreeMap<(String, String), String>;

fn parse_ini(text: &str) -> Result<KeyMap> {
    let mut kv = KeyMap::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: malformed section header", n + 1)))?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let sec = section
            .clone()
            .ok_or_else(|| Error::Config(format!("line {}: key outside of any section", n + 1)))?;
        let key = (sec, k.trim().to_string());
        if kv.contains_key(&key) {
            return Err(Error::Config(format!("line {}: duplicate key {:?}", n + 1, key.1)));
        }
        kv.insert(key, v.trim().to_string());
    }
    Ok(kv)
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("{section}.{key}: cannot parse {s:?}")))
}

struct Taker<'a> {
    kv: &'a mut KeyMap,
}

impl Taker<'_> {
    fn raw(&mut self, section: &str, key: &str) -> Option<String> {
        self.kv.remove(&(section.to_string(), key.to_string()))
    }

    fn take<T: std::str::FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|s| parse_value(section, key, &s))
            .transpose()
    }

    fn set<T: std::str::FromStr>(&mut self, slot: &mut T, section: &str, key: &str) -> Result<()> {
        if let Some(v) = self.take(section, key)? {
            *slot = v;
        }
        Ok(())
    }
}
