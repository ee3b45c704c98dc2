//! Velocity field, effective squared mass and streamline reconstruction.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::WeakValueMap;
use crate::grid::ScanGrid;
use crate::units::SPEED_OF_LIGHT;

/// Sites with |omega_w| below this fraction of omega0 are masked.
pub const DEFAULT_OMEGA_FLOOR: f64 = 1e-3;

/// Velocity in units of c.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMap {
    pub grid: ScanGrid,
    pub vx: Vec<f64>,
    pub vz: Vec<f64>,
    pub mask: Vec<bool>,
}

impl VelocityMap {
    /// Builds a map from a closure evaluated on every site; nothing is masked.
    pub fn from_fn(grid: ScanGrid, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (vx, vz) = grid.sites().map(|(x, z)| f(x, z)).unzip();
        Self {
            grid,
            vx,
            vz,
            mask: vec![false; grid.len()],
        }
    }

    pub fn speed(&self, s: usize) -> f64 {
        self.vx[s].hypot(self.vz[s])
    }
}

/// v = c k_w / omega_w, reported in units of c.
pub fn velocity_field(wv: &WeakValueMap, omega0: f64, omega_floor: f64) -> Result<VelocityMap> {
    if !(omega0 > 0.0 && omega0.is_finite()) || !(omega_floor >= 0.0) {
        return Err(Error::invalid("omega0 must be positive and the floor non-negative"));
    }
    let n = wv.grid.len();
    let mut vm = VelocityMap {
        grid: wv.grid,
        vx: vec![f64::NAN; n],
        vz: vec![f64::NAN; n],
        mask: vec![true; n],
    };
    for s in 0..n {
        let w = wv.omega[s];
        if wv.mask[s] || !(w.abs() >= omega_floor * omega0) || !w.is_finite() {
            continue;
        }
        let (vx, vz) = (SPEED_OF_LIGHT * wv.kx[s] / w, SPEED_OF_LIGHT * wv.kz[s] / w);
        if vx.is_finite() && vz.is_finite() {
            vm.vx[s] = vx;
            vm.vz[s] = vz;
            vm.mask[s] = false;
        }
    }
    Ok(vm)
}

/// Effective squared mass density normalized by (hbar omega0)^2.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDensityMap {
    pub grid: ScanGrid,
    pub m2: Vec<f64>,
    pub omega0: f64,
    pub mask: Vec<bool>,
}

impl MassDensityMap {
    pub fn unmasked(&self) -> impl Iterator<Item = f64> + '_ {
        self.m2.iter().zip(&self.mask).filter(|(_, m)| !**m).map(|(v, _)| *v)
    }
}

/// m2 = (omega_w^2 - c^2 |k_w|^2) / omega0^2.
pub fn effective_mass_sq(wv: &WeakValueMap, omega0: f64) -> Result<MassDensityMap> {
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(Error::invalid("omega0 must be positive"));
    }
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    let m2 = (0..wv.grid.len())
        .map(|s| {
            if wv.mask[s] {
                f64::NAN
            } else {
                let k2 = wv.kx[s] * wv.kx[s] + wv.kz[s] * wv.kz[s];
                (wv.omega[s] * wv.omega[s] - c2 * k2) / (omega0 * omega0)
            }
        })
        .collect();
    Ok(MassDensityMap {
        grid: wv.grid,
        m2,
        omega0,
        mask: wv.mask.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    Velocity(f64, f64),
    Masked,
}

/// Bilinear interpolation of the velocity at `point`.
///
/// If any corner of the enclosing cell is masked the unmasked corners are
/// combined by inverse-squared-distance weights instead.
pub fn interpolate_velocity(vm: &VelocityMap, point: (f64, f64)) -> Result<Sample> {
    let g = &vm.grid;
    let (x, z) = point;
    if !g.contains(x, z) {
        return Err(Error::OutOfBounds { x, z });
    }
    let fx = (x - g.x0) / g.dx;
    let fz = (z - g.z0) / g.dz;
    let i = (fx.floor() as usize).min(g.nx.saturating_sub(2));
    let j = (fz.floor() as usize).min(g.nz.saturating_sub(2));
    let i1 = (i + 1).min(g.nx - 1);
    let j1 = (j + 1).min(g.nz - 1);
    let tx = (fx - i as f64).clamp(0.0, 1.0);
    let tz = (fz - j as f64).clamp(0.0, 1.0);

    let corners = [
        (g.index(i, j), (1.0 - tx) * (1.0 - tz), (tx, tz)),
        (g.index(i1, j), tx * (1.0 - tz), (1.0 - tx, tz)),
        (g.index(i, j1), (1.0 - tx) * tz, (tx, 1.0 - tz)),
        (g.index(i1, j1), tx * tz, (1.0 - tx, 1.0 - tz)),
    ];
    if corners.iter().all(|c| !vm.mask[c.0]) {
        let (mut vx, mut vz) = (0.0, 0.0);
        for &(s, w, _) in &corners {
            vx += w * vm.vx[s];
            vz += w * vm.vz[s];
        }
        return Ok(Sample::Velocity(vx, vz));
    }

    let (mut vx, mut vz, mut wsum) = (0.0, 0.0, 0.0);
    for &(s, _, (ox, oz)) in &corners {
        if vm.mask[s] {
            continue;
        }
        let d2 = (ox * g.dx).powi(2) + (oz * g.dz).powi(2);
        if d2 == 0.0 {
            return Ok(Sample::Velocity(vm.vx[s], vm.vz[s]));
        }
        vx += vm.vx[s] / d2;
        vz += vm.vz[s] / d2;
        wsum += 1.0 / d2;
    }
    if wsum == 0.0 {
        return Ok(Sample::Masked);
    }
    Ok(Sample::Velocity(vx / wsum, vz / wsum))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Boundary,
    MaxSteps,
    MaskedRegion,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Boundary => "boundary",
            Termination::MaxSteps => "max-steps",
            Termination::MaskedRegion => "masked-region",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parameterization {
    /// dr/ds = v / |v|: streamlines traced at unit speed.
    #[default]
    Arclength,
    /// dr/ds = v with v in units of c, i.e. s = c t.
    RawVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: (f64, f64),
    pub points: Vec<(f64, f64)>,
    pub step: f64,
    pub termination: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    pub step: f64,
    pub max_steps: usize,
    pub parameterization: Parameterization,
}

impl TrajectoryOptions {
    /// Quarter of the finer grid step.
    pub fn for_grid(grid: &ScanGrid) -> Self {
        Self {
            step: grid.dx.min(grid.dz) / 4.0,
            max_steps: 100_000,
            parameterization: Parameterization::Arclength,
        }
    }
}

enum Eval {
    Ok((f64, f64)),
    Stop(Termination),
}

fn rhs(vm: &VelocityMap, p: (f64, f64), param: Parameterization) -> Eval {
    match interpolate_velocity(vm, p) {
        Err(_) => Eval::Stop(Termination::Boundary),
        Ok(Sample::Masked) => Eval::Stop(Termination::MaskedRegion),
        Ok(Sample::Velocity(vx, vz)) => match param {
            Parameterization::RawVelocity => Eval::Ok((vx, vz)),
            Parameterization::Arclength => {
                let s = vx.hypot(vz);
                if s > 0.0 && s.is_finite() {
                    Eval::Ok((vx / s, vz / s))
                } else {
                    Eval::Stop(Termination::MaskedRegion)
                }
            }
        },
    }
}

/// Classic fourth-order Runge-Kutta streamline from `seed`.
///
/// Integration stops before any stage would leave the grid or enter a fully
/// masked cell; a stagnation point counts as masked.
pub fn integrate_trajectory(vm: &VelocityMap, seed: (f64, f64), opts: &TrajectoryOptions) -> Result<Trajectory> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::invalid("trajectory step must be positive"));
    }
    if !vm.grid.contains(seed.0, seed.1) {
        return Err(Error::OutOfBounds { x: seed.0, z: seed.1 });
    }
    let h = opts.step;
    let mut points = vec![seed];
    let mut p = seed;
    let stop = |points, termination| {
        Ok(Trajectory {
            seed,
            points,
            step: h,
            termination,
        })
    };
    for _ in 0..opts.max_steps {
        let k1 = match rhs(vm, p, opts.parameterization) {
            Eval::Ok(v) => v,
            Eval::Stop(t) => return stop(points, t),
        };
        let k2 = match rhs(vm, (p.0 + 0.5 * h * k1.0, p.1 + 0.5 * h * k1.1), opts.parameterization) {
            Eval::Ok(v) => v,
            Eval::Stop(t) => return stop(points, t),
        };
        let k3 = match rhs(vm, (p.0 + 0.5 * h * k2.0, p.1 + 0.5 * h * k2.1), opts.parameterization) {
            Eval::Ok(v) => v,
            Eval::Stop(t) => return stop(points, t),
        };
        let k4 = match rhs(vm, (p.0 + h * k3.0, p.1 + h * k3.1), opts.parameterization) {
            Eval::Ok(v) => v,
            Eval::Stop(t) => return stop(points, t),
        };
        let next = (
            p.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            p.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
        if !vm.grid.contains(next.0, next.1) {
            return stop(points, Termination::Boundary);
        }
        points.push(next);
        p = next;
    }
    stop(points, Termination::MaxSteps)
}

/// Integrates every seed independently, in parallel.
pub fn integrate_all(vm: &VelocityMap, seeds: &[(f64, f64)], opts: &TrajectoryOptions) -> Result<Vec<Trajectory>> {
    seeds.par_iter().map(|&s| integrate_trajectory(vm, s, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Edge {
    #[default]
    ZMin,
    ZMax,
    XMin,
    XMax,
}

impl Edge {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "z-min" => Ok(Edge::ZMin),
            "z-max" => Ok(Edge::ZMax),
            "x-min" => Ok(Edge::XMin),
            "x-max" => Ok(Edge::XMax),
            _ => Err(Error::invalid(format!("unknown grid edge {s:?}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Edge::ZMin => "z-min",
            Edge::ZMax => "z-max",
            Edge::XMin => "x-min",
            Edge::XMax => "x-max",
        }
    }
}

/// Seeds at the intensity-weighted quantiles (k + 1/2)/n of the edge profile.
///
/// Each edge site owns a cell of one grid step (half a step at the ends) with
/// constant density equal to its intensity.
pub fn seed_trajectories(intensity: &[f64], grid: &ScanGrid, n: usize, edge: Edge) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::invalid("at least one seed is required"));
    }
    if intensity.len() != grid.len() {
        return Err(Error::invalid("intensity map does not match the grid"));
    }
    let (count, step, origin, fixed, along_x) = match edge {
        Edge::ZMin => (grid.nx, grid.dx, grid.x0, grid.z0, true),
        Edge::ZMax => (grid.nx, grid.dx, grid.x0, grid.z_max(), true),
        Edge::XMin => (grid.nz, grid.dz, grid.z0, grid.x0, false),
        Edge::XMax => (grid.nz, grid.dz, grid.z0, grid.x_max(), false),
    };
    let profile: Vec<f64> = (0..count)
        .map(|m| match edge {
            Edge::ZMin => intensity[grid.index(m, 0)],
            Edge::ZMax => intensity[grid.index(m, grid.nz - 1)],
            Edge::XMin => intensity[grid.index(0, m)],
            Edge::XMax => intensity[grid.index(grid.nx - 1, m)],
        })
        .collect();
    if profile.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("edge intensities must be finite and non-negative"));
    }

    // cell m spans [lo_m, hi_m]
    let span = step * (count - 1) as f64;
    let cell = |m: usize| -> (f64, f64) {
        let c = step * m as f64;
        ((c - 0.5 * step).max(0.0), (c + 0.5 * step).min(span))
    };
    let mass: Vec<f64> = (0..count)
        .map(|m| {
            let (lo, hi) = cell(m);
            profile[m] * (hi - lo)
        })
        .collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("no intensity on the entry edge"));
    }

    let mut seeds = Vec::with_capacity(n);
    let mut m = 0;
    let mut below = 0.0;
    for k in 0..n {
        let target = (k as f64 + 0.5) / n as f64 * total;
        while m + 1 < count && below + mass[m] < target {
            below += mass[m];
            m += 1;
        }
        let (lo, hi) = cell(m);
        let frac = if mass[m] > 0.0 {
            ((target - below) / mass[m]).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let u = origin + lo + frac * (hi - lo);
        seeds.push(if along_x { (u, fixed) } else { (fixed, u) });
    }
    Ok(seeds)
}

/// Smallest distance between points of equal step index over every pair.
pub fn min_matched_separation(trajectories: &[Trajectory]) -> f64 {
    let mut min = f64::INFINITY;
    for (a, ta) in trajectories.iter().enumerate() {
        for tb in &trajectories[a + 1..] {
            for (p, q) in ta.points.iter().zip(&tb.points) {
                min = min.min((p.0 - q.0).hypot(p.1 - q.1));
            }
        }
    }
    min
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
        || [d1, d2, d3, d4].iter().all(|d| *d == 0.0) && {
            // collinear: overlap of bounding boxes
            p1.0.min(p2.0) <= q1.0.max(q2.0)
                && q1.0.min(q2.0) <= p1.0.max(p2.0)
                && p1.1.min(p2.1) <= q1.1.max(q2.1)
                && q1.1.min(q2.1) <= p1.1.max(p2.1)
        }
}

/// Whether the polylines of two trajectories intersect or touch.
pub fn polylines_cross(a: &Trajectory, b: &Trajectory) -> bool {
    if a.points.len() < 2 || b.points.len() < 2 {
        return false;
    }
    let cell = 4.0 * a.step.max(b.step);
    let key = |p: (f64, f64)| ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, w) in b.points.windows(2).enumerate() {
        let (k0, k1) = (key(w[0]), key(w[1]));
        for cx in k0.0.min(k1.0)..=k0.0.max(k1.0) {
            for cz in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                buckets.entry((cx, cz)).or_default().push(k);
            }
        }
    }
    for w in a.points.windows(2) {
        let (k0, k1) = (key(w[0]), key(w[1]));
        for cx in k0.0.min(k1.0) - 1..=k0.0.max(k1.0) + 1 {
            for cz in k0.1.min(k1.1) - 1..=k0.1.max(k1.1) + 1 {
                if let Some(list) = buckets.get(&(cx, cz)) {
                    for &k in list {
                        if segments_intersect(w[0], w[1], b.points[k], b.points[k + 1]) {
                            return true;
                        }
                    }
                }
            }
        }
    }
    false
}
