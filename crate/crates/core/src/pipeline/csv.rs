//! CSV schemas of every pipeline stage.
//!
//! UTF-8, LF line endings, mandatory header. Floats are printed in the
//! shortest form that parses back to the same binary value; masked entries
//! are empty fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::calibration::CalibSample;
use crate::continuity::Histogram;
use crate::dynamics::{MassDensityMap, Trajectory, VelocityMap};
use crate::error::{Error, Result};
use crate::field::WeakValueMap;
use crate::grid::ScanGrid;
use crate::pointer::{CountPair, MeasurementSet, PlateConfig};

pub const FRINGE_HEADER: &str = "x_m,z_m,counts";
pub const WEAK_VALUES_HEADER: &str = "x_m,z_m,kx_rad_per_m,kz_rad_per_m,omega_rad_per_s,residual_rad,mask";
pub const TRAJECTORIES_HEADER: &str = "traj_id,step,x_m,z_m";
pub const RESIDUALS_HEADER: &str = "x_m,z_m,R_e_per_s,R_n_per_s";
pub const MEASUREMENTS_HEADER: &str = "site,plate,x_m,z_m,i_h,i_v";
pub const MASS_HEADER: &str = "x_m,z_m,m2_eff,vx_c,vz_c,mask";
pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count";
pub const CALIBRATION_HEADER: &str = "k_perp_rad_per_m,omega_rad_per_s,phi_rad,incidence_deg,tilt_deg,wavelength_nm";

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn opt(v: f64, masked: bool) -> String {
    if masked || !v.is_finite() {
        String::new()
    } else {
        fmt_f64(v)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct Table<'a> {
    file: String,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn table<'a>(path: &Path, text: &'a str, header: &str) -> Result<Table<'a>> {
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((_, h)) => return Err(Error::schema(&file, format!("header {h:?} does not match {header:?}"))),
        None => return Err(Error::schema(&file, "empty file")),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != width {
            return Err(Error::schema(&file, format!("line {}: expected {width} fields, found {}", n + 1, cols.len())));
        }
        rows.push((n + 1, cols));
    }
    Ok(Table { file, rows })
}

impl Table<'_> {
    fn float(&self, line: usize, s: &str) -> Result<f64> {
        let v: f64 = s
            .parse()
            .map_err(|_| Error::schema(&self.file, format!("line {line}: cannot parse {s:?} as a number")))?;
        if !v.is_finite() {
            return Err(Error::schema(&self.file, format!("line {line}: non-finite value {s:?}")));
        }
        Ok(v)
    }

    fn optional(&self, line: usize, s: &str) -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            self.float(line, s).map(Some)
        }
    }

    fn int(&self, line: usize, s: &str) -> Result<usize> {
        s.parse()
            .map_err(|_| Error::schema(&self.file, format!("line {line}: cannot parse {s:?} as an index")))
    }

    fn expect_rows(&self, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(Error::schema(&self.file, format!("expected {n} rows, found {}", self.rows.len())));
        }
        Ok(())
    }

    /// Checks that a row sits on grid site `s`.
    fn check_site(&self, line: usize, grid: &ScanGrid, s: usize, x: f64, z: f64) -> Result<()> {
        let (gx, gz) = grid.site(s);
        let tol = 1e-6 * grid.dx.min(grid.dz);
        if (gx - x).abs() > tol || (gz - z).abs() > tol {
            return Err(Error::schema(&self.file, format!("line {line}: ({x}, {z}) is not grid site {s}")));
        }
        Ok(())
    }
}

pub fn fringe_to_string(grid: &ScanGrid, counts: &[f64]) -> String {
    let mut s = String::with_capacity(40 * counts.len());
    s.push_str(FRINGE_HEADER);
    s.push('\n');
    for (k, c) in counts.iter().enumerate() {
        let (x, z) = grid.site(k);
        let _ = writeln!(s, "{},{},{}", fmt_f64(x), fmt_f64(z), fmt_f64(*c));
    }
    s
}

pub fn read_fringe(path: &Path, grid: &ScanGrid) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let t = table(path, &text, FRINGE_HEADER)?;
    t.expect_rows(grid.len())?;
    t.rows
        .iter()
        .enumerate()
        .map(|(s, (line, c))| {
            let (x, z) = (t.float(*line, c[0])?, t.float(*line, c[1])?);
            t.check_site(*line, grid, s, x, z)?;
            let n = t.float(*line, c[2])?;
            if n < 0.0 {
                return Err(Error::schema(&t.file, format!("line {line}: negative counts")));
            }
            Ok(n)
        })
        .collect()
}

pub fn measurements_to_string(ms: &MeasurementSet) -> String {
    let mut s = String::with_capacity(48 * ms.counts.len());
    s.push_str(MEASUREMENTS_HEADER);
    s.push('\n');
    let np = ms.plates.len();
    for (r, c) in ms.counts.iter().enumerate() {
        let (site, p) = (r / np, r % np);
        let (x, z) = ms.grid.site(site);
        let _ = writeln!(s, "{site},{p},{},{},{},{}", fmt_f64(x), fmt_f64(z), fmt_f64(c.h), fmt_f64(c.v));
    }
    s
}

pub fn read_measurements(path: &Path, grid: &ScanGrid, plates: &[PlateConfig], accumulation_s: f64) -> Result<MeasurementSet> {
    let text = read_text(path)?;
    let t = table(path, &text, MEASUREMENTS_HEADER)?;
    let np = plates.len();
    t.expect_rows(grid.len() * np)?;
    let mut counts = Vec::with_capacity(t.rows.len());
    for (r, (line, c)) in t.rows.iter().enumerate() {
        let (site, p) = (t.int(*line, c[0])?, t.int(*line, c[1])?);
        if site != r / np || p != r % np {
            return Err(Error::schema(&t.file, format!("line {line}: records must be ordered by site then plate")));
        }
        t.check_site(*line, grid, site, t.float(*line, c[2])?, t.float(*line, c[3])?)?;
        let (h, v) = (t.float(*line, c[4])?, t.float(*line, c[5])?);
        if h < 0.0 || v < 0.0 {
            return Err(Error::schema(&t.file, format!("line {line}: negative counts")));
        }
        counts.push(CountPair { h, v });
    }
    Ok(MeasurementSet {
        grid: *grid,
        plates: plates.to_vec(),
        accumulation_s,
        hv_phase: 0.0,
        counts,
    })
}

pub fn weak_values_to_string(wv: &WeakValueMap) -> String {
    let mut s = String::with_capacity(100 * wv.grid.len());
    s.push_str(WEAK_VALUES_HEADER);
    s.push('\n');
    for k in 0..wv.grid.len() {
        let (x, z) = wv.grid.site(k);
        let m = wv.mask[k];
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_f64(x),
            fmt_f64(z),
            opt(wv.kx[k], m),
            opt(wv.kz[k], m),
            opt(wv.omega[k], m),
            opt(wv.residual_norm[k], m),
            m as u8
        );
    }
    s
}

pub fn read_weak_values(path: &Path, grid: &ScanGrid) -> Result<WeakValueMap> {
    let text = read_text(path)?;
    let t = table(path, &text, WEAK_VALUES_HEADER)?;
    t.expect_rows(grid.len())?;
    let mut wv = WeakValueMap::masked(*grid);
    for (s, (line, c)) in t.rows.iter().enumerate() {
        t.check_site(*line, grid, s, t.float(*line, c[0])?, t.float(*line, c[1])?)?;
        match c[6] {
            "1" => {
                if c[2..6].iter().any(|f| !f.is_empty()) {
                    return Err(Error::schema(&t.file, format!("line {line}: masked site carries values")));
                }
            }
            "0" => {
                let vals: Vec<Option<f64>> = c[2..6].iter().map(|f| t.optional(*line, f)).collect::<Result<_>>()?;
                match vals[..] {
                    [Some(kx), Some(kz), Some(w), Some(r)] => wv.set(s, kx, kz, w, r),
                    _ => return Err(Error::schema(&t.file, format!("line {line}: unmasked site with empty fields"))),
                }
            }
            other => return Err(Error::schema(&t.file, format!("line {line}: mask must be 0 or 1, got {other:?}"))),
        }
    }
    Ok(wv)
}

pub fn trajectories_to_string(trajectories: &[Trajectory]) -> String {
    let mut s = String::from(TRAJECTORIES_HEADER);
    s.push('\n');
    for (id, t) in trajectories.iter().enumerate() {
        for (step, p) in t.points.iter().enumerate() {
            let _ = writeln!(s, "{id},{step},{},{}", fmt_f64(p.0), fmt_f64(p.1));
        }
    }
    s
}

/// Point lists per trajectory id.
pub fn read_trajectories(path: &Path) -> Result<Vec<Vec<(f64, f64)>>> {
    let text = read_text(path)?;
    let t = table(path, &text, TRAJECTORIES_HEADER)?;
    let mut out: Vec<Vec<(f64, f64)>> = Vec::new();
    for (line, c) in &t.rows {
        let (id, step) = (t.int(*line, c[0])?, t.int(*line, c[1])?);
        if id == out.len() && step == 0 {
            out.push(Vec::new());
        }
        if id + 1 != out.len() || step != out[id].len() {
            return Err(Error::schema(&t.file, format!("line {line}: trajectory rows out of order")));
        }
        out[id].push((t.float(*line, c[2])?, t.float(*line, c[3])?));
    }
    Ok(out)
}

pub fn residuals_to_string(grid: &ScanGrid, r_e: &[f64], r_n: &[f64]) -> String {
    let mut s = String::from(RESIDUALS_HEADER);
    s.push('\n');
    for k in 0..grid.len() {
        let (x, z) = grid.site(k);
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(x), fmt_f64(z), opt(r_e[k], false), opt(r_n[k], false));
    }
    s
}

pub fn read_residuals(path: &Path, grid: &ScanGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let t = table(path, &text, RESIDUALS_HEADER)?;
    t.expect_rows(grid.len())?;
    let (mut e, mut n) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    for (s, (line, c)) in t.rows.iter().enumerate() {
        t.check_site(*line, grid, s, t.float(*line, c[0])?, t.float(*line, c[1])?)?;
        e.push(t.optional(*line, c[2])?.unwrap_or(f64::NAN));
        n.push(t.optional(*line, c[3])?.unwrap_or(f64::NAN));
    }
    Ok((e, n))
}

pub fn mass_to_string(mass: &MassDensityMap, vm: &VelocityMap) -> String {
    let mut s = String::from(MASS_HEADER);
    s.push('\n');
    for k in 0..mass.grid.len() {
        let (x, z) = mass.grid.site(k);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(x),
            fmt_f64(z),
            opt(mass.m2[k], mass.mask[k]),
            opt(vm.vx[k], vm.mask[k]),
            opt(vm.vz[k], vm.mask[k]),
            mass.mask[k] as u8
        );
    }
    s
}

/// Squared-mass values with NaN on masked sites.
pub fn read_mass(path: &Path, grid: &ScanGrid) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let t = table(path, &text, MASS_HEADER)?;
    t.expect_rows(grid.len())?;
    t.rows
        .iter()
        .enumerate()
        .map(|(s, (line, c))| {
            t.check_site(*line, grid, s, t.float(*line, c[0])?, t.float(*line, c[1])?)?;
            Ok(t.optional(*line, c[2])?.unwrap_or(f64::NAN))
        })
        .collect()
}

pub fn histogram_to_string(h: &Histogram) -> String {
    let mut s = String::from(HISTOGRAM_HEADER);
    s.push('\n');
    for (w, c) in h.edges.windows(2).zip(&h.counts) {
        let _ = writeln!(s, "{},{},{c}", fmt_f64(w[0]), fmt_f64(w[1]));
    }
    s
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    let text = read_text(path)?;
    let t = table(path, &text, HISTOGRAM_HEADER)?;
    if t.rows.is_empty() {
        return Err(Error::schema(&t.file, "histogram has no bins"));
    }
    let mut edges = Vec::with_capacity(t.rows.len() + 1);
    let mut counts = Vec::with_capacity(t.rows.len());
    for (k, (line, c)) in t.rows.iter().enumerate() {
        let (lo, hi) = (t.float(*line, c[0])?, t.float(*line, c[1])?);
        if k == 0 {
            edges.push(lo);
        } else if lo != edges[k] {
            return Err(Error::schema(&t.file, format!("line {line}: bins are not contiguous")));
        }
        if !(hi > lo) {
            return Err(Error::schema(&t.file, format!("line {line}: empty bin")));
        }
        edges.push(hi);
        counts.push(
            c[2].parse()
                .map_err(|_| Error::schema(&t.file, format!("line {line}: bad count {:?}", c[2])))?,
        );
    }
    Ok(Histogram { edges, counts })
}

pub fn calibration_to_string(samples: &[CalibSample]) -> String {
    let mut s = String::from(CALIBRATION_HEADER);
    s.push('\n');
    for c in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(c.k_perp),
            fmt_f64(c.omega),
            fmt_f64(c.phi),
            fmt_f64(c.incidence_deg),
            fmt_f64(c.tilt_deg),
            fmt_f64(c.wavelength_nm)
        );
    }
    s
}

pub fn read_calibration(path: &Path) -> Result<Vec<CalibSample>> {
    let text = read_text(path)?;
    let t = table(path, &text, CALIBRATION_HEADER)?;
    t.rows
        .iter()
        .map(|(line, c)| {
            let phi = t.float(*line, c[2])?;
            if !(0.0..=std::f64::consts::PI).contains(&phi) {
                return Err(Error::schema(&t.file, format!("line {line}: phi {phi} outside [0, pi]")));
            }
            Ok(CalibSample {
                k_perp: t.float(*line, c[0])?,
                omega: t.float(*line, c[1])?,
                phi,
                incidence_deg: t.float(*line, c[3])?,
                tilt_deg: t.float(*line, c[4])?,
                wavelength_nm: t.float(*line, c[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, -0.0, 1.0, 3000.0, 1e-7, -9e-6, 1.215259075683131e15, 0.1 + 0.2, 5e-324, 1.7976931348623157e308, -2.75e-15] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(3000.0), "3000");
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }

    #[test]
    fn weak_values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ScanGrid::new(-1e-6, 0.0, 1e-7, 4e-7, 3, 2).unwrap();
        let mut wv = WeakValueMap::masked(grid);
        wv.set(0, 1.0 / 3.0, 4.05e6, 1.2152e15, 1e-17);
        wv.set(4, -2e5, 3.9e6, 1.2153e15, 0.0);
        let p = dir.path().join("wv.csv");
        write_text(&p, &weak_values_to_string(&wv)).unwrap();
        let back = read_weak_values(&p, &grid).unwrap();
        assert_eq!(back.mask, wv.mask);
        for k in [0, 4] {
            assert_eq!(back.kx[k].to_bits(), wv.kx[k].to_bits());
            assert_eq!(back.omega[k].to_bits(), wv.omega[k].to_bits());
        }
    }

    #[test]
    fn schema_violations() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ScanGrid::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let p = dir.path().join("f.csv");
        let head = "x_m,z_m,counts\n0,0,1\n1,0,1\n0,1,1\n";
        for bad in [
            "x,z,counts\n0,0,1\n1,0,1\n0,1,1\n1,1,1\n".to_string(),
            head.to_string(),
            format!("{head}1,1,NaN\n"),
            format!("{head}1,1\n"),
            format!("{head}2,1,1\n"),
            format!("{head}1,1,-1\n"),
        ] {
            write_text(&p, &bad).unwrap();
            assert!(matches!(read_fringe(&p, &grid), Err(Error::Schema { .. })), "{bad:?}");
        }
        write_text(&p, &format!("{head}1,1,2.5\n")).unwrap();
        assert_eq!(read_fringe(&p, &grid).unwrap(), vec![1.0, 1.0, 1.0, 2.5]);
        assert!(matches!(read_fringe(&dir.path().join("missing.csv"), &grid), Err(Error::Io { .. })));
    }

    #[test]
    fn histogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = Histogram {
            edges: vec![-0.5, 0.1, 0.7],
            counts: vec![3, 9],
        };
        let p = dir.path().join("h.csv");
        write_text(&p, &histogram_to_string(&h)).unwrap();
        assert_eq!(read_histogram(&p).unwrap(), h);
    }
}
