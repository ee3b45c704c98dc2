//! Per-site weak-value inversion from the six rotation angles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::WeakValueMap;
use crate::linalg::LeastSquares;
use crate::pointer::{phi_from_counts, MeasurementSet, PlateConfig};

/// Designs whose column-scaled condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Rows (a sin(alpha), a cos(alpha), b) for the unknowns (kx, kz, omega).
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub rows: Vec<[f64; 3]>,
    pub offsets: Vec<f64>,
    pub condition_number: f64,
    solver: LeastSquares,
}

impl DesignMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn flat(rows: &[[f64; 3]]) -> Vec<f64> {
        rows.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

pub fn build_design(plates: &[PlateConfig]) -> Result<DesignMatrix> {
    if plates.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{} plate configurations cannot determine three weak values",
            plates.len()
        )));
    }
    for p in plates {
        p.validate()?;
    }
    let rows: Vec<[f64; 3]> = plates
        .iter()
        .map(|p| {
            let (ax, az) = p.momentum_coefficients();
            [ax, az, p.b]
        })
        .collect();
    let offsets = plates.iter().map(|p| p.c).collect();
    let solver = LeastSquares::new(&DesignMatrix::flat(&rows), rows.len(), 3);
    let condition_number = solver.condition_number();
    if !(condition_number <= MAX_CONDITION) {
        return Err(Error::DegenerateGeometry(format!(
            "design is numerically rank deficient (condition number {condition_number:e})"
        )));
    }
    Ok(DesignMatrix {
        rows,
        offsets,
        condition_number,
        solver,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteSolution {
    pub kx: f64,
    pub kz: f64,
    pub omega: f64,
    /// ||A theta - (phi - c)||, rad.
    pub residual_norm: f64,
}

/// Unweighted least-squares weak values for one site.
pub fn solve_site(phi: &[f64], design: &DesignMatrix) -> Result<SiteSolution> {
    if phi.len() != design.len() {
        return Err(Error::invalid(format!(
            "expected {} rotation angles, got {}",
            design.len(),
            phi.len()
        )));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation angles must be finite"));
    }
    let rhs: Vec<f64> = phi.iter().zip(&design.offsets).map(|(p, c)| p - c).collect();
    let (x, residual_norm) = design.solver.solve(&rhs);
    Ok(SiteSolution {
        kx: x[0],
        kz: x[1],
        omega: x[2],
        residual_norm,
    })
}

/// Least squares with per-equation weights; the reported residual is the
/// unweighted norm.
pub fn solve_site_weighted(phi: &[f64], weights: &[f64], design: &DesignMatrix) -> Result<SiteSolution> {
    if weights.len() != design.len() || phi.len() != design.len() {
        return Err(Error::invalid("weights, angles and design disagree in length"));
    }
    if phi.iter().chain(weights).any(|v| !v.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a: Vec<f64> = design
        .rows
        .iter()
        .zip(&sw)
        .flat_map(|(r, s)| r.map(|v| v * s))
        .collect();
    let solver = LeastSquares::new(&a, design.len(), 3);
    if !(solver.condition_number() <= MAX_CONDITION) {
        return Err(Error::DegenerateGeometry("weighted design is rank deficient".into()));
    }
    let rhs: Vec<f64> = phi
        .iter()
        .zip(&design.offsets)
        .zip(&sw)
        .map(|((p, c), s)| (p - c) * s)
        .collect();
    let (x, _) = solver.solve(&rhs);
    let residual_norm = design
        .rows
        .iter()
        .zip(phi.iter().zip(&design.offsets))
        .map(|(r, (p, c))| (r[0] * x[0] + r[1] * x[1] + r[2] * x[2] - (p - c)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(SiteSolution {
        kx: x[0],
        kz: x[1],
        omega: x[2],
        residual_norm,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Weight each equation by 1/var(phi) = I_H + I_V.
    PoissonCounts,
}

/// Readout and inversion over every site.
///
/// A site is masked when any of its records carries no photons, or when a
/// record sits on the edge of the readout range (one channel empty) so that
/// the rotation angle is saturated rather than measured.
pub fn invert_scan(ms: &MeasurementSet, design: &DesignMatrix, weighting: Weighting) -> Result<WeakValueMap> {
    if ms.plates.len() != design.len() {
        return Err(Error::invalid("measurement set and design disagree on plate count"));
    }
    if ms.counts.len() != ms.grid.len() * ms.plates.len() {
        return Err(Error::invalid("measurement set must hold one record per (site, plate)"));
    }
    let solutions: Vec<Option<SiteSolution>> = (0..ms.grid.len())
        .into_par_iter()
        .map(|s| {
            let records = ms.site_records(s);
            if records.iter().any(|c| c.h <= 0.0 || c.v <= 0.0) {
                return Ok(None);
            }
            let phi: Vec<f64> = records
                .iter()
                .map(|c| phi_from_counts(c.h, c.v))
                .collect::<Result<_>>()?;
            let sol = match weighting {
                Weighting::Unweighted => solve_site(&phi, design)?,
                Weighting::PoissonCounts => {
                    let w: Vec<f64> = records.iter().map(|c| c.total()).collect();
                    solve_site_weighted(&phi, &w, design)?
                }
            };
            Ok(Some(sol))
        })
        .collect::<Result<_>>()?;

    let mut wv = WeakValueMap::masked(ms.grid);
    for (s, sol) in solutions.into_iter().enumerate() {
        if let Some(sol) = sol {
            wv.set(s, sol.kx, sol.kz, sol.omega, sol.residual_norm);
        }
    }
    Ok(wv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScanGrid;
    use crate::pointer::{coupling_phase, default_plates, CountPair, OpticAxis, COUPLING_ALONG_X, COUPLING_ALONG_Y};

    const KX: f64 = 3.1e5;
    const KZ: f64 = 3.9e6;
    const OMEGA: f64 = 1.2153e15;

    fn phis(plates: &[PlateConfig], kx: f64, kz: f64, w: f64) -> Vec<f64> {
        plates.iter().map(|p| coupling_phase(p, kx, kz, w)).collect()
    }

    #[test]
    fn default_design_has_rank_three() {
        let d = build_design(&default_plates()).unwrap();
        assert_eq!(d.len(), 6);
        assert!(d.condition_number.is_finite() && d.condition_number < 1e4);
    }

    #[test]
    fn single_untilted_plate_is_degenerate() {
        let plates: Vec<_> = (0..6)
            .map(|i| PlateConfig::new(format!("{i}"), OpticAxis::AlongX, 0.0, COUPLING_ALONG_X))
            .collect();
        assert!(matches!(build_design(&plates), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn equal_tilts_are_degenerate() {
        let plates: Vec<_> = (0..6)
            .map(|i| {
                let c = if i % 2 == 0 { COUPLING_ALONG_X } else { COUPLING_ALONG_Y };
                PlateConfig::new(format!("{i}"), OpticAxis::AlongX, 10f64.to_radians(), c)
            })
            .collect();
        assert!(build_design(&plates).is_err());
    }

    #[test]
    fn single_family_with_three_tilts_is_ill_conditioned_but_solvable() {
        let plates: Vec<_> = default_plates().into_iter().take(3).collect();
        let d = build_design(&plates).unwrap();
        assert!(d.condition_number > build_design(&default_plates()).unwrap().condition_number);
    }

    #[test]
    fn permutation_invariance() {
        let plates = default_plates();
        let d = build_design(&plates).unwrap();
        let mut phi = phis(&plates, KX, KZ, OMEGA);
        phi[0] += 0.02;
        phi[5] -= 0.01;
        let a = solve_site(&phi, &d).unwrap();
        let order = [3, 0, 5, 1, 4, 2];
        let pp: Vec<_> = order.iter().map(|&k| plates[k].clone()).collect();
        let qp: Vec<_> = order.iter().map(|&k| phi[k]).collect();
        let b = solve_site(&qp, &build_design(&pp).unwrap()).unwrap();
        assert!((a.kx - b.kx).abs() <= 1e-9 * a.kx.abs());
        assert!((a.kz - b.kz).abs() <= 1e-9 * a.kz.abs());
        assert!((a.omega - b.omega).abs() <= 1e-12 * a.omega.abs());
    }

    #[test]
    fn too_few_plates() {
        let plates: Vec<_> = default_plates().into_iter().take(2).collect();
        assert!(build_design(&plates).is_err());
    }

    #[test]
    fn exact_recovery_of_consistent_system() {
        let plates = default_plates();
        let d = build_design(&plates).unwrap();
        let sol = solve_site(&phis(&plates, KX, KZ, OMEGA), &d).unwrap();
        assert!((sol.kx - KX).abs() / KX < 1e-9);
        assert!((sol.kz - KZ).abs() / KZ < 1e-9);
        assert!((sol.omega - OMEGA).abs() / OMEGA < 1e-9);
        assert!(sol.residual_norm < 1e-10);
    }

    #[test]
    fn offsets_alone_give_zero() {
        let plates = default_plates();
        let d = build_design(&plates).unwrap();
        let phi: Vec<f64> = plates.iter().map(|p| p.c).collect();
        let sol = solve_site(&phi, &d).unwrap();
        assert_eq!((sol.kx, sol.kz, sol.omega), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_non_finite_angles() {
        let d = build_design(&default_plates()).unwrap();
        let mut phi = vec![1.5; 6];
        phi[2] = f64::NAN;
        assert!(solve_site(&phi, &d).is_err());
        assert!(solve_site(&[1.5; 5], &d).is_err());
    }

    #[test]
    fn weighted_uniform_matches_unweighted() {
        let plates = default_plates();
        let d = build_design(&plates).unwrap();
        let mut phi = phis(&plates, KX, KZ, OMEGA);
        phi[1] += 0.01;
        phi[4] -= 0.02;
        let a = solve_site(&phi, &d).unwrap();
        let b = solve_site_weighted(&phi, &[3.0; 6], &d).unwrap();
        assert!((a.kx - b.kx).abs() / a.kx.abs() < 1e-9);
        assert!((a.omega - b.omega).abs() / a.omega < 1e-12);
        assert!((a.residual_norm - b.residual_norm).abs() < 1e-12);
    }

    #[test]
    fn dark_measurement_masks_everything() {
        let grid = ScanGrid::new(0.0, 0.0, 1e-7, 1e-7, 3, 3).unwrap();
        let ms = MeasurementSet {
            grid,
            plates: default_plates(),
            accumulation_s: 3.0,
            hv_phase: 0.0,
            counts: vec![CountPair { h: 0.0, v: 0.0 }; 9 * 6],
        };
        let d = build_design(&ms.plates).unwrap();
        let wv = invert_scan(&ms, &d, Weighting::Unweighted).unwrap();
        assert_eq!(wv.unmasked_count(), 0);
    }
}
