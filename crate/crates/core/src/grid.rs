//! Rectangular (x, z) scan lattice.

use crate::error::{Error, Result};

/// Sampling lattice shared by every map in the pipeline.
///
/// Sites are stored row-major with x fastest: `index = j * nx + i`, which is
/// also the raster order of the translation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub x0: f64,
    pub z0: f64,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl Default for ScanGrid {
    /// 181 x 46 sites spanning +-9 um with 100 nm / 400 nm steps.
    fn default() -> Self {
        Self {
            x0: -9.0e-6,
            z0: -9.0e-6,
            dx: 100.0e-9,
            dz: 400.0e-9,
            nx: 181,
            nz: 46,
        }
    }
}

impl ScanGrid {
    pub fn new(x0: f64, z0: f64, dx: f64, dz: f64, nx: usize, nz: usize) -> Result<Self> {
        let g = Self {
            x0,
            z0,
            dx,
            dz,
            nx,
            nz,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the same physical span and each step divided by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("refinement factor must be positive"));
        }
        Self::new(
            self.x0,
            self.z0,
            self.dx / factor as f64,
            self.dz / factor as f64,
            (self.nx - 1) * factor + 1,
            (self.nz - 1) * factor + 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0.is_finite() && self.z0.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        if !(self.dx > 0.0 && self.dz > 0.0 && self.dx.is_finite() && self.dz.is_finite()) {
            return Err(Error::invalid("grid steps must be positive"));
        }
        if self.nx < 2 || self.nz < 2 {
            return Err(Error::invalid("grid needs at least 2 sites per axis"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn z(&self, j: usize) -> f64 {
        self.z0 + j as f64 * self.dz
    }

    #[inline]
    pub fn site(&self, index: usize) -> (f64, f64) {
        let (i, j) = self.coords(index);
        (self.x(i), self.z(j))
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn z_max(&self) -> f64 {
        self.z(self.nz - 1)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x0 && x <= self.x_max() && z >= self.z0 && z <= self.z_max()
    }

    pub fn sites(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.len()).map(move |s| self.site(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_scan_count() {
        let g = ScanGrid::default();
        assert_eq!(g.len(), 8326);
        assert!((g.x_max() - 9.0e-6).abs() < 1e-18);
        assert!((g.z_max() - 9.0e-6).abs() < 1e-18);
    }

    #[test]
    fn index_round_trip() {
        let g = ScanGrid::default();
        for s in [0, 1, 180, 181, 8325] {
            let (i, j) = g.coords(s);
            assert_eq!(g.index(i, j), s);
        }
    }

    #[test]
    fn refinement_keeps_span() {
        let g = ScanGrid::default().refined(2).unwrap();
        assert_eq!((g.nx, g.nz), (361, 91));
        assert!((g.x_max() - 9.0e-6).abs() < 1e-17);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ScanGrid::new(0.0, 0.0, 0.0, 1.0, 3, 3).is_err());
        assert!(ScanGrid::new(0.0, 0.0, 1.0, 1.0, 1, 3).is_err());
        assert!(ScanGrid::new(f64::NAN, 0.0, 1.0, 1.0, 3, 3).is_err());
    }
}
