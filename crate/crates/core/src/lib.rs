//! Numerical lab for weak-value reconstruction of photon trajectories in a
//! two-beam interferometer.
//!
//! The pipeline runs in stages: an analytic two-beam field, a polarization
//! pointer that encodes the local weak momentum and energy into H/V counts,
//! per-site least-squares inversion, the velocity field with its effective
//! squared mass, RK4 streamlines, and discrete continuity residuals.

pub mod calibration;
pub mod continuity;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod inversion;
pub mod linalg;
pub mod pipeline;
pub mod pointer;
pub mod rng;
pub mod units;

pub use error::{Error, Result};
pub use field::{InterferometerConfig, WeakValueMap};
pub use grid::ScanGrid;
