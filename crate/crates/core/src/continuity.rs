//! Discrete continuity residuals and their histogram statistics.

use crate::dynamics::VelocityMap;
use crate::error::{Error, Result};
use crate::field::WeakValueMap;
use crate::grid::ScanGrid;
use crate::linalg::LeastSquares;
use crate::units::SPEED_OF_LIGHT;

/// Sites with counts below this fraction of the maximum are masked.
pub const DEFAULT_COUNT_FLOOR: f64 = 1e-4;

/// Default cap on the number of histogram bins.
pub const DEFAULT_MAX_BINS: usize = 200;

/// Derivative of `f` along one grid axis at position `k` of `n`, using only
/// unmasked neighbours.
fn axis_derivative(f: impl Fn(usize) -> f64, ok: impl Fn(usize) -> bool, k: usize, n: usize, step: f64) -> Option<f64> {
    let left = k >= 1 && ok(k - 1);
    let right = k + 1 < n && ok(k + 1);
    match (left, right) {
        (true, true) => Some((f(k + 1) - f(k - 1)) / (2.0 * step)),
        (false, true) => {
            if k == 0 && k + 2 < n && ok(k + 2) {
                Some((-3.0 * f(k) + 4.0 * f(k + 1) - f(k + 2)) / (2.0 * step))
            } else {
                Some((f(k + 1) - f(k)) / step)
            }
        }
        (true, false) => {
            if k + 1 == n && k >= 2 && ok(k - 2) {
                Some((3.0 * f(k) - 4.0 * f(k - 1) + f(k - 2)) / (2.0 * step))
            } else {
                Some((f(k) - f(k - 1)) / step)
            }
        }
        (false, false) => None,
    }
}

/// div(fx, fz) by finite differences.
///
/// Central differences in the interior, second-order one-sided stencils on
/// the border, first-order one-sided next to masked neighbours. Masked sites,
/// and sites without a usable neighbour along either axis, come back as NaN.
pub fn divergence(fx: &[f64], fz: &[f64], mask: &[bool], grid: &ScanGrid) -> Result<Vec<f64>> {
    let n = grid.len();
    if fx.len() != n || fz.len() != n || mask.len() != n {
        return Err(Error::invalid("field components do not match the grid"));
    }
    let ok = |s: usize| !mask[s] && fx[s].is_finite() && fz[s].is_finite();
    let out = (0..n)
        .map(|s| {
            if !ok(s) {
                return f64::NAN;
            }
            let (i, j) = grid.coords(s);
            let dx = axis_derivative(|k| fx[grid.index(k, j)], |k| ok(grid.index(k, j)), i, grid.nx, grid.dx);
            let dz = axis_derivative(|k| fz[grid.index(i, k)], |k| ok(grid.index(i, k)), j, grid.nz, grid.dz);
            match (dx, dz) {
                (Some(a), Some(b)) => a + b,
                _ => f64::NAN,
            }
        })
        .collect();
    Ok(out)
}

fn count_mask(counts: &[f64], floor_frac: f64) -> Result<Vec<bool>> {
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("counts must be finite and non-negative"));
    }
    let max = counts.iter().copied().fold(0.0, f64::max);
    let floor = max * floor_frac;
    Ok(counts.iter().map(|&c| !(c > 0.0 && c >= floor)).collect())
}

/// Divides the flux divergence by N, leaving NaN on sites below the count
/// floor. Those sites still feed the stencils of their neighbours: the flux
/// N k is well defined there, only the division by N is not.
fn floored(div: &[f64], counts: &[f64], dark: &[bool], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    div.iter()
        .zip(counts)
        .zip(dark)
        .map(|((&d, &n), &off)| if off { f64::NAN } else { f(d, n) })
        .collect()
}

/// R_e = c^2 div(N k_w) / (N omega), in 1/s.
pub fn residual_relativistic(counts: &[f64], wv: &WeakValueMap, omega: f64, floor_frac: f64) -> Result<Vec<f64>> {
    let g = &wv.grid;
    if counts.len() != g.len() {
        return Err(Error::invalid("count map does not match the weak-value grid"));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::invalid("omega must be positive"));
    }
    let dark = count_mask(counts, floor_frac)?;
    let jx: Vec<f64> = counts.iter().zip(&wv.kx).map(|(n, k)| n * k).collect();
    let jz: Vec<f64> = counts.iter().zip(&wv.kz).map(|(n, k)| n * k).collect();
    let div = divergence(&jx, &jz, &wv.mask, g)?;
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    Ok(floored(&div, counts, &dark, |d, n| c2 * d / (n * omega)))
}

/// R_n = c div(N v) / N with v in units of c, in 1/s.
pub fn residual_nonrelativistic(counts: &[f64], vm: &VelocityMap, floor_frac: f64) -> Result<Vec<f64>> {
    let g = &vm.grid;
    if counts.len() != g.len() {
        return Err(Error::invalid("count map does not match the velocity grid"));
    }
    let dark = count_mask(counts, floor_frac)?;
    let jx: Vec<f64> = counts.iter().zip(&vm.vx).map(|(n, v)| n * v).collect();
    let jz: Vec<f64> = counts.iter().zip(&vm.vz).map(|(n, v)| n * v).collect();
    let div = divergence(&jx, &jz, &vm.mask, g)?;
    Ok(floored(&div, counts, &dark, |d, n| SPEED_OF_LIGHT * d / n))
}

pub fn finite_values(v: &[f64]) -> Vec<f64> {
    v.iter().copied().filter(|x| x.is_finite()).collect()
}

pub fn rms(v: &[f64]) -> f64 {
    let f = finite_values(v);
    (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64).sqrt()
}

/// Population mean and standard deviation of the finite entries.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let f = finite_values(v);
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let var = f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins spanning [lo, hi]; the last bin is closed.
    pub fn with_range(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("histogram needs a positive number of bins and a non-empty range"));
        }
        let w = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| lo + w * k as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            if !v.is_finite() || v < lo || v > hi {
                continue;
            }
            let k = (((v - lo) / w) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// Bins over the finite values; Freedman-Diaconis width unless `bins` is given.
    pub fn build(values: &[f64], bins: Option<usize>, max_bins: usize) -> Result<Self> {
        let mut f = finite_values(values);
        if f.is_empty() {
            return Err(Error::invalid("no finite values to histogram"));
        }
        f.sort_by(f64::total_cmp);
        let (lo, hi) = (f[0], f[f.len() - 1]);
        if hi == lo {
            let half = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
            return Self::with_range(&f, lo - half, hi + half, 1);
        }
        let bins = match bins {
            Some(b) => b,
            None => {
                let iqr = quantile(&f, 0.75) - quantile(&f, 0.25);
                let width = 2.0 * iqr / (f.len() as f64).cbrt();
                if width > 0.0 {
                    (((hi - lo) / width).ceil() as usize).clamp(1, max_bins.max(1))
                } else {
                    ((f.len() as f64).sqrt().ceil() as usize).clamp(1, max_bins.max(1))
                }
            }
        };
        Self::with_range(&f, lo, hi, bins)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let t = pos - k as f64;
    if k + 1 < sorted.len() {
        sorted[k] * (1.0 - t) + sorted[k + 1] * t
    } else {
        sorted[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    pub mu_uncertainty: f64,
    pub sigma_uncertainty: f64,
    pub iterations: usize,
}

const LM_MAX_ITER: usize = 200;

/// Levenberg-Marquardt fit of A exp(-(x - mu)^2 / (2 sigma^2)) to bin counts.
///
/// Starts from the histogram moments. Uncertainties are the square roots of
/// the diagonal of s^2 (J^T J)^-1 at the optimum, s^2 = SSE / (bins - 3).
pub fn gaussian_fit(hist: &Histogram) -> Result<GaussianFit> {
    let nonempty = hist.counts.iter().filter(|c| **c > 0).count();
    if nonempty < 5 {
        return Err(Error::invalid(format!("gaussian fit needs at least 5 nonempty bins, got {nonempty}")));
    }
    let x = hist.centers();
    let y: Vec<f64> = hist.counts.iter().map(|c| *c as f64).collect();
    let m = x.len();

    let total: f64 = y.iter().sum();
    let mu0 = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / total;
    let var0 = x.iter().zip(&y).map(|(a, b)| b * (a - mu0).powi(2)).sum::<f64>() / total;
    let sigma0 = var0.sqrt().max(0.5 * hist.bin_width());
    let amp0 = y.iter().copied().fold(0.0, f64::max);

    // parameters are scaled to O(1) internally
    let (xs, ys) = (sigma0, amp0);
    let model = |p: &[f64; 3], xi: f64| -> f64 {
        let u = (xi / xs - p[1]) / p[2];
        p[0] * (-0.5 * u * u).exp()
    };
    let jac = |p: &[f64; 3]| -> Vec<f64> {
        let mut j = Vec::with_capacity(3 * m);
        for &xi in &x {
            let u = (xi / xs - p[1]) / p[2];
            let e = (-0.5 * u * u).exp();
            j.push(e);
            j.push(p[0] * e * u / p[2]);
            j.push(p[0] * e * u * u / p[2]);
        }
        j
    };
    let cost = |p: &[f64; 3]| -> f64 {
        x.iter().zip(&y).map(|(xi, yi)| (yi / ys - model(p, *xi)).powi(2)).sum()
    };

    let mut p = [1.0, mu0 / xs, 1.0];
    let mut c = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LM_MAX_ITER {
        iterations += 1;
        let j = jac(&p);
        let r: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi / ys - model(&p, *xi)).collect();
        let diag: Vec<f64> = (0..3).map(|k| (0..m).map(|i| j[i * 3 + k].powi(2)).sum::<f64>()).collect();
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = j.clone();
            let mut b = r.clone();
            for k in 0..3 {
                let mut row = [0.0; 3];
                row[k] = (lambda * diag[k].max(1e-12)).sqrt();
                a.extend_from_slice(&row);
                b.push(0.0);
            }
            let (delta, _) = LeastSquares::new(&a, m + 3, 3).solve(&b);
            let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            let tc = cost(&trial);
            if tc.is_finite() && tc <= c && trial[2] != 0.0 {
                let rel = (c - tc) / c.max(f64::MIN_POSITIVE);
                let step = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                p = trial;
                c = tc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < 1e-12 || step < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: stationary point
            converged = c.is_finite();
        }
        if converged {
            break;
        }
    }

    let sigma = p[2].abs() * xs;
    let failure = |reason: &str| Error::FitFailure {
        iterations,
        cost: c * ys * ys,
        mu: p[1] * xs,
        sigma,
        reason: reason.into(),
    };
    if !converged {
        return Err(failure("no convergence within the iteration limit"));
    }
    if !(sigma.is_finite() && sigma > 0.0 && p[0].is_finite()) {
        return Err(failure("non-finite or collapsed parameters"));
    }

    let j = jac(&p);
    let ls = LeastSquares::new(&j, m, 3);
    let cov = ls.normal_inverse();
    let s2 = if m > 3 { c / (m - 3) as f64 } else { 0.0 };
    Ok(GaussianFit {
        amplitude: p[0] * ys,
        mu: p[1] * xs,
        sigma,
        mu_uncertainty: (s2 * cov[4]).max(0.0).sqrt() * xs,
        sigma_uncertainty: (s2 * cov[8]).max(0.0).sqrt() * xs,
        iterations,
    })
}

fn kernel(sigma_steps: f64) -> Vec<f64> {
    let half = (4.0 * sigma_steps).ceil() as usize;
    (0..=2 * half)
        .map(|k| {
            let u = (k as f64 - half as f64) / sigma_steps;
            (-0.5 * u * u).exp()
        })
        .collect()
}

fn convolve_axis(src: &[f64], n_along: usize, n_across: usize, idx: impl Fn(usize, usize) -> usize, w: &[f64]) -> Vec<f64> {
    let half = (w.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for b in 0..n_across {
        for a in 0..n_along {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let t = a as isize + k as isize - half;
                if t < 0 || t >= n_along as isize {
                    continue;
                }
                acc += wk * src[idx(t as usize, b)];
                norm += wk;
            }
            out[idx(a, b)] = acc / norm;
        }
    }
    out
}

/// Separable Gaussian smoothing with kernel weights renormalized at the
/// grid edges. A zero width returns the input.
pub fn smooth_counts(counts: &[f64], grid: &ScanGrid, kernel_sigma: f64) -> Result<Vec<f64>> {
    if counts.len() != grid.len() {
        return Err(Error::invalid("count map does not match the grid"));
    }
    if !(kernel_sigma >= 0.0 && kernel_sigma.is_finite()) {
        return Err(Error::invalid("kernel sigma must be non-negative"));
    }
    if kernel_sigma == 0.0 {
        return Ok(counts.to_vec());
    }
    let wx = kernel(kernel_sigma / grid.dx);
    let wz = kernel(kernel_sigma / grid.dz);
    let tmp = convolve_axis(counts, grid.nx, grid.nz, |i, j| grid.index(i, j), &wx);
    Ok(convolve_axis(&tmp, grid.nz, grid.nx, |j, i| grid.index(i, j), &wz))
}

/// Variance reduction factor of the smoothing kernel on white noise far
/// from the edges.
pub fn smoothing_variance_factor(grid: &ScanGrid, kernel_sigma: f64) -> f64 {
    if kernel_sigma == 0.0 {
        return 1.0;
    }
    let f = |w: Vec<f64>| {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| (v / s).powi(2)).sum::<f64>()
    };
    f(kernel(kernel_sigma / grid.dx)) * f(kernel(kernel_sigma / grid.dz))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityOptions {
    pub count_floor: f64,
    pub kernel_sigma: f64,
    pub bins: Option<usize>,
    pub max_bins: usize,
}

impl Default for ContinuityOptions {
    fn default() -> Self {
        Self {
            count_floor: DEFAULT_COUNT_FLOOR,
            kernel_sigma: 0.0,
            bins: None,
            max_bins: DEFAULT_MAX_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    pub histogram: Histogram,
    /// None when the histogram has too few bins or the fit fails.
    pub fit: Option<GaussianFit>,
    pub mean: f64,
    pub std: f64,
    pub rms: f64,
    pub count: usize,
}

impl ResidualStats {
    pub fn from_values(values: &[f64], bins: Option<usize>, max_bins: usize) -> Result<Self> {
        let histogram = Histogram::build(values, bins, max_bins)?;
        let fit = gaussian_fit(&histogram).ok();
        let (mean, std) = mean_std(values);
        Ok(Self {
            histogram,
            fit,
            mean,
            std,
            rms: rms(values),
            count: finite_values(values).len(),
        })
    }

    /// Fitted width when available, sample standard deviation otherwise.
    pub fn sigma(&self) -> f64 {
        self.fit.map_or(self.std, |f| f.sigma)
    }

    pub fn center(&self) -> f64 {
        self.fit.map_or(self.mean, |f| f.mu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    pub grid: ScanGrid,
    pub r_e: Vec<f64>,
    pub r_n: Vec<f64>,
    pub relativistic: ResidualStats,
    pub nonrelativistic: ResidualStats,
}

pub fn continuity_report(
    counts: &[f64],
    wv: &WeakValueMap,
    vm: &VelocityMap,
    omega: f64,
    opts: &ContinuityOptions,
) -> Result<ContinuityReport> {
    let n = smooth_counts(counts, &wv.grid, opts.kernel_sigma)?;
    let r_e = residual_relativistic(&n, wv, omega, opts.count_floor)?;
    let r_n = residual_nonrelativistic(&n, vm, opts.count_floor)?;
    Ok(ContinuityReport {
        grid: wv.grid,
        relativistic: ResidualStats::from_values(&r_e, opts.bins, opts.max_bins)?,
        nonrelativistic: ResidualStats::from_values(&r_n, opts.bins, opts.max_bins)?,
        r_e,
        r_n,
    })
}

/// Bisection for the scale `s` in [lo, hi] at which the monotone map
/// `sigma_of(s)` reaches `target`.
///
/// Fails with [`Error::CalibrationUnreachable`] when the target is not
/// bracketed by the values at the interval ends.
pub fn bisect_noise_scale(
    target: f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    max_iter: usize,
    mut sigma_of: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    if !(hi > lo && target > 0.0) {
        return Err(Error::invalid("bisection needs lo < hi and a positive target"));
    }
    let (f_lo, f_hi) = (sigma_of(lo)?, sigma_of(hi)?);
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::CalibrationUnreachable(format!(
            "target sigma {target} 1/s is outside [{f_lo:e}, {f_hi:e}] reached over noise scales [{lo}, {hi}]"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..max_iter {
        let mid = 0.5 * (a + b);
        let f = sigma_of(mid)?;
        if (f - target).abs() <= rel_tol * target {
            return Ok(mid);
        }
        if f < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid(nx: usize, nz: usize, d: f64) -> ScanGrid {
        ScanGrid::new(0.0, 0.0, d, d, nx, nz).unwrap()
    }

    #[test]
    fn divergence_of_linear_field() {
        let g = grid(7, 5, 0.3);
        let fx: Vec<f64> = g.sites().map(|(x, _)| x).collect();
        let fz: Vec<f64> = g.sites().map(|(_, z)| z).collect();
        let d = divergence(&fx, &fz, &vec![false; g.len()], &g).unwrap();
        assert!(d.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let c = divergence(&vec![3.0; g.len()], &vec![-1.0; g.len()], &vec![false; g.len()], &g).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn divergence_second_order() {
        let k = 2.0;
        let err = |n: usize| {
            let g = grid(n, 3, 1.0 / (n - 1) as f64);
            let fx: Vec<f64> = g.sites().map(|(x, _)| (k * x).sin()).collect();
            let d = divergence(&fx, &vec![0.0; g.len()], &vec![false; g.len()], &g).unwrap();
            g.sites()
                .zip(&d)
                .map(|((x, _), v)| (v - k * (k * x).cos()).abs())
                .fold(0.0, f64::max)
        };
        let order = (err(21) / err(41)).log2();
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn masked_neighbours_and_isolated_sites() {
        let g = grid(5, 3, 1.0);
        let fx: Vec<f64> = g.sites().map(|(x, _)| x * x).collect();
        let fz = vec![0.0; g.len()];
        let mut mask = vec![false; g.len()];
        mask[g.index(3, 1)] = true;
        let d = divergence(&fx, &fz, &mask, &g).unwrap();
        assert!(d[g.index(3, 1)].is_nan());
        // backward first-order difference at x = 2: (4 - 1) / 1
        assert!((d[g.index(2, 1)] - 3.0).abs() < 1e-12);
        let mut lonely = vec![true; g.len()];
        lonely[g.index(2, 1)] = false;
        assert!(divergence(&fx, &fz, &lonely, &g).unwrap()[g.index(2, 1)].is_nan());
    }

    #[test]
    fn uniform_flow_has_zero_residuals() {
        let g = grid(6, 6, 1e-7);
        let mut wv = WeakValueMap::masked(g);
        for s in 0..g.len() {
            wv.set(s, 1e5, 4e6, 1.2e15, 0.0);
        }
        let n = vec![100.0; g.len()];
        let r = residual_relativistic(&n, &wv, 1.2e15, DEFAULT_COUNT_FLOOR).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-3));
        let vm = VelocityMap::from_fn(g, |_, _| (0.1, 0.9));
        let r = residual_nonrelativistic(&n, &vm, DEFAULT_COUNT_FLOOR).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn dark_sites_are_masked() {
        let g = grid(4, 4, 1e-7);
        let vm = VelocityMap::from_fn(g, |_, _| (0.0, 1.0));
        let mut n = vec![1e6; g.len()];
        n[5] = 50.0;
        let r = residual_nonrelativistic(&n, &vm, DEFAULT_COUNT_FLOOR).unwrap();
        assert!(r[5].is_nan());
        assert!(r[0].is_finite());
    }

    fn normal_samples(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                mu + sigma * g
            })
            .collect()
    }

    #[test]
    fn fits_unit_normal() {
        let v = normal_samples(100_000, 0.0, 1.0, 11);
        let h = Histogram::build(&v, Some(100), DEFAULT_MAX_BINS).unwrap();
        let f = gaussian_fit(&h).unwrap();
        assert!(f.mu.abs() < 0.02, "mu {}", f.mu);
        assert!((f.sigma - 1.0).abs() < 0.02, "sigma {}", f.sigma);
    }

    #[test]
    fn planted_width_recovered_within_uncertainty() {
        let v = normal_samples(8326, 0.0, 186.6, 5);
        let h = Histogram::build(&v, None, DEFAULT_MAX_BINS).unwrap();
        let f = gaussian_fit(&h).unwrap();
        assert!(f.sigma_uncertainty > 0.0);
        assert!((f.sigma - 186.6).abs() < 3.0 * f.sigma_uncertainty, "{f:?}");
    }

    #[test]
    fn symmetric_histogram_centers_between_middle_bins() {
        let h = Histogram {
            edges: (0..=8).map(|k| k as f64).collect(),
            counts: vec![1, 4, 9, 20, 20, 9, 4, 1],
        };
        let f = gaussian_fit(&h).unwrap();
        assert!((f.mu - 4.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_bins() {
        let h = Histogram {
            edges: vec![0.0, 1.0, 2.0],
            counts: vec![3, 3],
        };
        assert!(gaussian_fit(&h).is_err());
    }

    #[test]
    fn freedman_diaconis_covers_every_value() {
        let v = normal_samples(5000, 3.0, 2.0, 1);
        let h = Histogram::build(&v, None, DEFAULT_MAX_BINS).unwrap();
        assert_eq!(h.total(), 5000);
        assert!(h.bin_width() > 0.0);
        let c = Histogram::build(&[2.0; 10], None, DEFAULT_MAX_BINS).unwrap();
        assert_eq!(c.total(), 10);
    }

    #[test]
    fn smoothing_identity_and_mass() {
        let g = grid(41, 41, 1.0);
        let mut n = vec![0.0; g.len()];
        assert_eq!(smooth_counts(&n, &g, 0.0).unwrap(), n);
        n[g.index(20, 20)] = 10.0;
        let s = smooth_counts(&n, &g, 2.0).unwrap();
        assert!((s.iter().sum::<f64>() - 10.0).abs() < 1e-9);
        assert!((s[g.index(22, 20)] / s[g.index(20, 20)] - (-0.5_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn smoothing_reduces_white_noise_variance() {
        let g = grid(200, 200, 1.0);
        let noise = normal_samples(g.len(), 0.0, 1.0, 3);
        let s = smooth_counts(&noise, &g, 1.5).unwrap();
        let interior: Vec<f64> = (0..g.len())
            .filter(|&k| {
                let (i, j) = g.coords(k);
                (10..190).contains(&i) && (10..190).contains(&j)
            })
            .map(|k| s[k])
            .collect();
        let (_, sd) = mean_std(&interior);
        let want = smoothing_variance_factor(&g, 1.5);
        assert!((sd * sd / want - 1.0).abs() < 0.1, "{} vs {want}", sd * sd);
    }

    #[test]
    fn bisection() {
        let s = bisect_noise_scale(4.0, 0.0, 10.0, 1e-9, 200, |x| Ok(x * x)).unwrap();
        assert!((s - 2.0).abs() < 1e-6);
        let e = bisect_noise_scale(4.0, 0.0, 10.0, 1e-9, 200, |x| Ok(100.0 + x));
        assert!(matches!(e, Err(Error::CalibrationUnreachable(_))));
    }
}
