//! Dense least squares for small overdetermined systems.
//!
//! Columns are scaled to unit Euclidean norm before a Householder QR, so
//! designs whose columns differ by many orders of magnitude (momenta near
//! 1e6 rad/m next to frequencies near 1e15 rad/s) factor without loss.

/// Householder QR of a column-scaled m x n matrix (m >= n).
#[derive(Debug, Clone)]
pub struct LeastSquares {
    m: usize,
    n: usize,
    /// Reflector vectors, one per column, each of length m - k.
    reflectors: Vec<Vec<f64>>,
    taus: Vec<f64>,
    /// Upper-triangular R, row-major n x n.
    r: Vec<f64>,
    /// Euclidean norms of the original columns.
    scale: Vec<f64>,
    cond: f64,
}

impl LeastSquares {
    /// Factors the row-major `m x n` matrix `a`.
    pub fn new(a: &[f64], m: usize, n: usize) -> Self {
        assert_eq!(a.len(), m * n, "matrix shape mismatch");
        assert!(m >= n && n > 0, "least squares needs m >= n > 0");

        let mut scale = vec![0.0; n];
        for (j, s) in scale.iter_mut().enumerate() {
            *s = (0..m).map(|i| a[i * n + j].powi(2)).sum::<f64>().sqrt();
        }
        // column-major working copy of the scaled matrix
        let mut w = vec![0.0; m * n];
        for j in 0..n {
            let s = if scale[j] > 0.0 { scale[j] } else { 1.0 };
            for i in 0..m {
                w[j * m + i] = a[i * n + j] / s;
            }
        }

        let mut reflectors = Vec::with_capacity(n);
        let mut taus = Vec::with_capacity(n);
        let mut r = vec![0.0; n * n];
        for k in 0..n {
            let col = &w[k * m + k..(k + 1) * m];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = col.to_vec();
            v[0] -= alpha;
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let tau = if vv > 0.0 { 2.0 / vv } else { 0.0 };
            for j in k + 1..n {
                let c = &mut w[j * m + k..(j + 1) * m];
                let dot: f64 = v.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                for (ci, vi) in c.iter_mut().zip(&v) {
                    *ci -= tau * dot * vi;
                }
            }
            r[k * n + k] = alpha;
            for j in k + 1..n {
                r[k * n + j] = w[j * m + k];
            }
            reflectors.push(v);
            taus.push(tau);
        }

        let cond = condition_number(&r, n);
        Self {
            m,
            n,
            reflectors,
            taus,
            r,
            scale,
            cond,
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// 2-norm condition number of the column-scaled matrix.
    pub fn condition_number(&self) -> f64 {
        self.cond
    }

    /// Minimizes ||A x - b||; returns x and the residual norm.
    pub fn solve(&self, b: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(b.len(), self.m);
        let mut y = b.to_vec();
        for (k, (v, tau)) in self.reflectors.iter().zip(&self.taus).enumerate() {
            let seg = &mut y[k..];
            let dot: f64 = v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
            for (yi, vi) in seg.iter_mut().zip(v) {
                *yi -= tau * dot * vi;
            }
        }
        let n = self.n;
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut acc = y[k];
            for j in k + 1..n {
                acc -= self.r[k * n + j] * x[j];
            }
            x[k] = acc / self.r[k * n + k];
        }
        for (xi, s) in x.iter_mut().zip(&self.scale) {
            if *s > 0.0 {
                *xi /= s;
            }
        }
        let residual = y[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
        (x, residual)
    }

    /// (A^T A)^-1 in the original column units, row-major n x n.
    pub fn normal_inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut rinv = vec![0.0; n * n];
        for col in 0..n {
            for k in (0..=col).rev() {
                let mut acc = if k == col { 1.0 } else { 0.0 };
                for j in k + 1..=col {
                    acc -= self.r[k * n + j] * rinv[j * n + col];
                }
                rinv[k * n + col] = acc / self.r[k * n + k];
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| rinv[i * n + k] * rinv[j * n + k]).sum();
                out[i * n + j] = s / (self.scale[i] * self.scale[j]);
            }
        }
        out
    }
}

/// Singular values of a small square matrix by one-sided Jacobi rotations.
pub fn singular_values(a: &[f64], n: usize) -> Vec<f64> {
    let mut u = a.to_vec();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let (up, uq) = (u[i * n + p], u[i * n + q]);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let (up, uq) = (u[i * n + p], u[i * n + q]);
                    u[i * n + p] = c * up - s * uq;
                    u[i * n + q] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| u[i * n + j].powi(2)).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn condition_number(r: &[f64], n: usize) -> f64 {
    let sv = singular_values(r, n);
    let (max, min) = (sv[0], sv[n - 1]);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}
