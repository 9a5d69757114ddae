//! Small dense linear-algebra helpers shared across the crate.
//!
//! The factorization here is deliberately hand-rolled: callers need the
//! failing pivot index on breakdown, the log-determinant as a by-product,
//! and bit-reproducible results independent of threading.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Chol {
    l: DMatrix<f64>,
}

/// Factor `a = L Lᵀ`. On failure reports the pivot (column) that broke.
pub fn cholesky(a: &DMatrix<f64>, context: &str) -> Result<Chol> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::dimension(context, "square matrix", format!("{}x{}", n, a.ncols())));
    }
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::CholeskyFailed {
                context: context.to_string(),
                pivot: j,
            });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(Chol { l })
}

impl Chol {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_l(self) -> DMatrix<f64> {
        self.l
    }

    /// log det of the factored matrix (not of the factor).
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    pub fn min_pivot(&self) -> f64 {
        (0..self.dim()).fold(f64::INFINITY, |m, i| m.min(self.l[(i, i)]))
    }

    /// Solve `L y = b` in place.
    pub fn forward_solve_vec(&self, b: &mut DVector<f64>) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn backward_solve_vec(&self, y: &mut DVector<f64>) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
    }

    /// `(L Lᵀ)⁻¹ b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.forward_solve_vec(&mut x);
        self.backward_solve_vec(&mut x);
        x
    }

    /// Solve `L Y = B` column by column, in place.
    pub fn forward_solve_mat(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for c in 0..b.ncols() {
            for i in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / self.l[(i, i)];
            }
        }
    }

    pub fn backward_solve_mat(&self, y: &mut DMatrix<f64>) {
        let n = self.dim();
        for c in 0..y.ncols() {
            for i in (0..n).rev() {
                let mut s = y[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * y[(k, c)];
                }
                y[(i, c)] = s / self.l[(i, i)];
            }
        }
    }

    /// `(L Lᵀ)⁻¹ B`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.forward_solve_mat(&mut x);
        self.backward_solve_mat(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Log-density of `N(x; mean, L Lᵀ)`.
    pub fn mvn_logpdf(&self, x: &DVector<f64>, mean: &DVector<f64>) -> f64 {
        let mut d = x - mean;
        self.forward_solve_vec(&mut d);
        -0.5 * (self.dim() as f64) * LN_2PI - 0.5 * self.logdet() - 0.5 * d.norm_squared()
    }
}

/// Cholesky of a PSD matrix that may be singular (or exactly zero).
///
/// Tries the matrix as given, then with a relative diagonal bump. A matrix
/// that is numerically zero factors to the zero matrix so that sampling from
/// a degenerate Gaussian returns its mean.
pub fn cholesky_psd(a: &DMatrix<f64>, context: &str) -> Result<Chol> {
    if let Ok(c) = cholesky(a, context) {
        return Ok(c);
    }
    let scale = (0..a.nrows()).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    if scale < 1e-300 {
        return Ok(Chol {
            l: DMatrix::zeros(a.nrows(), a.ncols()),
        });
    }
    for bump in [1e-12, 1e-10, 1e-8] {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += bump * scale;
        }
        if let Ok(c) = cholesky(&b, context) {
            return Ok(c);
        }
    }
    cholesky(a, context)
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of `softplus`; input must be positive.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of entries in a packed lower triangle (diagonal included).
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Pack the lower triangle of `m` row by row: (0,0), (1,0), (1,1), ...
pub fn pack_lower(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(tri_len(n));
    for i in 0..n {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unpack_lower(n: usize, packed: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(packed.len(), tri_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = packed[idx];
            idx += 1;
        }
    }
    m
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
