//! Covariance functions over token features and Gram-matrix plumbing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{dot, scaled_sqdist, FeatureMatrix, FeatureRow};
use crate::linalg::{cholesky, Chol};

pub const DEFAULT_JITTER_FACTOR: f64 = 1e-6;
const RETRY_JITTER_FACTOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    SquaredExponential,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lengthscales {
    Isotropic(f64),
    PerDimension(Vec<f64>),
}

/// Covariance function: family, lengthscales, signal variance, and the
/// jitter added to the diagonal of square Gram matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Lengthscales,
    pub signal_variance: f64,
    pub jitter: f64,
}

impl KernelSpec {
    pub fn squared_exponential(lengthscale: f64, signal_variance: f64) -> Result<Self> {
        KernelSpec {
            family: KernelFamily::SquaredExponential,
            lengthscales: Lengthscales::Isotropic(lengthscale),
            signal_variance,
            jitter: DEFAULT_JITTER_FACTOR * signal_variance,
        }
        .validated()
    }

    pub fn squared_exponential_ard(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        KernelSpec {
            family: KernelFamily::SquaredExponential,
            lengthscales: Lengthscales::PerDimension(lengthscales),
            signal_variance,
            jitter: DEFAULT_JITTER_FACTOR * signal_variance,
        }
        .validated()
    }

    /// Linear kernel `σ²·(a·b)`; lengthscales are unused.
    pub fn linear(signal_variance: f64) -> Result<Self> {
        KernelSpec {
            family: KernelFamily::Linear,
            lengthscales: Lengthscales::Isotropic(1.0),
            signal_variance,
            jitter: DEFAULT_JITTER_FACTOR * signal_variance,
        }
        .validated()
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        self.jitter = jitter;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::invalid("signal_variance", "must be positive and finite"));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::invalid("jitter", "must be non-negative and finite"));
        }
        match &self.lengthscales {
            Lengthscales::Isotropic(l) => {
                if !(*l > 0.0) || !l.is_finite() {
                    return Err(Error::invalid("lengthscale", "must be positive and finite"));
                }
            }
            Lengthscales::PerDimension(ls) => {
                if ls.is_empty() {
                    return Err(Error::invalid("lengthscales", "must not be empty"));
                }
                if ls.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                    return Err(Error::invalid("lengthscales", "must all be positive and finite"));
                }
            }
        }
        Ok(self)
    }

    fn check_dim(&self, dim: usize, context: &str) -> Result<()> {
        if let Lengthscales::PerDimension(ls) = &self.lengthscales {
            if ls.len() != dim {
                return Err(Error::dimension(context, ls.len(), dim));
            }
        }
        Ok(())
    }

    /// κ(a, b; θ) for a single pair of rows.
    pub fn value(&self, a: &FeatureRow, b: &FeatureRow) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                let r2 = match &self.lengthscales {
                    Lengthscales::Isotropic(l) => {
                        let inv = 1.0 / (l * l);
                        scaled_sqdist(a, b, |_| inv)
                    }
                    Lengthscales::PerDimension(ls) => scaled_sqdist(a, b, |d| {
                        let l = ls[d as usize];
                        1.0 / (l * l)
                    }),
                };
                self.signal_variance * (-0.5 * r2).exp()
            }
            KernelFamily::Linear => self.signal_variance * dot(a, b),
        }
    }

    /// Hyperparameter vector length: signal variance plus lengthscales
    /// (none for the linear family).
    pub fn hyper_len(&self) -> usize {
        match self.family {
            KernelFamily::Linear => 1,
            KernelFamily::SquaredExponential => match &self.lengthscales {
                Lengthscales::Isotropic(_) => 2,
                Lengthscales::PerDimension(ls) => 1 + ls.len(),
            },
        }
    }

    pub fn hyper_get(&self) -> Vec<f64> {
        let mut out = vec![self.signal_variance];
        if self.family == KernelFamily::SquaredExponential {
            match &self.lengthscales {
                Lengthscales::Isotropic(l) => out.push(*l),
                Lengthscales::PerDimension(ls) => out.extend_from_slice(ls),
            }
        }
        out
    }

    /// Replace hyperparameters; jitter is left as stored.
    pub fn hyper_set(&self, values: &[f64]) -> Result<KernelSpec> {
        if values.len() != self.hyper_len() {
            return Err(Error::dimension("hyperparameters", self.hyper_len(), values.len()));
        }
        let mut spec = self.clone();
        spec.signal_variance = values[0];
        if self.family == KernelFamily::SquaredExponential {
            spec.lengthscales = match &self.lengthscales {
                Lengthscales::Isotropic(_) => Lengthscales::Isotropic(values[1]),
                Lengthscales::PerDimension(_) => Lengthscales::PerDimension(values[1..].to_vec()),
            };
        }
        spec.validated()
    }

    /// ∂κ(a,b)/∂θ_p with θ ordered as in `hyper_get`.
    pub fn value_grad(&self, a: &FeatureRow, b: &FeatureRow, p: usize) -> f64 {
        match self.family {
            KernelFamily::Linear => dot(a, b),
            KernelFamily::SquaredExponential => {
                if p == 0 {
                    return self.value(a, b) / self.signal_variance;
                }
                let k = self.value(a, b);
                match &self.lengthscales {
                    Lengthscales::Isotropic(l) => {
                        let inv = 1.0 / (l * l);
                        let r2 = scaled_sqdist(a, b, |_| inv);
                        k * r2 / l
                    }
                    Lengthscales::PerDimension(ls) => {
                        let d = p - 1;
                        let l = ls[d];
                        let diff = component_diff(a, b, d as u32);
                        k * diff * diff / (l * l * l)
                    }
                }
            }
        }
    }
}

fn component_diff(a: &FeatureRow, b: &FeatureRow, idx: u32) -> f64 {
    let va = a
        .binary_search_by_key(&idx, |e| e.0)
        .map(|i| a[i].1)
        .unwrap_or(0.0);
    let vb = b
        .binary_search_by_key(&idx, |e| e.0)
        .map(|i| b[i].1)
        .unwrap_or(0.0);
    va - vb
}

/// Dense Gram matrix with provenance: whether both axes index the same
/// input set and how much jitter sits on the diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub same_inputs: bool,
    pub jitter: f64,
    pub signal_variance: f64,
}

/// Rectangular cross-covariance κ(A, B); no jitter.
pub fn gram(spec: &KernelSpec, a: &FeatureMatrix, b: &FeatureMatrix) -> Result<GramMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::dimension("gram inputs", a.dim(), b.dim()));
    }
    spec.check_dim(a.dim(), "gram lengthscales")?;
    let mut values = DMatrix::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            values[(i, j)] = spec.value(a.row(i), b.row(j));
        }
    }
    Ok(GramMatrix {
        values,
        same_inputs: false,
        jitter: 0.0,
        signal_variance: spec.signal_variance,
    })
}

/// Square covariance κ(A, A) with jitter added to the diagonal.
pub fn gram_square(spec: &KernelSpec, a: &FeatureMatrix) -> Result<GramMatrix> {
    spec.check_dim(a.dim(), "gram lengthscales")?;
    let n = a.len();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        values[(i, i)] = spec.value(a.row(i), a.row(i)) + spec.jitter;
        for j in 0..i {
            let v = spec.value(a.row(i), a.row(j));
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        values,
        same_inputs: true,
        jitter: spec.jitter,
        signal_variance: spec.signal_variance,
    })
}

/// Diagonal of κ(A, A) without materializing the matrix.
pub fn gram_diag(spec: &KernelSpec, a: &FeatureMatrix, jittered: bool) -> Result<DVector<f64>> {
    spec.check_dim(a.dim(), "gram lengthscales")?;
    let jitter = if jittered { spec.jitter } else { 0.0 };
    Ok(DVector::from_iterator(
        a.len(),
        (0..a.len()).map(|i| spec.value(a.row(i), a.row(i)) + jitter),
    ))
}

/// Entry-wise ∂κ(A,B)/∂θ_p.
pub fn gram_grad(spec: &KernelSpec, a: &FeatureMatrix, b: &FeatureMatrix, p: usize) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::dimension("gram inputs", a.dim(), b.dim()));
    }
    let mut values = DMatrix::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            values[(i, j)] = spec.value_grad(a.row(i), b.row(j), p);
        }
    }
    Ok(values)
}

/// Cholesky of a square Gram matrix, with one retry at a larger jitter
/// before giving up.
pub fn gram_chol(k: &GramMatrix, context: &str) -> Result<Chol> {
    debug_assert!(k.same_inputs, "gram_chol expects a square same-input Gram matrix");
    match cholesky(&k.values, context) {
        Ok(c) => Ok(c),
        Err(first) => {
            let target = RETRY_JITTER_FACTOR * k.signal_variance;
            if target <= k.jitter {
                return Err(first);
            }
            let mut bumped = k.values.clone();
            let extra = target - k.jitter;
            for i in 0..bumped.nrows() {
                bumped[(i, i)] += extra;
            }
            cholesky(&bumped, context).map_err(|_| first)
        }
    }
}

/// `K⁻¹ B` by Cholesky, returning the log-determinant of `K` as well.
pub fn chol_solve(k: &GramMatrix, b: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    if k.values.nrows() != b.nrows() {
        return Err(Error::dimension(context, k.values.nrows(), b.nrows()));
    }
    let c = gram_chol(k, context)?;
    Ok((c.solve_mat(b), c.logdet()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_features(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = crate::streams::stream_rng(seed, 0, 0, 0, 0);
        let dense: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        FeatureMatrix::from_dense(&dense).unwrap()
    }

    #[test]
    fn se_self_covariance_is_variance_plus_jitter() {
        let spec = KernelSpec::squared_exponential(1.0, 1.0).unwrap();
        let x = FeatureMatrix::from_dense(&[vec![0.3, -1.2, 7.0]]).unwrap();
        let g = gram_square(&spec, &x).unwrap();
        assert_relative_eq!(g.values[(0, 0)], 1.0 + spec.jitter, epsilon = 1e-15);
    }

    #[test]
    fn se_unit_distance_value() {
        let spec = KernelSpec::squared_exponential(1.0, 1.0).unwrap();
        let x = FeatureMatrix::from_dense(&[vec![0.0], vec![1.0]]).unwrap();
        let g = gram_square(&spec, &x).unwrap();
        assert_relative_eq!(g.values[(0, 1)], (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(g.values[(0, 1)], 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn gram_is_exchange_symmetric() {
        let spec = KernelSpec::squared_exponential(0.7, 1.3).unwrap();
        let a = random_features(5, 3, 11);
        let b = random_features(4, 3, 12);
        let ab = gram(&spec, &a, &b).unwrap();
        let ba = gram(&spec, &b, &a).unwrap();
        let diff = (&ab.values - ba.values.transpose()).abs().max();
        assert!(diff <= 1e-12, "asymmetry {}", diff);
    }

    #[test]
    fn gram_diag_matches_full() {
        for spec in [
            KernelSpec::squared_exponential(0.9, 2.0).unwrap(),
            KernelSpec::linear(1.7).unwrap(),
        ] {
            let a = random_features(6, 4, 21);
            let full = gram_square(&spec, &a).unwrap();
            let diag = gram_diag(&spec, &a, true).unwrap();
            for i in 0..6 {
                assert_relative_eq!(diag[i], full.values[(i, i)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn constant_variance_diag_for_se() {
        let spec = KernelSpec::squared_exponential(1.0, 2.0).unwrap();
        let a = random_features(5, 3, 31);
        let diag = gram_diag(&spec, &a, false).unwrap();
        for i in 0..5 {
            assert_relative_eq!(diag[i], 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_diag_is_scaled_self_dot() {
        let spec = KernelSpec::linear(2.0).unwrap();
        let a = FeatureMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, -3.0]]).unwrap();
        let diag = gram_diag(&spec, &a, false).unwrap();
        assert_relative_eq!(diag[0], 2.0 * 5.0);
        assert_relative_eq!(diag[1], 2.0 * 9.0);
    }

    #[test]
    fn chol_solve_identity_and_diag() {
        let eye = GramMatrix {
            values: DMatrix::identity(3, 3),
            same_inputs: true,
            jitter: 0.0,
            signal_variance: 1.0,
        };
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (x, logdet) = chol_solve(&eye, &b, "test").unwrap();
        assert_relative_eq!(x, b, epsilon = 1e-14);
        assert_relative_eq!(logdet, 0.0, epsilon = 1e-14);

        let d4 = GramMatrix {
            values: DMatrix::from_element(1, 1, 4.0),
            same_inputs: true,
            jitter: 0.0,
            signal_variance: 4.0,
        };
        let (x, logdet) = chol_solve(&d4, &DMatrix::from_element(1, 1, 2.0), "test").unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5);
        assert_relative_eq!(logdet, 4.0f64.ln());
    }

    #[test]
    fn chol_solve_recovers_rhs_on_random_pd() {
        let spec = KernelSpec::squared_exponential(1.1, 1.0).unwrap();
        let a = random_features(6, 2, 44);
        let k = gram_square(&spec, &a).unwrap();
        let b = DMatrix::from_fn(6, 2, |i, j| ((i * 2 + j) as f64).sin());
        let (x, _) = chol_solve(&k, &b, "test").unwrap();
        let back = &k.values * &x;
        let rel = (&back - &b).abs().max() / b.abs().max();
        assert!(rel <= 1e-10, "relative error {}", rel);
    }

    #[test]
    fn signal_variance_scales_entries() {
        let a = random_features(4, 3, 5);
        for base in [
            KernelSpec::squared_exponential(0.8, 1.0).unwrap(),
            KernelSpec::linear(1.0).unwrap(),
        ] {
            let mut scaled = base.clone();
            scaled.signal_variance = 3.0;
            let g1 = gram(&base, &a, &a).unwrap();
            let g3 = gram(&scaled, &a, &a).unwrap();
            let diff = (&g3.values - &g1.values * 3.0).abs().max();
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn retry_jitter_rescues_near_singular_gram() {
        // Duplicated inputs with zero declared jitter make the plain
        // factorization break; the retry path must succeed.
        let spec = KernelSpec::squared_exponential(1.0, 1.0)
            .unwrap()
            .with_jitter(0.0)
            .unwrap();
        let x = FeatureMatrix::from_dense(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let k = gram_square(&spec, &x).unwrap();
        let c = gram_chol(&k, "test").unwrap();
        assert!(c.min_pivot() > 0.0);
    }

    #[test]
    fn ard_dimension_mismatch_is_an_error() {
        let spec = KernelSpec::squared_exponential_ard(vec![1.0, 2.0], 1.0).unwrap();
        let a = random_features(2, 3, 3);
        assert!(gram(&spec, &a, &a).is_err());
    }

    #[test]
    fn hyper_grads_match_finite_differences() {
        let a = random_features(3, 2, 71);
        let specs = [
            KernelSpec::squared_exponential(0.9, 1.4).unwrap(),
            KernelSpec::squared_exponential_ard(vec![0.7, 1.3], 0.8).unwrap(),
            KernelSpec::linear(1.2).unwrap(),
        ];
        for spec in specs {
            let theta = spec.hyper_get();
            for p in 0..spec.hyper_len() {
                let h = 1e-6 * theta[p].max(1.0);
                let mut up = theta.clone();
                up[p] += h;
                let mut dn = theta.clone();
                dn[p] -= h;
                let s_up = spec.hyper_set(&up).unwrap();
                let s_dn = spec.hyper_set(&dn).unwrap();
                for i in 0..a.len() {
                    for j in 0..a.len() {
                        let fd = (s_up.value(a.row(i), a.row(j)) - s_dn.value(a.row(i), a.row(j)))
                            / (2.0 * h);
                        let an = spec.value_grad(a.row(i), a.row(j), p);
                        assert_relative_eq!(an, fd, epsilon = 1e-6, max_relative = 1e-5);
                    }
                }
            }
        }
    }
}
