//! Flat view of the variational parameters.
//!
//! Optimizers, incremental-gradient storage, and finite-difference checks all
//! work on one contiguous coordinate vector. Coordinates are unconstrained:
//! mixture weights live as logits, covariance factors as Cholesky entries
//! with pre-softplus diagonals, pairwise variances as pre-softplus standard
//! deviations.

use crate::linalg::tri_len;

/// Shape of the variational family: K components, V unary processes,
/// M inducing points per process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub components: usize,
    pub processes: usize,
    pub inducing: usize,
}

/// Named coordinate segments, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    PiLogits,
    UnaryMean { component: usize, process: usize },
    UnaryChol { component: usize, process: usize },
    PairMean,
    PairRho,
}

impl ParamLayout {
    pub fn new(components: usize, processes: usize, inducing: usize) -> Self {
        ParamLayout {
            components,
            processes,
            inducing,
        }
    }

    pub fn pair_dims(&self) -> usize {
        self.processes * self.processes
    }

    fn mean_base(&self) -> usize {
        self.components
    }

    fn chol_base(&self) -> usize {
        self.mean_base() + self.components * self.processes * self.inducing
    }

    fn pair_mean_base(&self) -> usize {
        self.chol_base() + self.components * self.processes * tri_len(self.inducing)
    }

    fn pair_rho_base(&self) -> usize {
        self.pair_mean_base() + self.pair_dims()
    }

    pub fn len(&self) -> usize {
        self.pair_rho_base() + self.pair_dims()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pi_logits(&self) -> std::ops::Range<usize> {
        0..self.components
    }

    pub fn unary_mean(&self, component: usize, process: usize) -> std::ops::Range<usize> {
        let start = self.mean_base() + (component * self.processes + process) * self.inducing;
        start..start + self.inducing
    }

    pub fn unary_chol(&self, component: usize, process: usize) -> std::ops::Range<usize> {
        let tri = tri_len(self.inducing);
        let start = self.chol_base() + (component * self.processes + process) * tri;
        start..start + tri
    }

    pub fn pair_mean(&self) -> std::ops::Range<usize> {
        self.pair_mean_base()..self.pair_mean_base() + self.pair_dims()
    }

    pub fn pair_rho(&self) -> std::ops::Range<usize> {
        self.pair_rho_base()..self.pair_rho_base() + self.pair_dims()
    }

    pub fn segment_range(&self, s: Segment) -> std::ops::Range<usize> {
        match s {
            Segment::PiLogits => self.pi_logits(),
            Segment::UnaryMean { component, process } => self.unary_mean(component, process),
            Segment::UnaryChol { component, process } => self.unary_chol(component, process),
            Segment::PairMean => self.pair_mean(),
            Segment::PairRho => self.pair_rho(),
        }
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = vec![Segment::PiLogits];
        for k in 0..self.components {
            for j in 0..self.processes {
                out.push(Segment::UnaryMean {
                    component: k,
                    process: j,
                });
            }
        }
        for k in 0..self.components {
            for j in 0..self.processes {
                out.push(Segment::UnaryChol {
                    component: k,
                    process: j,
                });
            }
        }
        out.push(Segment::PairMean);
        out.push(Segment::PairRho);
        out
    }

    /// Coordinates that step with the covariance step size rather than the
    /// mean step size: Cholesky factors and pairwise scale parameters.
    pub fn is_covariance_coord(&self, i: usize) -> bool {
        (self.chol_base()..self.pair_mean_base()).contains(&i) || i >= self.pair_rho_base()
    }

    /// Coordinates updated in the unary variational block (mixture logits,
    /// inducing means and factors); the rest belong to the pairwise block.
    pub fn is_unary_coord(&self, i: usize) -> bool {
        i < self.pair_mean_base()
    }
}

/// Contiguous parameter or gradient vector over a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_data(layout: ParamLayout, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), layout.len(), "parameter vector length mismatch");
        ParamVector { layout, data }
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn segment(&self, s: Segment) -> &[f64] {
        &self.data[self.layout.segment_range(s)]
    }

    pub fn segment_mut(&mut self, s: Segment) -> &mut [f64] {
        let r = self.layout.segment_range(s);
        &mut self.data[r]
    }

    /// `self += c * other`, optionally restricted by a coordinate mask.
    pub fn add_scaled(&mut self, other: &ParamVector, c: f64) {
        assert_eq!(self.layout, other.layout);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn add_scaled_where(&mut self, other: &ParamVector, c: f64, keep: impl Fn(usize) -> bool) {
        assert_eq!(self.layout, other.layout);
        for (i, (a, b)) in self.data.iter_mut().zip(&other.data).enumerate() {
            if keep(i) {
                *a += c * b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
