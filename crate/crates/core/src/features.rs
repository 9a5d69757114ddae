//! Sparse token feature vectors.
//!
//! Token descriptors are stored as sorted `(index, value)` pairs so that
//! hashed corpus features with dimensionality in the tens of thousands do not
//! force dense storage. Dense desk-scale data simply lists every index.

use crate::error::{Error, Result};

/// One token's feature vector: indices strictly increasing, values finite.
pub type FeatureRow = Vec<(u32, f64)>;

/// A set of feature rows sharing one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, rows: Vec<FeatureRow>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dim", "must be at least 1"));
        }
        for (r, row) in rows.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(idx, v) in row {
                if idx as usize >= dim {
                    return Err(Error::invalid(
                        "feature index",
                        format!("row {}: index {} out of range for dim {}", r, idx, dim),
                    ));
                }
                if let Some(p) = prev {
                    if idx <= p {
                        return Err(Error::invalid(
                            "feature row",
                            format!("row {}: indices not strictly increasing", r),
                        ));
                    }
                }
                if !v.is_finite() {
                    return Err(Error::non_finite(format!("feature value in row {}", r)));
                }
                prev = Some(idx);
            }
        }
        Ok(FeatureMatrix { dim, rows })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(1).max(1);
        let mut sparse = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dimension("dense feature rows", dim, row.len()));
            }
            let _ = r;
            sparse.push(
                row.iter()
                    .enumerate()
                    .map(|(i, &v)| (i as u32, v))
                    .collect(),
            );
        }
        FeatureMatrix::new(dim, sparse)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &FeatureRow {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    /// New matrix from the given row indices, in order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            dim: self.dim,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn push_row(&mut self, row: FeatureRow) {
        self.rows.push(row);
    }
}

/// Sparse dot product by merge walk.
pub fn dot(a: &FeatureRow, b: &FeatureRow) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut s = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Squared distance with per-coordinate inverse-square scales.
/// `inv_sq` maps a feature index to `1/ℓ_d²` (constant for isotropic scales).
pub fn scaled_sqdist(a: &FeatureRow, b: &FeatureRow, inv_sq: impl Fn(u32) -> f64) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut s = 0.0;
    while i < a.len() || j < b.len() {
        let (idx, d) = if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
            let t = (a[i].0, a[i].1);
            i += 1;
            t
        } else if i >= a.len() || b[j].0 < a[i].0 {
            let t = (b[j].0, -b[j].1);
            j += 1;
            t
        } else {
            let t = (a[i].0, a[i].1 - b[j].1);
            i += 1;
            j += 1;
            t
        };
        s += d * d * inv_sq(idx);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dot_merges_sparse_patterns() {
        let a = vec![(0, 1.0), (3, 2.0), (7, -1.0)];
        let b = vec![(3, 4.0), (5, 9.0), (7, 2.0)];
        assert_relative_eq!(dot(&a, &b), 8.0 - 2.0);
    }

    #[test]
    fn sqdist_counts_one_sided_entries() {
        let a = vec![(0, 1.0), (2, 2.0)];
        let b = vec![(2, 2.0), (4, -3.0)];
        assert_relative_eq!(scaled_sqdist(&a, &b, |_| 1.0), 1.0 + 9.0);
        assert_relative_eq!(scaled_sqdist(&a, &a, |_| 1.0), 0.0);
    }

    #[test]
    fn dense_conversion_validates_width() {
        let m = FeatureMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.len(), 2);
        assert!(FeatureMatrix::from_dense(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rejects_non_finite_and_unsorted() {
        assert!(FeatureMatrix::new(4, vec![vec![(0, f64::NAN)]]).is_err());
        assert!(FeatureMatrix::new(4, vec![vec![(2, 1.0), (1, 1.0)]]).is_err());
        assert!(FeatureMatrix::new(2, vec![vec![(5, 1.0)]]).is_err());
    }
}
