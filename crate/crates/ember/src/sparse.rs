//! Minimal compressed-sparse-row matrices for finite-element assembly.
//!
//! Only the handful of operations the precision builders need: triplet
//! construction with duplicate summation, row access, matrix-vector products,
//! and the symmetric triple product `G diag(c)⁻¹ G` that appears in the SPDE
//! precision. Factorization happens on the dense side (see `gmrf::factor`).

use crate::error::{EmberError, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets; duplicate entries are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(EmberError::InvalidInput(format!(
                    "triplet ({i},{j}) outside {nrows}x{ncols} matrix"
                )));
            }
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.row(i);
        match idx.binary_search(&j) {
            Ok(k) => val[k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                let (idx, val) = self.row(i);
                idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// Quadratic form xᵀ A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `self` must be structurally symmetric with bitwise-equal mirrored values.
    pub fn is_symmetric(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                if self.get(j, i).to_bits() != v.to_bits() {
                    return false;
                }
            }
        }
        true
    }

    /// Symmetric triple product `A diag(d)⁻¹ A` for symmetric `A`.
    ///
    /// The upper triangle is computed explicitly and mirrored so the result
    /// is bitwise symmetric.
    pub fn scaled_self_product(&self, inv_diag: &[f64]) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols);
        assert_eq!(inv_diag.len(), self.nrows);
        let n = self.nrows;
        let mut triplets = Vec::new();
        // dense scratch column marker per row; pattern is the two-hop graph
        let mut acc: Vec<f64> = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..n {
            let (ki, vi) = self.row(i);
            for (&k, &aik) in ki.iter().zip(vi) {
                let w = aik * inv_diag[k];
                let (kj, vj) = self.row(k);
                for (&j, &akj) in kj.iter().zip(vj) {
                    if j < i {
                        continue;
                    }
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += w * akj;
                }
            }
            for &j in &touched {
                let v = acc[j];
                acc[j] = 0.0;
                triplets.push((i, j, v));
                if j != i {
                    triplets.push((j, i, v));
                }
            }
            touched.clear();
        }
        CsrMatrix::from_triplets(n, n, &triplets).expect("valid indices by construction")
    }

    /// Iterate all stored entries as (row, col, value).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (idx, val) = self.row(i);
            idx.iter().zip(val).map(move |(&j, &v)| (i, j, v))
        })
    }
}

/// Accumulator that builds a bitwise-symmetric matrix from upper-triangle
/// contributions.
#[derive(Debug, Default)]
pub struct SymTripletAcc {
    upper: Vec<(usize, usize, f64)>,
}

impl SymTripletAcc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `v` at (i, j); only the canonical (min, max) position is stored.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.upper.push((a, b, v));
    }

    pub fn build(self, n: usize) -> CsrMatrix {
        // collapse duplicates on the upper triangle first, then mirror, so
        // (i,j) and (j,i) are byte-identical
        let upper = CsrMatrix::from_triplets(n, n, &self.upper).expect("upper triplets in range");
        let mut all = Vec::with_capacity(upper.nnz() * 2);
        for (i, j, v) in upper.triplets() {
            all.push((i, j, v));
            if i != j {
                all.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(n, n, &all).expect("mirrored triplets in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_duplicates_are_summed() {
        let m =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn symmetric_accumulator_mirrors_bitwise() {
        let mut acc = SymTripletAcc::new();
        acc.add(0, 1, 0.1 + 0.2); // deliberately inexact value
        acc.add(1, 0, 0.7);
        acc.add(0, 0, 1.0);
        acc.add(2, 2, 1.0);
        let m = acc.build(3);
        assert!(m.is_symmetric());
        assert_eq!(m.get(0, 1).to_bits(), m.get(1, 0).to_bits());
    }

    #[test]
    fn scaled_self_product_matches_dense() {
        // A = tridiag(-1, 2, -1), d = (1, 2, 4)
        let mut acc = SymTripletAcc::new();
        for i in 0..3 {
            acc.add(i, i, 2.0);
        }
        acc.add(0, 1, -1.0);
        acc.add(1, 2, -1.0);
        let a = acc.build(3);
        let inv_d = [1.0, 0.5, 0.25];
        let p = a.scaled_self_product(&inv_d);
        assert!(p.is_symmetric());
        // dense reference
        let ad = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += ad[i][k] * inv_d[k] * ad[k][j];
                }
                assert!((p.get(i, j) - want).abs() < 1e-12, "entry ({i},{j})");
            }
        }
    }
}
