//! Sparse-precision builders for the latent Gaussian effects.

use crate::error::{EmberError, Result};
use crate::gmrf::fem::{fem_1d, fem_2d, FemOps};
use crate::gmrf::mesh::Mesh2D;
use crate::sparse::{CsrMatrix, SymTripletAcc};

/// Matérn hyperparameters with smoothness fixed at ν = 1.
///
/// `range` is the empirical range at which the correlation drops to ≈ 0.1,
/// related to the SPDE parameter by κ = √8 / range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternHyper {
    pub range: f64,
    pub sd: f64,
}

impl MaternHyper {
    pub fn new(range: f64, sd: f64) -> Result<Self> {
        if !(range > 0.0) || !(sd > 0.0) {
            return Err(EmberError::InvalidInput(format!(
                "Matérn hyperparameters must be positive, got range={range}, sd={sd}"
            )));
        }
        Ok(MaternHyper { range, sd })
    }

    pub fn kappa(&self) -> f64 {
        8f64.sqrt() / self.range
    }

    /// SPDE normalization so the stationary marginal standard deviation is
    /// ≈ `sd`, for spatial dimension `dim` ∈ {1, 2} and operator power α = 2.
    pub fn tau_squared(&self, dim: usize) -> f64 {
        let kappa = self.kappa();
        match dim {
            1 => 1.0 / (4.0 * kappa.powi(3) * self.sd * self.sd),
            2 => 1.0 / (4.0 * std::f64::consts::PI * kappa * kappa * self.sd * self.sd),
            _ => panic!("unsupported SPDE dimension {dim}"),
        }
    }
}

/// Symmetric sparse precision matrix with optional linear equality
/// constraints (each row must satisfy `row · x = 0`).
#[derive(Debug, Clone)]
pub struct SparsePrecision {
    matrix: CsrMatrix,
    constraints: Vec<Vec<f64>>,
}

impl SparsePrecision {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(EmberError::InvalidInput("precision must be square".into()));
        }
        debug_assert!(matrix.is_symmetric());
        Ok(SparsePrecision {
            matrix,
            constraints: Vec::new(),
        })
    }

    pub fn with_constraint(mut self, row: Vec<f64>) -> Result<Self> {
        if row.len() != self.dim() {
            return Err(EmberError::InvalidInput(format!(
                "constraint length {} does not match dimension {}",
                row.len(),
                self.dim()
            )));
        }
        if row.iter().all(|&v| v == 0.0) {
            return Err(EmberError::InvalidInput("constraint row is zero".into()));
        }
        self.constraints.push(row);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn constraints(&self) -> &[Vec<f64>] {
        &self.constraints
    }
}

/// Combine FEM operators into the α = 2 SPDE precision
/// `Q = τ² (κ⁴ C + 2κ² G + G C⁻¹ G)`.
pub(crate) fn spde_from_fem(fem: &FemOps, hyper: &MaternHyper, dim: usize) -> CsrMatrix {
    let kappa = hyper.kappa();
    let tau2 = hyper.tau_squared(dim);
    let k4 = kappa.powi(4);
    let k2c = 2.0 * kappa * kappa;
    let n = fem.dim();
    let mut acc = SymTripletAcc::new();
    for (i, &m) in fem.mass.iter().enumerate() {
        acc.add(i, i, tau2 * k4 * m);
    }
    for (i, j, v) in fem.stiffness.triplets() {
        if i <= j {
            acc.add(i, j, tau2 * k2c * v);
        }
    }
    for (i, j, v) in fem.k2.triplets() {
        if i <= j {
            acc.add(i, j, tau2 * v);
        }
    }
    acc.build(n)
}

/// Matérn (ν = 1) field over a triangulated mesh, Neumann exterior boundary.
pub fn spde_precision_2d(mesh: &Mesh2D, hyper: &MaternHyper) -> Result<SparsePrecision> {
    MaternHyper::new(hyper.range, hyper.sd)?;
    let fem = fem_2d(mesh);
    SparsePrecision::new(spde_from_fem(&fem, hyper, 2))
}

/// One-dimensional SPDE precision over spline knots.
pub fn spde_precision_1d(knots: &[f64], hyper: &MaternHyper) -> Result<SparsePrecision> {
    MaternHyper::new(hyper.range, hyper.sd)?;
    let fem = fem_1d(knots)?;
    SparsePrecision::new(spde_from_fem(&fem, hyper, 1))
}

/// First-order random walk precision with a sum-to-zero constraint.
pub fn rw1_precision(k: usize, tau: f64) -> Result<SparsePrecision> {
    if k < 2 {
        return Err(EmberError::InvalidInput(format!(
            "random walk needs at least 2 levels, got {k}"
        )));
    }
    if !(tau > 0.0) {
        return Err(EmberError::InvalidInput(format!(
            "random-walk precision must be positive, got {tau}"
        )));
    }
    let mut acc = SymTripletAcc::new();
    for i in 0..k {
        let d = if i == 0 || i == k - 1 { 1.0 } else { 2.0 };
        acc.add(i, i, tau * d);
        if i + 1 < k {
            acc.add(i, i + 1, -tau);
        }
    }
    SparsePrecision::new(acc.build(k))?.with_constraint(vec![1.0; k])
}

/// Independent N(0, 1/τ) block.
pub fn iid_precision(n: usize, tau: f64) -> Result<SparsePrecision> {
    if n == 0 || !(tau > 0.0) {
        return Err(EmberError::InvalidInput(format!(
            "iid block needs n ≥ 1 and τ > 0, got n={n}, tau={tau}"
        )));
    }
    let mut acc = SymTripletAcc::new();
    for i in 0..n {
        acc.add(i, i, tau);
    }
    SparsePrecision::new(acc.build(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::mesh::{build_mesh_2d, rectangle, MeshOptions};
    use approx::assert_relative_eq;

    #[test]
    fn rw1_hand_checked() {
        let q = rw1_precision(3, 1.0).unwrap();
        let want = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(q.matrix().get(i, j), want[i][j]);
            }
        }
        assert_eq!(q.constraints(), &[vec![1.0, 1.0, 1.0]]);

        let q2 = rw1_precision(2, 4.0).unwrap();
        assert_eq!(q2.matrix().get(0, 0), 4.0);
        assert_eq!(q2.matrix().get(0, 1), -4.0);
        assert!(rw1_precision(1, 1.0).is_err());
        assert!(rw1_precision(3, 0.0).is_err());
    }

    #[test]
    fn rw1_annihilates_constants_and_matches_increment_form() {
        for k in [2usize, 5, 20] {
            let tau = 2.5;
            let q = rw1_precision(k, tau).unwrap();
            let ones = vec![1.0; k];
            for v in q.matrix().mul_vec(&ones) {
                assert!(v.abs() < 1e-12);
            }
            let mut rng = crate::rng::rng_from_seed(k as u64);
            use rand::Rng;
            let x: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let quad = q.matrix().quad_form(&x);
            let incr: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * tau;
            assert_relative_eq!(quad, incr, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn spde_1d_four_knots_is_banded_symmetric() {
        let hyper = MaternHyper::new(2.0, 1.0).unwrap();
        let q = spde_precision_1d(&[0.0, 1.0, 2.0, 3.0], &hyper).unwrap();
        assert_eq!(q.dim(), 4);
        assert!(q.matrix().is_symmetric());
        // bandwidth 2: entries beyond the second off-diagonal vanish
        assert_eq!(q.matrix().get(0, 3), 0.0);
        assert!(q.matrix().get(0, 2) != 0.0);
        assert!(spde_precision_1d(&[0.0, 1.0], &hyper).is_err());
        assert!(spde_precision_1d(&[0.0, 0.0, 1.0], &hyper).is_err());
    }

    #[test]
    fn spde_1d_large_kappa_approaches_independence() {
        let hyper = MaternHyper::new(8f64.sqrt() / 1e3, 1.0).unwrap(); // κ = 1000
        let q = spde_precision_1d(&[0.0, 1.0, 2.0, 3.0, 4.0], &hyper).unwrap();
        let ratio = q.matrix().get(1, 2).abs() / q.matrix().get(1, 1);
        assert!(ratio < 1e-4, "off/diag ratio {ratio}");
    }

    #[test]
    fn doubling_range_scales_kappa_and_tau() {
        let h1 = MaternHyper::new(1.0, 0.7).unwrap();
        let h2 = MaternHyper::new(2.0, 0.7).unwrap();
        assert_relative_eq!(h2.kappa(), 0.5 * h1.kappa(), max_relative = 1e-15);
        assert_relative_eq!(
            h2.tau_squared(2),
            4.0 * h1.tau_squared(2),
            max_relative = 1e-12
        );
    }

    #[test]
    fn spde_2d_pattern_is_two_hop() {
        let mesh = build_mesh_2d(
            &rectangle(0.0, 0.0, 2.0, 2.0),
            &MeshOptions {
                interior_edge: 0.5,
                exterior_edge: 1.0,
                extension: 1.0,
            },
        )
        .unwrap();
        let hyper = MaternHyper::new(1.0, 1.0).unwrap();
        let q = spde_precision_2d(&mesh, &hyper).unwrap();
        assert!(q.matrix().is_symmetric());
        // pattern of Q must equal the pattern of G C⁻¹ G (two-hop graph)
        let fem = crate::gmrf::fem::fem_2d(&mesh);
        for (i, j, v) in q.matrix().triplets() {
            if v != 0.0 && i != j {
                assert!(
                    fem.k2.get(i, j) != 0.0 || fem.stiffness.get(i, j) != 0.0,
                    "unexpected coupling ({i},{j})"
                );
            }
        }
    }
}
