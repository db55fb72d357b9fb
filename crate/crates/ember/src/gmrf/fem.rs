//! Linear finite-element operators on meshes and knot sequences.
//!
//! Mass matrices are lumped (diagonal), which keeps the resulting precision
//! matrices sparse. The `k2` operator `G C⁻¹ G` is precomputed once per
//! basis; it does not depend on the hyperparameters.

use crate::error::{EmberError, Result};
use crate::gmrf::mesh::Mesh2D;
use crate::sparse::{CsrMatrix, SymTripletAcc};

/// Mass, stiffness and stiffness-squared operators for one basis.
#[derive(Debug, Clone)]
pub(crate) struct FemOps {
    /// Lumped mass diagonal.
    pub mass: Vec<f64>,
    /// Stiffness matrix.
    pub stiffness: CsrMatrix,
    /// `G C⁻¹ G` with C the lumped mass.
    pub k2: CsrMatrix,
}

impl FemOps {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }
}

pub(crate) fn fem_2d(mesh: &Mesh2D) -> FemOps {
    let n = mesh.n_nodes();
    let mut mass = vec![0.0; n];
    let mut acc = SymTripletAcc::new();
    for t in 0..mesh.triangles().len() {
        let [i, j, k] = mesh.triangles()[t];
        let double_area = mesh.double_area(t);
        let area = 0.5 * double_area;
        let (pi, pj, pk) = (
            mesh.nodes()[i],
            mesh.nodes()[j],
            mesh.nodes()[k],
        );
        // gradient coefficients of the barycentric basis
        let b = [pj[1] - pk[1], pk[1] - pi[1], pi[1] - pj[1]];
        let c = [pk[0] - pj[0], pi[0] - pk[0], pj[0] - pi[0]];
        let verts = [i, j, k];
        for r in 0..3 {
            mass[verts[r]] += area / 3.0;
            for s in r..3 {
                let v = (b[r] * b[s] + c[r] * c[s]) / (4.0 * area);
                acc.add(verts[r], verts[s], v);
            }
        }
    }
    let stiffness = acc.build(n);
    let inv_mass: Vec<f64> = mass.iter().map(|&m| 1.0 / m).collect();
    let k2 = stiffness.scaled_self_product(&inv_mass);
    FemOps {
        mass,
        stiffness,
        k2,
    }
}

pub(crate) fn fem_1d(knots: &[f64]) -> Result<FemOps> {
    let n = knots.len();
    if n < 3 {
        return Err(EmberError::InvalidInput(format!(
            "need at least 3 knots, got {n}"
        )));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EmberError::InvalidInput(
            "knots must be strictly increasing".into(),
        ));
    }
    let mut mass = vec![0.0; n];
    let mut acc = SymTripletAcc::new();
    for i in 0..n - 1 {
        let h = knots[i + 1] - knots[i];
        mass[i] += 0.5 * h;
        mass[i + 1] += 0.5 * h;
        acc.add(i, i, 1.0 / h);
        acc.add(i + 1, i + 1, 1.0 / h);
        acc.add(i, i + 1, -1.0 / h);
    }
    let stiffness = acc.build(n);
    let inv_mass: Vec<f64> = mass.iter().map(|&m| 1.0 / m).collect();
    let k2 = stiffness.scaled_self_product(&inv_mass);
    Ok(FemOps {
        mass,
        stiffness,
        k2,
    })
}
