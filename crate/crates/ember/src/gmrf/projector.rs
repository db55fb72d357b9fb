//! Projection from latent basis weights to point evaluations.
//!
//! 2D fields use barycentric interpolation in the containing triangle; 1D
//! spline effects use piecewise-linear hat weights with clamping to the
//! boundary knots outside the knot range. Every row sums to one.

use crate::error::{EmberError, Result};
use crate::gmrf::mesh::Mesh2D;

/// Sparse interpolation matrix; row per query point.
#[derive(Debug, Clone)]
pub struct Projector {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl Projector {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Evaluate the field given basis weights.
    pub fn apply(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.ncols);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * weights[j]).sum())
            .collect()
    }
}

/// Barycentric weights of `p` in triangle `t`, or None when outside.
fn barycentric(mesh: &Mesh2D, t: usize, p: [f64; 2], tol: f64) -> Option<[f64; 3]> {
    let [a, b, c] = mesh.triangles()[t];
    let (pa, pb, pc) = (mesh.nodes()[a], mesh.nodes()[b], mesh.nodes()[c]);
    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    let l1 = ((pb[0] - p[0]) * (pc[1] - p[1]) - (pc[0] - p[0]) * (pb[1] - p[1])) / det;
    let l2 = ((pc[0] - p[0]) * (pa[1] - p[1]) - (pa[0] - p[0]) * (pc[1] - p[1])) / det;
    let l3 = 1.0 - l1 - l2;
    if l1 >= -tol && l2 >= -tol && l3 >= -tol {
        Some([l1, l2, l3])
    } else {
        None
    }
}

/// Interpolation matrix from mesh nodes to arbitrary points inside the hull.
pub fn projector_2d(mesh: &Mesh2D, points: &[[f64; 2]]) -> Result<Projector> {
    let scale = mesh
        .nodes()
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |m, &v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut rows = Vec::with_capacity(points.len());
    for &p in points {
        let mut found = None;
        for t in 0..mesh.triangles().len() {
            if let Some(l) = barycentric(mesh, t, p, tol) {
                found = Some((t, l));
                break;
            }
        }
        let (t, l) = found.ok_or_else(|| {
            EmberError::Geometry(format!(
                "query point ({}, {}) lies outside the mesh hull",
                p[0], p[1]
            ))
        })?;
        let [a, b, c] = mesh.triangles()[t];
        let sum = l[0].max(0.0) + l[1].max(0.0) + l[2].max(0.0);
        let mut row: Vec<(usize, f64)> = [a, b, c]
            .iter()
            .zip(l.iter())
            .filter(|&(_, &w)| w.max(0.0) > 0.0)
            .map(|(&j, &w)| (j, w.max(0.0) / sum))
            .collect();
        row.sort_by_key(|&(j, _)| j);
        rows.push(row);
    }
    Ok(Projector {
        rows,
        ncols: mesh.n_nodes(),
    })
}

/// Hat-basis weights at query values; values beyond the knot range clamp to
/// the boundary knot.
pub fn projector_1d(knots: &[f64], values: &[f64]) -> Result<Projector> {
    if knots.len() < 2 {
        return Err(EmberError::InvalidInput("need at least 2 knots".into()));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EmberError::InvalidInput(
            "knots must be strictly increasing".into(),
        ));
    }
    let n = knots.len();
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        if v <= knots[0] {
            rows.push(vec![(0, 1.0)]);
        } else if v >= knots[n - 1] {
            rows.push(vec![(n - 1, 1.0)]);
        } else {
            let i = knots.partition_point(|&k| k <= v) - 1;
            let h = knots[i + 1] - knots[i];
            let t = (v - knots[i]) / h;
            if t == 0.0 {
                rows.push(vec![(i, 1.0)]);
            } else {
                rows.push(vec![(i, 1.0 - t), (i + 1, t)]);
            }
        }
    }
    Ok(Projector { rows, ncols: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::mesh::{build_mesh_2d, rectangle, MeshOptions};

    fn mesh() -> Mesh2D {
        build_mesh_2d(
            &rectangle(0.0, 0.0, 2.0, 2.0),
            &MeshOptions {
                interior_edge: 0.5,
                exterior_edge: 1.0,
                extension: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn node_query_gives_unit_row() {
        let mesh = mesh();
        let node = mesh.nodes()[3];
        let proj = projector_2d(&mesh, &[node]).unwrap();
        let row = proj.row(0);
        let total: f64 = row.iter().map(|&(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let max = row.iter().map(|&(_, w)| w).fold(0.0f64, f64::max);
        assert!((max - 1.0).abs() < 1e-9, "row {row:?}");
    }

    #[test]
    fn centroid_query_gives_equal_thirds() {
        let mesh = mesh();
        let [a, b, c] = mesh.triangles()[0];
        let p = [
            (mesh.nodes()[a][0] + mesh.nodes()[b][0] + mesh.nodes()[c][0]) / 3.0,
            (mesh.nodes()[a][1] + mesh.nodes()[b][1] + mesh.nodes()[c][1]) / 3.0,
        ];
        let proj = projector_2d(&mesh, &[p]).unwrap();
        let row = proj.row(0);
        assert_eq!(row.len(), 3);
        for &(_, w) in row {
            assert!((w - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn outside_hull_is_an_error() {
        let mesh = mesh();
        assert!(matches!(
            projector_2d(&mesh, &[[100.0, 100.0]]),
            Err(EmberError::Geometry(_))
        ));
    }

    #[test]
    fn hat_weights_and_clamping() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let proj = projector_1d(&knots, &[0.5, -5.0, 7.0, 2.0]).unwrap();
        assert_eq!(proj.row(0), &[(0, 0.5), (1, 0.5)]);
        assert_eq!(proj.row(1), &[(0, 1.0)]);
        assert_eq!(proj.row(2), &[(3, 1.0)]);
        assert_eq!(proj.row(3), &[(2, 1.0)]);
        // rows always sum to 1
        for i in 0..proj.n_rows() {
            let s: f64 = proj.row(i).iter().map(|&(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
