//! Gauss–Markov random fields: meshes, SPDE/Matérn and random-walk
//! precisions, projection and constrained sampling.

pub(crate) mod fem;
mod factor;
mod matern;
mod mesh;
mod precision;
mod projector;

pub use factor::{sample_factor, sample_gmrf, PrecisionFactor};
pub(crate) use precision::spde_from_fem as spde_from_fem_ops;
pub use matern::matern_correlation;
pub use mesh::{build_mesh_2d, read_mesh, rectangle, write_mesh, Mesh2D, MeshOptions};
pub use precision::{
    iid_precision, rw1_precision, spde_precision_1d, spde_precision_2d, MaternHyper,
    SparsePrecision,
};
pub use projector::{projector_1d, projector_2d, Projector};

#[cfg(test)]
mod tests {
    use super::*;

    /// Empirical correlations of SPDE samples must match the Matérn family.
    #[test]
    fn spde_samples_follow_matern_correlation() {
        let range = 2.0;
        let mesh = build_mesh_2d(
            &rectangle(0.0, 0.0, 10.0, 10.0),
            &MeshOptions {
                interior_edge: 0.4,
                exterior_edge: 1.0,
                extension: 2.0 * range,
            },
        )
        .unwrap();
        let hyper = MaternHyper::new(range, 1.3).unwrap();
        let q = spde_precision_2d(&mesh, &hyper).unwrap();
        let samples = sample_gmrf(&q, 10_000, 21).unwrap();

        // reference node near the domain centre
        let centre = [5.0, 5.0];
        let dist = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
        let far_from_boundary = |p: [f64; 2]| {
            p[0] > 2.0 && p[0] < 8.0 && p[1] > 2.0 && p[1] < 8.0
        };
        let node_near = |target: [f64; 2]| {
            (0..mesh.n_nodes())
                .filter(|&i| far_from_boundary(mesh.nodes()[i]))
                .min_by(|&a, &b| {
                    dist(mesh.nodes()[a], target)
                        .partial_cmp(&dist(mesh.nodes()[b], target))
                        .unwrap()
                })
                .unwrap()
        };
        let i0 = node_near(centre);

        // marginal variance within 15% of σ²
        let n = samples.len() as f64;
        let var0: f64 = samples.iter().map(|s| s[i0] * s[i0]).sum::<f64>() / n;
        let sigma2 = hyper.sd * hyper.sd;
        assert!(
            (var0 / sigma2 - 1.0).abs() < 0.15,
            "variance ratio {}",
            var0 / sigma2
        );

        for target_d in [range / 2.0, range] {
            let j = node_near([centre[0] + target_d, centre[1]]);
            let d = dist(mesh.nodes()[i0], mesh.nodes()[j]);
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            for s in &samples {
                sxy += s[i0] * s[j];
                sxx += s[i0] * s[i0];
                syy += s[j] * s[j];
            }
            let emp = sxy / (sxx * syy).sqrt();
            let want = matern_correlation(d, &hyper);
            assert!(
                (emp - want).abs() < 0.05,
                "d={d}: empirical {emp} vs matern {want}"
            );
        }
    }
}
