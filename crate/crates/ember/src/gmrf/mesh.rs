//! Triangulated 2D meshes for finite-element field representations.
//!
//! A mesh covers the study polygon plus an extension band; the band is
//! triangulated more coarsely so that the boundary conditions imposed on the
//! exterior boundary have negligible influence inside the study area.

use std::io::{Read, Write};

use delaunator::{triangulate, Point};
use serde::{Deserialize, Serialize};

use crate::error::{EmberError, Result};

#[derive(Debug, Clone, Copy)]
pub struct MeshOptions {
    /// Target edge length inside the study polygon.
    pub interior_edge: f64,
    /// Target edge length in the extension band.
    pub exterior_edge: f64,
    /// Width of the extension band around the polygon bounding box.
    pub extension: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh2D {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    interior: Vec<bool>,
}

impl Mesh2D {
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    /// Signed twice-area of a triangle (positive by construction).
    pub(crate) fn double_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
    }
}

fn polygon_signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1];
    }
    0.5 * s
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn polygon_is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            // skip adjacent edges, which share an endpoint
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

pub(crate) fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]], tol: f64) -> bool {
    let n = poly.len();
    // on-boundary counts as inside
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            continue;
        }
        let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
        if (0.0..=1.0).contains(&t) {
            let (px, py) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
            if (px * px + py * py).sqrt() <= tol {
                return true;
            }
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1])
            && p[0] < (pj[0] - pi[0]) * (p[1] - pi[1]) / (pj[1] - pi[1]) + pi[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn linspace(a: f64, b: f64, target_step: f64) -> Vec<f64> {
    let span = b - a;
    let n = ((span / target_step).round() as usize).max(1);
    (0..=n).map(|k| a + span * (k as f64) / (n as f64)).collect()
}

/// Build a graded triangulation of the polygon plus an extension band.
///
/// Lattice points at the interior spacing cover the polygon, points at the
/// exterior spacing cover the band, and the union is Delaunay-triangulated.
pub fn build_mesh_2d(boundary: &[[f64; 2]], opts: &MeshOptions) -> Result<Mesh2D> {
    if boundary.len() < 3 {
        return Err(EmberError::Geometry(
            "boundary polygon needs at least 3 vertices".into(),
        ));
    }
    if !(opts.interior_edge > 0.0) || !(opts.exterior_edge > 0.0) || !(opts.extension >= 0.0) {
        return Err(EmberError::InvalidInput(
            "edge lengths must be positive and the extension non-negative".into(),
        ));
    }
    let area = polygon_signed_area(boundary).abs();
    let scale = boundary
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1.0);
    if area < 1e-12 * scale * scale {
        return Err(EmberError::Geometry("boundary polygon is degenerate".into()));
    }
    if !polygon_is_simple(boundary) {
        return Err(EmberError::Geometry("boundary polygon self-intersects".into()));
    }

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in boundary {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }

    let est_interior = ((xmax - xmin) / opts.interior_edge + 2.0)
        * ((ymax - ymin) / opts.interior_edge + 2.0);
    let est_exterior = ((xmax - xmin + 2.0 * opts.extension) / opts.exterior_edge + 2.0)
        * ((ymax - ymin + 2.0 * opts.extension) / opts.exterior_edge + 2.0);
    if est_interior + est_exterior > 2e6 {
        return Err(EmberError::InvalidInput(format!(
            "edge constraints would generate ~{:.0} nodes; refusing",
            est_interior + est_exterior
        )));
    }

    let tol = 1e-9 * scale;
    let mut points: Vec<[f64; 2]> = Vec::new();

    // interior lattice over the polygon bounding box
    for &x in &linspace(xmin, xmax, opts.interior_edge) {
        for &y in &linspace(ymin, ymax, opts.interior_edge) {
            if point_in_polygon([x, y], boundary, tol) {
                points.push([x, y]);
            }
        }
    }
    // polygon vertices pin the boundary shape
    points.extend_from_slice(boundary);

    // extension band lattice
    if opts.extension > 0.0 {
        for &x in &linspace(xmin - opts.extension, xmax + opts.extension, opts.exterior_edge) {
            for &y in &linspace(ymin - opts.extension, ymax + opts.extension, opts.exterior_edge)
            {
                if !point_in_polygon([x, y], boundary, tol) {
                    points.push([x, y]);
                }
            }
        }
    }

    // deduplicate near-coincident points
    let min_sep = 0.25 * opts.interior_edge.min(opts.exterior_edge);
    let mut kept: Vec<[f64; 2]> = Vec::with_capacity(points.len());
    for p in points {
        if kept
            .iter()
            .all(|q| (q[0] - p[0]).hypot(q[1] - p[1]) >= min_sep)
        {
            kept.push(p);
        }
    }

    let dpoints: Vec<Point> = kept.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = triangulate(&dpoints);
    if tri.triangles.is_empty() {
        return Err(EmberError::Geometry(
            "triangulation failed (collinear point set)".into(),
        ));
    }

    let mut triangles = Vec::with_capacity(tri.triangles.len() / 3);
    for t in tri.triangles.chunks_exact(3) {
        let (a, b, c) = (t[0], t[1], t[2]);
        let (pa, pb, pc) = (kept[a], kept[b], kept[c]);
        let double_area =
            (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        if double_area.abs() < 1e-12 * scale * scale {
            continue;
        }
        // orient counter-clockwise
        if double_area > 0.0 {
            triangles.push([a, b, c]);
        } else {
            triangles.push([a, c, b]);
        }
    }

    let interior: Vec<bool> = kept
        .iter()
        .map(|&p| point_in_polygon(p, boundary, tol))
        .collect();

    let mesh = Mesh2D {
        nodes: kept,
        triangles,
        interior,
    };
    if !mesh_is_connected(&mesh) {
        return Err(EmberError::Geometry("mesh is not edge-connected".into()));
    }
    Ok(mesh)
}

fn mesh_is_connected(mesh: &Mesh2D) -> bool {
    let n = mesh.n_nodes();
    if n == 0 {
        return false;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for t in mesh.triangles() {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

// --- serialization -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    node_id: usize,
    x_km: f64,
    y_km: f64,
    interior: u8,
}

#[derive(Serialize, Deserialize)]
struct TriangleRecord {
    t_id: usize,
    n1: usize,
    n2: usize,
    n3: usize,
}

pub fn write_mesh<W1: Write, W2: Write>(mesh: &Mesh2D, nodes_out: W1, triangles_out: W2) -> Result<()> {
    let mut w = csv::Writer::from_writer(nodes_out);
    for (i, p) in mesh.nodes().iter().enumerate() {
        w.serialize(NodeRecord {
            node_id: i,
            x_km: p[0],
            y_km: p[1],
            interior: mesh.interior[i] as u8,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(triangles_out);
    for (i, t) in mesh.triangles().iter().enumerate() {
        w.serialize(TriangleRecord {
            t_id: i,
            n1: t[0],
            n2: t[1],
            n3: t[2],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mesh<R1: Read, R2: Read>(nodes_in: R1, triangles_in: R2) -> Result<Mesh2D> {
    let mut nodes = Vec::new();
    let mut interior = Vec::new();
    for rec in csv::Reader::from_reader(nodes_in).deserialize::<NodeRecord>() {
        let rec = rec?;
        if rec.node_id != nodes.len() {
            return Err(EmberError::InvalidInput(
                "node ids must be dense and ordered".into(),
            ));
        }
        nodes.push([rec.x_km, rec.y_km]);
        interior.push(rec.interior != 0);
    }
    let mut triangles = Vec::new();
    for rec in csv::Reader::from_reader(triangles_in).deserialize::<TriangleRecord>() {
        let rec = rec?;
        if rec.n1.max(rec.n2).max(rec.n3) >= nodes.len() {
            return Err(EmberError::InvalidInput("triangle references missing node".into()));
        }
        triangles.push([rec.n1, rec.n2, rec.n3]);
    }
    Ok(Mesh2D {
        nodes,
        triangles,
        interior,
    })
}

/// Rectangle helper for building study-area polygons from data extents.
pub fn rectangle(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Vec<[f64; 2]> {
    vec![
        [xmin, ymin],
        [xmax, ymin],
        [xmax, ymax],
        [xmin, ymax],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Vec<[f64; 2]> {
        rectangle(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn unit_square_mesh_covers_extension() {
        let mesh = build_mesh_2d(
            &unit_square(),
            &MeshOptions {
                interior_edge: 0.5,
                exterior_edge: 0.5,
                extension: 0.5,
            },
        )
        .unwrap();
        assert!(mesh.n_nodes() >= 9, "got {} nodes", mesh.n_nodes());
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in mesh.nodes() {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
        }
        assert!(xmin <= -0.5 + 1e-9 && xmax >= 1.5 - 1e-9);
        // interior nodes flagged
        let n_interior = (0..mesh.n_nodes()).filter(|&i| mesh.is_interior(i)).count();
        assert!(n_interior >= 9);
        for t in 0..mesh.triangles().len() {
            assert!(mesh.double_area(t) > 0.0);
        }
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        let collinear = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(
            build_mesh_2d(
                &collinear,
                &MeshOptions {
                    interior_edge: 0.5,
                    exterior_edge: 0.5,
                    extension: 0.5
                }
            ),
            Err(EmberError::Geometry(_))
        ));
    }

    #[test]
    fn self_intersecting_polygon_is_rejected() {
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            build_mesh_2d(
                &bowtie,
                &MeshOptions {
                    interior_edge: 0.25,
                    exterior_edge: 0.25,
                    extension: 0.0
                }
            ),
            Err(EmberError::Geometry(_))
        ));
    }

    #[test]
    fn refinement_increases_node_count() {
        let coarse = build_mesh_2d(
            &unit_square(),
            &MeshOptions {
                interior_edge: 0.5,
                exterior_edge: 0.5,
                extension: 0.5,
            },
        )
        .unwrap();
        let fine = build_mesh_2d(
            &unit_square(),
            &MeshOptions {
                interior_edge: 0.1,
                exterior_edge: 0.5,
                extension: 0.5,
            },
        )
        .unwrap();
        assert!(fine.n_nodes() > coarse.n_nodes());
    }

    #[test]
    fn mesh_round_trips_through_csv() {
        let mesh = build_mesh_2d(
            &unit_square(),
            &MeshOptions {
                interior_edge: 0.4,
                exterior_edge: 0.8,
                extension: 0.8,
            },
        )
        .unwrap();
        let (mut nodes, mut tris) = (Vec::new(), Vec::new());
        write_mesh(&mesh, &mut nodes, &mut tris).unwrap();
        let back = read_mesh(nodes.as_slice(), tris.as_slice()).unwrap();
        assert_eq!(mesh.nodes(), back.nodes());
        assert_eq!(mesh.triangles(), back.triangles());
    }
}
