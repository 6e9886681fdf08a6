//! Concentric-ring triangulation of the disc `B_R(0)`.
//!
//! Ring `j` (`0 ≤ j ≤ N`) sits at radius `jR/N` and carries `6j` equally
//! spaced nodes, which is the hexagonal lattice of the six-sector
//! subdivision mapped onto circles. Consecutive rings are stitched sector by
//! sector, giving `6N²` triangles and `1 + 3N(N+1)` nodes. The outer ring lies
//! exactly on `|x| = R`, so the mesh covers the inscribed `6N`-gon.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::helical_coeff::{dist, Point};

#[derive(Clone, Debug)]
pub struct DiscMesh {
    radius: f64,
    rings: usize,
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    cell_area: Vec<f64>,
    centroids: Vec<Point>,
    lumped: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    opposite: Vec<[usize; 3]>,
    h: f64,
}

fn ring_offset(j: usize) -> usize {
    if j == 0 {
        0
    } else {
        1 + 3 * j * (j - 1)
    }
}

fn ring_node(j: usize, i: usize) -> usize {
    if j == 0 {
        0
    } else {
        ring_offset(j) + i % (6 * j)
    }
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Triangulates `B_R(0)` with `ceil(R / h_target)` rings.
pub fn build_disc_mesh(radius: f64, h_target: f64) -> Result<DiscMesh> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidResolution(format!("radius must be positive, got {radius}")));
    }
    if !(h_target > 0.0 && h_target < radius / 4.0) {
        return Err(Error::InvalidResolution(format!(
            "h_target must satisfy 0 < h < R/4 = {}, got {h_target}",
            radius / 4.0
        )));
    }
    let rings = (radius / h_target - 1e-9).ceil() as usize;
    Ok(DiscMesh::with_rings(radius, rings.max(4)))
}

impl DiscMesh {
    /// Mesh with an explicit ring count.
    pub fn with_rings(radius: f64, rings: usize) -> DiscMesh {
        let n = rings;
        let mut nodes = Vec::with_capacity(1 + 3 * n * (n + 1));
        let mut boundary = Vec::with_capacity(nodes.capacity());
        nodes.push([0.0, 0.0]);
        boundary.push(false);
        for j in 1..=n {
            let r = if j == n { radius } else { radius * j as f64 / n as f64 };
            let m = 6 * j;
            for i in 0..m {
                let t = 2.0 * PI * i as f64 / m as f64;
                nodes.push([r * t.cos(), r * t.sin()]);
                boundary.push(j == n);
            }
        }

        let mut triangles = Vec::with_capacity(6 * n * n);
        for j in 1..=n {
            for s in 0..6 {
                for p in 0..j {
                    let a = ring_node(j, s * j + p);
                    let b = ring_node(j, s * j + p + 1);
                    let c = ring_node(j - 1, s * (j - 1) + p);
                    triangles.push([a, b, c]);
                }
                for p in 0..j.saturating_sub(1) {
                    let a = ring_node(j - 1, s * (j - 1) + p);
                    let b = ring_node(j, s * j + p + 1);
                    let c = ring_node(j - 1, s * (j - 1) + p + 1);
                    triangles.push([a, b, c]);
                }
            }
        }
        for t in triangles.iter_mut() {
            if signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }

        let cell_area: Vec<f64> = triangles
            .iter()
            .map(|t| signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]))
            .collect();
        let centroids: Vec<Point> = triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
                [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
            })
            .collect();
        let mut lumped = vec![0.0; nodes.len()];
        for (t, &a) in triangles.iter().zip(&cell_area) {
            for &v in t {
                lumped[v] += a / 3.0;
            }
        }

        let mut h: f64 = 0.0;
        let mut edge_cells: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (c, t) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (u, v) = (t[e], t[(e + 1) % 3]);
                h = h.max(dist(nodes[u], nodes[v]));
                edge_cells.entry((u.min(v), u.max(v))).or_default().push(c);
            }
        }
        let mut neighbors = vec![Vec::new(); triangles.len()];
        for cells in edge_cells.values() {
            if let [a, b] = cells[..] {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        let mut opposite = vec![[usize::MAX; 3]; triangles.len()];
        for (c, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let (u, v) = (t[(i + 1) % 3], t[(i + 2) % 3]);
                if let Some(&other) = edge_cells[&(u.min(v), u.max(v))].iter().find(|&&o| o != c) {
                    opposite[c][i] = other;
                }
            }
        }
        for nb in neighbors.iter_mut() {
            nb.sort_unstable();
        }

        DiscMesh { radius, rings: n, nodes, triangles, boundary, cell_area, centroids, lumped, neighbors, opposite, h }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn cell_area(&self) -> &[f64] {
        &self.cell_area
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    /// Row sums of the P1 mass matrix, `Σ_{T∋i} |T|/3`.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    /// Cells sharing an edge with cell `c`.
    pub fn neighbors(&self, c: usize) -> &[usize] {
        &self.neighbors[c]
    }

    /// Cell across the edge opposite local vertex `i` of cell `c`, `None` on
    /// the boundary.
    pub fn opposite(&self, c: usize, i: usize) -> Option<usize> {
        let o = self.opposite[c][i];
        (o != usize::MAX).then_some(o)
    }

    /// Longest edge.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.triangles.len()
    }

    pub fn total_area(&self) -> f64 {
        self.cell_area.iter().sum()
    }

    pub fn cell_vertices(&self, c: usize) -> [Point; 3] {
        let t = self.triangles[c];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    /// Longest edge of cell `c`.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let [a, b, cc] = self.cell_vertices(c);
        dist(a, b).max(dist(b, cc)).max(dist(cc, a))
    }

    /// Index of the node closest to `x` (lowest index on ties).
    pub fn nearest_node(&self, x: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &p) in self.nodes.iter().enumerate() {
            let d = dist(p, x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Writes `id,x,y,boundary`.
    pub fn write_nodes_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "id,x,y,boundary")?;
        for (i, (p, b)) in self.nodes.iter().zip(&self.boundary).enumerate() {
            writeln!(w, "{i},{},{},{}", p[0], p[1], u8::from(*b))?;
        }
        Ok(())
    }

    /// Writes `id,n0,n1,n2,area`.
    pub fn write_tris_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "id,n0,n1,n2,area")?;
        for (i, (t, a)) in self.triangles.iter().zip(&self.cell_area).enumerate() {
            writeln!(w, "{i},{},{},{},{a}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
pub fn barycentric(p: Point, [a, b, c]: [Point; 3]) -> [f64; 3] {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Bucket grid over the bounding square of the disc for point location.
#[derive(Clone, Debug)]
pub struct PointLocator {
    origin: f64,
    cell: f64,
    nb: usize,
    buckets: Vec<Vec<u32>>,
}

impl PointLocator {
    pub fn new(mesh: &DiscMesh) -> PointLocator {
        let r = mesh.radius() * (1.0 + 1e-9);
        let nb = ((mesh.n_cells() as f64).sqrt() / 1.5).ceil().max(1.0) as usize;
        let cell = 2.0 * r / nb as f64;
        let mut buckets = vec![Vec::new(); nb * nb];
        let clampi = |v: f64| -> usize { (((v + r) / cell).floor().max(0.0) as usize).min(nb - 1) };
        for (ti, tri) in mesh.triangles().iter().enumerate() {
            let ps = tri.map(|v| mesh.nodes()[v]);
            let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in ps {
                x0 = x0.min(p[0]);
                x1 = x1.max(p[0]);
                y0 = y0.min(p[1]);
                y1 = y1.max(p[1]);
            }
            for by in clampi(y0)..=clampi(y1) {
                for bx in clampi(x0)..=clampi(x1) {
                    buckets[by * nb + bx].push(ti as u32);
                }
            }
        }
        PointLocator { origin: r, cell, nb, buckets }
    }

    fn bucket_of(&self, v: f64) -> isize {
        ((v + self.origin) / self.cell).floor() as isize
    }

    /// Cell containing `p` and its barycentric coordinates.
    pub fn locate(&self, mesh: &DiscMesh, p: Point) -> Option<(usize, [f64; 3])> {
        let (bx, by) = (self.bucket_of(p[0]), self.bucket_of(p[1]));
        let nb = self.nb as isize;
        if bx < 0 || by < 0 || bx >= nb || by >= nb {
            return None;
        }
        for &t in &self.buckets[(by * nb + bx) as usize] {
            let l = barycentric(p, mesh.cell_vertices(t as usize));
            if l.iter().all(|&v| v >= -1e-12) {
                return Some((t as usize, l));
            }
        }
        None
    }

    /// Like [`locate`](Self::locate) but snaps points outside the mesh
    /// (e.g. between a boundary chord and the circle) to the nearest cell,
    /// returning clamped and renormalised barycentric coordinates.
    pub fn locate_clamped(&self, mesh: &DiscMesh, p: Point) -> (usize, [f64; 3]) {
        if let Some(hit) = self.locate(mesh, p) {
            return hit;
        }
        let rr = mesh.radius();
        let nrm = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let q = if nrm > rr { [p[0] * rr / nrm, p[1] * rr / nrm] } else { p };
        let (bx, by) = (self.bucket_of(q[0]), self.bucket_of(q[1]));
        let nb = self.nb as isize;
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (bx + dx, by + dy);
                if x < 0 || y < 0 || x >= nb || y >= nb {
                    continue;
                }
                for &t in &self.buckets[(y * nb + x) as usize] {
                    let l = barycentric(q, mesh.cell_vertices(t as usize));
                    let worst = l.iter().cloned().fold(f64::INFINITY, f64::min);
                    if best.is_none_or(|b| worst > b.0) {
                        best = Some((worst, t as usize, l));
                    }
                }
            }
        }
        let (_, t, l) = best.expect("point location outside the mesh neighbourhood");
        let mut c = l.map(|v| v.max(0.0));
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|v| *v /= s);
        (t, c)
    }

    /// Cells whose bounding box may intersect the disc `B_radius(center)`,
    /// ascending and without duplicates.
    pub fn cells_near(&self, center: Point, radius: f64) -> Vec<usize> {
        let nb = self.nb as isize;
        let lo = |v: f64| self.bucket_of(v - radius).clamp(0, nb - 1);
        let hi = |v: f64| self.bucket_of(v + radius).clamp(0, nb - 1);
        let mut out = Vec::new();
        for y in lo(center[1])..=hi(center[1]) {
            for x in lo(center[0])..=hi(center[0]) {
                out.extend(self.buckets[(y * nb + x) as usize].iter().map(|&t| t as usize));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_deficit_is_small() {
        let m = build_disc_mesh(1.0, 0.05).unwrap();
        let a = m.total_area();
        assert!(a <= PI && PI - a < 0.02, "area {a}");
        let polygon = 0.5 * (6 * m.rings()) as f64 * (2.0 * PI / (6 * m.rings()) as f64).sin();
        assert!((a - polygon).abs() < 1e-12);
    }

    #[test]
    fn boundary_nodes_on_circle() {
        for &r in &[1.0, 2.5] {
            let m = build_disc_mesh(r, r / 13.0).unwrap();
            for (p, &b) in m.nodes().iter().zip(m.boundary_mask()) {
                let n = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if b {
                    assert!((n - r).abs() < 1e-12 * r);
                } else {
                    assert!(n < r * (1.0 - 1e-6));
                }
            }
        }
    }

    #[test]
    fn resolution_and_quality() {
        let m = build_disc_mesh(1.0, 1.0 / 20.0).unwrap();
        assert!(m.h() <= 1.5 / 20.0);
        let min_area = m.cell_area().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_area > 1e-3 * m.h() * m.h());
        assert_eq!(m.n_cells(), 6 * 20 * 20);
        assert_eq!(m.n_nodes(), 1 + 3 * 20 * 21);
    }

    #[test]
    fn halving_h_quadruples_nodes() {
        let a = build_disc_mesh(1.0, 0.1).unwrap().n_nodes() as f64;
        let b = build_disc_mesh(1.0, 0.05).unwrap().n_nodes() as f64;
        let ratio = b / a;
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }

    #[test]
    fn invalid_resolution_rejected() {
        assert!(matches!(build_disc_mesh(1.0, 0.3), Err(Error::InvalidResolution(_))));
        assert!(matches!(build_disc_mesh(1.0, 0.0), Err(Error::InvalidResolution(_))));
        assert!(matches!(build_disc_mesh(1.0, -0.1), Err(Error::InvalidResolution(_))));
    }

    #[test]
    fn deterministic_construction() {
        let a = build_disc_mesh(1.0, 0.07).unwrap();
        let b = build_disc_mesh(1.0, 0.07).unwrap();
        assert_eq!(a.nodes(), b.nodes());
        assert_eq!(a.triangles(), b.triangles());
    }

    #[test]
    fn every_interior_edge_has_two_cells() {
        let m = build_disc_mesh(1.0, 0.1).unwrap();
        let boundary_cells = (0..m.n_cells()).filter(|&c| m.neighbors(c).len() < 3).count();
        // one cell per boundary chord
        assert_eq!(boundary_cells, 6 * m.rings());
    }

    #[test]
    fn locator_finds_centroids() {
        let m = build_disc_mesh(1.0, 0.06).unwrap();
        let loc = PointLocator::new(&m);
        for c in (0..m.n_cells()).step_by(7) {
            let (t, l) = loc.locate(&m, m.centroids()[c]).unwrap();
            assert_eq!(t, c);
            assert!(l.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-9));
        }
        // outside the inscribed polygon but inside the circle
        let (t, l) = loc.locate_clamped(&m, [0.99999 * (PI / 200.0).cos(), 0.99999 * (PI / 200.0).sin()]);
        assert!(t < m.n_cells());
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export_shapes() {
        let m = build_disc_mesh(1.0, 0.2).unwrap_or_else(|_| DiscMesh::with_rings(1.0, 4));
        let mut nodes = Vec::new();
        let mut tris = Vec::new();
        m.write_nodes_csv(&mut nodes).unwrap();
        m.write_tris_csv(&mut tris).unwrap();
        let nodes = String::from_utf8(nodes).unwrap();
        let tris = String::from_utf8(tris).unwrap();
        assert_eq!(nodes.lines().count(), m.n_nodes() + 1);
        assert_eq!(tris.lines().count(), m.n_cells() + 1);
        assert!(nodes.starts_with("id,x,y,boundary\n0,0,0,0\n"));
    }
}
