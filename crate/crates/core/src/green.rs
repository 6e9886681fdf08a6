//! Discrete Green's functions and the split `G_K = G₀ + S_K` into the
//! anisotropic logarithmic leading part and a bounded regular part.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FieldKind, ScalarField, StiffnessSystem};
use crate::helical_coeff::{dist, factor_t, CoefficientField, Point};
use crate::mesh::DiscMesh;

/// Points closer than this are treated as coincident by [`leading_part`].
pub const COINCIDENCE_TOL: f64 = 1e-14;

/// Regular-part evaluations need `|x − y| ≥ EXCLUSION_FACTOR · h`.
pub const EXCLUSION_FACTOR: f64 = 3.0;

/// `Γ(z) = −ln|z| / 2π`.
pub fn fundamental(z: Point) -> f64 {
    -(z[0].hypot(z[1])).ln() / (2.0 * PI)
}

/// `G₀(x, y) = ½((det K(x))^{-1/2} + (det K(y))^{-1/2}) · Γ(½(T_x + T_y)(x − y))`.
pub fn leading_part(x: Point, y: Point, field: &dyn CoefficientField) -> Result<f64> {
    let r = dist(x, y);
    if r < COINCIDENCE_TOL {
        return Err(Error::CoincidentPoints(r));
    }
    let (kx, ky) = (field.eval(x), field.eval(y));
    let t = factor_t(&kx)?.add(&factor_t(&ky)?).scale(0.5);
    let amp = 0.5 * (1.0 / kx.det().sqrt() + 1.0 / ky.det().sqrt());
    Ok(amp * fundamental(t.apply([x[0] - y[0], x[1] - y[1]])))
}

/// Discrete `G_K(·, y)` for the interior node `y`: the solution with a unit
/// load on the hat function of `y`, so that `Σ_i G_i b_i = u_f(y)` for any
/// load vector `b` of a right-hand side `f`.
pub fn greens_column(sys: &StiffnessSystem, y: usize) -> Result<ScalarField> {
    let mesh = sys.mesh();
    if y >= mesh.n_nodes() {
        return Err(Error::InvalidParameter(format!("node {y} out of range")));
    }
    if mesh.boundary_mask()[y] {
        return Err(Error::BoundarySource(y));
    }
    let mut load = vec![0.0; mesh.n_nodes()];
    load[y] = 1.0;
    let (u, _) = sys.solve_load(&load, None)?;
    Ok(ScalarField { kind: FieldKind::Nodal, values: u })
}

/// One evaluation of the decomposition; `g == g0 + s` as stored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenSample {
    pub x: Point,
    pub y: Point,
    pub g0: f64,
    pub s: f64,
    pub g: f64,
}

/// Green's columns of one assembled system, computed on demand and cached
/// by source node.
pub struct GreenTable {
    sys: Arc<StiffnessSystem>,
    field: Arc<dyn CoefficientField>,
    cache: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl GreenTable {
    pub fn new(sys: Arc<StiffnessSystem>, field: Arc<dyn CoefficientField>) -> GreenTable {
        GreenTable { sys, field, cache: Mutex::new(HashMap::new()) }
    }

    pub fn system(&self) -> &StiffnessSystem {
        &self.sys
    }

    pub fn field(&self) -> &dyn CoefficientField {
        &*self.field
    }

    /// Nodal column `G(·, y)`.
    pub fn column(&self, y: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(c) = self.cache.lock().expect("cache poisoned").get(&y) {
            return Ok(Arc::clone(c));
        }
        let col = Arc::new(greens_column(&self.sys, y)?.values);
        self.cache.lock().expect("cache poisoned").entry(y).or_insert_with(|| Arc::clone(&col));
        Ok(col)
    }

    /// Full decomposition at the node pair `(x, y)`.
    pub fn sample(&self, x: usize, y: usize) -> Result<GreenSample> {
        let mesh = self.sys.mesh();
        let (px, py) = (mesh.nodes()[x], mesh.nodes()[y]);
        let min = EXCLUSION_FACTOR * mesh.h();
        let r = dist(px, py);
        if r < min {
            return Err(Error::TooClose { distance: r, min });
        }
        let g_num = self.column(y)?[x];
        let g0 = leading_part(px, py, &*self.field)?;
        let s = g_num - g0;
        Ok(GreenSample { x: px, y: py, g0, s, g: g0 + s })
    }

    /// Numerical `S_K(x, y)` at interior nodes with `|x − y| ≥ 3h`.
    pub fn regular_part(&self, x: usize, y: usize) -> Result<f64> {
        Ok(self.sample(x, y)?.s)
    }
}

/// Free-function form of [`GreenTable::regular_part`] without caching.
pub fn regular_part(sys: &StiffnessSystem, field: &dyn CoefficientField, x: usize, y: usize) -> Result<f64> {
    let mesh = sys.mesh();
    let (px, py) = (mesh.nodes()[x], mesh.nodes()[y]);
    let min = EXCLUSION_FACTOR * mesh.h();
    if dist(px, py) < min {
        return Err(Error::TooClose { distance: dist(px, py), min });
    }
    let g = greens_column(sys, y)?.values[x];
    Ok(g - leading_part(px, py, field)?)
}

/// `n` distinct pairs of interior nodes at least `EXCLUSION_FACTOR · h`
/// apart, drawn with a seeded generator. Fewer are returned only if the
/// mesh cannot supply them.
pub fn sample_pairs(mesh: &DiscMesh, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let interior: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| !mesh.boundary_mask()[i]).collect();
    let min = EXCLUSION_FACTOR * mesh.h();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < 100 * n.max(1) && interior.len() > 1 {
        tries += 1;
        let a = interior[rng.gen_range(0..interior.len())];
        let b = interior[rng.gen_range(0..interior.len())];
        let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
        if dist(pa, pb) >= min && !out.contains(&(a, b)) && !out.contains(&(b, a)) {
            out.push((a, b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::helical_coeff::{HelicalField, IdentityField};
    use crate::mesh::build_disc_mesh;

    #[test]
    fn leading_part_identity_value() {
        let g = leading_part([0.5, 0.0], [0.0, 0.0], &IdentityField).unwrap();
        assert!((g - 2f64.ln() / (2.0 * PI)).abs() < 1e-15);
        assert!((g - 0.110318).abs() < 1e-6);
    }

    #[test]
    fn leading_part_symmetric_bitwise() {
        let f = HelicalField::new(1.0, 1.0).unwrap();
        let pairs = [([0.3, -0.2], [-0.5, 0.4]), ([0.9, 0.1], [0.1, 0.05]), ([0.0, 0.7], [0.2, -0.6])];
        for (x, y) in pairs {
            assert_eq!(leading_part(x, y, &f).unwrap(), leading_part(y, x, &f).unwrap());
        }
    }

    #[test]
    fn leading_part_near_origin_is_isotropic() {
        let f = HelicalField::new(1.0, 1.0).unwrap();
        let (x, y) = ([4e-4, 3e-4], [-5e-4, 2e-4]);
        let g = leading_part(x, y, &f).unwrap();
        let g_iso = fundamental([x[0] - y[0], x[1] - y[1]]);
        assert!(((g - g_iso) / g_iso).abs() < 1e-3);
    }

    #[test]
    fn coincident_points_rejected() {
        assert!(matches!(
            leading_part([0.1, 0.1], [0.1, 0.1], &IdentityField),
            Err(Error::CoincidentPoints(_))
        ));
    }

    #[test]
    fn column_rejects_boundary_and_vanishes_there() {
        let mesh = Arc::new(build_disc_mesh(1.0, 0.1).unwrap());
        let sys = assemble(mesh.clone(), &IdentityField).unwrap();
        let b = mesh.boundary_mask().iter().position(|&b| b).unwrap();
        assert!(matches!(greens_column(&sys, b), Err(Error::BoundarySource(_))));
        let col = greens_column(&sys, 0).unwrap();
        for (v, &bd) in col.values.iter().zip(mesh.boundary_mask()) {
            if bd {
                assert_eq!(*v, 0.0);
            } else {
                assert!(*v > 0.0);
            }
        }
    }

    #[test]
    fn too_close_pairs_rejected() {
        let mesh = Arc::new(build_disc_mesh(1.0, 0.1).unwrap());
        let sys = assemble(mesh, &IdentityField).unwrap();
        assert!(matches!(regular_part(&sys, &IdentityField, 0, 1), Err(Error::TooClose { .. })));
    }
}
