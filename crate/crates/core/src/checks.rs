//! Closed-form reference problems and the quick invariant suite behind
//! `helipatch verify`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fem::{assemble, ScalarField};
use crate::green::{sample_pairs, GreenTable};
use crate::helical_coeff::{norm2, HelicalField, HelixParams, IdentityField, Point};
use crate::helix::{binormal_residual, curvature_torsion, curvature_torsion_exact, rotation_consistency};
use crate::mesh::build_disc_mesh;
use crate::patch::bathtub;
use crate::stats::observed_orders;

/// One named pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value < threshold`.
    pub fn below(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, threshold, pass: value < threshold }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, threshold, pass: value >= threshold }
    }
}

/// Max nodal error of `−Δu = 1` on the unit disc against `(1 − |x|²)/4`.
pub fn poisson_error(h: f64) -> Result<f64> {
    let mesh = Arc::new(build_disc_mesh(1.0, h)?);
    let sys = assemble(mesh.clone(), &IdentityField)?;
    let u = sys.solve_dirichlet(&ScalarField::from_fn_nodal(&mesh, |_| 1.0))?;
    Ok(mesh
        .nodes()
        .iter()
        .zip(&u.values)
        .map(|(p, v)| (v - (1.0 - norm2(*p)) / 4.0).abs())
        .fold(0.0, f64::max))
}

/// Relative lumped-L² error over interior nodes of the discrete
/// `−div(K_H ∇|x|²)` against `−4k⁴/(k² + |x|²)²` on the disc of radius `r`.
pub fn operator_identity_error(k: f64, r: f64, h: f64) -> Result<f64> {
    let mesh = Arc::new(build_disc_mesh(r, h)?);
    let sys = assemble(mesh.clone(), &HelicalField::new(k, r)?)?;
    let lu = sys.apply_operator(&ScalarField::from_fn_nodal(&mesh, norm2))?;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, p) in mesh.nodes().iter().enumerate() {
        if mesh.boundary_mask()[i] {
            continue;
        }
        let exact = -4.0 * k.powi(4) / (k * k + norm2(*p)).powi(2);
        let m = mesh.lumped_mass()[i];
        num += m * (lu.values[i] - exact).powi(2);
        den += m * exact * exact;
    }
    Ok((num / den).sqrt())
}

/// Regular part of the Dirichlet Green's function of `−Δ` on the unit disc,
/// `(1/2π) ln(|y| |x − y*|)` with `y* = y/|y|²`, tending to `0` as `y → 0`.
pub fn image_regular_part(x: Point, y: Point) -> f64 {
    let ry2 = norm2(y);
    if ry2 == 0.0 {
        return 0.0;
    }
    let ys = [y[0] / ry2, y[1] / ry2];
    (ry2.sqrt() * norm2([x[0] - ys[0], x[1] - ys[1]]).sqrt()).ln() / (2.0 * PI)
}

/// Largest `|S_h − S_image|` over `pairs` seeded node pairs, `K = Id`.
pub fn green_image_error(h: f64, pairs: usize, seed: u64) -> Result<f64> {
    let mesh = Arc::new(build_disc_mesh(1.0, h)?);
    let sys = Arc::new(assemble(mesh.clone(), &IdentityField)?);
    let table = GreenTable::new(sys, Arc::new(IdentityField));
    let mut worst = 0.0f64;
    for (a, b) in sample_pairs(&mesh, pairs, seed) {
        let s = table.sample(a, b)?;
        worst = worst.max((s.s - image_regular_part(s.x, s.y)).abs());
    }
    Ok(worst)
}

/// Largest `|S(x, y) − S(y, x)|` over seeded pairs for `K_H`.
pub fn green_symmetry_defect(k: f64, h: f64, pairs: usize, seed: u64) -> Result<f64> {
    let mesh = Arc::new(build_disc_mesh(1.0, h)?);
    let field = Arc::new(HelicalField::new(k, 1.0)?);
    let sys = Arc::new(assemble(mesh.clone(), &*field)?);
    let table = GreenTable::new(sys, field);
    let mut worst = 0.0f64;
    for (a, b) in sample_pairs(&mesh, pairs, seed) {
        worst = worst.max((table.regular_part(a, b)? - table.regular_part(b, a)?).abs());
    }
    Ok(worst)
}

/// Fast checks of every module at coarse resolution.
pub fn quick_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let hs = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let errs = hs.iter().map(|&h| poisson_error(h)).collect::<Result<Vec<_>>>()?;
    out.push(Check::below("poisson max error at h=1/32", errs[2], 5e-3));
    let order = observed_orders(&hs, &errs).last().copied().unwrap_or(0.0);
    // the nodal max error behaves like h²|ln h| on this mesh
    out.push(Check::at_least("poisson observed order", order, 1.5));

    let e1 = operator_identity_error(1.0, 1.0, 1.0 / 16.0)?;
    let e2 = operator_identity_error(1.0, 1.0, 1.0 / 32.0)?;
    out.push(Check::below("operator identity error at h=1/32", e2, 2e-2));
    out.push(Check::below("operator identity refinement ratio", e2 / e1, 1.0));

    out.push(Check::below("green image error at h=1/32", green_image_error(1.0 / 32.0, 10, 1)?, 5e-3));
    out.push(Check::below("green symmetry defect at h=1/32", green_symmetry_defect(1.0, 1.0 / 32.0, 10, 1)?, 5e-3));

    let (omega, _) = bathtub(&[3.0, 1.0, 2.0, 0.0], &[1.0; 4], 1.0, 2.5)?;
    let toy = (omega[0] - 1.0).abs() + (omega[2] - 1.0).abs() + (omega[1] - 0.5).abs() + omega[3].abs();
    out.push(Check::below("bathtub toy problem", toy, 1e-15));

    let p = HelixParams::new(1.0, 1.0, 1.0, 2.0, 0.1)?;
    let grid: Vec<f64> = (0..5).map(|i| 0.7 * i as f64 - 1.4).collect();
    out.push(Check::below("binormal residual", binormal_residual(&p, &grid, &grid, 1e-4), 1e-6));
    let (a_prime, a) = rotation_consistency(&p);
    out.push(Check::below("rotation consistency", (a_prime - a).abs(), 1e-14));
    let (kappa, tors) = curvature_torsion(&p, 0.3, 1e-4, 5e-3);
    let (ke, te) = curvature_torsion_exact(&p);
    out.push(Check::below("helix curvature and torsion", (kappa - ke).abs().max((tors.abs() - te).abs()), 1e-6));
    Ok(out)
}
