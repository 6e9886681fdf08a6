use std::f64::consts::PI;
use std::sync::Arc;

use helipatch_core::helix::{
    binormal_residual, cross, curvature_torsion, curvature_torsion_exact, filament_speed, helical_map, helix_point,
    lift_patch, norm3, rotation_consistency, speed_along, zeta,
};
use helipatch_core::mesh::build_disc_mesh;
use helipatch_core::patch::PatchProblem;
use helipatch_core::HelixParams;

fn params(k: f64, d: f64, r: f64) -> HelixParams {
    HelixParams::new(k, d, r, 2.0 * r.max(0.5), 0.1).unwrap()
}

fn grid() -> Vec<f64> {
    (0..6).map(|i| 0.9 * i as f64 - 2.0).collect()
}

#[test]
fn helix_satisfies_the_binormal_law() {
    let p = params(1.0, 1.0, 1.0);
    let r = binormal_residual(&p, &grid(), &grid(), 1e-4);
    assert!(r < 1e-6, "{r}");
}

#[test]
fn binormal_residual_is_second_order_in_the_step() {
    let p = params(1.0, 1.0, 1.0);
    let coarse = binormal_residual(&p, &grid(), &grid(), 4e-2);
    let fine = binormal_residual(&p, &grid(), &grid(), 2e-2);
    let order = (coarse / fine).log2();
    assert!((order - 2.0).abs() < 0.1, "{order}");
}

#[test]
fn parametrisation_is_by_arclength() {
    let p = params(1.0, 1.0, 0.5);
    for s in [-1.0, 0.0, 0.37, 4.0] {
        assert!((speed_along(&p, s, 1e-5) - 1.0).abs() < 1e-8);
    }
    assert_eq!(helix_point(&p, 0.0, 0.0), [0.5, 0.0, 0.0]);
}

#[test]
fn rotation_rates_agree() {
    let (a_prime, a) = rotation_consistency(&params(1.0, 1.0, 0.5));
    assert!((a_prime - a).abs() <= 1e-14);
    assert!((a - 1.0 / (4.0 * PI * 1.25f64.sqrt())).abs() < 1e-15);
    assert!((a - 0.071176).abs() < 1e-6);

    let (a_prime, a) = rotation_consistency(&params(3.0, 2.0, 0.7));
    assert!((a_prime - a).abs() <= 1e-14);

    let (single, _) = rotation_consistency(&params(1.3, 0.8, 0.4));
    let (double, _) = rotation_consistency(&params(1.3, 1.6, 0.4));
    assert!((double - 2.0 * single).abs() < 1e-15);
}

#[test]
fn curvature_and_torsion_from_differences() {
    for (k, r) in [(1.0, 1.0), (1.0, 0.5), (0.6, 0.3)] {
        let p = params(k, 1.0, r);
        let (kappa, tau) = curvature_torsion(&p, 0.7, 1e-4, 5e-3);
        let (ke, te) = curvature_torsion_exact(&p);
        assert!((kappa - r / (k * k + r * r)).abs() < 1e-6);
        assert!((kappa - ke).abs() < 1e-6);
        // a clockwise-rising helix carries negative signed torsion
        assert!(tau < 0.0);
        assert!((tau.abs() - te).abs() < 1e-6, "{tau} vs {te}");
    }
}

#[test]
fn circle_limit_recovers_the_ring_speed() {
    let r = 0.5;
    let p = HelixParams::new(1e-6, 1.0, r, 1.0, 0.1).unwrap();
    let speed = filament_speed(&p, 1e-4);
    let ring = 1.0 / (4.0 * PI * r);
    assert!((speed - ring).abs() < 1e-6 * ring, "{speed} vs {ring}");
}

#[test]
fn helical_map_preserves_zeta() {
    let k = 0.9;
    let x = [0.2, -0.4, 1.1];
    let rho = 0.8;
    let y = helical_map(x, rho, k);
    // the screw motion rotates ζ with the point
    let (s, c) = rho.sin_cos();
    let zx = zeta(x, k);
    let rotated = [zx[0] * c + zx[1] * s, -zx[0] * s + zx[1] * c, zx[2]];
    let zy = zeta(y, k);
    for i in 0..3 {
        assert!((rotated[i] - zy[i]).abs() < 1e-15);
    }
}

#[test]
fn lifted_tube_properties() {
    let p = HelixParams::new(1.0, 1.0, 0.5, 1.0, 0.2).unwrap();
    let prob = PatchProblem::new(p, Arc::new(build_disc_mesh(1.0, 1.0 / 24.0).unwrap())).unwrap();
    let omega = prob.seed_disc([0.5, 0.0]).unwrap();
    let tube = lift_patch(prob.mesh(), &omega, &p, 16, 1.0).unwrap();
    let active = omega.iter().filter(|&&w| w > 0.0).count();
    assert_eq!(tube.samples.len(), 16 * active);
    assert_eq!(tube.rho.len(), 16);
    for t in &tube.samples {
        let z = zeta(t.x, p.k());
        assert!(norm3(cross(t.v, z)) <= 1e-12 * norm3(t.v) * norm3(z));
    }
    for c in &tube.circulation {
        assert!((c - p.d()).abs() < 1e-12);
    }
    // the same cross-section at every level
    let per_level: Vec<&[_]> = tube.samples.chunks(active).collect();
    for level in &per_level[1..] {
        for (a, b) in per_level[0].iter().zip(level.iter()) {
            assert_eq!(a.w, b.w);
        }
    }
    // patch centred on the helix: mass sits within a patch diameter
    let diameter = helipatch_core::patch::diagnostics(prob.mesh(), &omega).unwrap().diameter;
    for d in &tube.mean_distance {
        assert!(*d < 2.0 * diameter, "{d} vs {diameter}");
    }
}

#[test]
fn empty_patch_cannot_be_lifted() {
    let p = HelixParams::new(1.0, 1.0, 0.5, 1.0, 0.2).unwrap();
    let mesh = build_disc_mesh(1.0, 0.125).unwrap();
    let err = lift_patch(&mesh, &vec![0.0; mesh.n_cells()], &p, 4, 1.0).unwrap_err();
    assert_eq!(err.kind(), "EmptySupport");
}
