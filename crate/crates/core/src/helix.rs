//! Helix of the binormal curvature flow and the helical lift of a 2D
//! vorticity to a 3D tube.
//!
//! The curve is
//! `γ(s, τ) = (r* cos θ, r* sin θ, (ks − b₁τ)/L)` with `θ = (−s − a₁τ)/L`
//! and `L = √(k² + r*²)`, parametrised by arclength `s`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::helical_coeff::HelixParams;
use crate::mesh::DiscMesh;

pub type Point3 = [f64; 3];

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: Point3) -> f64 {
    dot3(a, a).sqrt()
}

/// `γ(s, τ)`.
pub fn helix_point(params: &HelixParams, s: f64, tau: f64) -> Point3 {
    let (k, r) = (params.k(), params.r_star());
    let l = k.hypot(r);
    let theta = (-s - params.a1() * tau) / l;
    [r * theta.cos(), r * theta.sin(), (k * s - params.b1() * tau) / l]
}

fn d_s(params: &HelixParams, s: f64, tau: f64, h: f64) -> Point3 {
    scale(sub(helix_point(params, s + h, tau), helix_point(params, s - h, tau)), 0.5 / h)
}

fn d_ss(params: &HelixParams, s: f64, tau: f64, h: f64) -> Point3 {
    let (p, c, m) = (helix_point(params, s + h, tau), helix_point(params, s, tau), helix_point(params, s - h, tau));
    [0, 1, 2].map(|i| (p[i] - 2.0 * c[i] + m[i]) / (h * h))
}

/// Fourth-order central difference of `∂³γ/∂s³`.
fn d_sss(params: &HelixParams, s: f64, tau: f64, h: f64) -> Point3 {
    let g = |j: f64| helix_point(params, s + j * h, tau);
    let (p3, p2, p1, m1, m2, m3) = (g(3.0), g(2.0), g(1.0), g(-1.0), g(-2.0), g(-3.0));
    [0, 1, 2].map(|i| (-p3[i] + 8.0 * p2[i] - 13.0 * p1[i] + 13.0 * m1[i] - 8.0 * m2[i] + m3[i]) / (8.0 * h * h * h))
}

fn d_tau(params: &HelixParams, s: f64, tau: f64, h: f64) -> Point3 {
    scale(sub(helix_point(params, s, tau + h), helix_point(params, s, tau - h)), 0.5 / h)
}

/// `max |∂_τγ − (d/4π) ∂_sγ × ∂_ssγ|` over the grid, all derivatives by
/// central differences with the given step.
pub fn binormal_residual(params: &HelixParams, s_grid: &[f64], tau_grid: &[f64], step: f64) -> f64 {
    let c = params.d() / (4.0 * PI);
    let mut worst = 0.0f64;
    for &s in s_grid {
        for &tau in tau_grid {
            let lhs = d_tau(params, s, tau, step);
            let rhs = scale(cross(d_s(params, s, tau, step), d_ss(params, s, tau, step)), c);
            worst = worst.max(norm3(sub(lhs, rhs)));
        }
    }
    worst
}

/// `|∂_sγ|` by central differences; 1 for an arclength parametrisation.
pub fn speed_along(params: &HelixParams, s: f64, step: f64) -> f64 {
    norm3(d_s(params, s, 0.0, step))
}

/// `(α′, α)` with `α′ = (a₁ + b₁/k)/√(k² + r*²)`.
pub fn rotation_consistency(params: &HelixParams) -> (f64, f64) {
    let l = params.k().hypot(params.r_star());
    ((params.a1() + params.b1() / params.k()) / l, params.alpha())
}

/// Curvature `|γ′ × γ″|/|γ′|³` at step `step` and signed torsion
/// `(γ′ × γ″)·γ‴/|γ′ × γ″|²`, the third derivative taken with a
/// fourth-order stencil at `torsion_step` to stay clear of round-off.
/// The curve winds clockwise while rising, so the signed torsion is
/// negative; its magnitude is `k/(k² + r*²)`.
pub fn curvature_torsion(params: &HelixParams, s: f64, step: f64, torsion_step: f64) -> (f64, f64) {
    let g1 = d_s(params, s, 0.0, step);
    let g2 = d_ss(params, s, 0.0, step);
    let b = cross(g1, g2);
    let kappa = norm3(b) / norm3(g1).powi(3);
    let torsion = dot3(b, d_sss(params, s, 0.0, torsion_step)) / dot3(b, b);
    (kappa, torsion)
}

/// Closed forms `(r*/(k² + r*²), k/(k² + r*²))` of curvature and the
/// magnitude of torsion.
pub fn curvature_torsion_exact(params: &HelixParams) -> (f64, f64) {
    let (k, r) = (params.k(), params.r_star());
    (r / (k * k + r * r), k / (k * k + r * r))
}

/// `|∂_τγ|`, the translation speed of the filament.
pub fn filament_speed(params: &HelixParams, step: f64) -> f64 {
    norm3(d_tau(params, 0.0, 0.0, step))
}

/// `H_ρ̄(x) = (x₁ cos ρ̄ + x₂ sin ρ̄, −x₁ sin ρ̄ + x₂ cos ρ̄, x₃ + kρ̄)`.
pub fn helical_map(x: Point3, rho: f64, k: f64) -> Point3 {
    let (s, c) = rho.sin_cos();
    [x[0] * c + x[1] * s, -x[0] * s + x[1] * c, x[2] + k * rho]
}

/// `ζ(x) = (x₂, −x₁, k)`.
pub fn zeta(x: Point3, k: f64) -> Point3 {
    [x[1], -x[0], k]
}

/// Distance from `x` to the curve `γ(·, 0)`. The search starts at the curve
/// point of the same height, scans one turn and refines the best sample by
/// golden section.
pub fn distance_to_helix(params: &HelixParams, x: Point3) -> f64 {
    let (k, r) = (params.k(), params.r_star());
    let l = k.hypot(r);
    let s0 = x[2] * l / k;
    let f = |s: f64| norm3(sub(x, helix_point(params, s, 0.0)));
    let n = 64;
    let span = 2.0 * PI * l;
    let ds = span / n as f64;
    let (mut best_s, mut best) = (s0, f(s0));
    for j in 0..=n {
        let s = s0 - 0.5 * span + j as f64 * ds;
        let v = f(s);
        if v < best {
            best = v;
            best_s = s;
        }
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (best_s - ds, best_s + ds);
    for _ in 0..100 {
        if b - a < 1e-13 * l {
            break;
        }
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.min(f(0.5 * (a + b)))
}

/// One point of the lifted tube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeSample {
    pub x: Point3,
    pub w: f64,
    /// `(w/k) ζ(x)`.
    pub v: Point3,
    pub dist_to_helix: f64,
}

/// Point cloud of the helical lift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelicalTube {
    pub rho: Vec<f64>,
    pub samples: Vec<TubeSample>,
    /// `∫ω` over each cross-section, i.e. the flux of `(w/k)ζ` through the
    /// plane `x₃ = kρ̄`.
    pub circulation: Vec<f64>,
    /// Mass-weighted mean distance to the helix, per level.
    pub mean_distance: Vec<f64>,
}

/// Lifts the active cells of `omega` through `H_ρ̄` for
/// `ρ̄_j = 2π·turns·j/levels`, `j < levels`.
pub fn lift_patch(mesh: &DiscMesh, omega: &[f64], params: &HelixParams, levels: usize, turns: f64) -> Result<HelicalTube> {
    if omega.len() != mesh.n_cells() {
        return Err(Error::FieldMismatch { expected: mesh.n_cells(), got: omega.len() });
    }
    let active: Vec<usize> = (0..omega.len()).filter(|&c| omega[c] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::EmptySupport);
    }
    if levels == 0 || !(turns > 0.0) {
        return Err(Error::InvalidParameter(format!("need levels > 0 and turns > 0, got {levels}, {turns}")));
    }
    let k = params.k();
    let rho: Vec<f64> = (0..levels).map(|j| 2.0 * PI * turns * j as f64 / levels as f64).collect();
    let mut samples = Vec::with_capacity(levels * active.len());
    let mut circulation = Vec::with_capacity(levels);
    let mut mean_distance = Vec::with_capacity(levels);
    for &r in &rho {
        let (mut flux, mut weighted) = (0.0, 0.0);
        for &c in &active {
            let p = mesh.centroids()[c];
            let x = helical_map([p[0], p[1], 0.0], r, k);
            let w = omega[c];
            let v = scale(zeta(x, k), w / k);
            let dist = distance_to_helix(params, x);
            let m = w * mesh.cell_area()[c];
            flux += m;
            weighted += m * dist;
            samples.push(TubeSample { x, w, v, dist_to_helix: dist });
        }
        circulation.push(flux);
        mean_distance.push(weighted / flux);
    }
    Ok(HelicalTube { rho, samples, circulation, mean_distance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: f64, d: f64, r: f64) -> HelixParams {
        HelixParams::new(k, d, r, 2.0 * r.max(0.5), 0.1).unwrap()
    }

    #[test]
    fn starts_at_r_star() {
        let p = params(1.0, 1.0, 0.5);
        assert_eq!(helix_point(&p, 0.0, 0.0), [0.5, 0.0, 0.0]);
    }

    #[test]
    fn coefficients_at_unit_parameters() {
        let p = params(1.0, 1.0, 1.0);
        assert!((p.a1() - 1.0 / (8.0 * PI)).abs() < 1e-15);
        assert!((p.b1() - 0.039789).abs() < 1e-6);
    }

    #[test]
    fn torsion_stencil_is_exact_on_cubics() {
        // the stencil annihilates everything below degree 3 and is exact on s³
        let h = 0.1f64;
        let f = |s: f64| s * s * s - 2.0 * s * s + s;
        let d3 = (-f(3.0 * h) + 8.0 * f(2.0 * h) - 13.0 * f(h) + 13.0 * f(-h) - 8.0 * f(-2.0 * h) + f(-3.0 * h)) / (8.0 * h * h * h);
        assert!((d3 - 6.0).abs() < 1e-10);
    }

    #[test]
    fn helical_map_is_a_group() {
        let x = [0.3, -0.2, 0.7];
        let a = helical_map(helical_map(x, 0.4, 1.3), 1.1, 1.3);
        let b = helical_map(x, 1.5, 1.3);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn distance_to_the_helix_is_zero_on_it() {
        let p = params(1.0, 1.0, 0.5);
        for s in [-3.0, 0.0, 0.4, 7.0] {
            assert!(distance_to_helix(&p, helix_point(&p, s, 0.0)) < 1e-7);
        }
        // the axis is r* away
        assert!((distance_to_helix(&p, [0.0, 0.0, 0.3]) - 0.5).abs() < 1e-12);
    }
}
