//! Helical coefficient field and the closed-form scalar quantities built on it.
//!
//! For a pitch `k > 0` the stream function of a helical flow solves
//! `-div(K_H ∇φ) = w` with
//!
//! ```text
//! K_H(x) = 1/(k² + |x|²) · [[k² + x₂², -x₁x₂], [-x₁x₂, k² + x₁²]]
//! ```
//!
//! `K_H(x)` has eigenvalue `k²/(k²+|x|²)` along `x` and `1` across it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the plane.
pub type Point = [f64; 2];

#[inline]
pub fn norm2(x: Point) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Counterclockwise rotation of `x` by `theta`.
#[inline]
pub fn rotate(x: Point, theta: f64) -> Point {
    let (s, c) = theta.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// Dense 2×2 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 { xx: 1.0, xy: 0.0, yx: 0.0, yy: 1.0 };

    pub const fn new(xx: f64, xy: f64, yx: f64, yy: f64) -> Self {
        Mat2 { xx, xy, yx, yy }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, b)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.yx
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.xx, self.yx, self.xy, self.yy)
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Mat2::new(self.yy / det, -self.xy / det, -self.yx / det, self.xx / det))
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.xx * o.xx + self.xy * o.yx,
            self.xx * o.xy + self.xy * o.yy,
            self.yx * o.xx + self.yy * o.yx,
            self.yx * o.xy + self.yy * o.yy,
        )
    }

    pub fn apply(&self, v: Point) -> Point {
        [self.xx * v[0] + self.xy * v[1], self.yx * v[0] + self.yy * v[1]]
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.xx + o.xx, self.xy + o.xy, self.yx + o.yx, self.yy + o.yy)
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.xx * s, self.xy * s, self.yx * s, self.yy * s)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.xx.abs().max(self.xy.abs()).max(self.yx.abs()).max(self.yy.abs())
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let a = self.xx;
        let b = 0.5 * (self.xy + self.yx);
        let c = self.yy;
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        [mean - rad, mean + rad]
    }

    /// Symmetric with both eigenvalues strictly positive.
    pub fn is_spd(&self) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (self.xy - self.yx).abs() <= 1e-12 * scale && self.xx > 0.0 && self.det() > 0.0
    }
}

/// Smooth symmetric positive-definite matrix field on the closed disc.
pub trait CoefficientField: Send + Sync {
    fn eval(&self, x: Point) -> Mat2;

    /// Uniform ellipticity bounds `(Λ₁, Λ₂)` on the domain the field is used on.
    fn bounds(&self) -> (f64, f64);
}

/// `K ≡ Id`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityField;

impl CoefficientField for IdentityField {
    fn eval(&self, _x: Point) -> Mat2 {
        Mat2::IDENTITY
    }

    fn bounds(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

/// Spatially constant SPD coefficient.
#[derive(Clone, Copy, Debug)]
pub struct ConstantField(pub Mat2);

impl CoefficientField for ConstantField {
    fn eval(&self, _x: Point) -> Mat2 {
        self.0
    }

    fn bounds(&self) -> (f64, f64) {
        let [l, u] = self.0.sym_eigenvalues();
        (l, u)
    }
}

/// The helical coefficient `K_H` restricted to the disc of radius `radius`.
#[derive(Clone, Copy, Debug)]
pub struct HelicalField {
    pub k: f64,
    pub radius: f64,
}

impl HelicalField {
    pub fn new(k: f64, radius: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("pitch k must be positive, got {k}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        Ok(HelicalField { k, radius })
    }
}

impl CoefficientField for HelicalField {
    fn eval(&self, x: Point) -> Mat2 {
        eval_kh(x, self.k)
    }

    fn bounds(&self) -> (f64, f64) {
        let k2 = self.k * self.k;
        (k2 / (k2 + self.radius * self.radius), 1.0)
    }
}

/// `K_H(x)` for pitch `k`.
pub fn eval_kh(x: Point, k: f64) -> Mat2 {
    let k2 = k * k;
    let s = 1.0 / (k2 + x[0] * x[0] + x[1] * x[1]);
    let off = -x[0] * x[1] * s;
    Mat2::new((k2 + x[1] * x[1]) * s, off, off, (k2 + x[0] * x[0]) * s)
}

/// `sqrt(det K_H(x)) = k / sqrt(k² + |x|²)`.
pub fn det_sqrt_kh(x: Point, k: f64) -> f64 {
    k / (k * k + norm2(x)).sqrt()
}

/// Upper-triangular `T` with positive diagonal and `TᵗT = K⁻¹`,
/// equivalently `T⁻¹ (T⁻¹)ᵗ = K`.
pub fn factor_t(k: &Mat2) -> Result<Mat2> {
    let scale = k.max_abs();
    if !scale.is_finite() || (k.xy - k.yx).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonSpdInput("matrix is not symmetric".into()));
    }
    let inv = k
        .inverse()
        .ok_or_else(|| Error::NonSpdInput("matrix is singular".into()))?;
    let p = inv.xx;
    if !(p > 0.0) {
        return Err(Error::NonSpdInput(format!("leading minor of the inverse is {p:e}")));
    }
    let t11 = p.sqrt();
    let t12 = 0.5 * (inv.xy + inv.yx) / t11;
    let schur = inv.yy - t12 * t12;
    if !(schur > 0.0) {
        return Err(Error::NonSpdInput(format!("second pivot of the inverse is {schur:e}")));
    }
    Ok(Mat2::new(t11, t12, 0.0, schur.sqrt()))
}

/// Physical and derived parameters of a rotating helical patch.
///
/// `alpha`, `a1`, `b1` and `c_star` are always recomputed from the primary
/// fields; deserialisation goes through [`HelixParams::new`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHelixParams", into = "RawHelixParams")]
pub struct HelixParams {
    k: f64,
    d: f64,
    r_star: f64,
    r_domain: f64,
    eps: f64,
    alpha: f64,
    a1: f64,
    b1: f64,
    c_star: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawHelixParams {
    k: f64,
    d: f64,
    r_star: f64,
    r_domain: f64,
    eps: f64,
}

impl TryFrom<RawHelixParams> for HelixParams {
    type Error = Error;

    fn try_from(r: RawHelixParams) -> Result<Self> {
        HelixParams::new(r.k, r.d, r.r_star, r.r_domain, r.eps)
    }
}

impl From<HelixParams> for RawHelixParams {
    fn from(p: HelixParams) -> Self {
        RawHelixParams { k: p.k, d: p.d, r_star: p.r_star, r_domain: p.r_domain, eps: p.eps }
    }
}

impl HelixParams {
    pub fn new(k: f64, d: f64, r_star: f64, r_domain: f64, eps: f64) -> Result<Self> {
        let finite = [k, d, r_star, r_domain, eps].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite helix parameter".into()));
        }
        if k <= 0.0 {
            return Err(Error::InvalidParameter(format!("pitch k must be positive, got {k}")));
        }
        if d <= 0.0 {
            return Err(Error::InvalidParameter(format!("circulation d must be positive, got {d}")));
        }
        if !(r_star > 0.0 && r_star < r_domain) {
            return Err(Error::InvalidParameter(format!(
                "target radius must satisfy 0 < r_star < R_star, got r_star={r_star}, R_star={r_domain}"
            )));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
        }
        let area = PI * r_domain * r_domain;
        if d * eps * eps >= area {
            return Err(Error::InfeasibleMass { required: d * eps * eps, available: area });
        }
        let k2 = k * k;
        let r2 = r_star * r_star;
        let root = (k2 + r2).sqrt();
        Ok(HelixParams {
            k,
            d,
            r_star,
            r_domain,
            eps,
            alpha: d / (4.0 * PI * k * root),
            a1: d * k / (4.0 * PI * (k2 + r2)),
            b1: d * r2 / (4.0 * PI * (k2 + r2)),
            c_star: (d * root / (PI * k)).sqrt(),
        })
    }

    /// Same physics, different concentration parameter.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        HelixParams::new(self.k, self.d, self.r_star, self.r_domain, eps)
    }

    /// Pitch of the helix.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Circulation, the total mass of the vorticity.
    pub fn d(&self) -> f64 {
        self.d
    }

    /// Target distance of the filament from the axis.
    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    /// Radius `R*` of the pipe cross-section.
    pub fn r_domain(&self) -> f64 {
        self.r_domain
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Rotation coefficient `d / (4π k sqrt(k² + r*²))`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    /// Radius of the limiting disc of the rescaled cross-section,
    /// `π c*² = d sqrt(k² + r*²) / k`.
    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    /// `ln(1/ε)`.
    pub fn log_inv_eps(&self) -> f64 {
        -self.eps.ln()
    }

    /// Vorticity level of the patch, `1/ε²`.
    pub fn patch_level(&self) -> f64 {
        1.0 / (self.eps * self.eps)
    }

    /// Clockwise angular speed of the rotating patch, `α ln(1/ε)`.
    pub fn angular_speed(&self) -> f64 {
        self.alpha * self.log_inv_eps()
    }

    pub fn field(&self) -> HelicalField {
        HelicalField { k: self.k, radius: self.r_domain }
    }

    /// Leading coefficient of `E_ε` in `ln(1/ε)`.
    pub fn energy_slope(&self) -> f64 {
        let sq = det_sqrt_kh([self.r_star, 0.0], self.k);
        self.d * self.d / (4.0 * PI * sq) - self.d * self.alpha * self.r_star * self.r_star / 2.0
    }

    /// Leading coefficient of the multiplier `μ^ε` in `ln(1/ε)`.
    pub fn multiplier_slope(&self) -> f64 {
        let sq = det_sqrt_kh([self.r_star, 0.0], self.k);
        self.d / (2.0 * PI * sq) - self.alpha * self.r_star * self.r_star / 2.0
    }
}

/// `Y(x) = d sqrt(k²+|x|²) / (2πk) − α|x|²`.
pub fn potential_y(x: Point, params: &HelixParams) -> f64 {
    potential_y_radial(norm2(x), params)
}

/// [`potential_y`] as a function of `|x|²`.
pub fn potential_y_radial(r2: f64, params: &HelixParams) -> f64 {
    let k = params.k;
    params.d * (k * k + r2).sqrt() / (2.0 * PI * k) - params.alpha * r2
}

/// Sampled check of symmetry and of `Λ₁|ζ|² ≤ (Kζ|ζ) ≤ Λ₂|ζ|²` on the disc.
pub fn check_ellipticity(field: &dyn CoefficientField, radius: f64, samples: usize) -> bool {
    let (l1, l2) = field.bounds();
    let n = samples.max(1);
    let slack = 1e-12;
    for i in 0..n {
        let r = radius * ((i as f64 + 0.5) / n as f64).sqrt();
        let t = 2.399_963_229_728_653 * i as f64;
        let x = [r * t.cos(), r * t.sin()];
        let km = field.eval(x);
        if (km.xy - km.yx).abs() > 1e-14 * km.max_abs() {
            return false;
        }
        for j in 0..8 {
            let a = PI * j as f64 / 8.0;
            let z = [a.cos(), a.sin()];
            let q = z[0] * (km.xx * z[0] + km.xy * z[1]) + z[1] * (km.yx * z[0] + km.yy * z[1]);
            if q < l1 * (1.0 - slack) || q > l2 * (1.0 + slack) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kh_closed_form_values() {
        let id = eval_kh([0.0, 0.0], 1.0);
        assert_eq!(id, Mat2::IDENTITY);

        let m = eval_kh([1.0, 0.0], 1.0);
        assert!(close(m.xx, 0.5, 1e-15) && close(m.yy, 1.0, 1e-15));
        assert!(m.xy == 0.0 && m.yx == 0.0);

        let m = eval_kh([1.0, 1.0], 1.0);
        assert!(close(m.xx, 2.0 / 3.0, 1e-15) && close(m.yy, 2.0 / 3.0, 1e-15));
        assert!(close(m.xy, -1.0 / 3.0, 1e-15) && close(m.yx, -1.0 / 3.0, 1e-15));
        let [l, u] = m.sym_eigenvalues();
        assert!(close(l, 1.0 / 3.0, 1e-14) && close(u, 1.0, 1e-14));
    }

    #[test]
    fn det_sqrt_matches_determinant() {
        assert_eq!(det_sqrt_kh([0.0, 0.0], 1.0), 1.0);
        assert!(close(det_sqrt_kh([1.0, 0.0], 1.0), 0.5f64.sqrt(), 1e-15));
        let m = eval_kh([1.0, 1.0], 1.0);
        assert!(close(m.det(), det_sqrt_kh([1.0, 1.0], 1.0).powi(2), 1e-14));
    }

    #[test]
    fn kh_eigenvalues_within_derived_bounds() {
        let k = 0.7;
        let field = HelicalField::new(k, 1.3).unwrap();
        assert!(check_ellipticity(&field, 1.3, 2000));
        let (l1, l2) = field.bounds();
        assert!(close(l1, k * k / (k * k + 1.69), 1e-15));
        assert_eq!(l2, 1.0);
    }

    #[test]
    fn factor_t_examples() {
        let t = factor_t(&Mat2::IDENTITY).unwrap();
        assert_eq!(t, Mat2::IDENTITY);
        let t = factor_t(&Mat2::diag(0.5, 1.0)).unwrap();
        assert!(close(t.xx, 2f64.sqrt(), 1e-15) && close(t.yy, 1.0, 1e-15));
        assert_eq!(t.xy, 0.0);
        assert_eq!(t.yx, 0.0);
    }

    #[test]
    fn factor_t_rejects_indefinite() {
        assert!(matches!(factor_t(&Mat2::diag(1.0, -1.0)), Err(Error::NonSpdInput(_))));
        assert!(matches!(factor_t(&Mat2::new(1.0, 2.0, 2.0, 1.0)), Err(Error::NonSpdInput(_))));
        assert!(matches!(factor_t(&Mat2::new(1.0, 0.1, 0.0, 1.0)), Err(Error::NonSpdInput(_))));
    }

    #[test]
    fn factor_t_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = Mat2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let k = a.mul(&a.transpose()).add(&Mat2::diag(0.05, 0.05));
            let t = factor_t(&k).unwrap();
            assert!(t.yx == 0.0 && t.xx > 0.0 && t.yy > 0.0);
            let ti = t.inverse().unwrap();
            let back = ti.mul(&ti.transpose());
            let res = back.add(&k.scale(-1.0)).max_abs();
            assert!(res < 1e-12 * k.max_abs().max(1.0), "residual {res}");
        }
    }

    #[test]
    fn helix_params_derived_values() {
        let p = HelixParams::new(1.0, 1.0, 0.5, 1.0, 0.05).unwrap();
        let root = 1.25f64.sqrt();
        assert_eq!(p.alpha(), 1.0 / (4.0 * PI * root));
        assert!(close(p.a1(), 1.0 / (4.0 * PI * 1.25), 1e-16));
        assert!(close(p.b1(), 0.25 / (4.0 * PI * 1.25), 1e-16));
        assert!(close(PI * p.c_star().powi(2), root, 1e-14));
        let sq = det_sqrt_kh([0.5, 0.0], 1.0);
        assert!(close(PI * p.c_star().powi(2), 1.0 / sq, 1e-14));
        assert!(close(p.energy_slope(), 0.08008, 1e-4));
        assert!(close(p.multiplier_slope(), 0.16907, 5e-5));
    }

    #[test]
    fn helix_params_validation() {
        assert!(HelixParams::new(0.0, 1.0, 0.5, 1.0, 0.1).is_err());
        assert!(HelixParams::new(1.0, 1.0, 1.0, 1.0, 0.1).is_err());
        assert!(HelixParams::new(1.0, 1.0, 0.5, 1.0, 1.0).is_err());
        // d eps^2 must stay below the disc area
        let e = HelixParams::new(1.0, 4.0, 0.5, 1.0, 0.9).unwrap_err();
        assert!(matches!(e, Error::InfeasibleMass { .. }));
    }

    #[test]
    fn potential_y_values() {
        let p = HelixParams::new(1.0, 1.0, 0.5, 1.0, 0.1).unwrap();
        assert!(close(potential_y([0.0, 0.0], &p), 1.0 / (2.0 * PI), 1e-15));

        // dense grid search for the radial maximiser and its value
        let n = 100_000;
        let (mut best_r, mut best) = (0.0, f64::NEG_INFINITY);
        for i in 0..=n {
            let r = i as f64 / n as f64;
            let y = potential_y([r, 0.0], &p);
            if y > best {
                best = y;
                best_r = r;
            }
        }
        assert!((best_r - 0.5).abs() <= 1.0 / n as f64);
        assert!(close(best, 0.160_146_5, 1e-6));
        assert!(close(potential_y([0.5, 0.0], &p), 2.25 / (4.0 * PI * 1.25f64.sqrt()), 1e-15));
    }

    #[test]
    fn potential_y_single_sign_change_at_target_radius() {
        for &(k, d, rs) in &[(1.0, 1.0, 0.5), (0.4, 2.0, 0.8), (3.0, 0.7, 0.2)] {
            let p = HelixParams::new(k, d, rs, 1.0, 0.1).unwrap();
            let n = 10_000;
            let h = 1.0 / n as f64;
            let mut changes = Vec::new();
            let mut prev = None;
            for i in 1..n {
                let r = i as f64 * h;
                let dy = potential_y([r + 1e-7, 0.0], &p) - potential_y([r - 1e-7, 0.0], &p);
                let s = dy > 0.0;
                if let Some(ps) = prev {
                    if ps != s {
                        changes.push(r);
                    }
                }
                prev = Some(s);
            }
            assert_eq!(changes.len(), 1, "k={k}");
            assert!((changes[0] - rs).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn potential_y_is_radial() {
        let p = HelixParams::new(1.3, 0.8, 0.4, 1.0, 0.1).unwrap();
        for i in 0..50 {
            let x = [0.9 * (i as f64 / 50.0), 0.0];
            let t = 0.37 * i as f64;
            let rx = rotate(x, t);
            let a = potential_y_radial(x[0] * x[0], &p);
            let b = potential_y(rx, &p);
            assert!(close(a, b, 1e-15));
        }
    }
}
