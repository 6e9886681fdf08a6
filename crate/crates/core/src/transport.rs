//! Time evolution of `∂_t w + ∇^⊥𝒢_{K_H} w · ∇w = 0` with
//! `(a, b)^⊥ = (b, −a)`, conservation monitors, and the orbital-stability
//! experiment.
//!
//! Two transport schemes are provided. [`step_semi_lagrangian`] is the
//! classical cell-centred backtracking update; it smears a patch edge by a
//! fraction of a cell per step and loses a small patch within one period at
//! coarse resolution. [`MarkerTransport`] carries the vorticity on
//! Lagrangian markers that follow the streamlines of the cellwise velocity
//! `∇^⊥φ_h` exactly; that field has continuous normal flux, so the marker
//! map is area preserving. Both are coupled to the velocity by the explicit
//! midpoint rule.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{cell_average, cell_gradient, nodal_gradient, shape_gradients, FieldKind, ScalarField, StiffnessSystem};
use crate::helical_coeff::{norm2, rotate, HelixParams, Point};
use crate::linalg::dot;
use crate::mesh::{barycentric, DiscMesh, PointLocator};
use crate::patch::PatchProblem;
use crate::stats::fit_line;

/// Largest admissible Courant number `dt·‖u‖_∞ / h`.
pub const CFL_LIMIT: f64 = 0.5;

/// Stream function `𝒢ω` and the nodal velocity `∇^⊥𝒢ω = (∂₂φ, −∂₁φ)`.
pub fn velocity_of(sys: &StiffnessSystem, omega: &[f64], guess: Option<&[f64]>) -> Result<(Vec<f64>, Vec<Point>)> {
    let mesh = sys.mesh();
    if omega.len() != mesh.n_cells() {
        return Err(Error::FieldMismatch { expected: mesh.n_cells(), got: omega.len() });
    }
    if let Some(i) = omega.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let b = sys.load_vector(&ScalarField { kind: FieldKind::Cellwise, values: omega.to_vec() })?;
    let (phi, _) = sys.solve_load(&b, guess)?;
    let u = nodal_gradient(mesh, &phi).into_iter().map(|g| [g[1], -g[0]]).collect();
    Ok((phi, u))
}

/// `max_i |u_i|`.
pub fn max_speed(u: &[Point]) -> f64 {
    u.iter().map(|v| norm2(*v).sqrt()).fold(0.0, f64::max)
}

/// P1 interpolation of a nodal vector field.
pub fn interpolate_vector(mesh: &DiscMesh, loc: &PointLocator, u: &[Point], x: Point) -> Point {
    let (c, l) = loc.locate_clamped(mesh, x);
    let t = mesh.triangles()[c];
    let mut out = [0.0; 2];
    for i in 0..3 {
        out[0] += l[i] * u[t[i]][0];
        out[1] += l[i] * u[t[i]][1];
    }
    out
}

/// P1 interpolation of a nodal scalar field.
pub fn interpolate_scalar(mesh: &DiscMesh, loc: &PointLocator, f: &[f64], x: Point) -> f64 {
    let (c, l) = loc.locate_clamped(mesh, x);
    let t = mesh.triangles()[c];
    l[0] * f[t[0]] + l[1] * f[t[1]] + l[2] * f[t[2]]
}

/// Area-weighted nodal average of a cellwise field.
pub fn nodal_reconstruction(mesh: &DiscMesh, omega: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; mesh.n_nodes()];
    for (c, t) in mesh.triangles().iter().enumerate() {
        for &v in t {
            acc[v] += mesh.cell_area()[c] * omega[c];
        }
    }
    let m = mesh.lumped_mass();
    acc.iter().enumerate().map(|(i, a)| a / (3.0 * m[i])).collect()
}

fn clamp_to_disc(x: Point, r: f64) -> Point {
    let n = norm2(x).sqrt();
    if n > r {
        [x[0] * r / n, x[1] * r / n]
    } else {
        x
    }
}

fn check_cfl(mesh: &DiscMesh, u: &[Point], dt: f64) -> Result<()> {
    let speed = max_speed(u);
    let bound = if speed > 0.0 { CFL_LIMIT * mesh.h() / speed } else { f64::INFINITY };
    if !(dt > 0.0) || dt > bound {
        return Err(Error::CflViolation { dt, bound });
    }
    Ok(())
}

/// One semi-Lagrangian step in a given nodal velocity: every cell centre is
/// traced back with the RK2 midpoint rule and takes the P1 interpolant of
/// the nodally reconstructed field at the departure point.
pub fn step_semi_lagrangian(mesh: &DiscMesh, loc: &PointLocator, omega: &[f64], u: &[Point], dt: f64) -> Result<Vec<f64>> {
    check_cfl(mesh, u, dt)?;
    let nodal = nodal_reconstruction(mesh, omega);
    let r = mesh.radius();
    Ok(mesh
        .centroids()
        .iter()
        .map(|&c| {
            let u0 = interpolate_vector(mesh, loc, u, c);
            let mid = clamp_to_disc([c[0] - 0.5 * dt * u0[0], c[1] - 0.5 * dt * u0[1]], r);
            let um = interpolate_vector(mesh, loc, u, mid);
            let dep = clamp_to_disc([c[0] - dt * um[0], c[1] - dt * um[1]], r);
            interpolate_scalar(mesh, loc, &nodal, dep)
        })
        .collect())
}

/// Sub-triangle centroids of the uniform `n × n` refinement, as
/// barycentric weights `(s, t)` of the second and third vertex.
fn subcell_points(n: usize) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let mut pts = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n - a {
            pts.push(((a as f64 + 1.0 / 3.0) / nf, (b as f64 + 1.0 / 3.0) / nf));
            if a + b + 2 <= n {
                pts.push(((a as f64 + 2.0 / 3.0) / nf, (b as f64 + 2.0 / 3.0) / nf));
            }
        }
    }
    pts
}

/// Cellwise velocity `∇^⊥φ` of a P1 stream function. Its normal component
/// is continuous across every edge and it vanishes in the normal direction
/// on boundary chords, so the field is exactly divergence free.
pub fn cell_velocity(mesh: &DiscMesh, phi: &[f64]) -> Vec<Point> {
    (0..mesh.n_cells())
        .map(|c| {
            let g = cell_gradient(mesh, phi, c);
            [g[1], -g[0]]
        })
        .collect()
}

/// Follows the streamline of the cellwise constant field `uc` from `x` in
/// cell `c` for time `dt`, crossing edges exactly. Returns the final cell
/// and position. The value of the stream function is preserved along the
/// path. At most 64 edges are crossed, which is ample under the CFL bound.
pub fn trace_streamline(mesh: &DiscMesh, uc: &[Point], mut c: usize, mut x: Point, dt: f64) -> (usize, Point) {
    let mut left = dt;
    for _ in 0..64 {
        let u = uc[c];
        if u == [0.0, 0.0] {
            return (c, x);
        }
        let l = barycentric(x, mesh.cell_vertices(c));
        let g = shape_gradients(mesh, c);
        let mut exit = (f64::INFINITY, 0);
        for i in 0..3 {
            let rate = g[i][0] * u[0] + g[i][1] * u[1];
            if rate < 0.0 {
                let s = l[i].max(0.0) / -rate;
                if s < exit.0 {
                    exit = (s, i);
                }
            }
        }
        if exit.0 >= left {
            return (c, [x[0] + left * u[0], x[1] + left * u[1]]);
        }
        x = [x[0] + exit.0 * u[0], x[1] + exit.0 * u[1]];
        left -= exit.0;
        match mesh.opposite(c, exit.1) {
            Some(next) => c = next,
            None => return (c, x),
        }
    }
    (c, x)
}

/// Vorticity carried by Lagrangian markers.
#[derive(Clone, Debug)]
pub struct MarkerTransport {
    pub positions: Vec<Point>,
    /// Cell containing each marker.
    pub cells: Vec<usize>,
    /// Circulation carried by each marker.
    pub weights: Vec<f64>,
}

impl MarkerTransport {
    /// `per_side²` markers on every cell where `ω ≠ 0`.
    pub fn seed(mesh: &DiscMesh, omega: &[f64], per_side: usize) -> MarkerTransport {
        let sub = subcell_points(per_side.max(1));
        let share = 1.0 / sub.len() as f64;
        let mut positions = Vec::new();
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        for (c, &w) in omega.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let [p0, p1, p2] = mesh.cell_vertices(c);
            for &(s, t) in &sub {
                positions.push([
                    p0[0] + s * (p1[0] - p0[0]) + t * (p2[0] - p0[0]),
                    p0[1] + s * (p1[1] - p0[1]) + t * (p2[1] - p0[1]),
                ]);
                cells.push(c);
                weights.push(w * mesh.cell_area()[c] * share);
            }
        }
        MarkerTransport { positions, cells, weights }
    }

    /// Moves every marker along the streamline of the frozen cellwise
    /// velocity `uc` for time `dt`. Markers that drift out of their cell by
    /// round-off are relocated.
    pub fn advect(&mut self, mesh: &DiscMesh, loc: &PointLocator, uc: &[Point], dt: f64) {
        for (x, c) in self.positions.iter_mut().zip(self.cells.iter_mut()) {
            let (nc, nx) = trace_streamline(mesh, uc, *c, *x, dt);
            let l = barycentric(nx, mesh.cell_vertices(nc));
            if l.iter().all(|&v| v > -1e-9) {
                *c = nc;
                *x = nx;
            } else {
                let (lc, _) = loc.locate_clamped(mesh, nx);
                *c = lc;
                *x = nx;
            }
        }
    }

    /// Cellwise field: markers are spread to nodes with their P1 weights,
    /// divided by the lumped mass, and each cell takes the mean of its
    /// vertices. The total `∫ω` equals the sum of the marker weights.
    pub fn deposit(&self, mesh: &DiscMesh, loc: &PointLocator) -> Vec<f64> {
        let mut acc = vec![0.0; mesh.n_nodes()];
        for ((x, &c), &w) in self.positions.iter().zip(&self.cells).zip(&self.weights) {
            let mut l = barycentric(*x, mesh.cell_vertices(c));
            let mut c = c;
            if l.iter().any(|&v| v < -1e-9) {
                (c, l) = loc.locate_clamped(mesh, *x);
            }
            let l = l.map(|v| v.max(0.0));
            let sum = l[0] + l[1] + l[2];
            let t = mesh.triangles()[c];
            for i in 0..3 {
                acc[t[i]] += w * l[i] / sum;
            }
        }
        let m = mesh.lumped_mass();
        let density: Vec<f64> = acc.iter().zip(m).map(|(a, mi)| a / mi).collect();
        cell_average(mesh, &density)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Which transport update [`Evolution`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    SemiLagrangian,
    /// Lagrangian markers with `n²` markers per active cell.
    Markers(usize),
}

/// One row of the monitor series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub t: f64,
    pub energy: f64,
    pub moment_i: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub centroid: Point,
    /// `NaN` when no reference was supplied.
    pub orbital_dist: f64,
    /// `|{ω > 1/(2ε²)}|`.
    pub level_area: f64,
}

/// Evolving vorticity together with its velocity and monitor history.
pub struct Evolution<'a> {
    problem: &'a PatchProblem,
    locator: Arc<PointLocator>,
    scheme: Scheme,
    markers: Option<MarkerTransport>,
    pub omega: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    phi: Vec<f64>,
    pub velocity: Vec<Point>,
    pub monitors: Vec<Monitor>,
}

impl<'a> Evolution<'a> {
    pub fn new(problem: &'a PatchProblem, omega: Vec<f64>, scheme: Scheme, dt: f64) -> Result<Evolution<'a>> {
        let mesh = problem.mesh();
        let locator = Arc::new(PointLocator::new(mesh));
        let (markers, omega) = match scheme {
            Scheme::SemiLagrangian => (None, omega),
            Scheme::Markers(n) => {
                if omega.len() != mesh.n_cells() {
                    return Err(Error::FieldMismatch { expected: mesh.n_cells(), got: omega.len() });
                }
                let m = MarkerTransport::seed(mesh, &omega, n);
                let dep = m.deposit(mesh, &locator);
                (Some(m), dep)
            }
        };
        let (phi, velocity) = velocity_of(problem.system(), &omega, None)?;
        Ok(Evolution { problem, locator, scheme, markers, omega, t: 0.0, dt, phi, velocity, monitors: Vec::new() })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn locator(&self) -> &PointLocator {
        &self.locator
    }

    /// Current marker cloud, if the marker scheme is used.
    pub fn markers(&self) -> Option<&MarkerTransport> {
        self.markers.as_ref()
    }

    /// Largest stable step for the current velocity.
    pub fn cfl_bound(&self) -> f64 {
        let s = max_speed(&self.velocity);
        if s > 0.0 {
            CFL_LIMIT * self.problem.mesh().h() / s
        } else {
            f64::INFINITY
        }
    }

    /// Advances by `dt` with the explicit midpoint rule: a half step in the
    /// current velocity gives a provisional field whose velocity then
    /// carries the full step. The velocity is refreshed at the end.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let mesh = self.problem.mesh();
        check_cfl(mesh, &self.velocity, dt)?;
        let sys = self.problem.system();
        let (half, _) = self.advance(&self.phi, &self.velocity, 0.5 * dt)?;
        let (phi_mid, u_mid) = velocity_of(sys, &half, Some(&self.phi))?;
        let (omega, markers) = self.advance(&phi_mid, &u_mid, dt)?;
        self.omega = omega;
        self.markers = markers;
        let (phi, u) = velocity_of(sys, &self.omega, Some(&phi_mid))?;
        self.phi = phi;
        self.velocity = u;
        self.t += dt;
        Ok(())
    }

    /// Transports the current field for `dt` in the frozen velocity of `phi`
    /// (nodal `u` for the semi-Lagrangian update).
    fn advance(&self, phi: &[f64], u: &[Point], dt: f64) -> Result<(Vec<f64>, Option<MarkerTransport>)> {
        let mesh = self.problem.mesh();
        match &self.markers {
            None => Ok((step_semi_lagrangian(mesh, &self.locator, &self.omega, u, dt)?, None)),
            Some(m) => {
                let mut m = m.clone();
                m.advect(mesh, &self.locator, &cell_velocity(mesh, phi), dt);
                Ok((m.deposit(mesh, &self.locator), Some(m)))
            }
        }
    }

    /// Monitor values of the current state.
    pub fn monitor(&self, reference: Option<&OrbitReference>) -> Monitor {
        let mesh = self.problem.mesh();
        let params = self.problem.params();
        let b = self
            .problem
            .system()
            .load_vector(&ScalarField { kind: FieldKind::Cellwise, values: self.omega.clone() })
            .expect("cellwise field of mesh length");
        let r2i = self.problem.integrate_r2(&self.omega);
        let energy = 0.5 * dot(&b, &self.phi) - 0.5 * params.alpha() * params.log_inv_eps() * r2i;
        let mass = self.problem.mass(&self.omega);
        let mut cx = [0.0; 2];
        let mut level_area = 0.0;
        let half = 0.5 * params.patch_level();
        for ((w, a), c) in self.omega.iter().zip(mesh.cell_area()).zip(mesh.centroids()) {
            cx[0] += w * a * c[0];
            cx[1] += w * a * c[1];
            if *w > half {
                level_area += a;
            }
        }
        let min = self.omega.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orbital_dist = reference.map_or(f64::NAN, |r| r.distance(&self.omega).0);
        Monitor {
            t: self.t,
            energy,
            moment_i: 0.5 * r2i,
            mass,
            min,
            max,
            centroid: [cx[0] / mass, cx[1] / mass],
            orbital_dist,
            level_area,
        }
    }

    /// Steps to `t + horizon`, recording a monitor row at the start, after
    /// every `stride` steps and at the end. The nominal step `self.dt` is
    /// shortened whenever the current velocity would violate the CFL bound
    /// (by a 10% margin) and to land exactly on the horizon.
    pub fn run(&mut self, horizon: f64, stride: usize, reference: Option<&OrbitReference>) -> Result<()> {
        let t_end = self.t + horizon;
        if self.monitors.is_empty() {
            let m = self.monitor(reference);
            self.monitors.push(m);
        }
        let mut i = 0usize;
        while t_end - self.t > 1e-12 * horizon {
            let dt = self.dt.min(0.9 * self.cfl_bound()).min(t_end - self.t);
            self.step(dt)?;
            i += 1;
            let last = t_end - self.t <= 1e-12 * horizon;
            if last {
                self.t = t_end;
            }
            if i.is_multiple_of(stride.max(1)) || last {
                let m = self.monitor(reference);
                self.monitors.push(m);
            }
        }
        Ok(())
    }
}

/// Time step for a horizon: the largest `T/n` below `cfl·h/‖u‖_∞`.
pub fn auto_dt(mesh: &DiscMesh, u: &[Point], horizon: f64, cfl: f64) -> f64 {
    let s = max_speed(u);
    let bound = if s > 0.0 { cfl * mesh.h() / s } else { horizon };
    let n = (horizon / bound).ceil().max(1.0);
    horizon / n
}

/// Period `2π / (α ln(1/ε))` of the rigid rotation of the pattern.
pub fn rotation_period(params: &HelixParams) -> f64 {
    2.0 * PI / params.angular_speed()
}

/// Angular speed of the centroid, positive for clockwise motion, from a
/// least-squares fit of the unwrapped polar angle against time.
pub fn clockwise_speed(monitors: &[Monitor]) -> Option<f64> {
    let mut t = Vec::with_capacity(monitors.len());
    let mut th = Vec::with_capacity(monitors.len());
    let mut prev: Option<f64> = None;
    let mut offset = 0.0;
    for m in monitors {
        let a = m.centroid[1].atan2(m.centroid[0]);
        if let Some(p) = prev {
            let mut d = a + offset - p;
            while d > PI {
                offset -= 2.0 * PI;
                d -= 2.0 * PI;
            }
            while d < -PI {
                offset += 2.0 * PI;
                d += 2.0 * PI;
            }
        }
        let v = a + offset;
        prev = Some(v);
        t.push(m.t);
        th.push(v);
    }
    fit_line(&t, &th).map(|f| -f.slope)
}

/// Largest relative deviation of a monitored quantity from its first value.
pub fn relative_drift(monitors: &[Monitor], f: impl Fn(&Monitor) -> f64) -> f64 {
    let Some(first) = monitors.first() else { return 0.0 };
    let f0 = f(first);
    monitors.iter().map(|m| ((f(m) - f0) / f0).abs()).fold(0.0, f64::max)
}

/// Reference field for orbital distances, prepared for repeated use.
pub struct OrbitReference {
    mesh: Arc<DiscMesh>,
    locator: Arc<PointLocator>,
    values: Vec<f64>,
    p: f64,
    n_theta: usize,
    r_lo: f64,
    r_hi: f64,
}

impl OrbitReference {
    pub fn new(mesh: Arc<DiscMesh>, locator: Arc<PointLocator>, reference: Vec<f64>, p: f64, n_theta: usize) -> Result<OrbitReference> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("exponent p must be at least 1, got {p}")));
        }
        if reference.len() != mesh.n_cells() {
            return Err(Error::FieldMismatch { expected: mesh.n_cells(), got: reference.len() });
        }
        let (mut r_lo, mut r_hi) = (f64::INFINITY, 0.0f64);
        for (c, &w) in reference.iter().enumerate() {
            if w != 0.0 {
                for v in mesh.cell_vertices(c) {
                    let r = norm2(v).sqrt();
                    r_lo = r_lo.min(r);
                    r_hi = r_hi.max(r);
                }
            }
        }
        Ok(OrbitReference { mesh, locator, values: reference, p, n_theta: n_theta.max(1), r_lo, r_hi })
    }

    /// `R_θ` of the reference sampled at the cell centres: the value of the
    /// reference cell containing `R_{−θ} c_T`.
    pub fn rotated(&self, theta: f64) -> Vec<f64> {
        self.mesh
            .centroids()
            .iter()
            .map(|&c| self.sample(rotate(c, -theta)))
            .collect()
    }

    fn sample(&self, x: Point) -> f64 {
        let r = norm2(x).sqrt();
        if r < self.r_lo || r > self.r_hi {
            return 0.0;
        }
        match self.locator.locate(&self.mesh, x) {
            Some((c, _)) => self.values[c],
            None => self.values[self.locator.locate_clamped(&self.mesh, x).0],
        }
    }

    /// `‖ω − R_θ ref‖_p`.
    pub fn distance_at(&self, omega: &[f64], theta: f64) -> f64 {
        let mut acc = 0.0;
        let p = self.p;
        for (c, (&w, &a)) in omega.iter().zip(self.mesh.cell_area()).enumerate() {
            let rc = norm2(self.mesh.centroids()[c]).sqrt();
            let s = if rc < self.r_lo || rc > self.r_hi { 0.0 } else { self.sample(rotate(self.mesh.centroids()[c], -theta)) };
            let d = (w - s).abs();
            if d != 0.0 {
                acc += a * d.powf(p);
            }
        }
        acc.powf(1.0 / p)
    }

    /// Minimum of [`distance_at`](Self::distance_at) over rotations: a
    /// uniform grid of `n_theta` angles, a finer scan around the three best
    /// grid angles, then golden-section refinement. Returns the distance and
    /// the minimising angle.
    pub fn distance(&self, omega: &[f64]) -> (f64, f64) {
        let n = self.n_theta;
        let step = 2.0 * PI / n as f64;
        let mut grid: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let th = j as f64 * step;
                (self.distance_at(omega, th), th)
            })
            .collect();
        let mut best = grid.iter().cloned().fold((f64::INFINITY, 0.0), |b, g| if g.0 < b.0 { g } else { b });
        if best.0 == 0.0 {
            return best;
        }
        grid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let fine = 32;
        for &(_, th0) in grid.iter().take(3) {
            let mut local = (f64::INFINITY, th0);
            for i in 0..=2 * fine {
                let th = th0 - step + step * i as f64 / fine as f64;
                let d = self.distance_at(omega, th);
                if d < local.0 {
                    local = (d, th);
                }
            }
            let refined = self.golden(omega, local.1 - step / fine as f64, local.1 + step / fine as f64, local);
            if refined.0 < best.0 {
                best = refined;
            }
            if best.0 == 0.0 {
                break;
            }
        }
        (best.0, best.1.rem_euclid(2.0 * PI))
    }

    fn golden(&self, omega: &[f64], mut a: f64, mut b: f64, mut best: (f64, f64)) -> (f64, f64) {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = self.distance_at(omega, c);
        let mut fd = self.distance_at(omega, d);
        for _ in 0..40 {
            if fc.min(fd) < best.0 {
                best = if fc <= fd { (fc, c) } else { (fd, d) };
            }
            if best.0 == 0.0 || (b - a) < 1e-9 {
                break;
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.distance_at(omega, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.distance_at(omega, d);
            }
        }
        best
    }

    /// `‖ref‖_p`.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.mesh.cell_area())
            .map(|(w, a)| a * w.abs().powf(self.p))
            .sum::<f64>()
            .powf(1.0 / self.p)
    }
}

/// `‖ω − R_θ ref‖_p` minimised over rotations.
pub fn orbital_distance(mesh: Arc<DiscMesh>, omega: &[f64], reference: &[f64], p: f64, n_theta: usize) -> Result<f64> {
    let loc = Arc::new(PointLocator::new(&mesh));
    let r = OrbitReference::new(mesh, loc, reference.to_vec(), p, n_theta)?;
    if omega.len() != r.values.len() {
        return Err(Error::FieldMismatch { expected: r.values.len(), got: omega.len() });
    }
    Ok(r.distance(omega).0)
}

/// Zero-mass perturbation supported on the cells adjacent to the patch edge:
/// inside cells may only lose vorticity and outside cells only gain it, with
/// amplitudes drawn uniformly from `[0, 1]` and the gain rescaled so that the
/// total is zero. `ω + δ·P` stays in the constraint class for
/// `δ ≤ max_delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePerturbation {
    pub direction: Vec<f64>,
    pub max_delta: f64,
    pub seed: u64,
}

pub fn edge_perturbation(mesh: &DiscMesh, omega: &[f64], cap: f64, seed: u64) -> Result<EdgePerturbation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = |w: f64| w >= cap;
    let empty = |w: f64| w <= 0.0;
    let mut dir = vec![0.0; mesh.n_cells()];
    let (mut lost, mut gained) = (0.0, 0.0);
    for c in 0..mesh.n_cells() {
        let w = omega[c];
        let nb = mesh.neighbors(c);
        // one draw per cell keeps the stream independent of the edge layout
        let xi: f64 = rng.gen();
        if full(w) && nb.iter().any(|&n| empty(omega[n])) {
            dir[c] = -cap * xi;
            lost += cap * xi * mesh.cell_area()[c];
        } else if empty(w) && nb.iter().any(|&n| full(omega[n])) {
            dir[c] = cap * xi;
            gained += cap * xi * mesh.cell_area()[c];
        }
    }
    if lost == 0.0 || gained == 0.0 {
        return Err(Error::PerturbationInfeasible("the patch has no edge zone".into()));
    }
    let scale = lost / gained;
    for v in dir.iter_mut() {
        if *v > 0.0 {
            *v *= scale;
        }
    }
    let max_delta = 1.0 / scale.max(1.0);
    Ok(EdgePerturbation { direction: dir, max_delta, seed })
}

impl EdgePerturbation {
    pub fn apply(&self, omega: &[f64], delta: f64) -> Result<Vec<f64>> {
        if !(delta >= 0.0 && delta <= self.max_delta) {
            return Err(Error::PerturbationInfeasible(format!(
                "delta = {delta} outside [0, {}]",
                self.max_delta
            )));
        }
        Ok(omega.iter().zip(&self.direction).map(|(w, p)| w + delta * p).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub delta: f64,
    pub p: f64,
    pub seed: u64,
    pub horizon: f64,
    pub periods: f64,
    pub dt: f64,
    pub initial_distance: f64,
    pub max_distance: f64,
    pub reference_norm: f64,
    /// Distance to the orbit of the unperturbed run, one entry per monitor
    /// row.
    pub tracking: Vec<f64>,
    pub monitors: Vec<Monitor>,
}

impl StabilityReport {
    /// `max_t d(t) / d(0)`; infinite when the run starts on the orbit.
    pub fn growth(&self) -> f64 {
        if self.initial_distance > 0.0 {
            self.max_distance / self.initial_distance
        } else {
            f64::INFINITY
        }
    }

    /// `max_t d_b(t) / d_b(0)` for the distance `d_b` to the unperturbed run.
    pub fn tracking_growth(&self) -> f64 {
        match self.tracking.first() {
            Some(&d0) if d0 > 0.0 => self.tracking.iter().cloned().fold(0.0, f64::max) / d0,
            _ => f64::INFINITY,
        }
    }
}

/// Unperturbed control run together with the perturbed runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityStudy {
    pub baseline: StabilityReport,
    pub perturbed: Vec<StabilityReport>,
}

/// Settings shared by the runs of a stability study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySettings {
    pub p: f64,
    pub periods: f64,
    pub seed: u64,
    pub markers_per_side: usize,
    pub cfl: f64,
    pub n_theta: usize,
    /// Monitor rows per rotation period.
    pub rows_per_period: usize,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        StabilitySettings { p: 2.0, periods: 3.0, seed: 7, markers_per_side: 4, cfl: 0.4, n_theta: 720, rows_per_period: 24 }
    }
}

/// Perturbs the maximiser on its edge zone by each `δ`, evolves all fields
/// in lockstep with the marker scheme, and tracks two `L^p` distances per
/// run: to the rotation orbit of the reference, and to the rotation orbit of
/// the unperturbed run at the same time. The reference is represented
/// through the same marker deposit as the evolved fields, so the baseline
/// starts at distance zero and its growth is the scheme's own drift.
pub fn stability_study(problem: &PatchProblem, reference: &[f64], deltas: &[f64], set: &StabilitySettings) -> Result<StabilityStudy> {
    let mesh = Arc::new(problem.mesh().clone());
    let params = problem.params();
    let pert = edge_perturbation(&mesh, reference, params.patch_level(), set.seed)?;
    let starts = deltas.iter().map(|&d| pert.apply(reference, d)).collect::<Result<Vec<_>>>()?;

    let scheme = Scheme::Markers(set.markers_per_side);
    let mut base = Evolution::new(problem, reference.to_vec(), scheme, 1.0)?;
    let orbit = OrbitReference::new(Arc::clone(&mesh), Arc::clone(&base.locator), base.omega.clone(), set.p, set.n_theta)?;
    let mut runs = starts.into_iter().map(|w| Evolution::new(problem, w, scheme, 1.0)).collect::<Result<Vec<_>>>()?;

    let horizon = set.periods * rotation_period(params);
    let dt = auto_dt(&mesh, &base.velocity, horizon, set.cfl);
    let steps = (horizon / dt).round() as usize;
    let rows = ((set.periods * set.rows_per_period as f64).round() as usize).max(1);
    let stride = (steps / rows).max(1);
    let mut tracking = vec![Vec::new(); runs.len()];

    let record = |base: &mut Evolution, runs: &mut [Evolution], tracking: &mut [Vec<f64>]| -> Result<()> {
        let m = base.monitor(Some(&orbit));
        base.monitors.push(m);
        let now = OrbitReference::new(Arc::clone(&mesh), Arc::clone(&base.locator), base.omega.clone(), set.p, set.n_theta)?;
        for (ev, tr) in runs.iter_mut().zip(tracking.iter_mut()) {
            let m = ev.monitor(Some(&orbit));
            ev.monitors.push(m);
            tr.push(now.distance(&ev.omega).0);
        }
        Ok(())
    };
    record(&mut base, &mut runs, &mut tracking)?;
    let mut i = 0usize;
    while horizon - base.t > 1e-12 * horizon {
        let bound = runs.iter().map(|e| e.cfl_bound()).fold(base.cfl_bound(), f64::min);
        let h = dt.min(0.9 * bound).min(horizon - base.t);
        base.step(h)?;
        for ev in runs.iter_mut() {
            ev.step(h)?;
        }
        i += 1;
        let last = horizon - base.t <= 1e-12 * horizon;
        if last {
            base.t = horizon;
            for ev in runs.iter_mut() {
                ev.t = horizon;
            }
        }
        if i.is_multiple_of(stride) || last {
            record(&mut base, &mut runs, &mut tracking)?;
        }
    }

    let report = |delta: f64, ev: Evolution, tracking: Vec<f64>| {
        let initial_distance = ev.monitors[0].orbital_dist;
        let max_distance = ev.monitors.iter().map(|m| m.orbital_dist).fold(0.0, f64::max);
        StabilityReport {
            delta,
            p: set.p,
            seed: set.seed,
            horizon,
            periods: set.periods,
            dt,
            initial_distance,
            max_distance,
            reference_norm: orbit.norm(),
            tracking,
            monitors: ev.monitors,
        }
    };
    let perturbed = deltas.iter().zip(runs).zip(tracking).map(|((&d, ev), tr)| report(d, ev, tr)).collect();
    let n_rows = base.monitors.len();
    Ok(StabilityStudy { baseline: report(0.0, base, vec![0.0; n_rows]), perturbed })
}

/// A single perturbed run of [`stability_study`].
pub fn stability_experiment(problem: &PatchProblem, reference: &[f64], delta: f64, set: &StabilitySettings) -> Result<StabilityReport> {
    let mut study = stability_study(problem, reference, &[delta], set)?;
    Ok(study.perturbed.remove(0))
}

/// Random field used by tests and the CLI to exercise the solvers.
pub fn random_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::helical_coeff::IdentityField;
    use crate::mesh::build_disc_mesh;

    #[test]
    fn subcell_points_cover_the_triangle_uniformly() {
        for n in 1..6 {
            let pts = subcell_points(n);
            assert_eq!(pts.len(), n * n);
            let ms: f64 = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            assert!((ms - 1.0 / 3.0).abs() < 1e-12);
            assert!(pts.iter().all(|&(s, t)| s > 0.0 && t > 0.0 && s + t < 1.0));
        }
    }

    #[test]
    fn deposit_conserves_mass_and_reproduces_constants() {
        let mesh = build_disc_mesh(1.0, 0.1).unwrap();
        let loc = PointLocator::new(&mesh);
        let omega = vec![2.0; mesh.n_cells()];
        let m = MarkerTransport::seed(&mesh, &omega, 4);
        let dep = m.deposit(&mesh, &loc);
        let mass: f64 = dep.iter().zip(mesh.cell_area()).map(|(w, a)| w * a).sum();
        assert!((mass - 2.0 * mesh.total_area()).abs() < 1e-10);
        assert!(dep.iter().all(|&w| (w - 2.0).abs() < 1e-10));
    }

    #[test]
    fn zero_vorticity_has_zero_velocity() {
        let mesh = Arc::new(build_disc_mesh(1.0, 0.1).unwrap());
        let sys = assemble(mesh.clone(), &IdentityField).unwrap();
        let (_, u) = velocity_of(&sys, &vec![0.0; mesh.n_cells()], None).unwrap();
        assert!(u.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
        let loc = PointLocator::new(&mesh);
        let w = step_semi_lagrangian(&mesh, &loc, &vec![0.0; mesh.n_cells()], &u, 0.1).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cfl_violation_is_reported() {
        let mesh = build_disc_mesh(1.0, 0.1).unwrap();
        let loc = PointLocator::new(&mesh);
        let u: Vec<Point> = mesh.nodes().iter().map(|p| [-p[1], p[0]]).collect();
        let omega = vec![0.0; mesh.n_cells()];
        let e = step_semi_lagrangian(&mesh, &loc, &omega, &u, 1.0).unwrap_err();
        assert!(matches!(e, Error::CflViolation { .. }));
    }

    #[test]
    fn perturbation_is_linear_mass_free_and_box_feasible() {
        let mesh = build_disc_mesh(1.0, 0.05).unwrap();
        let cap = 10.0;
        let omega: Vec<f64> = mesh.centroids().iter().map(|c| if norm2(*c) < 0.09 { cap } else { 0.0 }).collect();
        let pert = edge_perturbation(&mesh, &omega, cap, 3).unwrap();
        let mass: f64 = pert.direction.iter().zip(mesh.cell_area()).map(|(p, a)| p * a).sum();
        assert!(mass.abs() < 1e-12);
        let w = pert.apply(&omega, pert.max_delta).unwrap();
        assert!(w.iter().all(|&v| v >= -1e-12 && v <= cap + 1e-12));
        assert!(pert.apply(&omega, pert.max_delta * 1.01).is_err());
        let again = edge_perturbation(&mesh, &omega, cap, 3).unwrap();
        assert_eq!(pert, again);
    }

    #[test]
    fn clockwise_speed_of_a_synthetic_orbit() {
        let ms: Vec<Monitor> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.1;
                Monitor {
                    t,
                    energy: 0.0,
                    moment_i: 0.0,
                    mass: 1.0,
                    min: 0.0,
                    max: 0.0,
                    centroid: [0.5 * (-0.7 * t).cos(), 0.5 * (-0.7 * t).sin()],
                    orbital_dist: f64::NAN,
                    level_area: 0.0,
                }
            })
            .collect();
        assert!((clockwise_speed(&ms).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn streamline_tracing_preserves_the_stream_function_and_area() {
        let mesh = build_disc_mesh(1.0, 1.0 / 16.0).unwrap();
        let loc = PointLocator::new(&mesh);
        let phi: Vec<f64> = mesh
            .nodes()
            .iter()
            .map(|p| (1.0 - norm2(*p)) * (1.0 + 0.5 * p[0] + 0.3 * p[1] * p[1]))
            .collect();
        let uc = cell_velocity(&mesh, &phi);
        let ones = vec![1.0; mesh.n_cells()];
        let mut m = MarkerTransport::seed(&mesh, &ones, 3);
        let mean_r2 = |m: &MarkerTransport| m.positions.iter().map(|p| norm2(*p)).sum::<f64>() / m.positions.len() as f64;
        let f0: Vec<f64> = m.positions.iter().map(|&x| interpolate_scalar(&mesh, &loc, &phi, x)).collect();
        let r0 = mean_r2(&m);
        for _ in 0..500 {
            m.advect(&mesh, &loc, &uc, 0.01);
        }
        for (x, f) in m.positions.iter().zip(&f0) {
            assert!((interpolate_scalar(&mesh, &loc, &phi, *x) - f).abs() < 1e-12);
        }
        assert!((mean_r2(&m) - r0).abs() < 1e-3);
    }
}
