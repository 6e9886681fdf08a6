//! Constrained energy maximisation over patches `0 ≤ ω ≤ 1/ε²`, `∫ω = d`.
//!
//! The energy is `E(ω) = ½∫ω𝒢ω − (α/2) ln(1/ε) ∫|x|²ω` with `𝒢` the discrete
//! Green's operator of `K_H`. Both integrals are evaluated through the same
//! load vector `b = Bω`, so `E` is an exact quadratic in the cell values
//! whose gradient is `|T|·ψ̃_T`, the cell average of the nodal stream
//! deviation. Each bathtub step therefore maximises the linearisation and,
//! because `𝒢` is positive, never decreases the energy.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble, cell_average, FieldKind, ScalarField, StiffnessSystem};
use crate::helical_coeff::{dist, norm2, HelixParams, Point};
use crate::linalg::dot;
use crate::mesh::{build_disc_mesh, DiscMesh};
use crate::stats::{fit_line, LineFit};

/// Linear solves inside the iteration are tighter than the default so that
/// solver noise stays well below the ascent slack.
const PATCH_SOLVER_TOL: f64 = 1e-12;

/// Discrete bathtub: fills cells in decreasing order of `weight` at level
/// `cap` until the mass `∫ω = mass` is reached, with one fractional cell.
///
/// Ties are broken by ascending cell index. Returns `ω` and the weight of
/// the last filled cell.
pub fn bathtub(weight: &[f64], areas: &[f64], cap: f64, mass: f64) -> Result<(Vec<f64>, f64)> {
    let total: f64 = areas.iter().sum();
    if mass > cap * total {
        return Err(Error::InfeasibleMass { required: mass / cap, available: total });
    }
    let mut order: Vec<usize> = (0..weight.len()).collect();
    order.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));
    let mut omega = vec![0.0; weight.len()];
    let mut remaining = mass;
    let mut level = f64::NAN;
    for &c in &order {
        if remaining <= 0.0 {
            break;
        }
        let full = cap * areas[c];
        level = weight[c];
        if full <= remaining {
            omega[c] = cap;
            remaining -= full;
        } else {
            omega[c] = remaining / areas[c];
            remaining = 0.0;
        }
    }
    Ok((omega, level))
}

/// Cellwise vorticity with its multiplier and energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchState {
    pub omega: Vec<f64>,
    pub params: HelixParams,
    pub mu: f64,
    pub energy: f64,
    /// Nodal `𝒢ω − (α|x|²/2) ln(1/ε)`.
    pub psi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchDiagnostics {
    pub centroid: Point,
    pub support_radius: f64,
    /// Largest distance between vertices of active cells.
    pub diameter: f64,
    /// `∫(x − X)(x − X)ᵗ ω / d`, row major.
    pub second_moment: [[f64; 2]; 2],
    /// Eigenvalues of `second_moment`, ascending.
    pub moment_eigenvalues: [f64; 2],
    pub energy: f64,
    /// `½∫|x|²ω`.
    pub moment_i: f64,
    pub mu: f64,
    pub active_cells: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative energy change below which a bathtub run stops.
    pub tol: f64,
    /// Cap on the total number of bathtub steps.
    pub max_iter: usize,
    /// Move the patch radially when plain bathtub steps stall.
    pub translate: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 2000, translate: true }
    }
}

#[derive(Clone, Debug)]
pub struct PatchSolution {
    pub state: PatchState,
    pub diagnostics: PatchDiagnostics,
    /// Energies of the accepted iterates, nondecreasing.
    pub trace: Vec<f64>,
    /// Every bathtub run performed, one energy sequence per run.
    pub runs: Vec<Vec<f64>>,
    pub iterations: usize,
    pub translations: usize,
    pub converged: bool,
    /// Largest `|∫ω − d|` over all iterates.
    pub mass_defect: f64,
    /// Largest excursion of any iterate outside `[0, 1/ε²]`.
    pub box_violation: f64,
}

/// Constraint bookkeeping over every iterate of a solve.
#[derive(Clone, Copy, Debug, Default)]
struct Audit {
    mass_defect: f64,
    box_violation: f64,
}

impl Audit {
    fn record(&mut self, problem: &PatchProblem, omega: &[f64]) {
        let cap = problem.params.patch_level();
        self.mass_defect = self.mass_defect.max((problem.mass(omega) - problem.params.d()).abs());
        for &w in omega {
            self.box_violation = self.box_violation.max(-w).max(w - cap);
        }
    }
}

/// `ω` together with everything derived from one linear solve.
#[derive(Clone, Debug)]
struct Evaluated {
    omega: Vec<f64>,
    u: Vec<f64>,
    energy: f64,
}

/// Assembled `K_H` problem for fixed parameters and mesh.
pub struct PatchProblem {
    params: HelixParams,
    sys: StiffnessSystem,
    r2: Vec<f64>,
}

impl PatchProblem {
    pub fn new(params: HelixParams, mesh: Arc<DiscMesh>) -> Result<PatchProblem> {
        if (mesh.radius() - params.r_domain()).abs() > 1e-12 * params.r_domain() {
            return Err(Error::InvalidParameter(format!(
                "mesh radius {} differs from the domain radius {}",
                mesh.radius(),
                params.r_domain()
            )));
        }
        let required = params.d() * params.eps() * params.eps();
        if required > mesh.total_area() {
            return Err(Error::InfeasibleMass { required, available: mesh.total_area() });
        }
        let sys = assemble(Arc::clone(&mesh), &params.field())?;
        let r2 = mesh.nodes().iter().map(|&p| norm2(p)).collect();
        Ok(PatchProblem { params, sys, r2 })
    }

    /// Builds the mesh from the resolution rule, then the problem.
    pub fn with_rule(params: HelixParams, rule: &ResolutionRule) -> Result<PatchProblem> {
        let rings = rule.rings(&params);
        Self::new(params, Arc::new(DiscMesh::with_rings(params.r_domain(), rings)))
    }

    pub fn params(&self) -> &HelixParams {
        &self.params
    }

    pub fn system(&self) -> &StiffnessSystem {
        &self.sys
    }

    pub fn mesh(&self) -> &DiscMesh {
        self.sys.mesh()
    }

    fn check(&self, omega: &[f64]) -> Result<()> {
        let n = self.mesh().n_cells();
        if omega.len() != n {
            return Err(Error::FieldMismatch { expected: n, got: omega.len() });
        }
        if let Some(i) = omega.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    fn moment_coeff(&self) -> f64 {
        0.5 * self.params.alpha() * self.params.log_inv_eps()
    }

    fn evaluate(&self, omega: Vec<f64>, guess: Option<&[f64]>) -> Result<Evaluated> {
        self.check(&omega)?;
        let b = self.sys.load_vector(&ScalarField { kind: FieldKind::Cellwise, values: omega.clone() })?;
        let (u, _) = self.sys.solve_load_tol(&b, guess, PATCH_SOLVER_TOL)?;
        // bᵀu − ½uᵀAu equals ½bᵀA⁻¹b up to a term quadratic in the solver error
        let kinetic = dot(&b, &u) - 0.5 * self.sys.bilinear(&u, &u);
        let energy = kinetic - self.moment_coeff() * dot(&b, &self.r2);
        Ok(Evaluated { omega, u, energy })
    }

    fn psi_of(&self, u: &[f64]) -> Vec<f64> {
        let c = self.moment_coeff();
        u.iter().zip(&self.r2).map(|(ui, r2)| ui - c * r2).collect()
    }

    /// `½∫ω𝒢ω`.
    pub fn kinetic_energy(&self, omega: &[f64]) -> Result<f64> {
        let ev = self.evaluate(omega.to_vec(), None)?;
        Ok(ev.energy + self.moment_coeff() * self.integrate_r2(omega))
    }

    /// `E_ε(ω)`.
    pub fn energy(&self, omega: &[f64]) -> Result<f64> {
        Ok(self.evaluate(omega.to_vec(), None)?.energy)
    }

    /// `∫|x|²ω` with `|x|²` interpolated in P1.
    pub fn integrate_r2(&self, omega: &[f64]) -> f64 {
        let r2c = cell_average(self.mesh(), &self.r2);
        omega.iter().zip(self.mesh().cell_area()).zip(&r2c).map(|((w, a), r)| w * a * r).sum()
    }

    /// `∫ω`.
    pub fn mass(&self, omega: &[f64]) -> f64 {
        omega.iter().zip(self.mesh().cell_area()).map(|(w, a)| w * a).sum()
    }

    /// Nodal `𝒢ω − (α|x|²/2) ln(1/ε)`.
    pub fn stream_deviation(&self, omega: &[f64]) -> Result<ScalarField> {
        let ev = self.evaluate(omega.to_vec(), None)?;
        Ok(ScalarField { kind: FieldKind::Nodal, values: self.psi_of(&ev.u) })
    }

    fn bathtub_from_psi(&self, psi: &[f64]) -> Result<(Vec<f64>, f64)> {
        let cell_psi = cell_average(self.mesh(), psi);
        bathtub(&cell_psi, self.mesh().cell_area(), self.params.patch_level(), self.params.d())
    }

    /// One bathtub update `ω ↦ (ω', μ)`.
    pub fn bathtub_step(&self, omega: &[f64]) -> Result<(Vec<f64>, f64)> {
        let psi = self.stream_deviation(omega)?;
        self.bathtub_from_psi(&psi.values)
    }

    /// Patch of the right area centred as close to `center` as the mesh allows.
    pub fn seed_disc(&self, center: Point) -> Result<Vec<f64>> {
        let w: Vec<f64> = self.mesh().centroids().iter().map(|&c| -norm2([c[0] - center[0], c[1] - center[1]])).collect();
        Ok(bathtub(&w, self.mesh().cell_area(), self.params.patch_level(), self.params.d())?.0)
    }

    /// Bathtub iteration from `omega0` until the energy and the support settle.
    fn converge(
        &self,
        omega0: Vec<f64>,
        guess: Option<&[f64]>,
        tol: f64,
        budget: &mut usize,
        audit: &mut Audit,
    ) -> Result<(Evaluated, f64, Vec<f64>, bool)> {
        let mean_area = self.mesh().total_area() / self.mesh().n_cells() as f64;
        let cap = self.params.patch_level();
        audit.record(self, &omega0);
        let mut cur = self.evaluate(omega0, guess)?;
        let mut trace = vec![cur.energy];
        let mut mu = f64::NAN;
        loop {
            if *budget == 0 {
                let psi = self.psi_of(&cur.u);
                mu = if mu.is_nan() { self.bathtub_from_psi(&psi)?.1 } else { mu };
                return Ok((cur, mu, trace, false));
            }
            *budget -= 1;
            let psi = self.psi_of(&cur.u);
            let (next, level) = self.bathtub_from_psi(&psi)?;
            audit.record(self, &next);
            mu = level;
            let moved: f64 = next
                .iter()
                .zip(&cur.omega)
                .zip(self.mesh().cell_area())
                .map(|((a, b), ar)| (a - b).abs() * ar / cap)
                .sum();
            let guess = cur.u.clone();
            let nxt = self.evaluate(next, Some(&guess))?;
            trace.push(nxt.energy);
            let de = (nxt.energy - cur.energy).abs();
            cur = nxt;
            if de < tol * cur.energy.abs() && moved < mean_area {
                return Ok((cur, mu, trace, true));
            }
        }
    }

    /// Maximises `E_ε` from a disc seeded at `seed`.
    ///
    /// Plain bathtub steps move the support by less than a cell once the
    /// patch is resolved, so they stall before reaching the optimal radius.
    /// With `opts.translate` the solver then re-seeds the patch at radially
    /// shifted positions, converges each candidate, and keeps it only when
    /// the energy increases; the step is halved down to a quarter cell.
    pub fn solve(&self, seed: Point, opts: &SolveOptions) -> Result<PatchSolution> {
        let r_dom = self.params.r_domain();
        if !(norm2(seed).sqrt() < r_dom) {
            return Err(Error::InvalidParameter(format!("seed ({}, {}) is outside the disc", seed[0], seed[1])));
        }
        let mut budget = opts.max_iter;
        let mut audit = Audit::default();
        let (mut best, mut mu, first, mut converged) =
            self.converge(self.seed_disc(seed)?, None, opts.tol, &mut budget, &mut audit)?;
        let mut trace = first.clone();
        let mut runs = vec![first];
        let mut translations = 0;

        if opts.translate && converged {
            let h = self.mesh().h();
            let reach = 2.0 * self.params.c_star() * self.params.eps();
            let max_step = 0.2 * r_dom;
            let mut step = (0.05 * r_dom).max(2.0 * h);
            let mut signs = [1.0, -1.0];
            while step >= 0.25 * h && budget > 0 {
                let x = centroid_of(self.mesh(), &best.omega, self.params.d());
                let rx = norm2(x).sqrt();
                let dir = if rx > 1e-12 { [x[0] / rx, x[1] / rx] } else { [1.0, 0.0] };
                let mut moved = false;
                for sgn in signs {
                    let target = [x[0] + sgn * step * dir[0], x[1] + sgn * step * dir[1]];
                    if norm2(target).sqrt() + reach >= r_dom {
                        continue;
                    }
                    let (cand, cmu, ctrace, cconv) =
                        self.converge(self.seed_disc(target)?, Some(&best.u), opts.tol, &mut budget, &mut audit)?;
                    runs.push(ctrace);
                    if cconv && cand.energy > best.energy {
                        trace.push(cand.energy);
                        best = cand;
                        mu = cmu;
                        translations += 1;
                        moved = true;
                        // keep going the same way, faster
                        signs = [sgn, -sgn];
                        step = (2.0 * step).min(max_step);
                        break;
                    }
                    if budget == 0 {
                        break;
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
            converged = budget > 0;
        }

        let psi = self.psi_of(&best.u);
        let state = PatchState { omega: best.omega, params: self.params, mu, energy: best.energy, psi };
        let diagnostics = self.diagnostics(&state)?;
        Ok(PatchSolution {
            state,
            diagnostics,
            trace,
            runs,
            iterations: opts.max_iter - budget,
            translations,
            converged,
            mass_defect: audit.mass_defect,
            box_violation: audit.box_violation,
        })
    }

    /// Geometric and energetic summary of a state on this problem's mesh.
    pub fn diagnostics(&self, state: &PatchState) -> Result<PatchDiagnostics> {
        self.check(&state.omega)?;
        let mut d = diagnostics(self.mesh(), &state.omega)?;
        d.energy = state.energy;
        d.mu = state.mu;
        d.moment_i = 0.5 * self.integrate_r2(&state.omega);
        Ok(d)
    }
}

fn centroid_of(mesh: &DiscMesh, omega: &[f64], mass: f64) -> Point {
    let mut x = [0.0; 2];
    for ((w, a), c) in omega.iter().zip(mesh.cell_area()).zip(mesh.centroids()) {
        x[0] += w * a * c[0];
        x[1] += w * a * c[1];
    }
    [x[0] / mass, x[1] / mass]
}

/// Mesh-only diagnostics of a cellwise vorticity; `energy` and `mu` are
/// left at zero and `moment_i` uses the exact per-cell integral of `|x|²`.
pub fn diagnostics(mesh: &DiscMesh, omega: &[f64]) -> Result<PatchDiagnostics> {
    let active: Vec<usize> = (0..mesh.n_cells()).filter(|&c| omega[c] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mass: f64 = active.iter().map(|&c| omega[c] * mesh.cell_area()[c]).sum();
    let x = centroid_of(mesh, omega, mass);

    let mut m = [[0.0; 2]; 2];
    let mut moment = 0.0;
    for &c in &active {
        let w = omega[c] * mesh.cell_area()[c];
        let v = mesh.cell_vertices(c).map(|p| [p[0] - x[0], p[1] - x[1]]);
        let g = mesh.centroids()[c];
        let g = [g[0] - x[0], g[1] - x[1]];
        // ∫_T y yᵗ = |T|/12 (Σ v_i v_iᵗ + 9 g gᵗ)
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = v.iter().map(|p| p[i] * p[j]).sum();
                m[i][j] += w * (s + 9.0 * g[i] * g[j]) / 12.0;
            }
        }
        let abs = mesh.cell_vertices(c);
        let s: f64 = abs.iter().map(|&p| norm2(p)).sum();
        moment += w * (s + 9.0 * norm2(mesh.centroids()[c])) / 12.0;
    }
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v /= mass;
        }
    }
    let mm = crate::helical_coeff::Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1]);

    let mut verts: Vec<usize> = active.iter().flat_map(|&c| mesh.triangles()[c]).collect();
    verts.sort_unstable();
    verts.dedup();
    let mut diameter: f64 = 0.0;
    for (i, &a) in verts.iter().enumerate() {
        for &b in &verts[i + 1..] {
            diameter = diameter.max(dist(mesh.nodes()[a], mesh.nodes()[b]));
        }
    }

    Ok(PatchDiagnostics {
        centroid: x,
        support_radius: norm2(x).sqrt(),
        diameter,
        second_moment: m,
        moment_eigenvalues: mm.sym_eigenvalues(),
        energy: 0.0,
        moment_i: 0.5 * moment,
        mu: 0.0,
        active_cells: active.len(),
    })
}

/// Mesh size as a function of `ε`: enough rings that the predicted support
/// area `dε²` covers about `cells_in_support` triangles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRule {
    pub cells_in_support: f64,
    pub min_rings: usize,
}

impl Default for ResolutionRule {
    fn default() -> Self {
        ResolutionRule { cells_in_support: 40.0, min_rings: 16 }
    }
}

impl ResolutionRule {
    pub fn rings(&self, params: &HelixParams) -> usize {
        let support = params.d() * params.eps() * params.eps();
        let r = params.r_domain();
        let n = r * (self.cells_in_support * std::f64::consts::PI / (6.0 * support)).sqrt();
        (n.ceil() as usize).max(self.min_rings)
    }
}

/// Refuses meshes on which the predicted support covers fewer than
/// `min_cells` triangles.
pub fn check_resolution(mesh: &DiscMesh, params: &HelixParams, min_cells: f64) -> Result<()> {
    let mean_area = mesh.total_area() / mesh.n_cells() as f64;
    let cells = params.d() * params.eps() * params.eps() / mean_area;
    if cells < min_cells {
        return Err(Error::InvalidResolution(format!(
            "eps = {} gives a support of {cells:.1} cells on this mesh; at least {min_cells} are needed",
            params.eps()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub rings: usize,
    pub h: f64,
    pub energy: f64,
    pub mu: f64,
    pub support_radius: f64,
    pub diameter: f64,
    pub moment_i: f64,
    pub moment_eigenvalues: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<std::result::Result<SweepRow, String>>,
    /// `E_ε` against `ln(1/ε)`.
    pub energy_fit: Option<LineFit>,
    /// `μ` against `ln(1/ε)`.
    pub mu_fit: Option<LineFit>,
    /// `ln diam` against `ln ε`.
    pub diameter_fit: Option<LineFit>,
}

/// One solve per `ε`, run concurrently; failed rows are kept as errors
/// and left out of the fits.
pub fn epsilon_sweep(
    base: &HelixParams,
    eps_list: &[f64],
    seed: Point,
    rule: &ResolutionRule,
    opts: &SolveOptions,
) -> (SweepTable, Vec<Option<PatchSolution>>) {
    let results: Vec<Result<PatchSolution>> = eps_list
        .par_iter()
        .map(|&eps| {
            let params = base.with_eps(eps)?;
            let problem = PatchProblem::with_rule(params, rule)?;
            problem.solve(seed, opts)
        })
        .collect();

    let mut rows = Vec::with_capacity(eps_list.len());
    let mut sols = Vec::with_capacity(eps_list.len());
    for (&eps, res) in eps_list.iter().zip(results) {
        match res {
            Ok(sol) => {
                let d = &sol.diagnostics;
                let rings = rule.rings(&sol.state.params);
                let mesh_h = crate::mesh::DiscMesh::with_rings(base.r_domain(), rings).h();
                rows.push(Ok(SweepRow {
                    eps,
                    rings,
                    h: mesh_h,
                    energy: d.energy,
                    mu: d.mu,
                    support_radius: d.support_radius,
                    diameter: d.diameter,
                    moment_i: d.moment_i,
                    moment_eigenvalues: d.moment_eigenvalues,
                    iterations: sol.iterations,
                    converged: sol.converged,
                }));
                sols.push(Some(sol));
            }
            Err(e) => {
                rows.push(Err(format!("{}: {e}", e.kind())));
                sols.push(None);
            }
        }
    }
    let ok: Vec<&SweepRow> = rows.iter().filter_map(|r| r.as_ref().ok()).collect();
    let l: Vec<f64> = ok.iter().map(|r| -r.eps.ln()).collect();
    let energy_fit = fit_line(&l, &ok.iter().map(|r| r.energy).collect::<Vec<_>>());
    let mu_fit = fit_line(&l, &ok.iter().map(|r| r.mu).collect::<Vec<_>>());
    let le: Vec<f64> = ok.iter().map(|r| r.eps.ln()).collect();
    let diameter_fit = fit_line(&le, &ok.iter().map(|r| r.diameter.ln()).collect::<Vec<_>>());
    (SweepTable { rows, energy_fit, mu_fit, diameter_fit }, sols)
}

/// Convenience: mesh of target size `h` and the problem on it.
pub fn problem_with_h(params: HelixParams, h: f64) -> Result<PatchProblem> {
    PatchProblem::new(params, Arc::new(build_disc_mesh(params.r_domain(), h)?))
}
