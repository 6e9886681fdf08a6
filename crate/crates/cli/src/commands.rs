use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use helipatch_core::checks::{image_regular_part, quick_suite, Check};
use helipatch_core::fem::assemble;
use helipatch_core::green::{sample_pairs, GreenTable};
use helipatch_core::helical_coeff::CoefficientField;
use helipatch_core::helix::{cross, lift_patch, norm3, zeta};
use helipatch_core::mesh::build_disc_mesh;
use helipatch_core::patch::{check_resolution, epsilon_sweep, PatchProblem, SweepTable};
use helipatch_core::transport::{
    auto_dt, clockwise_speed, relative_drift, rotation_period, stability_study, Evolution, Monitor,
    StabilityReport, StabilitySettings,
};
use helipatch_core::{DiscMesh, Error, HelicalField, IdentityField};

use crate::config::Settings;
use crate::error::CliError;
use crate::output::{cell_rows, params_summary, write_csv, write_json, Run, SavedPatch};

const DEFAULT_H: f64 = 1.0 / 32.0;

pub fn mesh(s: &Settings, run: &mut Run) -> Result<(), CliError> {
    let mesh = build_disc_mesh(s.r_domain, s.h.unwrap_or(DEFAULT_H))?;
    let mut buf = Vec::new();
    mesh.write_nodes_csv(&mut buf)?;
    crate::output::write_atomic(&run.file("nodes.csv"), &buf)?;
    buf.clear();
    mesh.write_tris_csv(&mut buf)?;
    crate::output::write_atomic(&run.file("tris.csv"), &buf)?;
    let disc = std::f64::consts::PI * s.r_domain * s.r_domain;
    run.check(Check::below("relative area deficit", (disc - mesh.total_area()) / disc, 1e-2));
    println!("mesh: {} nodes, {} cells, h = {:.5}", mesh.n_nodes(), mesh.n_cells(), mesh.h());
    Ok(())
}

/// Target `x = (xi, yi)` and source `y = (xj, yj)`.
#[derive(Serialize)]
struct GreenRow {
    xi: f64,
    yi: f64,
    xj: f64,
    yj: f64,
    g0: f64,
    s: f64,
    g: f64,
    s_reversed: f64,
}

pub fn green(s: &Settings, run: &mut Run) -> Result<(), CliError> {
    let mesh = Arc::new(build_disc_mesh(s.r_domain, s.h.unwrap_or(DEFAULT_H))?);
    let field: Arc<dyn CoefficientField> = match s.field.as_str() {
        "identity" => Arc::new(IdentityField),
        _ => Arc::new(HelicalField::new(s.k, s.r_domain)?),
    };
    let sys = Arc::new(assemble(mesh.clone(), &*field)?);
    let table = GreenTable::new(sys, field);
    let mut rows = Vec::new();
    let (mut sym, mut image) = (0.0f64, 0.0f64);
    for (a, b) in sample_pairs(&mesh, s.pairs, s.rng_seed) {
        let g = table.sample(a, b)?;
        let back = table.regular_part(b, a)?;
        sym = sym.max((g.s - back).abs());
        if s.field == "identity" && s.r_domain == 1.0 {
            image = image.max((g.s - image_regular_part(g.x, g.y)).abs());
        }
        rows.push(GreenRow { xi: g.x[0], yi: g.x[1], xj: g.y[0], yj: g.y[1], g0: g.g0, s: g.s, g: g.g, s_reversed: back });
    }
    write_csv(&run.file("green_samples.csv"), &rows)?;
    run.check(Check::below("regular part symmetry defect", sym, 5e-3));
    if s.field == "identity" && s.r_domain == 1.0 {
        run.check(Check::below("regular part vs image formula", image, 5e-3));
    }
    println!("green: {} pairs, symmetry defect {sym:.3e}", rows.len());
    Ok(())
}

/// The problem of a configuration: fixed `h` when given, otherwise the
/// resolution rule.
fn problem(s: &Settings) -> Result<PatchProblem, CliError> {
    let params = s.params()?;
    Ok(match s.h {
        Some(h) => {
            let mesh = build_disc_mesh(params.r_domain(), h)?;
            check_resolution(&mesh, &params, 4.0)?;
            PatchProblem::new(params, Arc::new(mesh))?
        }
        None => PatchProblem::with_rule(params, &s.rule())?,
    })
}

fn patch_checks(run: &mut Run, saved: &SavedPatch) {
    let p = &saved.params;
    let slack = saved
        .runs
        .iter()
        .flat_map(|r| r.windows(2).map(|w| (w[0] - w[1]) / w[0].abs().max(1.0)))
        .fold(f64::NEG_INFINITY, f64::max);
    run.check(Check::below("largest energy decrease within a run", slack, 1e-12));
    run.check(Check::below("mass defect", saved.mass_defect, 1e-12 * p.d().max(1.0)));
    run.check(Check::below("box violation", saved.box_violation, 1e-12 * p.patch_level()));
    let floor = -p.alpha() * p.r_domain() * p.r_domain() * p.log_inv_eps() / 2.0;
    run.check(Check::at_least("multiplier above its lower bound", saved.diagnostics.mu, floor));
    run.check(Check::at_least("converged", saved.converged as u8 as f64, 1.0));
}

pub fn patch(s: &Settings, run: &mut Run) -> Result<(), CliError> {
    let prob = problem(s)?;
    let sol = prob.solve(s.seed(), &s.solve_options())?;
    let saved = SavedPatch::new(prob.mesh(), &sol);
    write_csv(&run.file("patch_omega.csv"), cell_rows(prob.mesh(), &sol.state.omega))?;
    write_json(&run.file("patch_diag.json"), &saved)?;
    patch_checks(run, &saved);
    let d = &sol.diagnostics;
    println!(
        "patch ({}): E = {:.6}, mu = {:.6}, centre = ({:.4}, {:.4}), {} cells, {} iterations",
        params_summary(prob.params()),
        d.energy,
        d.mu,
        d.centroid[0],
        d.centroid[1],
        d.active_cells,
        sol.iterations
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepCsv {
    eps: f64,
    rings: Option<usize>,
    h: Option<f64>,
    energy: Option<f64>,
    mu: Option<f64>,
    support_radius: Option<f64>,
    diameter: Option<f64>,
    moment_i: Option<f64>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    table: &'a SweepTable,
    energy_slope_closed_form: f64,
    mu_slope_closed_form: f64,
}

pub fn sweep(s: &Settings, run: &mut Run) -> Result<(), CliError> {
    let base = s.params()?;
    for &e in &s.eps_list {
        base.with_eps(e)?;
    }
    let (table, sols) = epsilon_sweep(&base, &s.eps_list, s.seed(), &s.rule(), &s.solve_options());
    let rows: Vec<SweepCsv> = s
        .eps_list
        .iter()
        .zip(&table.rows)
        .map(|(&eps, r)| match r {
            Ok(r) => SweepCsv {
                eps,
                rings: Some(r.rings),
                h: Some(r.h),
                energy: Some(r.energy),
                mu: Some(r.mu),
                support_radius: Some(r.support_radius),
                diameter: Some(r.diameter),
                moment_i: Some(r.moment_i),
                lambda_min: Some(r.moment_eigenvalues[0]),
                lambda_max: Some(r.moment_eigenvalues[1]),
                iterations: Some(r.iterations),
                converged: Some(r.converged),
                error: None,
            },
            Err(e) => SweepCsv {
                eps,
                rings: None,
                h: None,
                energy: None,
                mu: None,
                support_radius: None,
                diameter: None,
                moment_i: None,
                lambda_min: None,
                lambda_max: None,
                iterations: None,
                converged: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    write_csv(&run.file("sweep.csv"), &rows)?;
    let report = SweepReport { table: &table, energy_slope_closed_form: base.energy_slope(), mu_slope_closed_form: base.multiplier_slope() };
    write_json(&run.file("sweep.json"), &report)?;
    for (&eps, sol) in s.eps_list.iter().zip(&sols) {
        if let Some(sol) = sol {
            let mesh = DiscMesh::with_rings(base.r_domain(), s.rule().rings(&sol.state.params));
            write_json(&run.file(&format!("patch_eps_{eps}.json")), &SavedPatch::new(&mesh, sol))?;
        }
    }
    let failed = table.rows.iter().filter(|r| r.is_err()).count();
    run.check(Check::below("failed rows", failed as f64, 0.5));
    if let Some(f) = table.energy_fit {
        println!("sweep: energy slope {:.5} (closed form {:.5})", f.slope, base.energy_slope());
    }
    if let Some(f) = table.mu_fit {
        println!("sweep: multiplier slope {:.5} (closed form {:.5})", f.slope, base.multiplier_slope());
    }
    Ok(())
}

fn load_or_solve(s: &Settings, from: Option<&Path>) -> Result<(PatchProblem, Vec<f64>), CliError> {
    match from {
        Some(path) => {
            let saved = SavedPatch::load(path)?;
            let prob = PatchProblem::new(saved.params, Arc::new(saved.mesh.build()))?;
            Ok((prob, saved.omega))
        }
        None => {
            let prob = problem(s)?;
            let sol = prob.solve(s.seed(), &s.solve_options())?;
            Ok((prob, sol.state.omega))
        }
    }
}

#[derive(Serialize)]
struct MonitorRow {
    t: f64,
    #[serde(rename = "E")]
    energy: f64,
    #[serde(rename = "I")]
    moment_i: f64,
    mass: f64,
    min: f64,
    max: f64,
    centroid_x: f64,
    centroid_y: f64,
    orbital_dist: Option<f64>,
    level_area: f64,
}

fn monitor_rows(m: &[Monitor]) -> impl Iterator<Item = MonitorRow> + '_ {
    m.iter().map(|m| MonitorRow {
        t: m.t,
        energy: m.energy,
        moment_i: m.moment_i,
        mass: m.mass,
        min: m.min,
        max: m.max,
        centroid_x: m.centroid[0],
        centroid_y: m.centroid[1],
        orbital_dist: m.orbital_dist.is_finite().then_some(m.orbital_dist),
        level_area: m.level_area,
    })
}

#[derive(Serialize)]
struct EvolveReport {
    horizon: f64,
    period: f64,
    dt: f64,
    energy_drift: f64,
    moment_drift: f64,
    mass_drift: f64,
    level_area_drift: f64,
    clockwise_speed: Option<f64>,
    predicted_speed: f64,
}

#[derive(Serialize)]
struct StabilityRow {
    delta: f64,
    t: f64,
    orbital_dist: f64,
    tracking: f64,
}

#[derive(Serialize)]
struct StabilitySummary {
    delta: f64,
    initial_distance: f64,
    max_distance: f64,
    growth: Option<f64>,
    tracking_growth: Option<f64>,
    reference_norm: f64,
}

fn summary(r: &StabilityReport) -> StabilitySummary {
    let finite = |v: f64| v.is_finite().then_some(v);
    StabilitySummary {
        delta: r.delta,
        initial_distance: r.initial_distance,
        max_distance: r.max_distance,
        growth: finite(r.growth()),
        tracking_growth: finite(r.tracking_growth()),
        reference_norm: r.reference_norm,
    }
}

pub fn evolve(s: &Settings, run: &mut Run, from: Option<&Path>) -> Result<(), CliError> {
    let scheme = s.scheme()?;
    let (prob, omega) = load_or_solve(s, from)?;
    let params = *prob.params();
    let period = rotation_period(&params);
    let horizon = s.horizon.unwrap_or(s.periods * period);
    let periods = horizon / period;
    if !s.delta.is_empty() {
        let set = StabilitySettings { periods, ..s.stability() };
        let study = stability_study(&prob, &omega, &s.delta, &set)?;
        write_csv(&run.file("monitors.csv"), monitor_rows(&study.baseline.monitors))?;
        let rows: Vec<StabilityRow> = study
            .perturbed
            .iter()
            .flat_map(|r| {
                r.monitors.iter().zip(&r.tracking).map(|(m, &tr)| StabilityRow {
                    delta: r.delta,
                    t: m.t,
                    orbital_dist: m.orbital_dist,
                    tracking: tr,
                })
            })
            .collect();
        write_csv(&run.file("stability.csv"), &rows)?;
        let sums: Vec<StabilitySummary> = study.perturbed.iter().map(summary).collect();
        write_json(&run.file("stability.json"), &sums)?;
        let drift = study.baseline.max_distance;
        for r in &study.perturbed {
            run.check(Check::below(&format!("growth at delta {}", r.delta), r.growth(), 3.0));
            println!(
                "stability: delta {} initial {:.4e} max {:.4e} (baseline drift {:.4e})",
                r.delta, r.initial_distance, r.max_distance, drift
            );
        }
        return Ok(());
    }
    let mut ev = Evolution::new(&prob, omega, scheme, 1.0)?;
    ev.dt = match s.fixed_dt()? {
        Some(dt) if dt > ev.cfl_bound() => return Err(Error::CflViolation { dt, bound: ev.cfl_bound() }.into()),
        Some(dt) => dt,
        None => auto_dt(prob.mesh(), &ev.velocity, horizon, s.cfl),
    };
    let steps = (horizon / ev.dt).ceil() as usize;
    let rows = ((periods * s.rows_per_period as f64).round() as usize).max(1);
    ev.run(horizon, (steps / rows).max(1), None)?;
    let m = &ev.monitors;
    let report = EvolveReport {
        horizon,
        period,
        dt: ev.dt,
        energy_drift: relative_drift(m, |x| x.energy),
        moment_drift: relative_drift(m, |x| x.moment_i),
        mass_drift: relative_drift(m, |x| x.mass),
        level_area_drift: relative_drift(m, |x| x.level_area),
        clockwise_speed: clockwise_speed(m),
        predicted_speed: params.angular_speed(),
    };
    write_csv(&run.file("monitors.csv"), monitor_rows(m))?;
    write_csv(&run.file("final_omega.csv"), cell_rows(prob.mesh(), &ev.omega))?;
    write_json(&run.file("evolve.json"), &report)?;
    let per = periods.max(1.0);
    run.check(Check::below("energy drift", report.energy_drift, 1e-2 * per));
    run.check(Check::below("moment drift", report.moment_drift, 1e-2 * per));
    run.check(Check::below("mass drift", report.mass_drift, 5e-3));
    println!(
        "evolve: {} steps, energy drift {:.3e}, moment drift {:.3e}, mass drift {:.3e}",
        steps, report.energy_drift, report.moment_drift, report.mass_drift
    );
    Ok(())
}

#[derive(Serialize)]
struct TubeRow {
    x1: f64,
    x2: f64,
    x3: f64,
    w: f64,
    v1: f64,
    v2: f64,
    v3: f64,
    dist_to_helix: f64,
}

#[derive(Serialize)]
struct LiftReport {
    levels: usize,
    turns: f64,
    rho: Vec<f64>,
    circulation: Vec<f64>,
    mean_distance: Vec<f64>,
    patch_diameter: f64,
}

pub fn lift(s: &Settings, run: &mut Run, from: Option<&Path>) -> Result<(), CliError> {
    let (prob, omega) = load_or_solve(s, from)?;
    let params = *prob.params();
    let tube = lift_patch(prob.mesh(), &omega, &params, s.levels, s.turns)?;
    let diameter = helipatch_core::patch::diagnostics(prob.mesh(), &omega)?.diameter;
    let rows = tube.samples.iter().map(|t| TubeRow {
        x1: t.x[0],
        x2: t.x[1],
        x3: t.x[2],
        w: t.w,
        v1: t.v[0],
        v2: t.v[1],
        v3: t.v[2],
        dist_to_helix: t.dist_to_helix,
    });
    write_csv(&run.file("tube.csv"), rows)?;
    let parallel = tube
        .samples
        .iter()
        .map(|t| norm3(cross(t.v, zeta(t.x, params.k()))) / (norm3(t.v) * norm3(zeta(t.x, params.k()))))
        .fold(0.0, f64::max);
    let circ = tube.circulation.iter().map(|c| (c - params.d()).abs()).fold(0.0, f64::max);
    let mean = tube.mean_distance.iter().sum::<f64>() / tube.mean_distance.len() as f64;
    run.check(Check::below("vorticity parallel to zeta", parallel, 1e-12));
    run.check(Check::below("circulation per cross-section minus d", circ, 1e-12 * params.d().max(1.0)));
    run.check(Check::below("mean distance to the helix over patch diameter", mean / diameter, 2.0));
    write_json(
        &run.file("lift.json"),
        &LiftReport {
            levels: s.levels,
            turns: s.turns,
            rho: tube.rho,
            circulation: tube.circulation,
            mean_distance: tube.mean_distance,
            patch_diameter: diameter,
        },
    )?;
    println!("lift: {} samples, mean distance to the helix {mean:.4}", tube.samples.len());
    Ok(())
}

pub fn verify(run: &mut Run) -> Result<(), CliError> {
    let checks = quick_suite()?;
    for c in &checks {
        println!("{} {}: {:.3e} (threshold {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    write_json(&run.file("verify.json"), &checks)?;
    run.checks.extend(checks);
    Ok(())
}
