//! Artifact persistence: atomic writes, CSV tables, the saved patch format
//! and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use helipatch_core::checks::Check;
use helipatch_core::patch::{PatchDiagnostics, PatchSolution};
use helipatch_core::{DiscMesh, HelixParams};

use crate::config::Settings;
use crate::error::CliError;

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Cellwise field with its cell geometry.
#[derive(Serialize)]
pub struct CellRow {
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub area: f64,
    pub omega: f64,
}

pub fn cell_rows<'a>(mesh: &'a DiscMesh, omega: &'a [f64]) -> impl Iterator<Item = CellRow> + 'a {
    (0..mesh.n_cells()).map(move |c| CellRow {
        cell: c,
        x: mesh.centroids()[c][0],
        y: mesh.centroids()[c][1],
        area: mesh.cell_area()[c],
        omega: omega[c],
    })
}

/// Mesh of a saved state: the ring triangulation is fixed by its radius
/// and ring count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub radius: f64,
    pub rings: usize,
    pub h: f64,
}

impl MeshSpec {
    pub fn of(mesh: &DiscMesh) -> MeshSpec {
        MeshSpec { radius: mesh.radius(), rings: mesh.rings(), h: mesh.h() }
    }

    pub fn build(&self) -> DiscMesh {
        DiscMesh::with_rings(self.radius, self.rings)
    }
}

/// Converged patch as written to `patch_diag.json`; enough to rebuild the
/// problem without re-specifying the physics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedPatch {
    pub params: HelixParams,
    pub mesh: MeshSpec,
    pub diagnostics: PatchDiagnostics,
    pub iterations: usize,
    pub translations: usize,
    pub converged: bool,
    pub mass_defect: f64,
    pub box_violation: f64,
    /// Energy sequence of every bathtub run.
    pub runs: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

impl SavedPatch {
    pub fn new(mesh: &DiscMesh, sol: &PatchSolution) -> SavedPatch {
        SavedPatch {
            params: sol.state.params,
            mesh: MeshSpec::of(mesh),
            diagnostics: sol.diagnostics.clone(),
            iterations: sol.iterations,
            translations: sol.translations,
            converged: sol.converged,
            mass_defect: sol.mass_defect,
            box_violation: sol.box_violation,
            runs: sol.runs.clone(),
            omega: sol.state.omega.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<SavedPatch, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let saved: SavedPatch = serde_json::from_str(&text)?;
        let n = 6 * saved.mesh.rings * saved.mesh.rings;
        if saved.omega.len() != n {
            return Err(helipatch_core::Error::FieldMismatch { expected: n, got: saved.omega.len() }.into());
        }
        Ok(saved)
    }
}

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Settings,
    outputs: &'a [String],
    checks: &'a [Check],
    all_checks_pass: bool,
    timings: Timings,
}

/// Accumulates the artifacts and checks of one command.
pub struct Run {
    pub dir: PathBuf,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Run, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Run { dir: dir.to_path_buf(), outputs: Vec::new(), checks: Vec::new() })
    }

    /// Path of a new artifact, recorded for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn finish(self, command: &str, settings: &Settings, seconds: f64) -> Result<Vec<Check>, CliError> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: settings,
            outputs: &self.outputs,
            checks: &self.checks,
            all_checks_pass: self.checks.iter().all(|c| c.pass),
            timings: Timings { total_seconds: seconds },
        };
        write_json(&self.dir.join("manifest.json"), &manifest)?;
        Ok(self.checks)
    }
}

pub fn params_summary(p: &HelixParams) -> String {
    format!("k={} d={} r*={} R*={} eps={}", p.k(), p.d(), p.r_star(), p.r_domain(), p.eps())
}
