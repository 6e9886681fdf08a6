//! P1 Galerkin discretisation of `-div(K ∇u) = f` on a [`DiscMesh`] with
//! homogeneous Dirichlet data.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::helical_coeff::{CoefficientField, Mat2, Point};
use crate::linalg::{pcg_jacobi, CgStats, CsrMatrix};
use crate::mesh::DiscMesh;

/// Relative residual targeted by every solve.
pub const SOLVER_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Nodal,
    Cellwise,
}

/// Real values attached to the nodes or the cells of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn nodal(mesh: &DiscMesh, values: Vec<f64>) -> Result<ScalarField> {
        Self::checked(FieldKind::Nodal, mesh.n_nodes(), values)
    }

    pub fn cellwise(mesh: &DiscMesh, values: Vec<f64>) -> Result<ScalarField> {
        Self::checked(FieldKind::Cellwise, mesh.n_cells(), values)
    }

    fn checked(kind: FieldKind, expected: usize, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != expected {
            return Err(Error::FieldMismatch { expected, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ScalarField { kind, values })
    }

    /// Samples `f` at nodes.
    pub fn from_fn_nodal(mesh: &DiscMesh, f: impl Fn(Point) -> f64) -> ScalarField {
        ScalarField { kind: FieldKind::Nodal, values: mesh.nodes().iter().map(|&p| f(p)).collect() }
    }

    /// Samples `f` at cell centroids.
    pub fn from_fn_cellwise(mesh: &DiscMesh, f: impl Fn(Point) -> f64) -> ScalarField {
        ScalarField { kind: FieldKind::Cellwise, values: mesh.centroids().iter().map(|&p| f(p)).collect() }
    }
}

/// Gradients of the three barycentric coordinates of cell `c`.
pub fn shape_gradients(mesh: &DiscMesh, c: usize) -> [[f64; 2]; 3] {
    let p = mesh.cell_vertices(c);
    let two_a = 2.0 * mesh.cell_area()[c];
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (b, cc) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(b[1] - cc[1]) / two_a, (cc[0] - b[0]) / two_a];
    }
    g
}

/// Assembled operator together with its Dirichlet reduction.
#[derive(Clone, Debug)]
pub struct StiffnessSystem {
    mesh: Arc<DiscMesh>,
    full: CsrMatrix,
    reduced: CsrMatrix,
    interior: Vec<usize>,
    node_to_dof: Vec<usize>,
    inv_diag: Vec<f64>,
}

/// Assembles `A_ij = Σ_T ∫_T (K ∇φ_j | ∇φ_i)` with `K` averaged over the
/// three edge midpoints of each triangle.
pub fn assemble(mesh: Arc<DiscMesh>, field: &dyn CoefficientField) -> Result<StiffnessSystem> {
    let locals: Vec<Result<[[f64; 3]; 3]>> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let p = mesh.cell_vertices(c);
            let mut k = Mat2::new(0.0, 0.0, 0.0, 0.0);
            for e in 0..3 {
                let (a, b) = (p[e], p[(e + 1) % 3]);
                let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                let km = field.eval(m);
                if !km.is_spd() {
                    return Err(Error::NonSpdCoefficient { x: m[0], y: m[1] });
                }
                k = k.add(&km);
            }
            let k = k.scale(1.0 / 3.0);
            let g = shape_gradients(&mesh, c);
            let area = mesh.cell_area()[c];
            let mut local = [[0.0; 3]; 3];
            for i in 0..3 {
                let kg = k.apply(g[i]);
                for j in 0..3 {
                    local[j][i] = area * (kg[0] * g[j][0] + kg[1] * g[j][1]);
                }
            }
            // exact symmetry regardless of rounding in K g
            #[allow(clippy::needless_range_loop)]
            for i in 0..3 {
                for j in 0..i {
                    let s = 0.5 * (local[i][j] + local[j][i]);
                    local[i][j] = s;
                    local[j][i] = s;
                }
            }
            Ok(local)
        })
        .collect();

    let mut triplets = Vec::with_capacity(9 * mesh.n_cells());
    for (c, local) in locals.into_iter().enumerate() {
        let local = local?;
        let t = mesh.triangles()[c];
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((t[i], t[j], local[i][j]));
            }
        }
    }
    let full = CsrMatrix::from_triplets(mesh.n_nodes(), &triplets);

    let mut node_to_dof = vec![usize::MAX; mesh.n_nodes()];
    let mut interior = Vec::new();
    for (i, &b) in mesh.boundary_mask().iter().enumerate() {
        if !b {
            node_to_dof[i] = interior.len();
            interior.push(i);
        }
    }
    let reduced = full.restrict(&node_to_dof, interior.len());
    let inv_diag = reduced.diagonal().iter().map(|d| 1.0 / d).collect();
    Ok(StiffnessSystem { mesh, full, reduced, interior, node_to_dof, inv_diag })
}

impl StiffnessSystem {
    pub fn mesh(&self) -> &DiscMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<DiscMesh> {
        Arc::clone(&self.mesh)
    }

    /// Matrix over all nodes, before boundary elimination.
    pub fn full_matrix(&self) -> &CsrMatrix {
        &self.full
    }

    /// Matrix over interior nodes only.
    pub fn reduced_matrix(&self) -> &CsrMatrix {
        &self.reduced
    }

    /// Interior node numbers in degree-of-freedom order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Degree of freedom of `node`, `None` on the boundary.
    pub fn dof(&self, node: usize) -> Option<usize> {
        let d = self.node_to_dof[node];
        (d != usize::MAX).then_some(d)
    }

    pub fn max_iterations(&self) -> usize {
        ((50.0 * (self.interior.len() as f64).sqrt()).ceil() as usize).max(100)
    }

    /// `∫ f φ_i` for nodal `f` interpolated in P1 (consistent mass) or
    /// cellwise-constant `f` (exact `|T|/3` per vertex), over all nodes.
    pub fn load_vector(&self, f: &ScalarField) -> Result<Vec<f64>> {
        let mesh = &*self.mesh;
        let mut b = vec![0.0; mesh.n_nodes()];
        match f.kind {
            FieldKind::Nodal => {
                check_len(&f.values, mesh.n_nodes())?;
                for (t, &a) in mesh.triangles().iter().zip(mesh.cell_area()) {
                    let s: f64 = t.iter().map(|&v| f.values[v]).sum();
                    for &v in t {
                        b[v] += a / 12.0 * (s + f.values[v]);
                    }
                }
            }
            FieldKind::Cellwise => {
                check_len(&f.values, mesh.n_cells())?;
                for ((t, &a), &fv) in mesh.triangles().iter().zip(mesh.cell_area()).zip(&f.values) {
                    for &v in t {
                        b[v] += a / 3.0 * fv;
                    }
                }
            }
        }
        Ok(b)
    }

    /// Solves `A u = b` for a load over all nodes (boundary entries ignored).
    /// `guess` is an optional nodal warm start.
    pub fn solve_load(&self, load: &[f64], guess: Option<&[f64]>) -> Result<(Vec<f64>, CgStats)> {
        self.solve_load_tol(load, guess, SOLVER_TOL)
    }

    /// [`solve_load`](Self::solve_load) with an explicit relative tolerance.
    pub fn solve_load_tol(&self, load: &[f64], guess: Option<&[f64]>, tol: f64) -> Result<(Vec<f64>, CgStats)> {
        check_len(load, self.mesh.n_nodes())?;
        let rhs: Vec<f64> = self.interior.iter().map(|&i| load[i]).collect();
        let mut x: Vec<f64> = match guess {
            Some(g) => {
                check_len(g, self.mesh.n_nodes())?;
                self.interior.iter().map(|&i| g[i]).collect()
            }
            None => vec![0.0; rhs.len()],
        };
        let stats = pcg_jacobi(&self.reduced, &self.inv_diag, &rhs, &mut x, tol, self.max_iterations())?;
        let mut u = vec![0.0; self.mesh.n_nodes()];
        for (d, &i) in self.interior.iter().enumerate() {
            u[i] = x[d];
        }
        Ok((u, stats))
    }

    /// Discrete `𝒢_K f`: nodal solution vanishing on boundary nodes.
    pub fn solve_dirichlet(&self, f: &ScalarField) -> Result<ScalarField> {
        let b = self.load_vector(f)?;
        let (u, _) = self.solve_load(&b, None)?;
        Ok(ScalarField { kind: FieldKind::Nodal, values: u })
    }

    /// Mass-lumped discrete `ℒ_K u = (A u)_i / m_i`, reported at interior
    /// nodes; boundary entries are set to zero.
    pub fn apply_operator(&self, u: &ScalarField) -> Result<ScalarField> {
        if u.kind != FieldKind::Nodal {
            return Err(Error::InvalidParameter("apply_operator expects a nodal field".into()));
        }
        check_len(&u.values, self.mesh.n_nodes())?;
        let au = self.full.mul_vec(&u.values);
        let m = self.mesh.lumped_mass();
        let values = au
            .iter()
            .enumerate()
            .map(|(i, v)| if self.mesh.boundary_mask()[i] { 0.0 } else { v / m[i] })
            .collect();
        Ok(ScalarField { kind: FieldKind::Nodal, values })
    }

    /// `uᵀ A v` over all nodes.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::linalg::dot(u, &self.full.mul_vec(v))
    }
}

fn check_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::FieldMismatch { expected, got: v.len() });
    }
    Ok(())
}

/// Gradient of the P1 interpolant of nodal `u` on cell `c`.
pub fn cell_gradient(mesh: &DiscMesh, u: &[f64], c: usize) -> [f64; 2] {
    let g = shape_gradients(mesh, c);
    let t = mesh.triangles()[c];
    let mut out = [0.0; 2];
    for i in 0..3 {
        out[0] += u[t[i]] * g[i][0];
        out[1] += u[t[i]] * g[i][1];
    }
    out
}

/// Area-weighted average of the cell gradients around each node.
pub fn nodal_gradient(mesh: &DiscMesh, u: &[f64]) -> Vec<[f64; 2]> {
    let mut acc = vec![[0.0; 2]; mesh.n_nodes()];
    for c in 0..mesh.n_cells() {
        let g = cell_gradient(mesh, u, c);
        let a = mesh.cell_area()[c];
        for &v in &mesh.triangles()[c] {
            acc[v][0] += a * g[0];
            acc[v][1] += a * g[1];
        }
    }
    let m = mesh.lumped_mass();
    for (v, g) in acc.iter_mut().enumerate() {
        // lumped mass is one third of the patch area
        let w = 3.0 * m[v];
        g[0] /= w;
        g[1] /= w;
    }
    acc
}

/// Cell averages of a nodal field (vertex mean).
pub fn cell_average(mesh: &DiscMesh, u: &[f64]) -> Vec<f64> {
    mesh.triangles().iter().map(|t| (u[t[0]] + u[t[1]] + u[t[2]]) / 3.0).collect()
}
