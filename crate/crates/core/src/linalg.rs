//! Compressed sparse row storage and preconditioned conjugate gradients.

use crate::error::{Error, Result};

/// Square sparse matrix in CSR layout with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n × n` matrix from triplets, summing duplicates in input
    /// order so the result is independent of thread scheduling upstream.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let at = fill[i];
            cols[at] = j;
            vals[at] = v;
            fill[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            // stable sort keeps the summation order of equal columns
            scratch.sort_by_key(|&(c, _)| c);
            let mut iter = scratch.iter().peekable();
            while let Some(&(c, v)) = iter.next() {
                let mut acc = v;
                while let Some(&&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    acc += v2;
                    iter.next();
                }
                col_idx.push(c);
                values.push(acc);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `max |A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Principal submatrix on `keep` (indices into the original numbering,
    /// `map[i]` is the new index or `usize::MAX` when dropped).
    pub fn restrict(&self, map: &[usize], new_n: usize) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(new_n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut order: Vec<usize> = (0..self.n).filter(|&i| map[i] != usize::MAX).collect();
        order.sort_by_key(|&i| map[i]);
        for i in order {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    col_idx.push(map[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n: new_n, row_ptr, col_idx, values }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a converged CG solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD `a`.
///
/// `x` holds the initial guess on entry and the solution on exit. The
/// residual is measured as `‖b − Ax‖ / ‖b‖`; a zero right-hand side returns
/// `x = 0` immediately.
pub fn pcg_jacobi(
    a: &CsrMatrix,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = norm(&r) / bnorm;
    if rel <= rel_tol {
        return Ok(CgStats { iterations: 0, relative_residual: rel });
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverDivergence { iterations: it, residual: rel });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= rel_tol {
            // recompute the true residual to guard against drift of the recurrence
            let mut true_r = a.mul_vec(x);
            for i in 0..n {
                true_r[i] = b[i] - true_r[i];
            }
            let true_rel = norm(&true_r) / bnorm;
            if true_rel <= rel_tol * 10.0 {
                return Ok(CgStats { iterations: it, relative_residual: true_rel });
            }
            r = true_r;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDivergence { iterations: max_iter, residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, &[(0, 1, 1.0), (0, 0, 2.0), (0, 1, 0.5), (1, 1, 3.0)]);
        assert_eq!(m.get(0, 1), 1.5);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let a = laplace_1d(n);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&xs);
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut x = vec![0.0; n];
        let st = pcg_jacobi(&a, &inv, &b, &mut x, 1e-12, 500).unwrap();
        assert!(st.relative_residual <= 1e-11);
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_divergence_at_iteration_cap() {
        let a = laplace_1d(200);
        let b = vec![1.0; 200];
        let inv = vec![0.5; 200];
        let mut x = vec![0.0; 200];
        let e = pcg_jacobi(&a, &inv, &b, &mut x, 1e-14, 3).unwrap_err();
        assert!(matches!(e, Error::SolverDivergence { iterations: 3, .. }));
    }

    #[test]
    fn restrict_keeps_principal_block() {
        let a = laplace_1d(4);
        let map = [usize::MAX, 0, 1, usize::MAX];
        let r = a.restrict(&map, 2);
        assert_eq!(r.get(0, 0), 2.0);
        assert_eq!(r.get(0, 1), -1.0);
        assert_eq!(r.get(1, 0), -1.0);
        assert_eq!(r.nnz(), 4);
    }
}
