//! Symmetric sparse matrices in compressed-row form and the conjugate-gradient
//! solver used for every quotient-space and Dirichlet-constrained system.

use crate::error::{Error, Result};

/// Symmetric positive-(semi)definite sparse matrix, compressed row storage.
///
/// All matrices assembled on the same mesh share one sparsity pattern, so
/// linear combinations reduce to elementwise operations on `values`.
#[derive(Clone, Debug)]
pub struct SparseSpd {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Build from triplets; duplicate entries are summed.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
        for &(i, j, v) in triplets {
            assert!(i < dim && j < dim, "triplet index out of range");
            cols[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut cols {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseSpd { dim, row_ptr, col_idx, values }
    }

    /// Zero matrix on an explicit pattern (`row_ptr`/`col_idx` pairs).
    pub fn zero_on_pattern(dim: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Self {
        let nnz = col_idx.len();
        assert_eq!(row_ptr.len(), dim + 1);
        SparseSpd { dim, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Add `coeff * v` at (i, j). The entry must exist in the pattern.
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k] += v,
            Err(_) => panic!("entry ({i},{j}) not in sparsity pattern"),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for i in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    /// u' K v.
    pub fn quadratic_form(&self, u: &[f64], v: &[f64]) -> f64 {
        assert_eq!(u.len(), self.dim);
        let kv = self.matvec(v);
        dot(u, &kv)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// K <- K + c * other. Patterns must match.
    pub fn add_scaled(&mut self, c: f64, other: &SparseSpd) {
        assert_eq!(self.row_ptr, other.row_ptr, "pattern mismatch");
        assert_eq!(self.col_idx, other.col_idx, "pattern mismatch");
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
    }

    /// Linear combination of same-pattern matrices.
    pub fn linear_combination(terms: &[(f64, &SparseSpd)]) -> SparseSpd {
        let first = terms.first().expect("empty linear combination").1;
        let mut out = SparseSpd::zero_on_pattern(
            first.dim,
            first.row_ptr.clone(),
            first.col_idx.clone(),
        );
        for &(c, m) in terms {
            out.add_scaled(c, m);
        }
        out
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        let mut defect: f64 = 0.0;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                defect = defect.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        defect
    }

    /// Dense copy, used by small-system eigenvalue checks in tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }
}

/// Quotient-space constraint: one node pinned to zero removes the constant
/// kernel of the periodic stiffness and leaves a definite system.
#[derive(Clone, Copy, Debug)]
pub struct QuotientConstraint {
    pub pinned_node: usize,
}

impl Default for QuotientConstraint {
    fn default() -> Self {
        QuotientConstraint { pinned_node: 0 }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Default relative residual for all sparse solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;

/// Compatibility tolerance: the rhs of a quotient problem must be orthogonal
/// to constants within this relative defect.
pub const COMPATIBILITY_TOL: f64 = 1e-10;

/// Jacobi-preconditioned conjugate gradients with a set of frozen dofs.
/// Frozen components of the solution (and rhs) are forced to zero; the
/// iteration runs on the complementary subspace.
pub(crate) fn pcg_masked(
    matrix: &SparseSpd,
    rhs: &[f64],
    frozen: &[bool],
    rel_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = matrix.dim();
    assert_eq!(rhs.len(), n);
    assert_eq!(frozen.len(), n);

    let mut b = rhs.to_vec();
    for (bi, &f) in b.iter_mut().zip(frozen) {
        if f {
            *bi = 0.0;
        }
    }
    let norm_b = norm2(&b);
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], 0.0));
    }

    let inv_diag: Vec<f64> = matrix
        .diagonal()
        .iter()
        .zip(frozen)
        .map(|(&d, &f)| if f || d <= 0.0 { 0.0 } else { 1.0 / d })
        .collect();

    let mask = |v: &mut [f64]| {
        for (vi, &f) in v.iter_mut().zip(frozen) {
            if f {
                *vi = 0.0;
            }
        }
    };

    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut kp = vec![0.0; n];

    let max_iter = 10 * n;
    let target = rel_tol * norm_b;
    let mut res = norm2(&r);

    for _ in 0..max_iter {
        if res <= target {
            return Ok((x, res / norm_b));
        }
        matrix.matvec_into(&p, &mut kp);
        mask(&mut kp);
        let pkp = dot(&p, &kp);
        if pkp <= 0.0 {
            return Err(Error::SolverBreakdown { curvature: pkp });
        }
        let alpha = rz / pkp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        res = norm2(&r);
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
    if res <= target {
        return Ok((x, res / norm_b));
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res / norm_b,
        target: rel_tol,
    })
}

/// Solve `K u = f` on the quotient space (kernel of constants) with the given
/// pinned-node constraint. The rhs must be compatible: orthogonal to constants
/// within [`COMPATIBILITY_TOL`]. Returns the solution with `u[pinned] = 0`.
pub fn solve_spd(
    matrix: &SparseSpd,
    rhs: &[f64],
    constraint: QuotientConstraint,
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let n = matrix.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
    }
    let sum: f64 = rhs.iter().sum();
    let scale = norm2(rhs);
    // absolute floor: an all-roundoff rhs (exact zero in exact arithmetic)
    // is compatible even though its constant fraction is O(1) of itself
    if sum.abs() > COMPATIBILITY_TOL * (n as f64).sqrt() * scale + 1e-12 {
        return Err(Error::IncompatibleRhs { mean: sum / n as f64 });
    }
    let mut frozen = vec![false; n];
    frozen[constraint.pinned_node] = true;
    let (u, _res) = pcg_masked(matrix, rhs, &frozen, rel_tol)?;
    Ok(u)
}

/// H1-seminorm inner product `u' K_ref v` against the reference Laplacian.
pub fn h1_semi_inner(u: &[f64], v: &[f64], laplacian: &SparseSpd) -> Result<f64> {
    if u.len() != laplacian.dim() || v.len() != laplacian.dim() {
        return Err(Error::DimensionMismatch {
            expected: laplacian.dim(),
            got: if u.len() != laplacian.dim() { u.len() } else { v.len() },
        });
    }
    Ok(laplacian.quadratic_form(u, v))
}
