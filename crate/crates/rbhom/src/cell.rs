//! High-fidelity solution of the parametrized cell problems and the
//! homogenized tensor.
//!
//! `AffineSystem` assembles the 18 block stiffness matrices, the 18 block
//! load vectors and the reference Laplacian once per mesh; every parametrized
//! system is then a linear combination with the scalar coefficients from
//! [`crate::param::affine_coeffs`]. The compliance-type output matrix is
//! `s_ij = -F_j . w_i` and the homogenized tensor `A* = mean + s`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::assemble::{
    assemble_block_load, assemble_block_stiffness, assemble_reference_laplacian, Direction,
};
use crate::error::Result;
use crate::mesh::{PeriodicMesh, NUM_BLOCKS};
use crate::param::{affine_coeffs, AffineCoeffs, CellParam};
use crate::sparse::{dot, solve_spd, QuotientConstraint, SparseSpd, DEFAULT_SOLVE_TOL};

/// Parameter-independent FE building bricks for one mesh, kept in memory.
pub struct AffineSystem {
    mesh: PeriodicMesh,
    stiffness_blocks: Vec<[SparseSpd; 2]>,
    load_blocks: Vec<[Vec<f64>; 2]>,
    k_ref: SparseSpd,
    constraint: QuotientConstraint,
    truth_solves: AtomicU64,
}

impl AffineSystem {
    pub fn new(mesh: PeriodicMesh) -> Self {
        let stiffness_blocks: Vec<[SparseSpd; 2]> = (0..NUM_BLOCKS)
            .map(|k| {
                [
                    assemble_block_stiffness(&mesh, k, Direction::E1),
                    assemble_block_stiffness(&mesh, k, Direction::E2),
                ]
            })
            .collect();
        let load_blocks: Vec<[Vec<f64>; 2]> = (0..NUM_BLOCKS)
            .map(|k| {
                [
                    assemble_block_load(&mesh, k, Direction::E1),
                    assemble_block_load(&mesh, k, Direction::E2),
                ]
            })
            .collect();
        let k_ref = assemble_reference_laplacian(&mesh);
        AffineSystem {
            mesh,
            stiffness_blocks,
            load_blocks,
            k_ref,
            constraint: QuotientConstraint::default(),
            truth_solves: AtomicU64::new(0),
        }
    }

    pub fn mesh(&self) -> &PeriodicMesh {
        &self.mesh
    }

    pub fn n_dof(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn k_ref(&self) -> &SparseSpd {
        &self.k_ref
    }

    pub fn constraint(&self) -> QuotientConstraint {
        self.constraint
    }

    pub fn stiffness_block(&self, block: usize, dir: Direction) -> &SparseSpd {
        &self.stiffness_blocks[block][dir.index()]
    }

    pub fn load_block(&self, block: usize, dir: Direction) -> &[f64] {
        &self.load_blocks[block][dir.index()]
    }

    /// Number of full FE cell solves performed so far (both directions of one
    /// parameter count as one solve call).
    pub fn truth_solve_count(&self) -> u64 {
        self.truth_solves.load(Ordering::Relaxed)
    }

    /// Assemble the parametrized stiffness and both load vectors:
    /// `K(x) = sum c_kd M_kd`, `F_i(x) = -sum_k load[k][i] G_ki`.
    pub fn assemble(&self, coeffs: &AffineCoeffs) -> (SparseSpd, [Vec<f64>; 2]) {
        let mut terms = Vec::with_capacity(2 * NUM_BLOCKS);
        for k in 0..NUM_BLOCKS {
            for d in 0..2 {
                terms.push((coeffs.stiff[k][d], &self.stiffness_blocks[k][d]));
            }
        }
        let stiffness = SparseSpd::linear_combination(&terms);
        let n = self.n_dof();
        let mut loads = [vec![0.0; n], vec![0.0; n]];
        for (i, load) in loads.iter_mut().enumerate() {
            for k in 0..NUM_BLOCKS {
                let c = coeffs.load[k][i];
                for (f, g) in load.iter_mut().zip(&self.load_blocks[k][i]) {
                    *f -= c * g;
                }
            }
        }
        (stiffness, loads)
    }

    /// Parametrized assembly from a cell parameter.
    pub fn assemble_at(&self, param: &CellParam) -> Result<(SparseSpd, [Vec<f64>; 2])> {
        Ok(self.assemble(&affine_coeffs(param)?))
    }

    /// Solve both directional cell problems for explicit coefficients.
    pub fn solve_coeffs(&self, coeffs: &AffineCoeffs) -> Result<([Vec<f64>; 2], f64)> {
        self.truth_solves.fetch_add(1, Ordering::Relaxed);
        let (k, f) = self.assemble(coeffs);
        let mut residual: f64 = 0.0;
        let mut w = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let u = solve_spd(&k, &f[i], self.constraint, DEFAULT_SOLVE_TOL)?;
            let r: Vec<f64> = k
                .matvec(&u)
                .iter()
                .zip(&f[i])
                .map(|(a, b)| a - b)
                .collect();
            let fnorm = crate::sparse::norm2(&f[i]);
            if fnorm > 0.0 {
                residual = residual.max(crate::sparse::norm2(&r) / fnorm);
            }
            w[i] = u;
        }
        Ok((w, residual))
    }

    /// Truth solve of the cell problems for one parameter.
    pub fn solve_cell(&self, param: &CellParam) -> Result<CellSolution> {
        let coeffs = affine_coeffs(param)?;
        let (w, residual) = self.solve_coeffs(&coeffs)?;
        Ok(CellSolution { param: *param, coeffs, w, residual })
    }

    /// Output matrix and homogenized tensor for explicit coefficients and
    /// already-solved cell functions.
    pub fn tensor_for_coeffs(&self, coeffs: &AffineCoeffs, w: &[Vec<f64>; 2]) -> HomogTensor {
        let mut s = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                // s_ij = -F_j . w_i with F_j = -sum_k load[k][j] G_kj
                let mut fj_wi = 0.0;
                for k in 0..NUM_BLOCKS {
                    fj_wi -= coeffs.load[k][j] * dot(&self.load_blocks[k][j], &w[i]);
                }
                s[i][j] = -fj_wi;
            }
        }
        let mean = coeffs.mean_tensor();
        let mut a_star = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                a_star[i][j] = mean[i][j] + s[i][j];
            }
        }
        HomogTensor { a_star, s, bounds: None }
    }

    /// Homogenized tensor from a converged cell solution.
    pub fn homogenized_tensor(&self, sol: &CellSolution) -> HomogTensor {
        self.tensor_for_coeffs(&sol.coeffs, &sol.w)
    }

    /// H1-seminorm of an FE vector in the reference inner product.
    pub fn h1_semi(&self, u: &[f64]) -> f64 {
        self.k_ref.quadratic_form(u, u).max(0.0).sqrt()
    }

    pub fn h1_semi_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.k_ref.quadratic_form(u, v)
    }
}

/// Both directional cell functions for one parameter.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub param: CellParam,
    pub coeffs: AffineCoeffs,
    pub w: [Vec<f64>; 2],
    /// Achieved relative residual (max over the two directions).
    pub residual: f64,
}

/// Homogenized tensor, its compliance-type output and optional certified
/// output bounds.
#[derive(Clone, Copy, Debug)]
pub struct HomogTensor {
    pub a_star: [[f64; 2]; 2],
    pub s: [[f64; 2]; 2],
    pub bounds: Option<[[f64; 2]; 2]>,
}

impl HomogTensor {
    /// Eigenvalues of the symmetric 2x2 tensor, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.a_star;
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        [tr / 2.0 - disc, tr / 2.0 + disc]
    }
}
