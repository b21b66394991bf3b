//! Block-wise stiffness and load assembly on the periodic mesh.
//!
//! P1 gradients are constant per element, so the one-point rule integrates
//! every stiffness and load term exactly. Assembly is split by reference
//! block and derivative direction: the 18 stiffness matrices and 18 load
//! vectors are the parameter-independent building bricks from which every
//! parametrized system is a linear combination.

use crate::error::Result;
use crate::mesh::{PeriodicMesh, NUM_BLOCKS};
use crate::sparse::SparseSpd;

/// Derivative / unit-vector direction on the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    E1,
    E2,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::E1, Direction::E2];

    pub fn index(self) -> usize {
        match self {
            Direction::E1 => 0,
            Direction::E2 => 1,
        }
    }

    pub fn from_index(d: usize) -> Direction {
        match d {
            0 => Direction::E1,
            1 => Direction::E2,
            _ => panic!("direction index {d} out of range"),
        }
    }

    /// 1-based label used in reports.
    pub fn label(self) -> usize {
        self.index() + 1
    }
}

/// Stiffness restricted to one block and one derivative direction:
/// entries are the integrals of `d_d phi_i * d_d phi_j` over the block.
pub fn assemble_block_stiffness(
    mesh: &PeriodicMesh,
    block: usize,
    direction: Direction,
) -> SparseSpd {
    assert!(block < NUM_BLOCKS, "block index {block} out of range");
    let d = direction.index();
    let mut m = mesh.zero_matrix();
    for e in mesh.elements() {
        if e.block != block {
            continue;
        }
        let area = e.area();
        let g = e.basis_gradients();
        for l in 0..3 {
            for k in 0..3 {
                m.add_at(e.nodes[l], e.nodes[k], area * g[l][d] * g[k][d]);
            }
        }
    }
    m
}

/// Load restricted to one block and one direction: entry `l` is the integral
/// of `d_d phi_l` over the block.
pub fn assemble_block_load(mesh: &PeriodicMesh, block: usize, direction: Direction) -> Vec<f64> {
    assert!(block < NUM_BLOCKS, "block index {block} out of range");
    let d = direction.index();
    let mut g_vec = vec![0.0; mesh.n_nodes()];
    for e in mesh.elements() {
        if e.block != block {
            continue;
        }
        let area = e.area();
        let g = e.basis_gradients();
        for l in 0..3 {
            g_vec[e.nodes[l]] += area * g[l][d];
        }
    }
    g_vec
}

/// Full periodic Laplacian stiffness, assembled in one pass. This is the
/// reference inner-product matrix for the working H1 seminorm.
pub fn assemble_reference_laplacian(mesh: &PeriodicMesh) -> SparseSpd {
    let mut m = mesh.zero_matrix();
    for e in mesh.elements() {
        let area = e.area();
        let g = e.basis_gradients();
        for l in 0..3 {
            for k in 0..3 {
                m.add_at(
                    e.nodes[l],
                    e.nodes[k],
                    area * (g[l][0] * g[k][0] + g[l][1] * g[k][1]),
                );
            }
        }
    }
    m
}

/// Lumped-mass L2 projection of a smooth function onto the mesh nodes,
/// used by forcing terms in tests.
pub fn lumped_load(mesh: &PeriodicMesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let h2 = mesh.h() * mesh.h();
    mesh.nodes().iter().map(|&p| h2 * f(p)).collect()
}

/// Convenience: solve the reference Laplace problem `K_ref u = rhs` on the
/// quotient space.
pub fn solve_reference(
    laplacian: &SparseSpd,
    rhs: &[f64],
    rel_tol: f64,
) -> Result<Vec<f64>> {
    crate::sparse::solve_spd(
        laplacian,
        rhs,
        crate::sparse::QuotientConstraint::default(),
        rel_tol,
    )
}
