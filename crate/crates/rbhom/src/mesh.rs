//! Uniform P1 triangulation of the unit 2-torus.
//!
//! The square grid of size `n_per_side` is split into isosceles right
//! triangles with the hypotenuse along the direction y2 = -y1. Nodes are
//! identified periodically, so the mesh has exactly `n_per_side^2` degrees of
//! freedom. Each triangle is assigned to one block of the fixed 3x3 reference
//! partition with cuts at 0.25 and 0.75 in both directions; `n_per_side` must
//! be a multiple of 4 so the cuts fall on mesh lines and no barycenter is
//! ambiguous.

use crate::error::{Error, Result};

/// Number of blocks in the 3x3 reference partition.
pub const NUM_BLOCKS: usize = 9;

/// Index of the central block `[0.25, 0.75]^2` (the reference inclusion).
pub const CENTER_BLOCK: usize = 4;

/// Partition cuts in each direction.
pub const BLOCK_CUTS: [f64; 2] = [0.25, 0.75];

/// Widths of the three partition intervals `[0,.25], [.25,.75], [.75,1]`.
pub const BLOCK_WIDTHS: [f64; 3] = [0.25, 0.5, 0.25];

/// Reference areas of the nine blocks.
pub fn block_ref_area(block: usize) -> f64 {
    BLOCK_WIDTHS[block % 3] * BLOCK_WIDTHS[block / 3]
}

/// Interval index of `t` within the cuts: 0 for [0,.25), 1 for [.25,.75), 2 above.
pub fn interval_index(t: f64) -> usize {
    if t < BLOCK_CUTS[0] {
        0
    } else if t < BLOCK_CUTS[1] {
        1
    } else {
        2
    }
}

/// Block containing a point of the reference cell.
pub fn block_of_point(p: [f64; 2]) -> usize {
    3 * interval_index(p[1]) + interval_index(p[0])
}

/// One triangle of the mesh: periodic node indices, unwrapped vertex
/// coordinates (the right/top rows touch 1.0), the containing block, and the
/// orientation flag (`lower` is the triangle below the anti-diagonal).
#[derive(Clone, Debug)]
pub struct Element {
    pub nodes: [usize; 3],
    pub vertices: [[f64; 2]; 3],
    pub block: usize,
    pub lower: bool,
}

impl Element {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    /// Constant gradients of the three barycentric basis functions.
    pub fn basis_gradients(&self) -> [[f64; 2]; 3] {
        let [a, b, c] = self.vertices;
        let two_area = 2.0 * self.area();
        [
            [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
            [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
            [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
        ]
    }

    pub fn barycenter(&self) -> [f64; 2] {
        let [a, b, c] = self.vertices;
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }
}

/// Periodic P1 mesh of the unit cell.
#[derive(Clone, Debug)]
pub struct PeriodicMesh {
    n_per_side: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl PeriodicMesh {
    pub fn new(n_per_side: usize) -> Result<Self> {
        if n_per_side < 4 || n_per_side % 4 != 0 {
            return Err(Error::MeshResolution(n_per_side));
        }
        let n = n_per_side;
        let h = 1.0 / n as f64;
        let node = |i: usize, j: usize| (i % n) + n * (j % n);

        let mut nodes = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }

        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
                let (y0, y1) = (j as f64 * h, (j + 1) as f64 * h);
                let lower = Element {
                    nodes: [node(i, j), node(i + 1, j), node(i, j + 1)],
                    vertices: [[x0, y0], [x1, y0], [x0, y1]],
                    block: 0,
                    lower: true,
                };
                let upper = Element {
                    nodes: [node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)],
                    vertices: [[x1, y0], [x1, y1], [x0, y1]],
                    block: 0,
                    lower: false,
                };
                elements.push(lower);
                elements.push(upper);
            }
        }
        for e in &mut elements {
            e.block = block_of_point(e.barycenter());
        }

        // Shared sparsity pattern: union of element couplings.
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n * n];
        for e in &elements {
            for &a in &e.nodes {
                for &b in &e.nodes {
                    adj[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n * n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }

        Ok(PeriodicMesh { n_per_side, nodes, elements, row_ptr, col_idx })
    }

    pub fn n_per_side(&self) -> usize {
        self.n_per_side
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_per_side as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Periodic node index for grid coordinates.
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        let n = self.n_per_side;
        (i % n) + n * (j % n)
    }

    /// Zero matrix on the mesh's shared sparsity pattern.
    pub fn zero_matrix(&self) -> crate::sparse::SparseSpd {
        crate::sparse::SparseSpd::zero_on_pattern(
            self.n_nodes(),
            self.row_ptr.clone(),
            self.col_idx.clone(),
        )
    }

    /// Nodes and barycentric weights of the triangle containing a point of
    /// the torus (coordinates taken modulo 1).
    pub fn interp_support(&self, p: [f64; 2]) -> ([usize; 3], [f64; 3]) {
        let n = self.n_per_side;
        let h = self.h();
        let wrap = |t: f64| t - t.floor();
        let (x, y) = (wrap(p[0]), wrap(p[1]));
        let i = ((x / h) as usize).min(n - 1);
        let j = ((y / h) as usize).min(n - 1);
        let (lx, ly) = (x / h - i as f64, y / h - j as f64);
        // local coordinates in the cell; anti-diagonal splits at lx + ly = 1
        if lx + ly <= 1.0 {
            (
                [self.node_index(i, j), self.node_index(i + 1, j), self.node_index(i, j + 1)],
                [1.0 - lx - ly, lx, ly],
            )
        } else {
            (
                [
                    self.node_index(i + 1, j),
                    self.node_index(i + 1, j + 1),
                    self.node_index(i, j + 1),
                ],
                [1.0 - ly, lx + ly - 1.0, 1.0 - lx],
            )
        }
    }

    /// Evaluate the P1 interpolant of nodal values `u` at a point of the
    /// torus.
    pub fn interpolate(&self, u: &[f64], p: [f64; 2]) -> f64 {
        assert_eq!(u.len(), self.n_nodes());
        let (nodes, lambdas) = self.interp_support(p);
        nodes.iter().zip(lambdas).map(|(&k, l)| u[k] * l).sum()
    }
}
