//! The five-parameter inclusion model and its affine decomposition.
//!
//! A cell holds one rectangular inclusion `Q = [b1,c1] x [b2,c2]` where the
//! scalar coefficient is `1 + theta`; it is 1 outside. The piecewise-affine
//! homeomorphism that carries the reference cell (inclusion `[0.25,0.75]^2`)
//! onto the parametrized cell is diagonal on each of the nine blocks, so the
//! pulled-back bilinear form decomposes into 18 scalar coefficients (block x
//! derivative direction) multiplying fixed reference matrices, and likewise
//! for the loads. All bounds work in the fixed reference H1 seminorm; the
//! coercivity and continuity constants of the mapped form with respect to
//! that norm are simply the min and max of the 18 stiffness coefficients.

use crate::error::{Error, Result};
use crate::mesh::{block_ref_area, interval_index, CENTER_BLOCK, NUM_BLOCKS};

/// Reference inclusion corners.
pub const REF_CORNERS: [f64; 4] = [0.25, 0.75, 0.25, 0.75];

/// The five-dimensional cell parameter: inclusion corners and contrast.
/// The coefficient inside the inclusion is `1 + theta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellParam {
    pub b1: f64,
    pub c1: f64,
    pub b2: f64,
    pub c2: f64,
    pub theta: f64,
}

impl CellParam {
    pub fn new(b1: f64, c1: f64, b2: f64, c2: f64, theta: f64) -> Result<Self> {
        let p = CellParam { b1, c1, b2, c2, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (b, c, axis) in [(self.b1, self.c1, 1), (self.b2, self.c2, 2)] {
            if !(b > 0.0 && b < c && c < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "need 0 < b{axis} < c{axis} < 1, got b{axis} = {b}, c{axis} = {c}"
                )));
            }
        }
        if !(self.theta > -1.0 && self.theta <= 0.0) {
            return Err(Error::InvalidParam(format!(
                "need theta in (-1, 0], got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Reference parameter with the centered inclusion.
    pub fn reference(theta: f64) -> Result<Self> {
        CellParam::new(0.25, 0.75, 0.25, 0.75, theta)
    }

    /// Area of the inclusion `|Q|`.
    pub fn inclusion_area(&self) -> f64 {
        (self.c1 - self.b1) * (self.c2 - self.b2)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.b1, self.c1, self.b2, self.c2, self.theta]
    }

    /// Swap the two axes; the coefficient field of the swapped parameter is
    /// the reflection of the original across y2 = y1.
    pub fn swapped(&self) -> CellParam {
        CellParam { b1: self.b2, c1: self.c2, b2: self.b1, c2: self.c1, theta: self.theta }
    }
}

/// Admissible parameter box around the reference geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBox {
    pub delta: f64,
    pub theta0: f64,
}

impl ParamBox {
    pub fn new(delta: f64, theta0: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.25) {
            return Err(Error::Config(format!("delta must lie in (0, 0.25), got {delta}")));
        }
        if !(theta0 >= 0.0 && theta0 < 1.0) {
            return Err(Error::Config(format!("theta0 must lie in [0, 1), got {theta0}")));
        }
        Ok(ParamBox { delta, theta0 })
    }

    /// Coordinate ranges in sampling order (b1, c1, b2, c2, theta).
    pub fn ranges(&self) -> [(f64, f64); 5] {
        let d = self.delta;
        [
            (0.25 - d, 0.25 + d),
            (0.75 - d, 0.75 + d),
            (0.25 - d, 0.25 + d),
            (0.75 - d, 0.75 + d),
            (-self.theta0, 0.0),
        ]
    }

    pub fn contains(&self, p: &CellParam) -> bool {
        let eps = 1e-12;
        self.ranges()
            .iter()
            .zip(p.as_array())
            .all(|(&(lo, hi), v)| v >= lo - eps && v <= hi + eps)
    }
}

/// The nine diagonal affine maps tiling the cell: `y -> scale * y + offset`
/// per block, carrying the reference partition onto the physical one.
#[derive(Clone, Copy, Debug)]
pub struct BlockMap {
    pub scale: [[f64; 2]; NUM_BLOCKS],
    pub offset: [[f64; 2]; NUM_BLOCKS],
    breaks: [[f64; 4]; 2],
}

impl BlockMap {
    pub fn det_jacobian(&self, block: usize) -> f64 {
        self.scale[block][0] * self.scale[block][1]
    }

    /// Map a reference point of `block` to the physical cell.
    pub fn to_physical(&self, block: usize, y: [f64; 2]) -> [f64; 2] {
        [
            self.scale[block][0] * y[0] + self.offset[block][0],
            self.scale[block][1] * y[1] + self.offset[block][1],
        ]
    }

    /// Physical block containing a point (classification by the b/c cuts).
    pub fn block_of_physical(&self, y: [f64; 2]) -> usize {
        let idx = |t: f64, breaks: &[f64; 4]| {
            if t < breaks[1] {
                0
            } else if t < breaks[2] {
                1
            } else {
                2
            }
        };
        3 * idx(y[1], &self.breaks[1]) + idx(y[0], &self.breaks[0])
    }

    /// Pull a physical point back to reference coordinates.
    pub fn to_reference(&self, y: [f64; 2]) -> [f64; 2] {
        let k = self.block_of_physical(y);
        [
            (y[0] - self.offset[k][0]) / self.scale[k][0],
            (y[1] - self.offset[k][1]) / self.scale[k][1],
        ]
    }
}

/// Per-block, per-direction coefficients of the pulled-back forms.
///
/// `stiff[k][d]` multiplies the reference block-stiffness integral of
/// direction d on block k, `load[k][d]` the block-load integral. `det_j`
/// carries the volume stretching, `block_value` the physical coefficient per
/// block (1, or 1 + theta on the inclusion).
#[derive(Clone, Copy, Debug)]
pub struct AffineCoeffs {
    pub stiff: [[f64; 2]; NUM_BLOCKS],
    pub load: [[f64; 2]; NUM_BLOCKS],
    pub det_j: [f64; NUM_BLOCKS],
    pub block_value: [f64; NUM_BLOCKS],
}

impl AffineCoeffs {
    /// Exact cell-average of the physical coefficient, as a 2x2 tensor.
    pub fn mean_tensor(&self) -> [[f64; 2]; 2] {
        let mut mean = 0.0;
        for k in 0..NUM_BLOCKS {
            mean += self.block_value[k] * self.det_j[k] * block_ref_area(k);
        }
        [[mean, 0.0], [0.0, mean]]
    }

    /// Coercivity and continuity constants of the mapped form in the
    /// reference seminorm: min and max of the 18 stiffness coefficients.
    pub fn coercivity_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &self.stiff {
            for &c in row {
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        (lo, hi)
    }
}

/// Build the piecewise-affine block map for a parameter.
pub fn block_map(param: &CellParam) -> Result<BlockMap> {
    param.validate()?;
    let ref_breaks = [0.0, 0.25, 0.75, 1.0];
    let phys_breaks = [
        [0.0, param.b1, param.c1, 1.0],
        [0.0, param.b2, param.c2, 1.0],
    ];
    let mut scale = [[0.0; 2]; NUM_BLOCKS];
    let mut offset = [[0.0; 2]; NUM_BLOCKS];
    for block in 0..NUM_BLOCKS {
        let cols = [block % 3, block / 3];
        for d in 0..2 {
            let i = cols[d];
            let (r0, r1) = (ref_breaks[i], ref_breaks[i + 1]);
            let (p0, p1) = (phys_breaks[d][i], phys_breaks[d][i + 1]);
            let s = (p1 - p0) / (r1 - r0);
            scale[block][d] = s;
            offset[block][d] = p0 - s * r0;
        }
    }
    Ok(BlockMap { scale, offset, breaks: phys_breaks })
}

/// Affine coefficients of the pulled-back bilinear form and loads.
///
/// With diagonal Jacobian `J = diag(j_1, j_2)` per block,
/// `stiff[k][d] = det(J_k) / j_{k,d}^2 * A_k` and
/// `load[k][d]  = det(J_k) / j_{k,d}   * A_k`
/// where `A_k` is the physical coefficient on the block.
pub fn affine_coeffs(param: &CellParam) -> Result<AffineCoeffs> {
    let map = block_map(param)?;
    let mut out = AffineCoeffs {
        stiff: [[0.0; 2]; NUM_BLOCKS],
        load: [[0.0; 2]; NUM_BLOCKS],
        det_j: [0.0; NUM_BLOCKS],
        block_value: [1.0; NUM_BLOCKS],
    };
    out.block_value[CENTER_BLOCK] = 1.0 + param.theta;
    for k in 0..NUM_BLOCKS {
        let det = map.det_jacobian(k);
        out.det_j[k] = det;
        for d in 0..2 {
            let j = map.scale[k][d];
            out.stiff[k][d] = det / (j * j) * out.block_value[k];
            out.load[k][d] = det / j * out.block_value[k];
        }
    }
    Ok(out)
}

/// Coefficients of a horizontal-strip medium: the coefficient is `1 + theta`
/// on the band `y2 in [0.25, 0.75]` across the full cell width, with the
/// identity geometry. This is the laminate whose homogenized tensor is known
/// in closed form (arithmetic mean along the layers, harmonic mean across).
pub fn strip_coeffs(theta: f64) -> AffineCoeffs {
    let mut out = AffineCoeffs {
        stiff: [[1.0; 2]; NUM_BLOCKS],
        load: [[1.0; 2]; NUM_BLOCKS],
        det_j: [1.0; NUM_BLOCKS],
        block_value: [1.0; NUM_BLOCKS],
    };
    for k in [3, 4, 5] {
        out.block_value[k] = 1.0 + theta;
        out.stiff[k] = [1.0 + theta; 2];
        out.load[k] = [1.0 + theta; 2];
    }
    out
}

/// Closed-form homogenized tensor of the strip medium (volume fraction 1/2):
/// `diag(arithmetic, harmonic)`.
pub fn strip_exact_tensor(theta: f64) -> [f64; 2] {
    let a_in = 1.0 + theta;
    let arithmetic = 0.5 * (1.0 + a_in);
    let harmonic = 1.0 / (0.5 / 1.0 + 0.5 / a_in);
    [arithmetic, harmonic]
}

/// min/max of the 18 mapped stiffness coefficients; these bound the mapped
/// form against the fixed reference seminorm.
pub fn coercivity_bounds(param: &CellParam) -> Result<(f64, f64)> {
    Ok(affine_coeffs(param)?.coercivity_bounds())
}

/// Exact cell-average of the physical coefficient: `(1 + theta * |Q|) * I`.
pub fn mean_coefficient(param: &CellParam) -> Result<[[f64; 2]; 2]> {
    param.validate()?;
    let m = 1.0 + param.theta * param.inclusion_area();
    Ok([[m, 0.0], [0.0, m]])
}

/// Classical scalar bracket for the homogenized tensor: harmonic and
/// arithmetic means of the two-phase coefficient.
pub fn voigt_reuss_bracket(param: &CellParam) -> (f64, f64) {
    let q = param.inclusion_area();
    let harmonic = 1.0 / (q / (1.0 + param.theta) + (1.0 - q));
    let arithmetic = 1.0 + param.theta * q;
    (harmonic, arithmetic)
}

/// Reference block of a reference-cell point (same 3x3 classification used
/// by the mesh).
pub fn reference_block_of(y: [f64; 2]) -> usize {
    3 * interval_index(y[1]) + interval_index(y[0])
}
