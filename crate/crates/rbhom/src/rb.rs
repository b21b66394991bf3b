//! Greedy reduced-basis construction with certified a posteriori error
//! bounds, and the online engine whose per-query cost is independent of the
//! FE dimension.
//!
//! The basis is orthonormal in the fixed reference H1 seminorm. Residual
//! dual norms are evaluated online as a quadratic form over the Gram matrix
//! of Riesz representers, one representer per affine term (18 load terms,
//! plus 18 stiffness terms per basis function). With the coercivity constant
//! `alpha(x)` of the mapped form this yields the solution bound
//! `delta_w = ||residual||_dual / alpha` and the output bound
//! `delta_s_ij = ||r_i||_dual ||r_j||_dual / alpha`, both rigorous:
//! `true error <= delta <= (gamma/alpha) * true error`.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cell::{AffineSystem, CellSolution, HomogTensor};
use crate::error::{Error, Result};
use crate::mesh::NUM_BLOCKS;
use crate::param::{affine_coeffs, AffineCoeffs, CellParam, ParamBox};
use crate::sparse::{dot, pcg_masked, solve_spd, DEFAULT_SOLVE_TOL};

/// Number of affine load terms (block x direction).
pub const LOAD_TERMS: usize = 2 * NUM_BLOCKS;

/// Number of affine stiffness terms per basis function.
pub const STIFF_TERMS: usize = 2 * NUM_BLOCKS;

/// Remainder below this relative size marks a numerically dependent snapshot.
const DEPENDENT_TOL: f64 = 1e-12;

/// Remainder below this relative size triggers a Gram-Schmidt re-pass.
const REORTH_TOL: f64 = 1e-6;

/// Reduced norms below this switch the greedy indicator to the absolute bound.
const ZERO_NORM_TOL: f64 = 1e-12;

/// Options for the greedy offline stage.
#[derive(Clone, Copy, Debug)]
pub struct GreedyOptions {
    pub n_max: usize,
    pub rel_tol: f64,
    /// Seed recorded in provenance (the sample is drawn by the caller).
    pub seed: u64,
    /// Relative residual for FE snapshot solves.
    pub solver_tol: f64,
    /// Relative residual for Riesz representer solves. Tighter than the
    /// snapshot tolerance so Gram-based dual norms stay consistent with
    /// direct evaluation.
    pub riesz_tol: f64,
}

impl GreedyOptions {
    pub fn new(n_max: usize, rel_tol: f64, seed: u64) -> Self {
        GreedyOptions {
            n_max,
            rel_tol,
            seed,
            solver_tol: DEFAULT_SOLVE_TOL,
            riesz_tol: 1e-14,
        }
    }
}

/// One greedy selection: which (parameter, direction) snapshot was added and
/// the training bound that selected it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub param_id: usize,
    /// Direction index, 0-based.
    pub direction: usize,
    pub param: CellParam,
    pub bound: f64,
}

/// One row of the training decay trace: the max relative bound over the
/// training sample with an `n_basis`-dimensional basis, and the selection it
/// triggered (`None` on the final row).
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub n_basis: usize,
    pub max_rel_bound: f64,
    pub selection: Option<(usize, usize)>,
}

/// Why the greedy loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ReachedNMax,
    ReachedTolerance,
    SampleExhausted,
    DegenerateSample,
}

/// The orthonormal snapshot basis with all projected quantities needed for
/// N-independent online queries.
pub struct ReducedBasis {
    pub(crate) n_per_side: usize,
    pub(crate) param_box: ParamBox,
    pub(crate) seed: u64,
    /// Basis vectors, orthonormal in the reference seminorm. Online queries
    /// never touch these; they exist for audits, reconstruction and storage.
    pub(crate) basis: Vec<Vec<f64>>,
    /// Reduced stiffness blocks `xi' M_kd xi`, indexed `[block][dir]`.
    pub(crate) m_rb: Vec<[DMatrix<f64>; 2]>,
    /// Reduced load blocks `xi' G_kd`, indexed `[block][dir]`.
    pub(crate) g_rb: Vec<[DVector<f64>; 2]>,
    /// Gram matrix of Riesz representers; loads first, then one group of 18
    /// stiffness representers per basis function.
    pub(crate) gram: DMatrix<f64>,
    pub(crate) provenance: Vec<Selection>,
    pub(crate) trace: Vec<TraceRow>,
    pub(crate) stop_reason: Option<StopReason>,
}

/// Gram index of the load representer for (block, dir).
fn load_slot(block: usize, dir: usize) -> usize {
    2 * block + dir
}

/// Gram index of the stiffness representer for (block, dir) x basis function.
fn stiff_slot(j: usize, block: usize, dir: usize) -> usize {
    LOAD_TERMS + STIFF_TERMS * j + 2 * block + dir
}

impl ReducedBasis {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn n_per_side(&self) -> usize {
        self.n_per_side
    }

    pub fn param_box(&self) -> ParamBox {
        self.param_box
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> &[Selection] {
        &self.provenance
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    pub fn basis_vector(&self, j: usize) -> &[f64] {
        &self.basis[j]
    }

    /// Expand reduced coefficients into the FE space (deliberately N-sized;
    /// used by audits and corrector reconstruction only).
    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len());
        let n_dof = self.basis.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n_dof];
        for (j, xi) in self.basis.iter().enumerate() {
            let c = coeffs[j];
            for (o, x) in out.iter_mut().zip(xi) {
                *o += c * x;
            }
        }
        out
    }

    /// Truncation to the leading `n` basis functions. The greedy ordering
    /// makes every prefix a valid certified basis.
    pub fn truncated(&self, n: usize) -> ReducedBasis {
        assert!(n <= self.len());
        let r = LOAD_TERMS + STIFF_TERMS * n;
        ReducedBasis {
            n_per_side: self.n_per_side,
            param_box: self.param_box,
            seed: self.seed,
            basis: self.basis[..n].to_vec(),
            m_rb: self
                .m_rb
                .iter()
                .map(|pair| [pair[0].view((0, 0), (n, n)).into(), pair[1].view((0, 0), (n, n)).into()])
                .collect(),
            g_rb: self
                .g_rb
                .iter()
                .map(|pair| [pair[0].rows(0, n).into(), pair[1].rows(0, n).into()])
                .collect(),
            gram: self.gram.view((0, 0), (r, r)).into(),
            provenance: self.provenance[..n.min(self.provenance.len())].to_vec(),
            trace: Vec::new(),
            stop_reason: None,
        }
    }

    /// Assemble the reduced stiffness and loads at a parameter.
    fn assemble_reduced(&self, coeffs: &AffineCoeffs) -> (DMatrix<f64>, [DVector<f64>; 2]) {
        let n = self.len();
        let mut k = DMatrix::zeros(n, n);
        for block in 0..NUM_BLOCKS {
            for d in 0..2 {
                let c = coeffs.stiff[block][d];
                for (out, m) in k.iter_mut().zip(self.m_rb[block][d].iter()) {
                    *out += c * m;
                }
            }
        }
        let mut f = [DVector::zeros(n), DVector::zeros(n)];
        for (i, fi) in f.iter_mut().enumerate() {
            for block in 0..NUM_BLOCKS {
                let c = coeffs.load[block][i];
                for (out, g) in fi.iter_mut().zip(self.g_rb[block][i].iter()) {
                    *out -= c * g;
                }
            }
        }
        (k, f)
    }

    /// Squared residual dual norm for direction `i`, evaluated over the Gram
    /// matrix. Cost O((18 N)^2), independent of the FE dimension.
    fn dual_norm_sq(&self, coeffs: &AffineCoeffs, dir: usize, beta: &DVector<f64>) -> f64 {
        let r = self.gram.nrows();
        let mut gamma = DVector::zeros(r);
        for block in 0..NUM_BLOCKS {
            gamma[load_slot(block, dir)] = -coeffs.load[block][dir];
        }
        for j in 0..self.len() {
            let b = beta[j];
            for block in 0..NUM_BLOCKS {
                for d in 0..2 {
                    gamma[stiff_slot(j, block, d)] = -coeffs.stiff[block][d] * b;
                }
            }
        }
        let gg = &self.gram * &gamma;
        gamma.dot(&gg).max(0.0)
    }

    /// A posteriori error bounds for reduced coefficients at a parameter:
    /// per-direction solution bounds and the 2x2 output bound matrix.
    pub fn error_bound(
        &self,
        param: &CellParam,
        coeffs: &[DVector<f64>; 2],
    ) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let ac = affine_coeffs(param)?;
        Ok(self.error_bound_with(&ac, coeffs))
    }

    fn error_bound_with(
        &self,
        ac: &AffineCoeffs,
        coeffs: &[DVector<f64>; 2],
    ) -> ([f64; 2], [[f64; 2]; 2]) {
        let (alpha, _gamma) = ac.coercivity_bounds();
        let dual = [
            self.dual_norm_sq(ac, 0, &coeffs[0]).sqrt(),
            self.dual_norm_sq(ac, 1, &coeffs[1]).sqrt(),
        ];
        let delta_w = [dual[0] / alpha, dual[1] / alpha];
        let mut delta_s = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                delta_s[i][j] = dual[i] * dual[j] / alpha;
            }
        }
        (delta_w, delta_s)
    }

    /// Online reduced solve with certified bounds. No object of FE size is
    /// touched.
    pub fn online_solve(&self, param: &CellParam) -> Result<OnlineResult> {
        let ac = affine_coeffs(param)?;
        let t0 = Instant::now();
        let (k, f) = self.assemble_reduced(&ac);
        let assembly = t0.elapsed();

        let t1 = Instant::now();
        let coeffs = if self.is_empty() {
            [DVector::zeros(0), DVector::zeros(0)]
        } else {
            let chol = Cholesky::new(k).ok_or_else(|| Error::NotPositiveDefinite {
                context: format!("online solve at {param:?}"),
            })?;
            [chol.solve(&f[0]), chol.solve(&f[1])]
        };
        let mut s_n = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                s_n[i][j] = -f[j].dot(&coeffs[i]);
            }
        }
        let solve = t1.elapsed();

        let t2 = Instant::now();
        let (delta_w, delta_s) = self.error_bound_with(&ac, &coeffs);
        let estimate = t2.elapsed();

        let mean = ac.mean_tensor();
        let mut a_star = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                a_star[i][j] = mean[i][j] + s_n[i][j];
            }
        }
        Ok(OnlineResult {
            param: *param,
            coeffs,
            s_n,
            a_star,
            delta_w,
            delta_s,
            timings: OnlineTimings { assembly, solve, estimate },
        })
    }

    /// Certified homogenized tensor from an online result.
    pub fn tensor(&self, online: &OnlineResult) -> HomogTensor {
        HomogTensor {
            a_star: online.a_star,
            s: online.s_n,
            bounds: Some(online.delta_s),
        }
    }
}

/// Timing breakdown of one online query.
#[derive(Clone, Copy, Debug, Default)]
pub struct OnlineTimings {
    pub assembly: Duration,
    pub solve: Duration,
    pub estimate: Duration,
}

/// Reduced solution, output and certified bounds at one parameter.
#[derive(Clone, Debug)]
pub struct OnlineResult {
    pub param: CellParam,
    pub coeffs: [DVector<f64>; 2],
    pub s_n: [[f64; 2]; 2],
    pub a_star: [[f64; 2]; 2],
    pub delta_w: [f64; 2],
    pub delta_s: [[f64; 2]; 2],
    pub timings: OnlineTimings,
}

/// Builder state for the greedy loop: basis plus Riesz representers, which
/// are only needed while the Gram matrix grows.
struct GreedyState<'a> {
    system: &'a AffineSystem,
    basis: ReducedBasis,
    /// K_ref * xi_j, cached for cheap Gram-Schmidt inner products.
    z_basis: Vec<Vec<f64>>,
    /// Riesz representers in Gram order, paired with K_ref * rho.
    reps: Vec<(Vec<f64>, Vec<f64>)>,
    riesz_tol: f64,
}

impl<'a> GreedyState<'a> {
    fn new(
        system: &'a AffineSystem,
        param_box: ParamBox,
        seed: u64,
        riesz_tol: f64,
    ) -> Result<Self> {
        let basis = ReducedBasis {
            n_per_side: system.mesh().n_per_side(),
            param_box,
            seed,
            basis: Vec::new(),
            m_rb: (0..NUM_BLOCKS)
                .map(|_| [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)])
                .collect(),
            g_rb: (0..NUM_BLOCKS)
                .map(|_| [DVector::zeros(0), DVector::zeros(0)])
                .collect(),
            gram: DMatrix::zeros(LOAD_TERMS, LOAD_TERMS),
            provenance: Vec::new(),
            trace: Vec::new(),
            stop_reason: None,
        };
        let mut state = GreedyState { system, basis, z_basis: Vec::new(), reps: Vec::new(), riesz_tol };
        // load representers exist for any basis size, including zero
        for block in 0..NUM_BLOCKS {
            for d in 0..2 {
                let g = system.load_block(block, crate::assemble::Direction::from_index(d));
                state.push_representer(g.to_vec())?;
            }
        }
        Ok(state)
    }

    /// Solve K_ref rho = rhs, append (rho, K_ref rho) and fill the new Gram
    /// row/column.
    fn push_representer(&mut self, rhs: Vec<f64>) -> Result<()> {
        let rho = solve_spd(
            self.system.k_ref(),
            &rhs,
            self.system.constraint(),
            self.riesz_tol,
        )?;
        let z = self.system.k_ref().matvec(&rho);
        let idx = self.reps.len();
        let r = idx + 1;
        if self.basis.gram.nrows() < r {
            self.basis.gram.resize_mut(r, r, 0.0);
        }
        for (a, (rho_a, _z_a)) in self.reps.iter().enumerate() {
            let v = dot(rho_a, &z);
            self.basis.gram[(a, idx)] = v;
            self.basis.gram[(idx, a)] = v;
        }
        self.basis.gram[(idx, idx)] = dot(&rho, &z);
        self.reps.push((rho, z));
        Ok(())
    }

    /// Orthonormalize a snapshot against the basis and append it with all its
    /// projected quantities. Returns false when the remainder is numerically
    /// dependent.
    fn append_snapshot(&mut self, snapshot: &[f64]) -> Result<bool> {
        let k_ref = self.system.k_ref();
        let norm_w = k_ref.quadratic_form(snapshot, snapshot).max(0.0).sqrt();
        if norm_w < DEPENDENT_TOL {
            return Ok(false);
        }
        let mut r = snapshot.to_vec();
        let project = |r: &mut Vec<f64>| {
            for (xi, z) in self.basis.basis.iter().zip(&self.z_basis) {
                let c = dot(r, z);
                for (ri, xii) in r.iter_mut().zip(xi) {
                    *ri -= c * xii;
                }
            }
        };
        project(&mut r);
        let mut norm_r = k_ref.quadratic_form(&r, &r).max(0.0).sqrt();
        if norm_r < REORTH_TOL * norm_w {
            project(&mut r);
            norm_r = k_ref.quadratic_form(&r, &r).max(0.0).sqrt();
        }
        if norm_r < DEPENDENT_TOL * norm_w {
            return Ok(false);
        }
        let xi: Vec<f64> = r.iter().map(|v| v / norm_r).collect();
        let z = k_ref.matvec(&xi);

        // extend reduced blocks
        let n_old = self.basis.len();
        for block in 0..NUM_BLOCKS {
            for d in 0..2 {
                let dir = crate::assemble::Direction::from_index(d);
                let m = self.system.stiffness_block(block, dir);
                let mx = m.matvec(&xi);
                let mrb = &mut self.basis.m_rb[block][d];
                mrb.resize_mut(n_old + 1, n_old + 1, 0.0);
                for (j, xi_j) in self.basis.basis.iter().enumerate() {
                    let v = dot(xi_j, &mx);
                    mrb[(j, n_old)] = v;
                    mrb[(n_old, j)] = v;
                }
                mrb[(n_old, n_old)] = dot(&xi, &mx);

                let g = self.system.load_block(block, dir);
                let grb = &mut self.basis.g_rb[block][d];
                grb.resize_vertically_mut(n_old + 1, 0.0);
                grb[n_old] = dot(g, &xi);
            }
        }
        // Riesz representers of the new stiffness terms
        for block in 0..NUM_BLOCKS {
            for d in 0..2 {
                let dir = crate::assemble::Direction::from_index(d);
                let rhs = self.system.stiffness_block(block, dir).matvec(&xi);
                self.push_representer(rhs)?;
            }
        }
        self.basis.basis.push(xi);
        self.z_basis.push(z);
        Ok(true)
    }
}

/// Greedy offline construction over a training sample.
///
/// Starts from the first (parameter, direction) snapshot with nonzero norm;
/// at each step solves all reduced problems on the sample, selects the
/// candidate maximizing the relative bound `Delta / ||w_N||` (absolute bound
/// below [`ZERO_NORM_TOL`]; ties broken by lowest sample index, then first
/// direction) and appends its orthonormalized FE snapshot. Stops at `n_max`,
/// at `rel_tol`, or when the sample is numerically exhausted.
pub fn greedy_build(
    system: &AffineSystem,
    sample: &[CellParam],
    param_box: ParamBox,
    opts: GreedyOptions,
) -> Result<ReducedBasis> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if opts.n_max > 2 * sample.len() {
        return Err(Error::BasisSizeBound { n_max: opts.n_max, limit: 2 * sample.len() });
    }
    for p in sample {
        p.validate()?;
    }
    let coeffs: Vec<AffineCoeffs> =
        sample.iter().map(affine_coeffs).collect::<Result<_>>()?;

    let mut state = GreedyState::new(system, param_box, opts.seed, opts.riesz_tol)?;
    let mut snapshots: Vec<[Option<Vec<f64>>; 2]> = vec![[None, None]; sample.len()];
    let snapshot =
        |state: &GreedyState, cache: &mut Vec<[Option<Vec<f64>>; 2]>, k: usize, i: usize| -> Result<Vec<f64>> {
            if cache[k][i].is_none() {
                let sol = state.system.solve_cell(&sample[k])?;
                cache[k][0] = Some(sol.w[0].clone());
                cache[k][1] = Some(sol.w[1].clone());
            }
            Ok(cache[k][i].clone().unwrap())
        };

    // initial pick: first nonzero snapshot in lexicographic order
    let mut seeded = false;
    'outer: for k in 0..sample.len() {
        for i in 0..2 {
            let w = snapshot(&state, &mut snapshots, k, i)?;
            if state.append_snapshot(&w)? {
                state.basis.provenance.push(Selection {
                    param_id: k,
                    direction: i,
                    param: sample[k],
                    bound: f64::INFINITY,
                });
                seeded = true;
                break 'outer;
            }
        }
    }
    if !seeded {
        log::warn!(
            "degenerate training sample: all {} snapshots vanish; returning an empty basis",
            2 * sample.len()
        );
        state.basis.stop_reason = Some(StopReason::DegenerateSample);
        return Ok(state.basis);
    }

    loop {
        // evaluate all candidates in the current space
        let n = state.basis.len();
        let mut bounds = Vec::with_capacity(2 * sample.len());
        for (k, ac) in coeffs.iter().enumerate() {
            let (krb, frb) = state.basis.assemble_reduced(ac);
            let chol = Cholesky::new(krb).ok_or_else(|| Error::NotPositiveDefinite {
                context: format!("greedy step N = {n}, training parameter {k}"),
            })?;
            for i in 0..2 {
                let beta = chol.solve(&frb[i]);
                let (alpha, _) = ac.coercivity_bounds();
                let delta = state.basis.dual_norm_sq(ac, i, &beta).sqrt() / alpha;
                let norm = beta.norm();
                let rel = if norm < ZERO_NORM_TOL { delta } else { delta / norm };
                bounds.push((k, i, rel));
            }
        }
        let max_rel = bounds
            .iter()
            .map(|&(_, _, b)| b)
            .fold(f64::NEG_INFINITY, f64::max);

        if max_rel <= opts.rel_tol {
            state.basis.trace.push(TraceRow { n_basis: n, max_rel_bound: max_rel, selection: None });
            state.basis.stop_reason = Some(StopReason::ReachedTolerance);
            break;
        }
        if n >= opts.n_max {
            state.basis.trace.push(TraceRow { n_basis: n, max_rel_bound: max_rel, selection: None });
            state.basis.stop_reason = Some(StopReason::ReachedNMax);
            break;
        }

        // try candidates in decreasing bound order until one appends
        let mut order: Vec<usize> = (0..bounds.len()).collect();
        order.sort_by(|&a, &b| bounds[b].2.partial_cmp(&bounds[a].2).unwrap());
        let mut appended = false;
        for idx in order {
            let (k, i, rel) = bounds[idx];
            let w = snapshot(&state, &mut snapshots, k, i)?;
            if state.append_snapshot(&w)? {
                state.basis.provenance.push(Selection {
                    param_id: k,
                    direction: i,
                    param: sample[k],
                    bound: rel,
                });
                state.basis.trace.push(TraceRow {
                    n_basis: n,
                    max_rel_bound: max_rel,
                    selection: Some((k, i)),
                });
                appended = true;
                break;
            } else {
                log::warn!(
                    "snapshot (parameter {k}, direction {}) numerically dependent; skipping",
                    i + 1
                );
            }
        }
        if !appended {
            state.basis.trace.push(TraceRow { n_basis: n, max_rel_bound: max_rel, selection: None });
            state.basis.stop_reason = Some(StopReason::SampleExhausted);
            break;
        }
    }
    Ok(state.basis)
}

/// Truth solutions and outputs for a sample, shared across audit truncations.
pub struct TruthSet {
    pub solutions: Vec<CellSolution>,
    pub tensors: Vec<HomogTensor>,
}

pub fn solve_truth_set(system: &AffineSystem, sample: &[CellParam]) -> Result<TruthSet> {
    let mut solutions = Vec::with_capacity(sample.len());
    let mut tensors = Vec::with_capacity(sample.len());
    for p in sample {
        let sol = system.solve_cell(p)?;
        tensors.push(system.homogenized_tensor(&sol));
        solutions.push(sol);
    }
    Ok(TruthSet { solutions, tensors })
}

/// One audited (parameter, direction) pair.
#[derive(Clone, Copy, Debug)]
pub struct AuditRow {
    pub param_id: usize,
    pub param: CellParam,
    /// 0-based direction.
    pub direction: usize,
    pub true_err: f64,
    pub bound: f64,
    pub effectivity: f64,
    /// Max-over-j absolute output error for this direction's row of s.
    pub s_err: f64,
    pub s_bound: f64,
    pub w_norm: f64,
    /// Parameter-dependent allowed effectivity bracket top, gamma/alpha.
    pub bracket_top: f64,
    /// True when the error sits above the dual-norm noise floor and the
    /// bracket assertions apply.
    pub certified: bool,
}

/// Audit of the certified bounds over a test sample.
#[derive(Clone, Debug)]
pub struct AuditReport {
    pub n_basis: usize,
    pub rows: Vec<AuditRow>,
    pub min_effectivity: f64,
    pub max_effectivity: f64,
    pub median_effectivity: f64,
    /// Worst-case allowed bracket over the sample, max over gamma(x)/alpha(x).
    pub max_bracket: f64,
    /// Bracket computed from box-wide worst-case constants, for comparison
    /// with the parameter-dependent one.
    pub global_bracket: f64,
    pub max_rel_bound: f64,
    pub max_rel_true_err: f64,
    pub max_rel_output_err: f64,
}

/// Relative effectivity floor: below `floor * ||w||` the Gram-evaluated dual
/// norm is dominated by floating-point noise and effectivities are not
/// meaningful.
const EFFECTIVITY_FLOOR: f64 = 1e-9;

/// Per-parameter, per-direction comparison of true errors against certified
/// bounds. Any certified row with effectivity below 1 (up to 1e-6) or above
/// the parameter bracket gamma/alpha aborts with a hard error: the bound
/// proof leaves no room for violations.
pub fn effectivity_audit_with(
    basis: &ReducedBasis,
    system: &AffineSystem,
    sample: &[CellParam],
    truth: &TruthSet,
) -> Result<AuditReport> {
    assert_eq!(sample.len(), truth.solutions.len());
    let mut rows = Vec::with_capacity(2 * sample.len());
    let mut max_rel_bound: f64 = 0.0;
    let mut max_rel_true: f64 = 0.0;
    let mut max_rel_output: f64 = 0.0;
    let mut max_bracket: f64 = 0.0;
    let mut box_alpha = f64::INFINITY;
    let mut box_gamma: f64 = 0.0;

    for (k, param) in sample.iter().enumerate() {
        let online = basis.online_solve(param)?;
        let (alpha, gamma) = affine_coeffs(param)?.coercivity_bounds();
        box_alpha = box_alpha.min(alpha);
        box_gamma = box_gamma.max(gamma);
        let bracket = gamma / alpha;
        max_bracket = max_bracket.max(bracket);
        let truth_sol = &truth.solutions[k];
        let s_truth = truth.tensors[k].s;

        // per-parameter relative output error, normalized by the output
        // matrix magnitude: per-entry ratios are ill-conditioned because
        // s_12 crosses zero at symmetric geometries
        let s_scale = s_truth.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if s_scale > 1e-14 {
            let d_max = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (s_truth[i][j] - online.s_n[i][j]).abs())
                .fold(0.0f64, f64::max);
            max_rel_output = max_rel_output.max(d_max / s_scale);
        }

        for i in 0..2 {
            let w_n = basis.reconstruct(&online.coeffs[i]);
            let diff: Vec<f64> =
                w_n.iter().zip(&truth_sol.w[i]).map(|(a, b)| a - b).collect();
            let true_err = system.h1_semi(&diff);
            let w_norm = system.h1_semi(&truth_sol.w[i]);
            let bound = online.delta_w[i];
            let s_err = (0..2)
                .map(|j| (s_truth[i][j] - online.s_n[i][j]).abs())
                .fold(0.0, f64::max);
            let s_bound = online.delta_s[i][0].max(online.delta_s[i][1]);

            if w_norm > 0.0 {
                max_rel_true = max_rel_true.max(true_err / w_norm);
                max_rel_bound = max_rel_bound.max(bound / w_norm);
            }

            // bound validity holds unconditionally, up to absolute slack
            if true_err > bound + 1e-10 {
                return Err(Error::BoundViolation {
                    param_id: k,
                    direction: i + 1,
                    effectivity: bound / true_err,
                    allowed: bracket,
                });
            }
            if s_err > s_bound + 1e-10 {
                return Err(Error::BoundViolation {
                    param_id: k,
                    direction: i + 1,
                    effectivity: s_err / s_bound.max(1e-300),
                    allowed: bracket,
                });
            }

            let certified = true_err > EFFECTIVITY_FLOOR * w_norm.max(1e-6);
            let effectivity = if true_err > 0.0 { bound / true_err } else { f64::NAN };
            if certified {
                if effectivity < 1.0 - 1e-6 || effectivity > bracket + 1e-6 {
                    return Err(Error::BoundViolation {
                        param_id: k,
                        direction: i + 1,
                        effectivity,
                        allowed: bracket,
                    });
                }
            }
            rows.push(AuditRow {
                param_id: k,
                param: *param,
                direction: i,
                true_err,
                bound,
                effectivity,
                s_err,
                s_bound,
                w_norm,
                bracket_top: bracket,
                certified,
            });
        }
    }

    let mut effs: Vec<f64> = rows
        .iter()
        .filter(|r| r.certified && r.effectivity.is_finite())
        .map(|r| r.effectivity)
        .collect();
    effs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (min_eff, max_eff, median_eff) = if effs.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (effs[0], effs[effs.len() - 1], effs[effs.len() / 2])
    };
    Ok(AuditReport {
        n_basis: basis.len(),
        rows,
        min_effectivity: min_eff,
        max_effectivity: max_eff,
        median_effectivity: median_eff,
        max_bracket,
        global_bracket: if box_alpha > 0.0 { box_gamma / box_alpha } else { f64::NAN },
        max_rel_bound,
        max_rel_true_err: max_rel_true,
        max_rel_output_err: max_rel_output,
    })
}

pub fn effectivity_audit(
    basis: &ReducedBasis,
    system: &AffineSystem,
    sample: &[CellParam],
) -> Result<AuditReport> {
    let truth = solve_truth_set(system, sample)?;
    effectivity_audit_with(basis, system, sample, &truth)
}

/// Direct (FE-sized) evaluation of the residual dual norm: assemble the
/// residual vector, solve the reference Laplacian for its Riesz representer
/// and take the seminorm. The Gram-based online value must match this.
pub fn direct_dual_norm(
    basis: &ReducedBasis,
    system: &AffineSystem,
    param: &CellParam,
    dir: usize,
    beta: &DVector<f64>,
    rel_tol: f64,
) -> Result<f64> {
    let (k, f) = system.assemble_at(param)?;
    let w = basis.reconstruct(beta);
    let kw = k.matvec(&w);
    let residual: Vec<f64> = f[dir].iter().zip(&kw).map(|(a, b)| a - b).collect();
    let n = system.n_dof();
    let mut frozen = vec![false; n];
    frozen[system.constraint().pinned_node] = true;
    let (rho, _) = pcg_masked(system.k_ref(), &residual, &frozen, rel_tol)?;
    Ok(system.h1_semi(&rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PeriodicMesh;
    use crate::sample::{sample_params, SampleSpec};

    fn small_setup(n: usize, p: usize, seed: u64) -> (AffineSystem, Vec<CellParam>, ParamBox) {
        let system = AffineSystem::new(PeriodicMesh::new(n).unwrap());
        let pbox = ParamBox::new(0.1, 0.99).unwrap();
        let sample = sample_params(&SampleSpec { seed, count: p, param_box: pbox });
        (system, sample, pbox)
    }

    #[test]
    fn degenerate_sample_yields_empty_basis() {
        let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
        let pbox = ParamBox::new(0.1, 0.0).unwrap();
        let sample = vec![CellParam::reference(0.0).unwrap()];
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(2, 1e-8, 0)).unwrap();
        assert!(basis.is_empty());
        assert_eq!(basis.stop_reason(), Some(StopReason::DegenerateSample));
        // online solve still works and certifies the zero solution
        let online = basis.online_solve(&CellParam::reference(0.0).unwrap()).unwrap();
        assert_eq!(online.s_n[0][0], 0.0);
        assert!(online.delta_w[0] < 1e-10);
        assert!((online.a_star[0][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn basis_is_orthonormal_and_blocks_consistent() {
        let (system, sample, pbox) = small_setup(8, 6, 3);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(8, 1e-10, 3)).unwrap();
        assert!(basis.len() >= 4);
        for a in 0..basis.len() {
            for b in 0..basis.len() {
                let ip = system.h1_semi_inner(basis.basis_vector(a), basis.basis_vector(b));
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-10, "gram ({a},{b}) = {ip}");
            }
        }
        // reduced blocks match on-demand projection
        for block in 0..NUM_BLOCKS {
            for d in 0..2 {
                let dir = crate::assemble::Direction::from_index(d);
                let m = system.stiffness_block(block, dir);
                for a in 0..basis.len() {
                    let ma = m.matvec(basis.basis_vector(a));
                    for b in 0..basis.len() {
                        let v = dot(basis.basis_vector(b), &ma);
                        let stored = basis.m_rb[block][d][(b, a)];
                        assert!((v - stored).abs() < 1e-12, "block {block} dir {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn training_decay_is_monotone() {
        let (system, sample, pbox) = small_setup(8, 8, 7);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(12, 0.0, 7)).unwrap();
        let trace = basis.trace();
        assert!(!trace.is_empty());
        for w in trace.windows(2) {
            assert!(
                w[1].max_rel_bound <= w[0].max_rel_bound * (1.0 + 1e-9),
                "bound increased: {} -> {}",
                w[0].max_rel_bound,
                w[1].max_rel_bound
            );
        }
    }

    #[test]
    fn homogeneous_parameter_has_zero_online_solution() {
        let (system, sample, pbox) = small_setup(8, 4, 9);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(6, 1e-10, 9)).unwrap();
        let online = basis.online_solve(&CellParam::reference(0.0).unwrap()).unwrap();
        assert!(online.coeffs[0].norm() < 1e-12);
        assert!(online.delta_w[0] < 1e-10 && online.delta_w[1] < 1e-10);
        for i in 0..2 {
            for j in 0..2 {
                assert!(online.s_n[i][j].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn training_parameters_reproduced_after_selection() {
        let (system, sample, pbox) = small_setup(8, 4, 21);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(8, 0.0, 21)).unwrap();
        // every selected snapshot is reproduced by the online solve
        for sel in basis.provenance() {
            let online = basis.online_solve(&sel.param).unwrap();
            let truth = system.solve_cell(&sel.param).unwrap();
            let w_n = basis.reconstruct(&online.coeffs[sel.direction]);
            let diff: Vec<f64> = w_n
                .iter()
                .zip(&truth.w[sel.direction])
                .map(|(a, b)| a - b)
                .collect();
            let err = system.h1_semi(&diff);
            assert!(err < 1e-9, "snapshot not reproduced: err {err}");
            // residual bound vanishes to roundoff on reproduced snapshots
            let norm = system.h1_semi(&truth.w[sel.direction]);
            assert!(online.delta_w[sel.direction] <= 1e-8 * norm.max(1e-3));
        }
    }

    #[test]
    fn online_output_matches_truth_within_bounds() {
        let (system, sample, pbox) = small_setup(8, 6, 33);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(10, 1e-12, 33)).unwrap();
        let fresh = sample_params(&SampleSpec { seed: 34, count: 10, param_box: pbox });
        for p in &fresh {
            let online = basis.online_solve(p).unwrap();
            let truth = system.solve_cell(p).unwrap();
            let s = system.homogenized_tensor(&truth).s;
            for i in 0..2 {
                for j in 0..2 {
                    let err = (s[i][j] - online.s_n[i][j]).abs();
                    assert!(
                        err <= online.delta_s[i][j] + 1e-10,
                        "output error {err} above bound {}",
                        online.delta_s[i][j]
                    );
                }
                // s_n symmetric
                assert!((online.s_n[0][1] - online.s_n[1][0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_symmetric_parameter_bound_mediated_symmetry() {
        let (system, sample, pbox) = small_setup(8, 6, 40);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(10, 1e-12, 40)).unwrap();
        let p = CellParam::reference(-0.6).unwrap();
        let online = basis.online_solve(&p).unwrap();
        let gap = (online.s_n[0][0] - online.s_n[1][1]).abs();
        let allowance = 2.0 * online
            .delta_s
            .iter()
            .flatten()
            .cloned()
            .fold(0.0, f64::max);
        assert!(gap <= allowance + 1e-12, "gap {gap} allowance {allowance}");
        let _ = system; // truth not needed here
    }

    #[test]
    fn effectivities_bracketed_on_fresh_sample() {
        let (system, sample, pbox) = small_setup(8, 8, 55);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(8, 1e-12, 55)).unwrap();
        let fresh = sample_params(&SampleSpec { seed: 56, count: 12, param_box: pbox });
        let report = effectivity_audit(&basis, &system, &fresh).unwrap();
        assert!(report.min_effectivity >= 1.0 - 1e-6);
        assert!(report.max_effectivity <= report.max_bracket + 1e-6);
        assert!(report.global_bracket >= report.max_bracket - 1e-12);
        assert_eq!(report.rows.len(), 24);
    }

    #[test]
    fn empty_audit_sample_gives_empty_report() {
        let (system, sample, pbox) = small_setup(8, 3, 60);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(4, 1e-12, 60)).unwrap();
        let report = effectivity_audit(&basis, &system, &[]).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.min_effectivity.is_nan());
    }

    #[test]
    fn truncation_matches_prefix_behaviour() {
        let (system, sample, pbox) = small_setup(8, 6, 71);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(10, 0.0, 71)).unwrap();
        let small = basis.truncated(4);
        assert_eq!(small.len(), 4);
        let p = sample_params(&SampleSpec { seed: 72, count: 1, param_box: pbox })[0];
        let online = small.online_solve(&p).unwrap();
        // the truncated Gram still certifies: check against the direct route
        for i in 0..2 {
            let direct =
                direct_dual_norm(&small, &system, &p, i, &online.coeffs[i], 1e-14).unwrap();
            let (alpha, _) = affine_coeffs(&p).unwrap().coercivity_bounds();
            let gram_based = online.delta_w[i] * alpha;
            assert!(
                (direct - gram_based).abs() <= 1e-10 * direct.max(1e-12),
                "direct {direct} vs gram {gram_based}"
            );
        }
    }

    #[test]
    fn riesz_gram_matches_direct_dual_norm() {
        let (system, sample, pbox) = small_setup(8, 4, 81);
        let basis =
            greedy_build(&system, &sample, pbox, GreedyOptions::new(3, 1e-12, 81)).unwrap();
        let fresh = sample_params(&SampleSpec { seed: 82, count: 5, param_box: pbox });
        for p in &fresh {
            let online = basis.online_solve(p).unwrap();
            let ac = affine_coeffs(p).unwrap();
            let (alpha, _) = ac.coercivity_bounds();
            for i in 0..2 {
                let gram_val = online.delta_w[i] * alpha;
                let direct =
                    direct_dual_norm(&basis, &system, p, i, &online.coeffs[i], 1e-14).unwrap();
                let rel = (gram_val - direct).abs() / direct.max(1e-300);
                assert!(rel < 1e-10, "relative gap {rel} at {p:?}");
            }
        }
    }
}
