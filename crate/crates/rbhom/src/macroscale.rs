//! Macroscopic homogenized solves on the unit square and two-scale corrector
//! reconstruction.
//!
//! The macro problem is `-div(A*(x) grad u) = 0` with zero Dirichlet data on
//! the faces x1 = 1 and x2 = 1 and unit Neumann influx on x1 = 0 and x2 = 0.
//! Per-element homogenized tensors come from a coefficient provider, either
//! the truth cell solver or the reduced-basis engine; one barycenter query
//! per element is exact for P1 stiffness with an element-wise constant
//! tensor.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::cell::AffineSystem;
use crate::error::{Error, Result};
use crate::mesh::Element;
use crate::param::{block_map, CellParam, ParamBox};
use crate::rb::ReducedBasis;
use crate::sparse::{pcg_masked, SparseSpd, DEFAULT_SOLVE_TOL};

/// Uniform triangulation of the unit square, same isosceles pattern as the
/// cell mesh, with mixed boundary tags.
#[derive(Clone)]
pub struct MacroMesh {
    m: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    dirichlet: Vec<bool>,
    /// Neumann boundary edges as node pairs (faces x1 = 0 and x2 = 0).
    neumann_edges: Vec<(usize, usize)>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl MacroMesh {
    pub fn new(cells_per_side: usize) -> Result<Self> {
        if cells_per_side == 0 {
            return Err(Error::Config("macro mesh needs at least one cell".into()));
        }
        let m = cells_per_side;
        let np = m + 1;
        let h = 1.0 / m as f64;
        let node = |i: usize, j: usize| i + np * j;

        let mut nodes = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut elements = Vec::with_capacity(2 * m * m);
        for j in 0..m {
            for i in 0..m {
                let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
                let (y0, y1) = (j as f64 * h, (j + 1) as f64 * h);
                elements.push(Element {
                    nodes: [node(i, j), node(i + 1, j), node(i, j + 1)],
                    vertices: [[x0, y0], [x1, y0], [x0, y1]],
                    block: 0,
                    lower: true,
                });
                elements.push(Element {
                    nodes: [node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)],
                    vertices: [[x1, y0], [x1, y1], [x0, y1]],
                    block: 0,
                    lower: false,
                });
            }
        }
        // Dirichlet on {x1 = 1} and {x2 = 1}
        let mut dirichlet = vec![false; np * np];
        for j in 0..np {
            dirichlet[node(m, j)] = true;
            dirichlet[node(j, m)] = true;
        }
        // Neumann edges on {x1 = 0} and {x2 = 0}
        let mut neumann_edges = Vec::with_capacity(2 * m);
        for j in 0..m {
            neumann_edges.push((node(0, j), node(0, j + 1)));
        }
        for i in 0..m {
            neumann_edges.push((node(i, 0), node(i + 1, 0)));
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); np * np];
        for e in &elements {
            for &a in &e.nodes {
                for &b in &e.nodes {
                    adj[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(np * np + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }

        Ok(MacroMesh { m, nodes, elements, dirichlet, neumann_edges, row_ptr, col_idx })
    }

    pub fn cells_per_side(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
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

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn neumann_edges(&self) -> &[(usize, usize)] {
        &self.neumann_edges
    }

    fn zero_matrix(&self) -> SparseSpd {
        SparseSpd::zero_on_pattern(self.n_nodes(), self.row_ptr.clone(), self.col_idx.clone())
    }

    /// Index of the element containing a point of the closed unit square.
    pub fn element_at(&self, p: [f64; 2]) -> usize {
        let m = self.m;
        let h = self.h();
        let clamp = |t: f64| t.clamp(0.0, 1.0 - 1e-14);
        let (x, y) = (clamp(p[0]), clamp(p[1]));
        let i = ((x / h) as usize).min(m - 1);
        let j = ((y / h) as usize).min(m - 1);
        let (lx, ly) = (x / h - i as f64, y / h - j as f64);
        let cell = 2 * (i + m * j);
        if lx + ly <= 1.0 {
            cell
        } else {
            cell + 1
        }
    }

    /// P1 interpolation of nodal values at a point.
    pub fn interpolate(&self, u: &[f64], p: [f64; 2]) -> f64 {
        let e = &self.elements[self.element_at(p)];
        let [a, b, c] = e.vertices;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / det;
        let l0 = 1.0 - l1 - l2;
        u[e.nodes[0]] * l0 + u[e.nodes[1]] * l1 + u[e.nodes[2]] * l2
    }

    /// Constant gradient of the P1 field on the element containing `p`.
    pub fn gradient_at(&self, u: &[f64], p: [f64; 2]) -> [f64; 2] {
        let e = &self.elements[self.element_at(p)];
        element_gradient(e, u)
    }
}

fn element_gradient(e: &Element, u: &[f64]) -> [f64; 2] {
    let g = e.basis_gradients();
    let mut out = [0.0, 0.0];
    for (l, gl) in g.iter().enumerate() {
        out[0] += u[e.nodes[l]] * gl[0];
        out[1] += u[e.nodes[l]] * gl[1];
    }
    out
}

/// Analytic parameter fields over the macro domain.
pub enum FieldSpec {
    /// Smooth default field: corners oscillate around the reference
    /// geometry, contrast deepens linearly along the diagonal.
    Default,
    /// The same parameter at every point.
    Constant(CellParam),
    /// User hook.
    Custom(Arc<dyn Fn([f64; 2]) -> CellParam + Send + Sync>),
}

/// A parameter field plus the admissible box its values must stay in.
pub struct ParamField {
    spec: FieldSpec,
    param_box: ParamBox,
}

impl ParamField {
    pub fn default_field(param_box: ParamBox) -> Self {
        ParamField { spec: FieldSpec::Default, param_box }
    }

    pub fn constant(param_box: ParamBox, param: CellParam) -> Self {
        ParamField { spec: FieldSpec::Constant(param), param_box }
    }

    pub fn custom(
        param_box: ParamBox,
        f: Arc<dyn Fn([f64; 2]) -> CellParam + Send + Sync>,
    ) -> Self {
        ParamField { spec: FieldSpec::Custom(f), param_box }
    }

    pub fn param_box(&self) -> ParamBox {
        self.param_box
    }

    /// Raw field formula.
    pub fn eval(&self, x: [f64; 2]) -> CellParam {
        match &self.spec {
            FieldSpec::Default => {
                use std::f64::consts::TAU;
                let d = self.param_box.delta;
                let t0 = self.param_box.theta0;
                CellParam {
                    b1: 0.25 + d * (TAU * x[0]).sin(),
                    c1: 0.75 + d * (TAU * x[1]).cos(),
                    b2: 0.25 + d * (TAU * x[1]).sin(),
                    c2: 0.75 + d * (TAU * x[0]).cos(),
                    theta: -t0 * (x[0] + x[1]) / 2.0,
                }
            }
            FieldSpec::Constant(p) => *p,
            FieldSpec::Custom(f) => f(x),
        }
    }

    /// Field evaluation with the invariants enforced; used during mesh
    /// sweeps so a misconfigured field fails loudly.
    pub fn eval_checked(&self, x: [f64; 2]) -> Result<CellParam> {
        let p = self.eval(x);
        p.validate().map_err(|e| Error::FieldOutOfBox {
            x1: x[0],
            x2: x[1],
            reason: e.to_string(),
        })?;
        if !self.param_box.contains(&p) {
            return Err(Error::FieldOutOfBox {
                x1: x[0],
                x2: x[1],
                reason: format!("{p:?} outside the configured box"),
            });
        }
        Ok(p)
    }

    /// Exhaustive grid validation of the field.
    pub fn validate_on_grid(&self, resolution: usize) -> Result<()> {
        for j in 0..=resolution {
            for i in 0..=resolution {
                let x = [i as f64 / resolution as f64, j as f64 / resolution as f64];
                self.eval_checked(x)?;
            }
        }
        Ok(())
    }
}

/// Which engine supplied the homogenized tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    Truth,
    Rb,
}

impl ProviderKind {
    pub fn label(self) -> &'static str {
        match self {
            ProviderKind::Truth => "truth",
            ProviderKind::Rb => "rb",
        }
    }
}

/// Source of per-parameter homogenized tensors.
pub trait CoefficientProvider {
    fn kind(&self) -> ProviderKind;
    /// Tensor and, for certified engines, the 2x2 output bounds.
    fn tensor_at(&self, param: &CellParam) -> Result<([[f64; 2]; 2], [[f64; 2]; 2])>;
}

pub struct TruthProvider<'a> {
    pub system: &'a AffineSystem,
}

impl CoefficientProvider for TruthProvider<'_> {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Truth
    }

    fn tensor_at(&self, param: &CellParam) -> Result<([[f64; 2]; 2], [[f64; 2]; 2])> {
        let sol = self.system.solve_cell(param)?;
        let t = self.system.homogenized_tensor(&sol);
        Ok((t.a_star, [[0.0; 2]; 2]))
    }
}

pub struct RbProvider<'a> {
    pub basis: &'a ReducedBasis,
}

impl CoefficientProvider for RbProvider<'_> {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Rb
    }

    fn tensor_at(&self, param: &CellParam) -> Result<([[f64; 2]; 2], [[f64; 2]; 2])> {
        let online = self.basis.online_solve(param)?;
        Ok((online.a_star, online.delta_s))
    }
}

/// Assembled macro system with the per-element coefficient audit trail.
pub struct MacroAssembly {
    pub stiffness: SparseSpd,
    pub rhs: Vec<f64>,
    pub element_tensors: Vec<[[f64; 2]; 2]>,
    pub element_delta_s: Vec<[[f64; 2]; 2]>,
    pub max_delta_s: f64,
}

/// Assemble the homogenized stiffness and load: one coefficient query per
/// element at its barycenter, Neumann flux 1 on the tagged edges, Dirichlet
/// rows frozen at solve time.
pub fn assemble_homogenized(
    mesh: &MacroMesh,
    field: &ParamField,
    provider: &dyn CoefficientProvider,
) -> Result<MacroAssembly> {
    let mut stiffness = mesh.zero_matrix();
    let mut element_tensors = Vec::with_capacity(mesh.elements().len());
    let mut element_delta_s = Vec::with_capacity(mesh.elements().len());
    let mut max_delta_s: f64 = 0.0;

    for (eid, e) in mesh.elements().iter().enumerate() {
        let x = e.barycenter();
        let param = field.eval_checked(x)?;
        let (a, delta) = provider.tensor_at(&param).map_err(|err| Error::MacroStage {
            stage: format!("coefficient query at element {eid}"),
            source: Box::new(err),
        })?;
        element_tensors.push(a);
        element_delta_s.push(delta);
        for row in &delta {
            for &v in row {
                max_delta_s = max_delta_s.max(v);
            }
        }
        let area = e.area();
        let g = e.basis_gradients();
        for l in 0..3 {
            let ag = [
                a[0][0] * g[l][0] + a[0][1] * g[l][1],
                a[1][0] * g[l][0] + a[1][1] * g[l][1],
            ];
            for k in 0..3 {
                stiffness.add_at(
                    e.nodes[l],
                    e.nodes[k],
                    area * (ag[0] * g[k][0] + ag[1] * g[k][1]),
                );
            }
        }
    }

    // Neumann flux: integral of v over each tagged edge, split between its
    // endpoints.
    let mut rhs = vec![0.0; mesh.n_nodes()];
    for &(a, b) in mesh.neumann_edges() {
        let pa = mesh.nodes()[a];
        let pb = mesh.nodes()[b];
        let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
        rhs[a] += 0.5 * len;
        rhs[b] += 0.5 * len;
    }

    Ok(MacroAssembly { stiffness, rhs, element_tensors, element_delta_s, max_delta_s })
}

/// Dirichlet-constrained solve of the assembled macro system.
pub fn solve_macro(mesh: &MacroMesh, assembly: &MacroAssembly) -> Result<Vec<f64>> {
    let (u, _res) = pcg_masked(
        &assembly.stiffness,
        &assembly.rhs,
        mesh.dirichlet_mask(),
        DEFAULT_SOLVE_TOL,
    )
    .map_err(|err| Error::MacroStage { stage: "macro solve".into(), source: Box::new(err) })?;
    Ok(u)
}

/// A finished homogenized run.
pub struct HomogenizedRun {
    pub provider: ProviderKind,
    pub mesh: Arc<MacroMesh>,
    pub u: Vec<f64>,
    pub element_tensors: Vec<[[f64; 2]; 2]>,
    pub element_delta_s: Vec<[[f64; 2]; 2]>,
    pub max_delta_s: f64,
    pub assembly_time: Duration,
    pub solve_time: Duration,
}

/// Full pipeline: assemble with the chosen provider and solve.
pub fn run_homogenize(
    mesh: Arc<MacroMesh>,
    field: &ParamField,
    provider: &dyn CoefficientProvider,
) -> Result<HomogenizedRun> {
    let t0 = Instant::now();
    let assembly = assemble_homogenized(&mesh, field, provider)?;
    let assembly_time = t0.elapsed();
    let t1 = Instant::now();
    let u = solve_macro(&mesh, &assembly)?;
    let solve_time = t1.elapsed();
    Ok(HomogenizedRun {
        provider: provider.kind(),
        mesh,
        u,
        element_tensors: assembly.element_tensors,
        element_delta_s: assembly.element_delta_s,
        max_delta_s: assembly.max_delta_s,
        assembly_time,
        solve_time,
    })
}

/// L2 and H1 norms of the difference of two nodal fields on one mesh.
pub fn difference_norms(mesh: &MacroMesh, a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut l2_sq = 0.0;
    let mut semi_sq = 0.0;
    for e in mesh.elements() {
        let d = [
            a[e.nodes[0]] - b[e.nodes[0]],
            a[e.nodes[1]] - b[e.nodes[1]],
            a[e.nodes[2]] - b[e.nodes[2]],
        ];
        let area = e.area();
        let sum = d[0] + d[1] + d[2];
        l2_sq += area / 12.0 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + sum * sum);
        let g = e.basis_gradients();
        let mut grad = [0.0, 0.0];
        for l in 0..3 {
            grad[0] += d[l] * g[l][0];
            grad[1] += d[l] * g[l][1];
        }
        semi_sq += area * (grad[0] * grad[0] + grad[1] * grad[1]);
    }
    (l2_sq.sqrt(), (l2_sq + semi_sq).sqrt())
}

/// Gradient L2 norm of a nodal field.
pub fn gradient_norm(mesh: &MacroMesh, u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for e in mesh.elements() {
        let g = element_gradient(e, u);
        acc += e.area() * (g[0] * g[0] + g[1] * g[1]);
    }
    acc.sqrt()
}

/// Comparison of a truth-provider run against an rb-provider run, with the
/// certified-style macro error indicator built from measured quantities: the
/// certified tensor gap, the measured coercivity/continuity of the truth
/// tensors and the rb solution's gradient norm.
#[derive(Clone, Copy, Debug)]
pub struct MacroComparison {
    pub l2_err: f64,
    pub h1_err: f64,
    /// max over elements of max_ij delta_s_ij (certified |A* - A*_N| bound)
    pub max_delta_a: f64,
    /// measured min eigenvalue over truth element tensors
    pub alpha_star: f64,
    /// measured max eigenvalue over truth element tensors
    pub gamma_star: f64,
    /// sqrt of the macro error estimate; dominates the measured H1 error
    pub indicator: f64,
}

pub fn compare_macro(truth: &HomogenizedRun, rb: &HomogenizedRun) -> Result<MacroComparison> {
    if truth.mesh.cells_per_side() != rb.mesh.cells_per_side() {
        return Err(Error::DimensionMismatch {
            expected: truth.mesh.cells_per_side(),
            got: rb.mesh.cells_per_side(),
        });
    }
    let mesh = &truth.mesh;
    let (l2_err, h1_err) = difference_norms(mesh, &truth.u, &rb.u);

    let mut alpha_star = f64::INFINITY;
    let mut gamma_star: f64 = 0.0;
    for a in &truth.element_tensors {
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        alpha_star = alpha_star.min(tr / 2.0 - disc);
        gamma_star = gamma_star.max(tr / 2.0 + disc);
    }
    // certified elementwise tensor gap, plus the measured one as a sanity
    // floor (the certified one must dominate it)
    let max_delta_a = rb.max_delta_s;
    let grad_rb = gradient_norm(mesh, &rb.u);
    let indicator_sq = (max_delta_a * gamma_star / alpha_star + 1.0) * max_delta_a
        * grad_rb
        * grad_rb
        / alpha_star;
    Ok(MacroComparison {
        l2_err,
        h1_err,
        max_delta_a,
        alpha_star,
        gamma_star,
        indicator: indicator_sq.max(0.0).sqrt(),
    })
}

/// Where corrector cell functions come from.
pub enum CorrectorSource<'a> {
    Truth(&'a AffineSystem),
    Rb(&'a ReducedBasis, &'a AffineSystem),
}

/// One sample of the reconstructed fine-scale field.
#[derive(Clone, Copy, Debug)]
pub struct CorrectorSample {
    pub x: [f64; 2],
    pub u_corrected: f64,
    pub u_star: f64,
    pub grad: [f64; 2],
}

/// Sampled two-scale reconstruction `u* + eps * sum_i w_i(x, x/eps) d_i u*`.
pub struct CorrectorField {
    pub resolution: usize,
    pub epsilon: f64,
    pub samples: Vec<CorrectorSample>,
    /// Set when the grid does not resolve the fast period with at least four
    /// samples.
    pub undersampled: bool,
}

pub fn reconstruct_corrector(
    run: &HomogenizedRun,
    field: &ParamField,
    source: &CorrectorSource,
    epsilon: f64,
    resolution: usize,
) -> Result<CorrectorField> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert!(resolution > 0);
    let undersampled = (epsilon * resolution as f64) < 4.0;
    if undersampled {
        log::warn!(
            "corrector grid {resolution} too coarse for epsilon {epsilon}: fewer than 4 samples per period"
        );
    }
    let mesh = &run.mesh;
    let mut samples = Vec::with_capacity(resolution * resolution);
    // one-entry cache: constant fields re-solve nothing
    let mut truth_cache: Option<(CellParam, crate::cell::CellSolution)> = None;
    let mut rb_cache: Option<(CellParam, crate::rb::OnlineResult)> = None;
    for j in 0..resolution {
        for i in 0..resolution {
            let x = [
                (i as f64 + 0.5) / resolution as f64,
                (j as f64 + 0.5) / resolution as f64,
            ];
            let u_star = mesh.interpolate(&run.u, x);
            let grad = mesh.gradient_at(&run.u, x);
            let param = field.eval_checked(x)?;
            let map = block_map(&param)?;
            let wrap = |t: f64| t - t.floor();
            let y_phys = [wrap(x[0] / epsilon), wrap(x[1] / epsilon)];
            let y_ref = map.to_reference(y_phys);

            let (w1, w2) = match source {
                CorrectorSource::Truth(system) => {
                    if truth_cache.as_ref().map(|(p, _)| p) != Some(&param) {
                        truth_cache = Some((param, system.solve_cell(&param)?));
                    }
                    let sol = &truth_cache.as_ref().unwrap().1;
                    let (nodes, lambdas) = system.mesh().interp_support(y_ref);
                    let at = |w: &[f64]| {
                        nodes.iter().zip(lambdas).map(|(&k, l)| w[k] * l).sum::<f64>()
                    };
                    (at(&sol.w[0]), at(&sol.w[1]))
                }
                CorrectorSource::Rb(basis, system) => {
                    if rb_cache.as_ref().map(|(p, _)| p) != Some(&param) {
                        rb_cache = Some((param, basis.online_solve(&param)?));
                    }
                    let online = &rb_cache.as_ref().unwrap().1;
                    let (nodes, lambdas) = system.mesh().interp_support(y_ref);
                    let eval = |dir: usize| {
                        nodes
                            .iter()
                            .zip(lambdas)
                            .map(|(&k, l)| {
                                let mut v = 0.0;
                                for jj in 0..basis.len() {
                                    v += online.coeffs[dir][jj] * basis.basis_vector(jj)[k];
                                }
                                v * l
                            })
                            .sum::<f64>()
                    };
                    (eval(0), eval(1))
                }
            };
            let u_corrected = u_star + epsilon * (w1 * grad[0] + w2 * grad[1]);
            samples.push(CorrectorSample { x, u_corrected, u_star, grad });
        }
    }
    Ok(CorrectorField { resolution, epsilon, samples, undersampled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PeriodicMesh;
    use crate::param::ParamBox;
    use crate::rb::{greedy_build, GreedyOptions};
    use crate::sample::{sample_params, SampleSpec};

    fn pbox() -> ParamBox {
        ParamBox::new(0.1, 0.99).unwrap()
    }

    #[test]
    fn default_field_matches_formula_at_origin() {
        let field = ParamField::default_field(pbox());
        let p = field.eval([0.0, 0.0]);
        assert!((p.b1 - 0.25).abs() < 1e-15);
        assert!((p.c1 - 0.85).abs() < 1e-15);
        assert!((p.b2 - 0.25).abs() < 1e-15);
        assert!((p.c2 - 0.85).abs() < 1e-15);
        assert_eq!(p.theta, 0.0);
        field.eval_checked([0.0, 0.0]).unwrap();
    }

    #[test]
    fn constant_field_is_constant() {
        let p = CellParam::reference(-0.4).unwrap();
        let field = ParamField::constant(pbox(), p);
        assert_eq!(field.eval([0.1, 0.9]), p);
        assert_eq!(field.eval([0.7, 0.2]), p);
    }

    #[test]
    fn default_field_stays_in_the_box_on_a_fine_grid() {
        let field = ParamField::default_field(pbox());
        field.validate_on_grid(100).unwrap();
    }

    #[test]
    fn escaping_field_rejected_at_sweep_time() {
        let field = ParamField::custom(
            pbox(),
            Arc::new(|x: [f64; 2]| CellParam {
                b1: 0.25 + x[0], // escapes for x0 > delta
                c1: 0.75,
                b2: 0.25,
                c2: 0.75,
                theta: -0.5,
            }),
        );
        assert!(matches!(field.validate_on_grid(10), Err(Error::FieldOutOfBox { .. })));
    }

    #[test]
    fn boundary_edges_carry_exactly_one_tag() {
        let m = 6;
        let mesh = MacroMesh::new(m).unwrap();
        // 2m Neumann edges on the influx faces, and every remaining boundary
        // edge lies on a Dirichlet face (both endpoints constrained)
        assert_eq!(mesh.neumann_edges().len(), 2 * m);
        let dir = mesh.dirichlet_mask();
        for &(a, b) in mesh.neumann_edges() {
            let pa = mesh.nodes()[a];
            let pb = mesh.nodes()[b];
            assert!(
                (pa[0] == 0.0 && pb[0] == 0.0) || (pa[1] == 0.0 && pb[1] == 0.0),
                "neumann edge off the influx faces"
            );
        }
        let np = m + 1;
        for j in 0..m {
            // right and top faces: Dirichlet on both endpoints
            assert!(dir[m + np * j] && dir[m + np * (j + 1)]);
            assert!(dir[j + np * m] && dir[j + 1 + np * m]);
        }
    }

    #[test]
    fn neumann_inflow_totals_the_boundary_length() {
        let mesh = MacroMesh::new(8).unwrap();
        let field = ParamField::constant(pbox(), CellParam::reference(0.0).unwrap());
        let system = AffineSystem::new(PeriodicMesh::new(4).unwrap());
        let provider = TruthProvider { system: &system };
        let asm = assemble_homogenized(&mesh, &field, &provider).unwrap();
        let total: f64 = asm.rhs.iter().sum();
        assert!((total - 2.0).abs() < 1e-12, "total inflow {total}");
    }

    /// Independent assembly of the identity-coefficient mixed problem,
    /// written from scratch as an oracle for the pipeline path.
    fn oracle_laplace_mixed(m: usize) -> Vec<f64> {
        let np = m + 1;
        let h = 1.0 / m as f64;
        let node = |i: usize, j: usize| i + np * j;
        let n = np * np;
        let mut dense = vec![vec![0.0f64; n]; n];
        let mut rhs = vec![0.0f64; n];
        // triangle with vertices a, b, c; P1 stiffness = area * g_l . g_k
        let mut add_tri = |v: [[f64; 2]; 3], ids: [usize; 3]| {
            let area = 0.5
                * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1])
                    - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]));
            let g = [
                [(v[1][1] - v[2][1]) / (2.0 * area), (v[2][0] - v[1][0]) / (2.0 * area)],
                [(v[2][1] - v[0][1]) / (2.0 * area), (v[0][0] - v[2][0]) / (2.0 * area)],
                [(v[0][1] - v[1][1]) / (2.0 * area), (v[1][0] - v[0][0]) / (2.0 * area)],
            ];
            for l in 0..3 {
                for k in 0..3 {
                    dense[ids[l]][ids[k]] += area * (g[l][0] * g[k][0] + g[l][1] * g[k][1]);
                }
            }
        };
        for j in 0..m {
            for i in 0..m {
                let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
                let (y0, y1) = (j as f64 * h, (j + 1) as f64 * h);
                add_tri(
                    [[x0, y0], [x1, y0], [x0, y1]],
                    [node(i, j), node(i + 1, j), node(i, j + 1)],
                );
                add_tri(
                    [[x1, y0], [x1, y1], [x0, y1]],
                    [node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)],
                );
            }
        }
        for j in 0..m {
            rhs[node(0, j)] += 0.5 * h;
            rhs[node(0, j + 1)] += 0.5 * h;
        }
        for i in 0..m {
            rhs[node(i, 0)] += 0.5 * h;
            rhs[node(i + 1, 0)] += 0.5 * h;
        }
        // eliminate Dirichlet nodes and solve densely
        let dirichlet: Vec<bool> = (0..n)
            .map(|k| {
                let (i, j) = (k % np, k / np);
                i == m || j == m
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&k| !dirichlet[k]).collect();
        let nf = free.len();
        let mut a = nalgebra::DMatrix::zeros(nf, nf);
        let mut b = nalgebra::DVector::zeros(nf);
        for (r, &fr) in free.iter().enumerate() {
            b[r] = rhs[fr];
            for (c, &fc) in free.iter().enumerate() {
                a[(r, c)] = dense[fr][fc];
            }
        }
        let sol = a.cholesky().expect("oracle system SPD").solve(&b);
        let mut u = vec![0.0; n];
        for (r, &fr) in free.iter().enumerate() {
            u[fr] = sol[r];
        }
        u
    }

    #[test]
    fn identity_tensor_matches_independent_oracle() {
        let m = 8;
        let mesh = Arc::new(MacroMesh::new(m).unwrap());
        // theta0 = 0 gives a_star = I everywhere
        let field = ParamField::constant(
            ParamBox::new(0.1, 0.0).unwrap(),
            CellParam::reference(0.0).unwrap(),
        );
        let system = AffineSystem::new(PeriodicMesh::new(4).unwrap());
        let provider = TruthProvider { system: &system };
        let run = run_homogenize(mesh.clone(), &field, &provider).unwrap();
        let oracle = oracle_laplace_mixed(m);
        let max_gap = run
            .u
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap < 1e-9, "gap to oracle {max_gap}");
        // discrete maximum principle on the oracle path: inflow with zero
        // Dirichlet keeps the solution nonnegative
        assert!(run.u.iter().all(|&v| v >= -1e-12));
        // Dirichlet rows exactly zero
        for (k, &d) in mesh.dirichlet_mask().iter().enumerate() {
            if d {
                assert_eq!(run.u[k], 0.0);
            }
        }
    }

    struct ScaledProvider<'a> {
        inner: TruthProvider<'a>,
        factor: f64,
    }

    impl CoefficientProvider for ScaledProvider<'_> {
        fn kind(&self) -> ProviderKind {
            self.inner.kind()
        }
        fn tensor_at(&self, param: &CellParam) -> Result<([[f64; 2]; 2], [[f64; 2]; 2])> {
            let (mut a, d) = self.inner.tensor_at(param)?;
            for row in &mut a {
                for v in row.iter_mut() {
                    *v *= self.factor;
                }
            }
            Ok((a, d))
        }
    }

    #[test]
    fn doubling_the_tensor_halves_the_solution() {
        let mesh = Arc::new(MacroMesh::new(6).unwrap());
        let field = ParamField::default_field(pbox());
        let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
        let base = run_homogenize(mesh.clone(), &field, &TruthProvider { system: &system }).unwrap();
        let scaled = run_homogenize(
            mesh.clone(),
            &field,
            &ScaledProvider { inner: TruthProvider { system: &system }, factor: 2.0 },
        )
        .unwrap();
        for (a, b) in base.u.iter().zip(&scaled.u) {
            assert!((a - 2.0 * b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rb_provider_does_no_fe_solves_and_stays_within_bounds() {
        let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
        let pb = pbox();
        let sample = sample_params(&SampleSpec { seed: 3, count: 8, param_box: pb });
        let basis = greedy_build(&system, &sample, pb, GreedyOptions::new(10, 1e-12, 3)).unwrap();
        let mesh = Arc::new(MacroMesh::new(6).unwrap());
        let field = ParamField::default_field(pb);

        let truth_run =
            run_homogenize(mesh.clone(), &field, &TruthProvider { system: &system }).unwrap();
        let before = system.truth_solve_count();
        let rb_run =
            run_homogenize(mesh.clone(), &field, &RbProvider { basis: &basis }).unwrap();
        assert_eq!(system.truth_solve_count(), before, "rb provider did FE work");

        // certified tensor transport: per-element gaps within bounds
        for (eid, (at, ar)) in truth_run
            .element_tensors
            .iter()
            .zip(&rb_run.element_tensors)
            .enumerate()
        {
            let d = &rb_run.element_delta_s[eid];
            for i in 0..2 {
                for j in 0..2 {
                    let gap = (at[i][j] - ar[i][j]).abs();
                    assert!(
                        gap <= d[i][j] + 1e-10,
                        "element {eid} entry ({i},{j}): gap {gap} bound {}",
                        d[i][j]
                    );
                }
            }
        }

        // macro error domination by the certified indicator
        let cmp = compare_macro(&truth_run, &rb_run).unwrap();
        assert!(
            cmp.h1_err <= cmp.indicator + 1e-12,
            "h1 {} indicator {}",
            cmp.h1_err,
            cmp.indicator
        );
        assert!(cmp.l2_err <= cmp.h1_err + 1e-15);

        // identical runs compare to zero
        let cmp0 = compare_macro(&truth_run, &truth_run).unwrap();
        assert_eq!(cmp0.l2_err, 0.0);
        assert_eq!(cmp0.h1_err, 0.0);
    }

    #[test]
    fn zero_contrast_providers_agree_to_solver_tolerance() {
        // theta0 = 0: the rb basis is empty, both engines produce the
        // identity tensor and the same macro solution
        let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
        let pb = ParamBox::new(0.1, 0.0).unwrap();
        let sample = sample_params(&SampleSpec { seed: 4, count: 4, param_box: pb });
        let basis = greedy_build(&system, &sample, pb, GreedyOptions::new(4, 1e-12, 4)).unwrap();
        assert!(basis.is_empty());
        let field = ParamField::default_field(pb);
        let mesh = Arc::new(MacroMesh::new(6).unwrap());
        let truth = run_homogenize(mesh.clone(), &field, &TruthProvider { system: &system }).unwrap();
        let rb = run_homogenize(mesh.clone(), &field, &RbProvider { basis: &basis }).unwrap();
        let cmp = compare_macro(&truth, &rb).unwrap();
        assert!(cmp.h1_err < 1e-9, "providers disagree: {}", cmp.h1_err);
    }

    #[test]
    fn larger_basis_does_not_worsen_macro_error() {
        // median taken over seeds; shrinking delta_s must not increase the
        // measured macro gap
        let pb = pbox();
        let median = |mut v: Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let mut medians = Vec::new();
        for n_basis in [2usize, 10] {
            let mut errs = Vec::new();
            for seed in [11u64, 22, 33] {
                let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
                let sample = sample_params(&SampleSpec { seed, count: 8, param_box: pb });
                let basis = greedy_build(
                    &system,
                    &sample,
                    pb,
                    GreedyOptions::new(n_basis, 0.0, seed),
                )
                .unwrap();
                let field = ParamField::default_field(pb);
                let mesh = Arc::new(MacroMesh::new(6).unwrap());
                let truth =
                    run_homogenize(mesh.clone(), &field, &TruthProvider { system: &system })
                        .unwrap();
                let rb =
                    run_homogenize(mesh.clone(), &field, &RbProvider { basis: &basis }).unwrap();
                errs.push(compare_macro(&truth, &rb).unwrap().h1_err);
            }
            medians.push(median(errs));
        }
        assert!(
            medians[1] <= medians[0],
            "macro error grew with the basis: {medians:?}"
        );
    }

    #[test]
    fn corrector_vanishes_for_homogeneous_medium() {
        let system = AffineSystem::new(PeriodicMesh::new(4).unwrap());
        let pb = ParamBox::new(0.1, 0.0).unwrap();
        let field = ParamField::constant(pb, CellParam::reference(0.0).unwrap());
        let mesh = Arc::new(MacroMesh::new(4).unwrap());
        let run = run_homogenize(mesh, &field, &TruthProvider { system: &system }).unwrap();
        let corr = reconstruct_corrector(
            &run,
            &field,
            &CorrectorSource::Truth(&system),
            0.25,
            16,
        )
        .unwrap();
        assert!(!corr.undersampled);
        for s in &corr.samples {
            assert!((s.u_corrected - s.u_star).abs() < 1e-12);
        }
    }

    #[test]
    fn corrector_amplitude_linear_in_epsilon() {
        let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
        let pb = pbox();
        let p = CellParam::reference(-0.6).unwrap();
        let field = ParamField::constant(pb, p);
        let mesh = Arc::new(MacroMesh::new(4).unwrap());
        let run = run_homogenize(mesh, &field, &TruthProvider { system: &system }).unwrap();
        let mut amplitudes = Vec::new();
        for eps in [0.1, 0.05, 0.025] {
            // phase-locked grids (8 samples per period) so the sampled
            // maxima are comparable across epsilon
            let res = (8.0 / eps) as usize;
            let corr = reconstruct_corrector(
                &run,
                &field,
                &CorrectorSource::Truth(&system),
                eps,
                res,
            )
            .unwrap();
            let max_amp = corr
                .samples
                .iter()
                .map(|s| (s.u_corrected - s.u_star).abs())
                .fold(0.0, f64::max);
            amplitudes.push(max_amp);
        }
        // halving epsilon halves the corrector amplitude
        for w in amplitudes.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.8 && ratio < 2.2, "amplitudes {amplitudes:?}");
        }
    }

    #[test]
    fn corrector_periodic_along_constant_gradient() {
        // constant parameter field: on one macro element the gradient is
        // constant, so the correction is epsilon-periodic there
        let system = AffineSystem::new(PeriodicMesh::new(8).unwrap());
        let pb = pbox();
        let p = CellParam::new(0.3, 0.8, 0.2, 0.7, -0.5).unwrap();
        let field = ParamField::constant(pb, p);
        let mesh = Arc::new(MacroMesh::new(2).unwrap());
        let run = run_homogenize(mesh.clone(), &field, &TruthProvider { system: &system }).unwrap();
        let eps = 0.05;
        let sol = system.solve_cell(&p).unwrap();
        let map = block_map(&p).unwrap();
        // sample along a line inside one macro element
        let base = [0.1, 0.2];
        let grad = mesh.gradient_at(&run.u, base);
        let correction = |x: [f64; 2]| {
            let wrap = |t: f64| t - t.floor();
            let y = map.to_reference([wrap(x[0] / eps), wrap(x[1] / eps)]);
            let w1 = system.mesh().interpolate(&sol.w[0], y);
            let w2 = system.mesh().interpolate(&sol.w[1], y);
            eps * (w1 * grad[0] + w2 * grad[1])
        };
        for k in 0..4 {
            let x0 = [base[0] + k as f64 * 0.013, base[1]];
            let x1 = [x0[0] + eps, x0[1]];
            assert!(
                (correction(x0) - correction(x1)).abs() < 1e-12,
                "correction not periodic at {x0:?}"
            );
        }
    }

    #[test]
    fn undersampled_grid_flagged() {
        let system = AffineSystem::new(PeriodicMesh::new(4).unwrap());
        let pb = ParamBox::new(0.1, 0.0).unwrap();
        let field = ParamField::constant(pb, CellParam::reference(0.0).unwrap());
        let mesh = Arc::new(MacroMesh::new(2).unwrap());
        let run = run_homogenize(mesh, &field, &TruthProvider { system: &system }).unwrap();
        let corr = reconstruct_corrector(
            &run,
            &field,
            &CorrectorSource::Truth(&system),
            0.01,
            100,
        )
        .unwrap();
        assert!(corr.undersampled);
    }
}
