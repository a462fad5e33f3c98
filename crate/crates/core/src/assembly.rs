//! Element blocks of the coarse/subscale system, stabilization parameters,
//! static condensation and global assembly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::analysis::estimate_constants_eigen;
use crate::error::{Error, Result};
use crate::geometry::{Element, HConvention, NurbsPatch2D, Side};
use crate::legendre::LegendreBasis;
use crate::linalg::CsrMatrix;
use crate::problem::{BoundaryKind, ProblemDefinition};
use crate::quadrature::{default_point_count, gauss_legendre_1d, tensor_rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcMode {
    #[default]
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubscaleModel {
    #[default]
    Dynamic,
    QuasiStatic,
}

impl std::str::FromStr for BcMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(BcMode::Strong),
            "weak" => Ok(BcMode::Weak),
            _ => Err(Error::Config(format!("unknown bc mode '{s}' (strong|weak)"))),
        }
    }
}

impl std::str::FromStr for SubscaleModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(SubscaleModel::Dynamic),
            "quasistatic" | "quasi-static" => Ok(SubscaleModel::QuasiStatic),
            _ => Err(Error::Config(format!("unknown model '{s}' (dynamic|quasistatic)"))),
        }
    }
}

impl std::fmt::Display for BcMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BcMode::Strong => "strong",
            BcMode::Weak => "weak",
        })
    }
}

impl std::fmt::Display for SubscaleModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SubscaleModel::Dynamic => "dynamic",
            SubscaleModel::QuasiStatic => "quasistatic",
        })
    }
}

/// Discretization choices for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceConfig {
    pub p: usize,
    pub pf: usize,
    pub n_el: usize,
    pub bc: BcMode,
    pub model: SubscaleModel,
    pub c_pen: Option<f64>,
    pub c_art: Option<f64>,
    pub c_tau: Option<f64>,
    pub c_nitsche: Option<f64>,
    pub c_inv: Option<f64>,
    pub c_trace: Option<f64>,
    /// Gauss points per direction; defaults to `max(p, pf) + 2`.
    pub quad_points: Option<usize>,
    pub h_convention: HConvention,
    /// Keep the coarse rate in the quasi-static subscale residual.
    pub rate_in_residual: bool,
}

impl SpaceConfig {
    pub fn new(p: usize, pf: usize, n_el: usize) -> Self {
        Self {
            p,
            pf,
            n_el,
            bc: BcMode::Strong,
            model: SubscaleModel::Dynamic,
            c_pen: None,
            c_art: None,
            c_tau: None,
            c_nitsche: None,
            c_inv: None,
            c_trace: None,
            quad_points: None,
            h_convention: HConvention::Axis,
            rate_in_residual: true,
        }
    }

    pub fn with_bc(mut self, bc: BcMode) -> Self {
        self.bc = bc;
        self
    }

    pub fn with_model(mut self, model: SubscaleModel) -> Self {
        self.model = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidArgument("coarse degree must be at least 1".into()));
        }
        if self.n_el == 0 {
            return Err(Error::InvalidArgument("need at least one element".into()));
        }
        for (name, v) in [
            ("C_pen", self.c_pen),
            ("C_tau", self.c_tau),
            ("C_Nitsche", self.c_nitsche),
            ("C_inv", self.c_inv),
            ("C_trace", self.c_trace),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidArgument(format!("{name} must be positive")));
                }
            }
        }
        if let Some(v) = self.c_art {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument("C_art must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn n_quad(&self) -> usize {
        self.quad_points.unwrap_or_else(|| default_point_count(self.p, self.pf))
    }

    pub fn n_subscale(&self) -> usize {
        (self.pf + 1) * (self.pf + 1)
    }
}

/// Stabilization parameters of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementStabilization {
    pub h: f64,
    pub c_pen: f64,
    pub kappa_art: f64,
    pub tau: f64,
    /// Largest |a| over the element's quadrature points.
    pub a_max: f64,
    /// Largest kappa over the element's quadrature points.
    pub kappa_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationParams {
    pub c_pen: f64,
    pub c_nitsche: f64,
    pub c_tau: f64,
    /// `None` selects `h |a| / (6 p_f)` for the artificial diffusivity.
    pub c_art: Option<f64>,
    pub c_inv: f64,
    pub c_trace: f64,
    pub elements: Vec<ElementStabilization>,
}

/// Element-independent constants used by [`compute_stabilization`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationConstants {
    pub pf: usize,
    pub c_pen: f64,
    pub c_nitsche: f64,
    pub c_tau: f64,
    pub c_art: Option<f64>,
    pub c_inv: f64,
    pub c_trace: f64,
    pub h_convention: HConvention,
    pub n_quad: usize,
}

impl StabilizationConstants {
    /// Defaults, with trace and inverse constants measured on the unit square
    /// for degree `max(p, p_f)`.
    pub fn from_config(config: &SpaceConfig) -> Result<Self> {
        let q = config.p.max(config.pf);
        let (c_inv, c_trace) = match (config.c_inv, config.c_trace) {
            (Some(a), Some(b)) => (a, b),
            (ci, ct) => {
                let r = estimate_constants_eigen(q, 1.0, 1.0)?;
                (ci.unwrap_or(r.c_inv()), ct.unwrap_or(r.c_trace))
            }
        };
        let pf1 = (config.pf + 1) as f64;
        Ok(Self {
            pf: config.pf,
            c_pen: config.c_pen.unwrap_or(4.0 * pf1 * pf1),
            c_nitsche: config.c_nitsche.unwrap_or(4.0 * config.p as f64),
            c_tau: config.c_tau.unwrap_or(1.0),
            c_art: config.c_art,
            c_inv: c_inv.max(f64::MIN_POSITIVE),
            c_trace,
            h_convention: config.h_convention,
            n_quad: config.n_quad(),
        })
    }
}

/// `C_pen`, `kappa_art` and `tau_K` for one element.
pub fn compute_stabilization(
    patch: &NurbsPatch2D,
    elem: &Element,
    problem: &ProblemDefinition,
    k: &StabilizationConstants,
) -> Result<ElementStabilization> {
    let rule = tensor_rule(k.n_quad)?;
    let mut a_max = 0.0f64;
    let mut kappa_max = 0.0f64;
    for &xi in &rule.points {
        let (u, v) = elem.parametric(xi);
        let x = patch.map(u, v);
        let a = (problem.velocity)(x);
        a_max = a_max.max(a[0].hypot(a[1]));
        kappa_max = kappa_max.max((problem.diffusivity)(x));
    }
    let h = elem.h(k.h_convention);
    let rate = (a_max / h).max(k.c_inv * kappa_max / (h * h));
    let kappa_art = match k.c_art {
        None if k.pf > 0 => h * a_max / (6.0 * k.pf as f64),
        c => {
            if rate > 0.0 {
                c.unwrap_or(1.0) * a_max * a_max / rate
            } else {
                0.0
            }
        }
    };
    let tau = if rate > 0.0 { k.c_tau / rate } else { f64::INFINITY };
    Ok(ElementStabilization { h, c_pen: k.c_pen, kappa_art, tau, a_max, kappa_max })
}

pub fn build_stabilization(
    patch: &NurbsPatch2D,
    elements: &[Element],
    problem: &ProblemDefinition,
    config: &SpaceConfig,
) -> Result<StabilizationParams> {
    config.validate()?;
    let k = StabilizationConstants::from_config(config)?;
    let elements = elements
        .par_iter()
        .map(|e| compute_stabilization(patch, e, problem, &k))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilizationParams {
        c_pen: k.c_pen,
        c_nitsche: k.c_nitsche,
        c_tau: k.c_tau,
        c_art: k.c_art,
        c_inv: k.c_inv,
        c_trace: k.c_trace,
        elements,
    })
}

/// Everything the element forms need at one volume quadrature point.
#[derive(Debug, Clone)]
pub struct VolumePoint {
    pub xi: [f64; 2],
    pub x: [f64; 2],
    /// Quadrature weight times the full Jacobian determinant.
    pub weight: f64,
    pub phi: Vec<f64>,
    pub dphi: Vec<[f64; 2]>,
    pub lap_phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub dpsi: Vec<[f64; 2]>,
    pub a: [f64; 2],
    pub kappa: f64,
    pub grad_kappa: [f64; 2],
    pub f: f64,
}

/// Everything the element forms need at one face quadrature point.
#[derive(Debug, Clone)]
pub struct FacePoint {
    pub side: Side,
    pub on_boundary: bool,
    pub x: [f64; 2],
    /// Quadrature weight times the physical arc-length factor.
    pub weight: f64,
    pub normal: [f64; 2],
    pub phi: Vec<f64>,
    pub dphi: Vec<[f64; 2]>,
    pub psi: Vec<f64>,
    pub dpsi: Vec<[f64; 2]>,
    pub a: [f64; 2],
    pub kappa: f64,
}

impl FacePoint {
    pub fn a_n(&self) -> f64 {
        self.a[0] * self.normal[0] + self.a[1] * self.normal[1]
    }
}

/// Basis and data samples on one element.
#[derive(Debug, Clone)]
pub struct ElementContext {
    pub element: usize,
    pub active: Vec<usize>,
    pub volume: Vec<VolumePoint>,
    pub faces: Vec<FacePoint>,
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Physical gradients of the subscale basis from reference derivatives.
fn subscale_gradients(elem: &Element, jac: [[f64; 2]; 2], d1: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let g = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
    let su = 2.0 / (elem.u[1] - elem.u[0]);
    let sv = 2.0 / (elem.v[1] - elem.v[0]);
    d1.iter()
        .map(|d| {
            let du = d[0] * su;
            let dv = d[1] * sv;
            [du * g[0][0] + dv * g[1][0], du * g[0][1] + dv * g[1][1]]
        })
        .collect()
}

impl ElementContext {
    pub fn new(
        patch: &NurbsPatch2D,
        elem: &Element,
        problem: &ProblemDefinition,
        pf: usize,
        n_quad: usize,
    ) -> Result<Self> {
        let rule = tensor_rule(n_quad)?;
        let basis = LegendreBasis::new(pf);
        let area = elem.parametric_area_factor();
        let mut volume = Vec::with_capacity(rule.len());
        for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
            let b = patch.eval_reference(elem, xi)?;
            let l = basis.eval(xi);
            let x = b.geom.x;
            volume.push(VolumePoint {
                xi,
                x,
                weight: w * b.geom.det * area,
                lap_phi: b.hessians.iter().map(|h| h[0] + h[2]).collect(),
                dpsi: subscale_gradients(elem, b.geom.jac, &l.d1),
                psi: l.values,
                phi: b.values,
                dphi: b.grads,
                a: (problem.velocity)(x),
                kappa: (problem.diffusivity)(x),
                grad_kappa: problem.diffusivity_gradient(x),
                f: (problem.forcing)(x),
            });
        }
        let g = gauss_legendre_1d(n_quad)?;
        let mut faces = Vec::with_capacity(4 * n_quad);
        for side in Side::ALL {
            let len = elem.face_length_factor(side);
            for (&t, &w) in g.points.iter().zip(&g.weights) {
                let s = patch.eval_edge(elem, side, t)?;
                let l = basis.eval(side.reference_point(t));
                let x = s.eval.geom.x;
                faces.push(FacePoint {
                    side,
                    on_boundary: elem.on_boundary[side.index()],
                    x,
                    weight: w * s.ds * len,
                    normal: s.normal,
                    dpsi: subscale_gradients(elem, s.eval.geom.jac, &l.d1),
                    psi: l.values,
                    phi: s.eval.values,
                    dphi: s.eval.grads,
                    a: (problem.velocity)(x),
                    kappa: (problem.diffusivity)(x),
                });
            }
        }
        Ok(Self { element: elem.id, active: elem.active.clone(), volume, faces })
    }

    pub fn n_coarse(&self) -> usize {
        self.active.len()
    }

    pub fn n_subscale(&self) -> usize {
        self.volume.first().map_or(0, |q| q.psi.len())
    }

    /// Face points lying on a domain side of the given kind.
    pub fn boundary_points<'a>(
        &'a self,
        problem: &'a ProblemDefinition,
        kind: BoundaryKind,
    ) -> impl Iterator<Item = &'a FacePoint> + 'a {
        self.faces.iter().filter(move |q| q.on_boundary && problem.kind(q.side) == kind)
    }
}

/// Per-element blocks; rows index test functions, columns trial functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrices {
    pub element: usize,
    pub active: Vec<usize>,
    pub a_cc: DMatrix<f64>,
    pub a_cf: DMatrix<f64>,
    pub a_fc: DMatrix<f64>,
    pub a_ff: DMatrix<f64>,
    pub m_cc: DMatrix<f64>,
    pub m_fc: DMatrix<f64>,
    pub m_ff: DMatrix<f64>,
    pub b_c: DVector<f64>,
    pub b_f: DVector<f64>,
}

/// Coarse blocks: advection in integrated-by-parts form, diffusion, outflow
/// term and Neumann data on Neumann sides, forcing and mass.
pub fn assemble_coarse_element(
    ctx: &ElementContext,
    problem: &ProblemDefinition,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let nc = ctx.n_coarse();
    let mut a = DMatrix::zeros(nc, nc);
    let mut m = DMatrix::zeros(nc, nc);
    let mut b = DVector::zeros(nc);
    for q in &ctx.volume {
        for i in 0..nc {
            let adv_i = dot(q.a, q.dphi[i]);
            b[i] += q.weight * q.f * q.phi[i];
            for j in 0..nc {
                a[(i, j)] += q.weight
                    * (-q.phi[j] * adv_i + q.kappa * dot(q.dphi[j], q.dphi[i]));
                m[(i, j)] += q.weight * q.phi[j] * q.phi[i];
            }
        }
    }
    for q in ctx.boundary_points(problem, BoundaryKind::Neumann) {
        let an = q.a_n();
        let h = (problem.neumann)(q.x);
        for i in 0..nc {
            b[i] += q.weight * h * q.phi[i];
            for j in 0..nc {
                a[(i, j)] += q.weight * an * q.phi[j] * q.phi[i];
            }
        }
    }
    (a, m, b)
}

/// Nitsche terms on Dirichlet sides for weak imposition of `g`.
pub fn assemble_nitsche_boundary(
    ctx: &ElementContext,
    problem: &ProblemDefinition,
    config: &SpaceConfig,
    stab: &ElementStabilization,
    c_nitsche: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if config.bc != BcMode::Weak {
        return Err(Error::InvalidArgument("Nitsche terms need weak boundary mode".into()));
    }
    let nc = ctx.n_coarse();
    let mut a = DMatrix::zeros(nc, nc);
    let mut b = DVector::zeros(nc);
    for q in ctx.boundary_points(problem, BoundaryKind::Dirichlet) {
        let an = q.a_n();
        let (plus, minus) = (an.max(0.0), an.min(0.0));
        let pen = c_nitsche * q.kappa / stab.h;
        let g = (problem.dirichlet)(q.x);
        for i in 0..nc {
            let dn_i = q.kappa * dot(q.dphi[i], q.normal);
            b[i] += q.weight * (-g * dn_i + pen * g * q.phi[i] - minus * g * q.phi[i]);
            for j in 0..nc {
                let dn_j = q.kappa * dot(q.dphi[j], q.normal);
                a[(i, j)] += q.weight
                    * (-dn_j * q.phi[i] - q.phi[j] * dn_i
                        + (pen + plus) * q.phi[j] * q.phi[i]);
            }
        }
    }
    Ok((a, b))
}

/// Subscale blocks: upwind/interior-penalty operator `A_ff`, mass `M_ff`,
/// residual coupling `A_fc`, rate coupling `M_fc` and load `b_f`.
pub fn assemble_subscale_element(
    ctx: &ElementContext,
    stab: &ElementStabilization,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let nc = ctx.n_coarse();
    let nf = ctx.n_subscale();
    let mut a_ff = DMatrix::zeros(nf, nf);
    let mut m_ff = DMatrix::zeros(nf, nf);
    let mut a_fc = DMatrix::zeros(nf, nc);
    let mut m_fc = DMatrix::zeros(nf, nc);
    let mut b_f = DVector::zeros(nf);
    for q in &ctx.volume {
        let kk = q.kappa + stab.kappa_art;
        for i in 0..nf {
            let adv_i = dot(q.a, q.dpsi[i]);
            b_f[i] += q.weight * q.f * q.psi[i];
            for j in 0..nf {
                a_ff[(i, j)] += q.weight * (-q.psi[j] * adv_i + kk * dot(q.dpsi[j], q.dpsi[i]));
                m_ff[(i, j)] += q.weight * q.psi[j] * q.psi[i];
            }
            for j in 0..nc {
                let l = dot(q.a, q.dphi[j]) - q.kappa * q.lap_phi[j] - dot(q.grad_kappa, q.dphi[j]);
                a_fc[(i, j)] += q.weight * q.psi[i] * l;
                m_fc[(i, j)] += q.weight * q.psi[i] * q.phi[j];
            }
        }
    }
    for q in &ctx.faces {
        let plus = q.a_n().max(0.0);
        let pen = stab.c_pen * q.kappa / stab.h;
        for i in 0..nf {
            let dn_i = q.kappa * dot(q.dpsi[i], q.normal);
            for j in 0..nf {
                let dn_j = q.kappa * dot(q.dpsi[j], q.normal);
                a_ff[(i, j)] += q.weight
                    * ((plus + pen) * q.psi[j] * q.psi[i] - dn_j * q.psi[i] - q.psi[j] * dn_i);
            }
        }
    }
    (a_ff, m_ff, a_fc, m_fc, b_f)
}

/// Coarse-row coupling to the subscales, `-int u' a.grad(v)`.
pub fn assemble_coupling_element(ctx: &ElementContext) -> DMatrix<f64> {
    let nc = ctx.n_coarse();
    let nf = ctx.n_subscale();
    let mut a_cf = DMatrix::zeros(nc, nf);
    for q in &ctx.volume {
        for i in 0..nc {
            let adv_i = dot(q.a, q.dphi[i]);
            for j in 0..nf {
                a_cf[(i, j)] -= q.weight * q.psi[j] * adv_i;
            }
        }
    }
    a_cf
}

/// All blocks of one element.
pub fn assemble_element(
    patch: &NurbsPatch2D,
    elem: &Element,
    problem: &ProblemDefinition,
    config: &SpaceConfig,
    stab: &ElementStabilization,
    c_nitsche: f64,
) -> Result<ElementMatrices> {
    let ctx = ElementContext::new(patch, elem, problem, config.pf, config.n_quad())?;
    let (mut a_cc, m_cc, mut b_c) = assemble_coarse_element(&ctx, problem);
    if config.bc == BcMode::Weak {
        let (a, b) = assemble_nitsche_boundary(&ctx, problem, config, stab, c_nitsche)?;
        a_cc += a;
        b_c += b;
    }
    let (a_ff, m_ff, a_fc, m_fc, b_f) = assemble_subscale_element(&ctx, stab);
    let a_cf = assemble_coupling_element(&ctx);
    Ok(ElementMatrices {
        element: elem.id,
        active: elem.active.clone(),
        a_cc,
        a_cf,
        a_fc,
        a_ff,
        m_cc,
        m_fc,
        m_ff,
        b_c,
        b_f,
    })
}

/// LU of a small dense block, rejecting numerically singular ones.
#[derive(Debug, Clone)]
pub struct DenseFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseFactor {
    pub fn new(a: &DMatrix<f64>, element: usize) -> Result<Self> {
        let lu = a.clone().lu();
        let u = lu.u();
        let d: Vec<f64> = u.diagonal().iter().map(|v| v.abs()).collect();
        let hi = d.iter().cloned().fold(0.0f64, f64::max);
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition < 1e14) || !hi.is_finite() {
            return Err(Error::SingularSubscaleBlock { element, condition });
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("factor checked non-singular")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("factor checked non-singular")
    }
}

/// Element Schur complement and what is needed to recover the subscales.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub schur: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub recovery: ElementRecovery,
}

/// Data to rebuild `u' = A_ff^-1 (b_f - A_fc u)` on one element.
#[derive(Debug, Clone)]
pub struct ElementRecovery {
    pub element: usize,
    pub active: Vec<usize>,
    pub a_ff: DenseFactor,
    pub a_fc: DMatrix<f64>,
    pub b_f: DVector<f64>,
}

impl ElementRecovery {
    pub fn recover(&self, coarse_local: &DVector<f64>) -> DVector<f64> {
        self.a_ff.solve_vec(&(&self.b_f - &self.a_fc * coarse_local))
    }
}

/// Static condensation of the subscale unknowns of one element.
pub fn condense(m: &ElementMatrices) -> Result<Condensed> {
    let f = DenseFactor::new(&m.a_ff, m.element)?;
    let x = f.solve(&m.a_fc);
    let y = f.solve_vec(&m.b_f);
    Ok(Condensed {
        schur: &m.a_cc - &m.a_cf * x,
        rhs: &m.b_c - &m.a_cf * y,
        recovery: ElementRecovery {
            element: m.element,
            active: m.active.clone(),
            a_ff: f,
            a_fc: m.a_fc.clone(),
            b_f: m.b_f.clone(),
        },
    })
}

/// Split of the coarse unknowns into constrained and free sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub n: usize,
    pub constrained: Vec<usize>,
    pub free: Vec<usize>,
    /// Prescribed values at constrained dofs, zero elsewhere.
    pub values: Vec<f64>,
}

impl DofMap {
    pub fn unconstrained(n: usize) -> Self {
        Self { n, constrained: Vec::new(), free: (0..n).collect(), values: vec![0.0; n] }
    }

    pub fn is_constrained(&self, i: usize) -> bool {
        self.constrained.binary_search(&i).is_ok()
    }
}

/// Constrained dofs on Dirichlet sides with values from the L2 projection of
/// `g` onto the boundary trace space.
pub fn dirichlet_dofs(
    patch: &NurbsPatch2D,
    elements: &[Element],
    problem: &ProblemDefinition,
    n_quad: usize,
) -> Result<DofMap> {
    let n = patch.n_dofs();
    let mut constrained: Vec<usize> =
        problem.dirichlet_sides().into_iter().flat_map(|s| patch.side_dofs(s)).collect();
    constrained.sort_unstable();
    constrained.dedup();
    if constrained.is_empty() {
        return Ok(DofMap::unconstrained(n));
    }
    let local: std::collections::HashMap<usize, usize> =
        constrained.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let nd = constrained.len();
    let mut mass = DMatrix::zeros(nd, nd);
    let mut rhs = DVector::zeros(nd);
    let g = gauss_legendre_1d(n_quad)?;
    for side in problem.dirichlet_sides() {
        for e in elements.iter().filter(|e| e.on_boundary[side.index()]) {
            let len = e.face_length_factor(side);
            for (&t, &w) in g.points.iter().zip(&g.weights) {
                let s = patch.eval_edge(e, side, t)?;
                let wt = w * s.ds * len;
                let gv = (problem.dirichlet)(s.eval.geom.x);
                for (a, &ia) in e.active.iter().enumerate() {
                    let Some(&ka) = local.get(&ia) else { continue };
                    rhs[ka] += wt * gv * s.eval.values[a];
                    for (b, &ib) in e.active.iter().enumerate() {
                        if let Some(&kb) = local.get(&ib) {
                            mass[(ka, kb)] += wt * s.eval.values[a] * s.eval.values[b];
                        }
                    }
                }
            }
        }
    }
    let sol = mass
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Problem("singular boundary mass matrix".into()))?;
    let mut values = vec![0.0; n];
    for (k, &i) in constrained.iter().enumerate() {
        values[i] = sol[k];
    }
    let free = (0..n).filter(|i| local.get(i).is_none()).collect();
    Ok(DofMap { n, constrained, free, values })
}

/// Sparsity pattern of the coarse Galerkin matrix.
pub fn galerkin_pattern(patch: &NurbsPatch2D, elements: &[Element]) -> CsrMatrix {
    CsrMatrix::from_groups(patch.n_dofs(), elements.iter().map(|e| e.active.as_slice()))
}

/// Scatter-adds element matrices into a global matrix in element order.
pub fn scatter_matrix<'a>(
    target: &mut CsrMatrix,
    blocks: impl IntoIterator<Item = (&'a [usize], &'a DMatrix<f64>)>,
) {
    for (active, m) in blocks {
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                target.add(i, j, m[(a, b)]);
            }
        }
    }
}

pub fn scatter_vector<'a>(
    target: &mut [f64],
    blocks: impl IntoIterator<Item = (&'a [usize], &'a DVector<f64>)>,
) {
    for (active, v) in blocks {
        for (a, &i) in active.iter().enumerate() {
            target[i] += v[a];
        }
    }
}

/// Mesh, stabilization and element blocks of one discretized problem.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub patch: NurbsPatch2D,
    pub elements: Vec<Element>,
    pub config: SpaceConfig,
    pub stab: StabilizationParams,
    pub blocks: Vec<ElementMatrices>,
    pub dofs: DofMap,
}

impl Discretization {
    pub fn new(
        patch: NurbsPatch2D,
        problem: &ProblemDefinition,
        config: &SpaceConfig,
    ) -> Result<Self> {
        config.validate()?;
        if patch.degrees() != (config.p, config.p) {
            return Err(Error::InvalidArgument(format!(
                "patch degrees {:?} differ from p = {}",
                patch.degrees(),
                config.p
            )));
        }
        let elements = patch.elements();
        if elements.is_empty() {
            return Err(Error::InvalidPatch("empty mesh".into()));
        }
        problem.validate(&patch, 8)?;
        let stab = build_stabilization(&patch, &elements, problem, config)?;
        let blocks = elements
            .par_iter()
            .zip(&stab.elements)
            .map(|(e, s)| assemble_element(&patch, e, problem, config, s, stab.c_nitsche))
            .collect::<Result<Vec<_>>>()?;
        let dofs = match config.bc {
            BcMode::Strong => dirichlet_dofs(&patch, &elements, problem, config.n_quad())?,
            BcMode::Weak => DofMap::unconstrained(patch.n_dofs()),
        };
        Ok(Self { patch, elements, config: config.clone(), stab, blocks, dofs })
    }

    pub fn n_dofs(&self) -> usize {
        self.patch.n_dofs()
    }

    pub fn n_subscale(&self) -> usize {
        self.config.n_subscale()
    }

    pub fn pattern(&self) -> CsrMatrix {
        galerkin_pattern(&self.patch, &self.elements)
    }

    /// Global coarse-coarse matrix without subscale contributions.
    pub fn galerkin_matrix(&self) -> CsrMatrix {
        let mut a = self.pattern();
        scatter_matrix(&mut a, self.blocks.iter().map(|b| (b.active.as_slice(), &b.a_cc)));
        a
    }

    /// Condensed global system for the steady problem.
    pub fn condensed(&self) -> Result<CondensedSystem> {
        let parts =
            self.blocks.par_iter().map(condense).collect::<Result<Vec<_>>>()?;
        let mut matrix = self.pattern();
        let mut rhs = vec![0.0; self.n_dofs()];
        scatter_matrix(&mut matrix, parts.iter().map(|c| (c.recovery.active.as_slice(), &c.schur)));
        scatter_vector(&mut rhs, parts.iter().map(|c| (c.recovery.active.as_slice(), &c.rhs)));
        Ok(CondensedSystem {
            matrix,
            rhs,
            recovery: parts.into_iter().map(|c| c.recovery).collect(),
            dofs: self.dofs.clone(),
            n_subscale: self.n_subscale(),
        })
    }
}

/// Global Schur-complement system on the coarse unknowns.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub recovery: Vec<ElementRecovery>,
    pub dofs: DofMap,
    pub n_subscale: usize,
}

/// Builds the mesh, assembles every element and condenses.
pub fn assemble_global(
    patch: &NurbsPatch2D,
    problem: &ProblemDefinition,
    config: &SpaceConfig,
) -> Result<(Discretization, CondensedSystem)> {
    let d = Discretization::new(patch.clone(), problem, config)?;
    let c = d.condensed()?;
    Ok((d, c))
}

pub(crate) fn gather(active: &[usize], x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(active.len(), active.iter().map(|&i| x[i]))
}

/// Subscale coefficients of every element for a coarse solution.
pub fn recover_subscales(system: &CondensedSystem, coarse: &[f64]) -> Result<Vec<DVector<f64>>> {
    if coarse.len() != system.matrix.n() {
        return Err(Error::StaleRecovery(format!(
            "coarse vector has {} entries, system has {}",
            coarse.len(),
            system.matrix.n()
        )));
    }
    Ok(system
        .recovery
        .par_iter()
        .map(|r| r.recover(&gather(&r.active, coarse)))
        .collect())
}
