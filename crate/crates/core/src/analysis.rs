//! Norms, convergence rates, element constants, theory spot-checks and
//! field sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{
    gather, BcMode, Discretization, ElementContext, ElementStabilization, SpaceConfig,
};
use crate::error::{Error, Result};
use crate::geometry::Side;
use crate::legendre::LegendreBasis;
use crate::problem::{BenchmarkSpec, BoundaryKind, ExactSolution, LineSpec, ProblemDefinition, ScalarField};
use crate::quadrature::{gauss_legendre_1d, tensor_rule};
use crate::solver::{solve_steady, SolutionState};

/// Trace and inverse constants of the tensor polynomial space on one rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsReport {
    pub degree: usize,
    pub hx: f64,
    pub hy: f64,
    /// Element size used for scaling, the longer side.
    pub h: f64,
    /// `h * max ||v||^2_boundary / ||v||^2`.
    pub c_trace: f64,
    /// `h * max ||grad v . n||^2_boundary / |v|_1^2`.
    pub c_trace_grad: f64,
    /// `h^2 * max |v|_1^2 / ||v||^2`.
    pub c_inv_grad: f64,
    /// `h^2 * max ||lap v||^2 / |v|_1^2`.
    pub c_inv_lap: f64,
}

impl ConstantsReport {
    /// The inverse constant used in the stabilization time scale.
    pub fn c_inv(&self) -> f64 {
        self.c_inv_grad.max(self.c_inv_lap)
    }
}

/// Largest eigenvalue of `a x = lambda b x` for symmetric `a` and positive definite `b`.
pub fn max_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let chol = Cholesky::<f64, Dyn>::new(b.clone())
        .ok_or_else(|| Error::InvalidArgument("eigenproblem: matrix not positive definite".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::InvalidArgument("eigenproblem: triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::InvalidArgument("eigenproblem: triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let e = SymmetricEigen::new(c);
    let m = e.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::InvalidArgument("eigenproblem did not converge".into()));
    }
    Ok(m.max(0.0))
}

fn drop_first(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    m.view((1, 1), (n - 1, n - 1)).into_owned()
}

/// Constants of the degree-`degree` tensor Legendre space on an `hx` by `hy` rectangle.
pub fn estimate_constants_eigen(degree: usize, hx: f64, hy: f64) -> Result<ConstantsReport> {
    if degree > 10 {
        return Err(Error::InvalidArgument(format!("degree {degree} above 10")));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::InvalidArgument("element sides must be positive".into()));
    }
    let basis = LegendreBasis::new(degree);
    let n = basis.len();
    let nq = degree + 2;
    let (sx, sy) = (2.0 / hx, 2.0 / hy);
    let grad = |d: [f64; 2]| [d[0] * sx, d[1] * sy];
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    let mut lap = DMatrix::zeros(n, n);
    let rule = tensor_rule(nq)?;
    for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
        let e = basis.eval(xi);
        let wt = w * hx * hy / 4.0;
        let l: Vec<f64> = e.d2.iter().map(|d| d[0] * sx * sx + d[2] * sy * sy).collect();
        for i in 0..n {
            let gi = grad(e.d1[i]);
            for j in 0..n {
                let gj = grad(e.d1[j]);
                mass[(i, j)] += wt * e.values[i] * e.values[j];
                stiff[(i, j)] += wt * (gi[0] * gj[0] + gi[1] * gj[1]);
                lap[(i, j)] += wt * l[i] * l[j];
            }
        }
    }
    let mut bmass = DMatrix::zeros(n, n);
    let mut bgrad = DMatrix::zeros(n, n);
    let g = gauss_legendre_1d(nq)?;
    for side in Side::ALL {
        let len = if side.is_u_face() { hy / 2.0 } else { hx / 2.0 };
        let nrm = side.reference_normal();
        for (&t, &w) in g.points.iter().zip(&g.weights) {
            let e = basis.eval(side.reference_point(t));
            let dn: Vec<f64> = e
                .d1
                .iter()
                .map(|&d| {
                    let gd = grad(d);
                    gd[0] * nrm[0] + gd[1] * nrm[1]
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    bmass[(i, j)] += w * len * e.values[i] * e.values[j];
                    bgrad[(i, j)] += w * len * dn[i] * dn[j];
                }
            }
        }
    }
    let h = hx.max(hy);
    let c_trace = h * max_generalized_eigenvalue(&bmass, &mass)?;
    let c_inv_grad = h * h * max_generalized_eigenvalue(&stiff, &mass)?;
    let (c_trace_grad, c_inv_lap) = if n > 1 {
        let kr = drop_first(&stiff);
        (
            h * max_generalized_eigenvalue(&drop_first(&bgrad), &kr)?,
            h * h * max_generalized_eigenvalue(&drop_first(&lap), &kr)?,
        )
    } else {
        (0.0, 0.0)
    };
    Ok(ConstantsReport { degree, hx, hy, h, c_trace, c_trace_grad, c_inv_grad, c_inv_lap })
}

/// Physical subscale mass matrix of an element context.
fn subscale_mass(ctx: &ElementContext) -> DMatrix<f64> {
    let nf = ctx.n_subscale();
    let mut m = DMatrix::zeros(nf, nf);
    for q in &ctx.volume {
        for i in 0..nf {
            for j in 0..nf {
                m[(i, j)] += q.weight * q.psi[i] * q.psi[j];
            }
        }
    }
    m
}

fn factor_mass(m: DMatrix<f64>, element: usize) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or(Error::SingularSubscaleBlock { element, condition: f64::INFINITY })
}

/// Coefficients of the L2 projection onto the subscale space of one element,
/// given samples of the function at the context's volume points.
fn project_samples(ctx: &ElementContext, mass: &Cholesky<f64, Dyn>, g: &[f64]) -> DVector<f64> {
    let mut rhs = DVector::zeros(ctx.n_subscale());
    for (q, &v) in ctx.volume.iter().zip(g) {
        for (k, p) in q.psi.iter().enumerate() {
            rhs[k] += q.weight * v * p;
        }
    }
    mass.solve(&rhs)
}

/// Element-wise L2 projection of `f` onto the subscale space.
pub fn project_onto_subscales(
    disc: &Discretization,
    problem: &ProblemDefinition,
    f: &ScalarField,
) -> Result<Vec<DVector<f64>>> {
    let nq = disc.config.n_quad() + 2;
    disc.elements
        .par_iter()
        .map(|e| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, nq)?;
            let mass = factor_mass(subscale_mass(&ctx), e.id)?;
            let g: Vec<f64> = ctx.volume.iter().map(|q| f(q.x)).collect();
            Ok(project_samples(&ctx, &mass, &g))
        })
        .collect()
}

/// Squared contributions to the S and SUPG norms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormTerms {
    /// `kappa |v_bar|_1^2`
    pub coarse_diffusion: f64,
    /// `(kappa + kappa_art) |v'|_1^2`
    pub subscale_diffusion: f64,
    /// `C_pen kappa / h ||v'||^2` on element boundaries
    pub penalty: f64,
    /// `|| |a.n|^(1/2) v' ||^2` on element boundaries
    pub upwind: f64,
    /// `tau ||P'(a.grad(v_bar + v'))||^2`
    pub streamline_projected: f64,
    /// `tau ||a.grad(v_bar + v')||^2`
    pub streamline: f64,
}

impl NormTerms {
    fn add(&mut self, o: &NormTerms) {
        self.coarse_diffusion += o.coarse_diffusion;
        self.subscale_diffusion += o.subscale_diffusion;
        self.penalty += o.penalty;
        self.upwind += o.upwind;
        self.streamline_projected += o.streamline_projected;
        self.streamline += o.streamline;
    }

    fn common(&self) -> f64 {
        self.coarse_diffusion + self.subscale_diffusion + self.penalty + self.upwind
    }

    pub fn s_norm(&self) -> f64 {
        (self.common() + self.streamline_projected).sqrt()
    }

    pub fn supg_norm(&self) -> f64 {
        (self.common() + self.streamline).sqrt()
    }

    /// Bound appearing in the coercivity estimate, without the 1/4 factor.
    pub fn coercivity_norm(&self) -> f64 {
        self.common()
    }
}

/// Coarse part of a group function: value and gradient at a volume point.
type CoarsePart<'a> = dyn Fn(&crate::assembly::VolumePoint) -> (f64, [f64; 2]) + Sync + 'a;

fn element_terms(
    ctx: &ElementContext,
    stab: &ElementStabilization,
    mass: &Cholesky<f64, Dyn>,
    coarse: &CoarsePart<'_>,
    w: &DVector<f64>,
) -> NormTerms {
    let mut t = NormTerms::default();
    let mut stream = Vec::with_capacity(ctx.volume.len());
    for q in &ctx.volume {
        let (_, gc) = coarse(q);
        let mut gf = [0.0; 2];
        for (k, d) in q.dpsi.iter().enumerate() {
            gf[0] += w[k] * d[0];
            gf[1] += w[k] * d[1];
        }
        t.coarse_diffusion += q.weight * q.kappa * (gc[0] * gc[0] + gc[1] * gc[1]);
        t.subscale_diffusion += q.weight * (q.kappa + stab.kappa_art) * (gf[0] * gf[0] + gf[1] * gf[1]);
        let s = q.a[0] * (gc[0] + gf[0]) + q.a[1] * (gc[1] + gf[1]);
        t.streamline += q.weight * stab.tau * s * s;
        stream.push(s);
    }
    let c = project_samples(ctx, mass, &stream);
    // ||P' g||^2 = c^T M c = c . rhs
    let mut rhs = DVector::zeros(c.len());
    for (q, &v) in ctx.volume.iter().zip(&stream) {
        for (k, p) in q.psi.iter().enumerate() {
            rhs[k] += q.weight * v * p;
        }
    }
    t.streamline_projected = stab.tau * c.dot(&rhs);
    for q in &ctx.faces {
        let v: f64 = q.psi.iter().zip(w.iter()).map(|(p, c)| p * c).sum();
        t.penalty += q.weight * stab.c_pen * q.kappa / stab.h * v * v;
        t.upwind += q.weight * q.a_n().abs() * v * v;
    }
    if !stab.tau.is_finite() {
        t.streamline = 0.0;
        t.streamline_projected = 0.0;
    }
    t
}

/// Error measures of a computed state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorReport {
    /// `||u - u_bar||`
    pub l2_coarse: f64,
    /// `|u - u_bar|_1`
    pub h1_coarse: f64,
    /// `||u'||`
    pub l2_subscale: f64,
    /// `||u - u_bar - u'||`
    pub l2_total: f64,
    pub s_norm: f64,
    pub supg_norm: f64,
    pub terms: NormTerms,
}

fn coarse_at(q: &crate::assembly::VolumePoint, local: &DVector<f64>) -> (f64, [f64; 2]) {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for (a, c) in local.iter().enumerate() {
        v += c * q.phi[a];
        g[0] += c * q.dphi[a][0];
        g[1] += c * q.dphi[a][1];
    }
    (v, g)
}

/// Errors of `state` against `exact`; without an exact solution the norms of
/// the computed fields themselves are reported.
pub fn error_norms(
    disc: &Discretization,
    problem: &ProblemDefinition,
    state: &SolutionState,
    exact: Option<&ExactSolution>,
) -> Result<ErrorReport> {
    if state.coarse.len() != disc.n_dofs() || state.subscale.len() != disc.elements.len() {
        return Err(Error::StaleRecovery("state does not match the discretization".into()));
    }
    let nq = disc.config.n_quad() + 2;
    let parts = disc
        .elements
        .par_iter()
        .zip(&disc.stab.elements)
        .zip(&state.subscale)
        .map(|((e, stab), w)| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, nq)?;
            let mass = factor_mass(subscale_mass(&ctx), e.id)?;
            let local = gather(&e.active, &state.coarse);
            let err = |q: &crate::assembly::VolumePoint| {
                let (v, g) = coarse_at(q, &local);
                match exact {
                    Some(ex) => {
                        let gu = (ex.gradient)(q.x);
                        ((ex.value)(q.x) - v, [gu[0] - g[0], gu[1] - g[1]])
                    }
                    None => (-v, [-g[0], -g[1]]),
                }
            };
            let wneg = -w;
            let terms = element_terms(&ctx, stab, &mass, &err, &wneg);
            let (mut l2c, mut h1c, mut l2f, mut l2t) = (0.0, 0.0, 0.0, 0.0);
            for q in &ctx.volume {
                let (ec, gc) = err(q);
                let uf: f64 = q.psi.iter().zip(w.iter()).map(|(p, c)| p * c).sum();
                l2c += q.weight * ec * ec;
                h1c += q.weight * (gc[0] * gc[0] + gc[1] * gc[1]);
                l2f += q.weight * uf * uf;
                l2t += q.weight * (ec - uf) * (ec - uf);
            }
            Ok((terms, [l2c, h1c, l2f, l2t]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut terms = NormTerms::default();
    let mut s = [0.0; 4];
    for (t, v) in &parts {
        terms.add(t);
        for k in 0..4 {
            s[k] += v[k];
        }
    }
    Ok(ErrorReport {
        l2_coarse: s[0].sqrt(),
        h1_coarse: s[1].sqrt(),
        l2_subscale: s[2].sqrt(),
        l2_total: s[3].sqrt(),
        s_norm: terms.s_norm(),
        supg_norm: terms.supg_norm(),
        terms,
    })
}

/// Norm contributions of a group function given by coefficients.
pub fn norm_terms(
    disc: &Discretization,
    problem: &ProblemDefinition,
    coarse: &[f64],
    subscale: &[DVector<f64>],
) -> Result<NormTerms> {
    let state = SolutionState {
        t: 0.0,
        coarse: coarse.iter().map(|v| -v).collect(),
        coarse_rate: Vec::new(),
        subscale: subscale.iter().map(|w| -w).collect(),
        subscale_rate: None,
    };
    Ok(error_norms(disc, problem, &state, None)?.terms)
}

/// Random group vector with entries uniform in [-1, 1] and constrained coarse dofs zeroed.
pub fn random_group_vector(disc: &Discretization, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<DVector<f64>>) {
    let mut c: Vec<f64> = (0..disc.n_dofs()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    if disc.config.bc == BcMode::Strong {
        for &i in &disc.dofs.constrained {
            c[i] = 0.0;
        }
    }
    let nf = disc.n_subscale();
    let w = (0..disc.elements.len())
        .map(|_| DVector::from_iterator(nf, (0..nf).map(|_| rng.random_range(-1.0..=1.0))))
        .collect();
    (c, w)
}

/// `B(U, V)` from the assembled element blocks.
pub fn group_form(
    disc: &Discretization,
    u: (&[f64], &[DVector<f64>]),
    v: (&[f64], &[DVector<f64>]),
) -> f64 {
    disc.blocks
        .iter()
        .enumerate()
        .map(|(e, m)| {
            let uc = gather(&m.active, u.0);
            let vc = gather(&m.active, v.0);
            let (uf, vf) = (&u.1[e], &v.1[e]);
            vc.dot(&(&m.a_cc * &uc + &m.a_cf * uf)) + vf.dot(&(&m.a_fc * &uc + &m.a_ff * uf))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityReport {
    /// Smallest `B(V, V) / (1/4 |||V|||^2)` observed.
    pub min_ratio: f64,
    pub samples: usize,
    pub c_pen: f64,
    pub c_trace: f64,
}

/// Per-element matrices of the coercivity norm at assembly quadrature.
fn coercivity_matrices(
    disc: &Discretization,
    problem: &ProblemDefinition,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    disc.elements
        .par_iter()
        .zip(&disc.stab.elements)
        .map(|(e, s)| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, disc.config.n_quad())?;
            let (nc, nf) = (ctx.n_coarse(), ctx.n_subscale());
            let mut kc = DMatrix::zeros(nc, nc);
            let mut kf = DMatrix::zeros(nf, nf);
            for q in &ctx.volume {
                for i in 0..nc {
                    for j in 0..nc {
                        kc[(i, j)] += q.weight * q.kappa * (q.dphi[i][0] * q.dphi[j][0] + q.dphi[i][1] * q.dphi[j][1]);
                    }
                }
                for i in 0..nf {
                    for j in 0..nf {
                        kf[(i, j)] += q.weight
                            * (q.kappa + s.kappa_art)
                            * (q.dpsi[i][0] * q.dpsi[j][0] + q.dpsi[i][1] * q.dpsi[j][1]);
                    }
                }
            }
            for q in &ctx.faces {
                let c = s.c_pen * q.kappa / s.h + q.a_n().abs();
                for i in 0..nf {
                    for j in 0..nf {
                        kf[(i, j)] += q.weight * c * q.psi[i] * q.psi[j];
                    }
                }
            }
            Ok((kc, kf))
        })
        .collect()
}

/// Samples `B(V, V)` against a quarter of the coercivity norm for random `V`.
pub fn coercivity_check(
    disc: &Discretization,
    problem: &ProblemDefinition,
    n_samples: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    let mats = coercivity_matrices(disc, problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    for _ in 0..n_samples {
        let (c, w) = random_group_vector(disc, &mut rng);
        let b = group_form(disc, (&c, &w), (&c, &w));
        let norm: f64 = disc
            .blocks
            .iter()
            .zip(&mats)
            .zip(&w)
            .map(|((m, (kc, kf)), wf)| {
                let vc = gather(&m.active, &c);
                vc.dot(&(kc * &vc)) + wf.dot(&(kf * wf))
            })
            .sum();
        let ratio = if norm == 0.0 { 1.0 } else { b / (0.25 * norm) };
        min_ratio = min_ratio.min(ratio);
    }
    Ok(CoercivityReport {
        min_ratio: if n_samples == 0 { 1.0 } else { min_ratio },
        samples: n_samples,
        c_pen: disc.stab.c_pen,
        c_trace: disc.stab.c_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    /// Largest `|B(E, V)| / (|||E|||_S |||V|||_S)`.
    pub max_ratio: f64,
    /// Largest `|B(E, V)|` without normalization.
    pub max_abs: f64,
    pub error_s_norm: f64,
    pub samples: usize,
}

/// `B((u, 0), V)` element contributions for the exact solution `u`.
fn exact_form_vectors(
    disc: &Discretization,
    problem: &ProblemDefinition,
    exact: &ExactSolution,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    disc.elements
        .par_iter()
        .map(|e| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, disc.config.n_quad())?;
            let mut bc = DVector::zeros(ctx.n_coarse());
            let mut bf = DVector::zeros(ctx.n_subscale());
            for q in &ctx.volume {
                let u = (exact.value)(q.x);
                let g = (exact.gradient)(q.x);
                let lap = (exact.laplacian)(q.x);
                for (i, d) in q.dphi.iter().enumerate() {
                    let adv = q.a[0] * d[0] + q.a[1] * d[1];
                    bc[i] += q.weight * (-u * adv + q.kappa * (g[0] * d[0] + g[1] * d[1]));
                }
                let l = q.a[0] * g[0] + q.a[1] * g[1] - q.kappa * lap
                    - (q.grad_kappa[0] * g[0] + q.grad_kappa[1] * g[1]);
                for (k, p) in q.psi.iter().enumerate() {
                    bf[k] += q.weight * p * l;
                }
            }
            for q in ctx.boundary_points(problem, BoundaryKind::Neumann) {
                let u = (exact.value)(q.x);
                for (i, p) in q.phi.iter().enumerate() {
                    bc[i] += q.weight * q.a_n() * u * p;
                }
            }
            Ok((bc, bf))
        })
        .collect()
}

/// Galerkin orthogonality of the group error `E = (u - u_bar, -u')` against random `V`.
pub fn consistency_check(
    disc: &Discretization,
    problem: &ProblemDefinition,
    exact: &ExactSolution,
    state: &SolutionState,
    n_samples: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    if disc.config.bc != BcMode::Strong {
        return Err(Error::InvalidArgument("consistency check needs strong boundary conditions".into()));
    }
    let exact_parts = exact_form_vectors(disc, problem, exact)?;
    let e_norm = error_norms(disc, problem, state, Some(exact))?.s_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut max_abs = 0.0f64;
    for _ in 0..n_samples {
        let (c, w) = random_group_vector(disc, &mut rng);
        let exact_b: f64 = disc
            .blocks
            .iter()
            .zip(&exact_parts)
            .zip(&w)
            .map(|((m, (bc, bf)), wf)| gather(&m.active, &c).dot(bc) + wf.dot(bf))
            .sum();
        let discrete_b = group_form(disc, (&state.coarse, &state.subscale), (&c, &w));
        let num = (exact_b - discrete_b).abs();
        let v_norm = norm_terms(disc, problem, &c, &w)?.s_norm();
        max_abs = max_abs.max(num);
        if num > 0.0 {
            max_ratio = max_ratio.max(num / (e_norm * v_norm));
        }
    }
    Ok(ConsistencyReport { max_ratio, max_abs, error_s_norm: e_norm, samples: n_samples })
}

/// Largest relative projection defect `||(I - P')(a.grad(v_bar + v'))|| / ||a.grad(v_bar + v')||`
/// over random group vectors and elements.
pub fn projection_defect(
    disc: &Discretization,
    problem: &ProblemDefinition,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let nq = disc.config.n_quad() + 2;
    let ctxs = disc
        .elements
        .par_iter()
        .map(|e| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, nq)?;
            let mass = factor_mass(subscale_mass(&ctx), e.id)?;
            Ok((ctx, mass))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let (c, w) = random_group_vector(disc, &mut rng);
        for (e, (ctx, mass)) in ctxs.iter().enumerate() {
            let local = gather(&ctx.active, &c);
            let g: Vec<f64> = ctx
                .volume
                .iter()
                .map(|q| {
                    let (_, gc) = coarse_at(q, &local);
                    let mut s = q.a[0] * gc[0] + q.a[1] * gc[1];
                    for (k, d) in q.dpsi.iter().enumerate() {
                        s += w[e][k] * (q.a[0] * d[0] + q.a[1] * d[1]);
                    }
                    s
                })
                .collect();
            let p = project_samples(ctx, mass, &g);
            let (mut defect, mut total) = (0.0, 0.0);
            for (q, &gv) in ctx.volume.iter().zip(&g) {
                let pv: f64 = q.psi.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
                defect += q.weight * (gv - pv) * (gv - pv);
                total += q.weight * gv * gv;
            }
            if total > 0.0 {
                worst = worst.max((defect / total).sqrt());
            }
        }
    }
    Ok(worst)
}

/// Largest ratio of `tau ||(I - P')(a.grad(v_bar + v'))||^2` to
/// `(C_tau / C_art) kappa_art |v'|_1^2`, with `kappa_art` taken from the
/// supremum of `|a|` over the closed element.
///
/// Needs an explicit `C_art > 0`.
pub fn projection_defect_bound(
    disc: &Discretization,
    problem: &ProblemDefinition,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let c_art = disc
        .stab
        .c_art
        .filter(|&c| c > 0.0)
        .ok_or_else(|| Error::InvalidArgument("bound needs an explicit positive C_art".into()))?;
    let c_tau = disc.stab.c_tau;
    let nq = disc.config.n_quad() + 2;
    let ctxs = disc
        .elements
        .par_iter()
        .zip(&disc.stab.elements)
        .map(|(e, s)| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, nq)?;
            let mass = factor_mass(subscale_mass(&ctx), e.id)?;
            let m = 4 * nq;
            let mut a_sup = s.a_max;
            for j in 0..=m {
                for i in 0..=m {
                    let xi = [-1.0 + 2.0 * i as f64 / m as f64, -1.0 + 2.0 * j as f64 / m as f64];
                    let (u, v) = e.parametric(xi);
                    let a = (problem.velocity)(disc.patch.map(u, v));
                    a_sup = a_sup.max(a[0].hypot(a[1]));
                }
            }
            let kappa_art = if s.a_max > 0.0 {
                s.kappa_art * (a_sup / s.a_max).powi(2)
            } else {
                0.0
            };
            Ok((ctx, mass, *s, kappa_art))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let (c, w) = random_group_vector(disc, &mut rng);
        for (e, (ctx, mass, s, kappa_art)) in ctxs.iter().enumerate() {
            let local = gather(&ctx.active, &c);
            let mut semi = 0.0;
            let g: Vec<f64> = ctx
                .volume
                .iter()
                .map(|q| {
                    let (_, gc) = coarse_at(q, &local);
                    let mut gf = [0.0; 2];
                    for (k, d) in q.dpsi.iter().enumerate() {
                        gf[0] += w[e][k] * d[0];
                        gf[1] += w[e][k] * d[1];
                    }
                    semi += q.weight * (gf[0] * gf[0] + gf[1] * gf[1]);
                    q.a[0] * (gc[0] + gf[0]) + q.a[1] * (gc[1] + gf[1])
                })
                .collect();
            let p = project_samples(ctx, mass, &g);
            let mut defect = 0.0;
            for (q, &gv) in ctx.volume.iter().zip(&g) {
                let pv: f64 = q.psi.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
                defect += q.weight * (gv - pv) * (gv - pv);
            }
            let lhs = s.tau * defect;
            let rhs = c_tau / c_art * kappa_art * semi;
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            } else if lhs > 1e-14 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(worst)
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub problem: String,
    pub p: usize,
    pub pf: usize,
    pub nel: usize,
    pub h: f64,
    pub err_l2_coarse: f64,
    pub norm_l2_subscale: f64,
    pub err_supg: f64,
    /// L2 slope against the previous mesh of the same degree pair.
    pub slope_pair: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateColumn {
    L2Coarse,
    L2Subscale,
    Supg,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

impl RateTable {
    fn value(row: &RateRow, column: RateColumn) -> f64 {
        match column {
            RateColumn::L2Coarse => row.err_l2_coarse,
            RateColumn::L2Subscale => row.norm_l2_subscale,
            RateColumn::Supg => row.err_supg,
        }
    }

    /// Rows of one degree pair, ordered from coarse to fine.
    pub fn series(&self, p: usize, pf: usize) -> Vec<&RateRow> {
        let mut r: Vec<&RateRow> = self.rows.iter().filter(|r| r.p == p && r.pf == pf).collect();
        r.sort_by_key(|r| r.nel);
        r
    }

    /// Least-squares slope over the finest `last` meshes of one degree pair.
    pub fn fitted_slope(&self, p: usize, pf: usize, column: RateColumn, last: usize) -> Option<f64> {
        let s = self.series(p, pf);
        let tail = &s[s.len().saturating_sub(last)..];
        let pts: Vec<(f64, f64)> = tail.iter().map(|r| (r.h, Self::value(r, column))).collect();
        log_log_slope(&pts)
    }

    /// Slopes between consecutive meshes of one degree pair.
    pub fn pairwise_slopes(&self, p: usize, pf: usize, column: RateColumn) -> Vec<f64> {
        self.series(p, pf)
            .windows(2)
            .map(|w| log_log_slope(&[(w[0].h, Self::value(w[0], column)), (w[1].h, Self::value(w[1], column))]).unwrap_or(f64::NAN))
            .collect()
    }
}

/// Steady solves of `spec` on every mesh for every degree pair, with errors
/// against its exact solution.
pub fn convergence_study(
    spec: &BenchmarkSpec,
    base: &SpaceConfig,
    pairs: &[(usize, usize)],
    nels: &[usize],
) -> Result<RateTable> {
    let exact = spec
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("'{}' has no exact solution", spec.name)))?;
    if nels.len() < 2 {
        return Err(Error::InvalidArgument("convergence study needs at least two meshes".into()));
    }
    let mut table = RateTable::default();
    for &(p, pf) in pairs {
        let mut prev: Option<(f64, f64)> = None;
        for &n in nels {
            let config = SpaceConfig { p, pf, n_el: n, ..base.clone() };
            let disc = Discretization::new(spec.patch(p, n)?, &spec.problem, &config)?;
            let sol = solve_steady(&disc)?;
            let r = error_norms(&disc, &spec.problem, &sol.state, Some(exact))?;
            let h = 1.0 / n as f64;
            let slope_pair = prev.and_then(|(h0, e0)| log_log_slope(&[(h0, e0), (h, r.l2_coarse)]));
            prev = Some((h, r.l2_coarse));
            table.rows.push(RateRow {
                problem: spec.name.to_string(),
                p,
                pf,
                nel: n,
                h,
                err_l2_coarse: r.l2_coarse,
                norm_l2_subscale: r.l2_subscale,
                err_supg: r.supg_norm,
                slope_pair,
            });
        }
    }
    Ok(table)
}

/// Coarse and subscale values at one physical point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub x: [f64; 2],
    pub coarse: f64,
    pub subscale: f64,
}

/// Sample along a line; `s` is the arc length from the line start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSample {
    pub s: f64,
    pub value: PointValue,
}

/// Evaluates the state at a parametric point with the owning element's subscales.
pub fn evaluate_parametric(disc: &Discretization, state: &SolutionState, u: f64, v: f64) -> Result<PointValue> {
    let e = disc
        .patch
        .locate(&disc.elements, u, v)
        .ok_or_else(|| Error::InvalidArgument(format!("({u}, {v}) outside the parameter domain")))?;
    let b = disc.patch.eval_basis(e, u, v)?;
    let coarse = e.active.iter().zip(&b.values).map(|(&i, &p)| state.coarse[i] * p).sum();
    let subscale = match state.subscale.get(e.id) {
        Some(w) => {
            let l = LegendreBasis::new(disc.config.pf).eval(e.reference(u, v));
            l.values.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
        }
        None => 0.0,
    };
    Ok(PointValue { x: b.geom.x, coarse, subscale })
}

/// Evaluates the state at a physical point.
pub fn evaluate(disc: &Discretization, state: &SolutionState, x: [f64; 2]) -> Result<PointValue> {
    let (u, v) = disc
        .patch
        .invert(x)
        .ok_or_else(|| Error::InvalidArgument(format!("point {x:?} outside the domain")))?;
    let mut p = evaluate_parametric(disc, state, u, v)?;
    p.x = x;
    Ok(p)
}

/// `n` samples along `line` at half-sample offsets, so no sample sits on a
/// line end.
pub fn extract_slice(disc: &Discretization, state: &SolutionState, line: &LineSpec, n: usize) -> Result<Vec<SliceSample>> {
    let len = line.length();
    if !(len > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("degenerate slice".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|k| {
            let t = (k as f64 + 0.5) / n as f64;
            let value = evaluate(disc, state, line.at(t))?;
            Ok(SliceSample { s: t * len, value })
        })
        .collect()
}

/// Uniform parametric grid with `oversample` samples per element and direction,
/// at half-sample offsets; ordered with the first direction fastest.
pub fn sample_field(disc: &Discretization, state: &SolutionState, oversample: usize) -> Result<Vec<PointValue>> {
    let (neu, nev) = disc.patch.n_elements();
    let (mu, mv) = (neu * oversample, nev * oversample);
    let ku = disc.patch.knots_u();
    let kv = disc.patch.knots_v();
    (0..mu * mv)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % mu, k / mu);
            let u = ku.first() + (ku.last() - ku.first()) * (i as f64 + 0.5) / mu as f64;
            let v = kv.first() + (kv.last() - kv.first()) * (j as f64 + 0.5) / mv as f64;
            evaluate_parametric(disc, state, u, v)
        })
        .collect()
}
