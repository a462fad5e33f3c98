//! Steady solves, L2 projections and generalized-alpha time stepping.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{
    gather, scatter_matrix, scatter_vector, BcMode, CondensedSystem, DenseFactor, Discretization,
    DofMap, ElementContext, SubscaleModel,
};
use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::problem::{ProblemDefinition, ScalarField};

/// Coarse coefficients and per-element subscale coefficients at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pub t: f64,
    pub coarse: Vec<f64>,
    pub coarse_rate: Vec<f64>,
    pub subscale: Vec<DVector<f64>>,
    /// Present only for the dynamic subscale model.
    pub subscale_rate: Option<Vec<DVector<f64>>>,
}

/// Solves `A x = b` on the free dofs with prescribed values on the constrained ones.
pub fn solve_constrained(a: &CsrMatrix, b: &[f64], dofs: &DofMap) -> Result<Vec<f64>> {
    let mut x = dofs.values.clone();
    if dofs.free.is_empty() {
        return Ok(x);
    }
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = dofs.free.iter().map(|&i| b[i] - ax[i]).collect();
    let lu = BandedLu::factor(&a.restrict(&dofs.free))?;
    lu.solve(&mut r);
    for (k, &i) in dofs.free.iter().enumerate() {
        x[i] = r[k];
    }
    Ok(x)
}

/// Outcome of a steady solve with the relative residual of the full block system.
#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub state: SolutionState,
    pub system: CondensedSystem,
    pub residual: f64,
}

/// Relative residual of the uncondensed coarse/subscale equations, free
/// coarse rows only, scaled by the size of the individual terms.
pub fn block_residual(disc: &Discretization, coarse: &[f64], subscale: &[DVector<f64>]) -> f64 {
    let mut rc = vec![0.0; disc.n_dofs()];
    let mut rf2 = 0.0;
    let mut scale2 = 0.0;
    for (m, w) in disc.blocks.iter().zip(subscale) {
        let u = gather(&m.active, coarse);
        let terms = [
            &m.a_cc * &u,
            &m.a_cf * w,
            m.b_c.clone(),
            &m.a_fc * &u,
            &m.a_ff * w,
            m.b_f.clone(),
        ];
        scale2 += terms.iter().map(|t| t.norm_squared()).sum::<f64>();
        let lc = &terms[0] + &terms[1] - &terms[2];
        let lf = &terms[3] + &terms[4] - &terms[5];
        for (a, &i) in m.active.iter().enumerate() {
            rc[i] += lc[a];
        }
        rf2 += lf.norm_squared();
    }
    let r2: f64 = disc.dofs.free.iter().map(|&i| rc[i] * rc[i]).sum::<f64>() + rf2;
    if r2 == 0.0 {
        0.0
    } else {
        (r2 / scale2).sqrt()
    }
}

/// Condensed direct solve of the steady problem followed by subscale recovery.
pub fn solve_steady(disc: &Discretization) -> Result<SteadySolution> {
    let system = disc.condensed()?;
    let coarse = solve_constrained(&system.matrix, &system.rhs, &system.dofs)?;
    let subscale = crate::assembly::recover_subscales(&system, &coarse)?;
    let residual = block_residual(disc, &coarse, &subscale);
    let n = coarse.len();
    Ok(SteadySolution {
        state: SolutionState {
            t: 0.0,
            coarse,
            coarse_rate: vec![0.0; n],
            subscale,
            subscale_rate: None,
        },
        system,
        residual,
    })
}

/// Global coarse mass matrix.
pub fn mass_matrix(disc: &Discretization) -> CsrMatrix {
    let mut m = disc.pattern();
    scatter_matrix(&mut m, disc.blocks.iter().map(|b| (b.active.as_slice(), &b.m_cc)));
    m
}

/// `int f phi_i` for every coarse function, plus per-element subscale moments `int f psi_k`.
pub fn load_moments(
    disc: &Discretization,
    problem: &ProblemDefinition,
    f: &ScalarField,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let n_quad = disc.config.n_quad();
    let parts = disc
        .elements
        .par_iter()
        .map(|e| {
            let ctx = ElementContext::new(&disc.patch, e, problem, disc.config.pf, n_quad)?;
            let mut bc = DVector::zeros(ctx.n_coarse());
            let mut bf = DVector::zeros(ctx.n_subscale());
            for q in &ctx.volume {
                let v = f(q.x);
                for (i, p) in q.phi.iter().enumerate() {
                    bc[i] += q.weight * v * p;
                }
                for (k, p) in q.psi.iter().enumerate() {
                    bf[k] += q.weight * v * p;
                }
            }
            Ok((bc, bf))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rhs = vec![0.0; disc.n_dofs()];
    scatter_vector(&mut rhs, disc.elements.iter().zip(&parts).map(|(e, p)| (e.active.as_slice(), &p.0)));
    Ok((rhs, parts.into_iter().map(|p| p.1).collect()))
}

/// L2 projection onto the coarse space, honouring the constrained dofs of `dofs`.
pub fn l2_project(
    disc: &Discretization,
    problem: &ProblemDefinition,
    f: &ScalarField,
    dofs: &DofMap,
) -> Result<Vec<f64>> {
    let (rhs, _) = load_moments(disc, problem, f)?;
    solve_constrained(&mass_matrix(disc), &rhs, dofs)
}

/// Generalized-alpha parameters for first-order systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeIntegratorConfig {
    pub dt: f64,
    pub rho_inf: f64,
    pub t_final: f64,
}

impl TimeIntegratorConfig {
    pub fn new(dt: f64, rho_inf: f64, t_final: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if !(0.0..=1.0).contains(&rho_inf) {
            return Err(Error::InvalidArgument(format!("rho_inf {rho_inf} outside [0, 1]")));
        }
        if !(t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {t_final}")));
        }
        Ok(Self { dt, rho_inf, t_final })
    }

    pub fn alpha_m(&self) -> f64 {
        0.5 * (3.0 - self.rho_inf) / (1.0 + self.rho_inf)
    }

    pub fn alpha_f(&self) -> f64 {
        1.0 / (1.0 + self.rho_inf)
    }

    pub fn gamma(&self) -> f64 {
        0.5 + self.alpha_m() - self.alpha_f()
    }

    /// Number of steps to reach `t`, rejecting times that are not multiples of `dt`.
    pub fn steps_to(&self, t: f64) -> Result<usize> {
        let r = t / self.dt;
        let n = r.round();
        if !(t > 0.0) || (r - n).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "time {t} is not a positive multiple of dt = {}",
                self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// One generalized-alpha step of the scalar ODE `m y' + k y = b`.
///
/// Returns `(y_{n+1}, y'_{n+1})`.
pub fn scalar_step(tc: &TimeIntegratorConfig, m: f64, k: f64, b: f64, y: f64, ydot: f64) -> (f64, f64) {
    let (am, af, g, dt) = (tc.alpha_m(), tc.alpha_f(), tc.gamma(), tc.dt);
    let e = am * m + af * g * dt * k;
    let r = b - m * (1.0 - am) * ydot - k * (y + af * dt * (1.0 - g) * ydot);
    let ydot1 = r / e;
    (y + dt * ((1.0 - g) * ydot + g * ydot1), ydot1)
}

/// Initial state: constrained L2 projection of `u0`, element-wise L2 fit of
/// the remainder for dynamic subscales, and rates consistent with the
/// semi-discrete equations.
pub fn init_transient(disc: &Discretization, problem: &ProblemDefinition) -> Result<SolutionState> {
    let n = disc.n_dofs();
    let (rhs, sub_moments) = load_moments(disc, problem, &problem.initial)?;
    let mass = mass_matrix(disc);
    let coarse = solve_constrained(&mass, &rhs, &disc.dofs)?;
    let rate_dofs = DofMap { values: vec![0.0; n], ..disc.dofs.clone() };
    match disc.config.model {
        SubscaleModel::Dynamic => {
            // subscale fit of u0 - u0_coarse: M_ff w = int u0 psi - M_fc u
            let subscale = disc
                .blocks
                .par_iter()
                .zip(&sub_moments)
                .map(|(m, mom)| {
                    let f = DenseFactor::new(&m.m_ff, m.element)?;
                    Ok(f.solve_vec(&(mom - &m.m_fc * gather(&m.active, &coarse))))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut r = vec![0.0; n];
            for (m, w) in disc.blocks.iter().zip(&subscale) {
                let u = gather(&m.active, &coarse);
                let loc = &m.b_c - &m.a_cc * &u - &m.a_cf * w;
                for (a, &i) in m.active.iter().enumerate() {
                    r[i] += loc[a];
                }
            }
            let coarse_rate = solve_constrained(&mass, &r, &rate_dofs)?;
            let subscale_rate = disc
                .blocks
                .par_iter()
                .zip(&subscale)
                .map(|(m, w)| {
                    let u = gather(&m.active, &coarse);
                    let ud = gather(&m.active, &coarse_rate);
                    let f = DenseFactor::new(&m.m_ff, m.element)?;
                    Ok(f.solve_vec(&(&m.b_f - &m.a_fc * &u - &m.a_ff * w - &m.m_fc * &ud)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SolutionState {
                t: 0.0,
                coarse,
                coarse_rate,
                subscale,
                subscale_rate: Some(subscale_rate),
            })
        }
        SubscaleModel::QuasiStatic => {
            let ops = QuasiStaticOperators::new(disc)?;
            let ku = ops.stiffness.mul_vec(&coarse);
            let r: Vec<f64> = ops.rhs.iter().zip(&ku).map(|(b, k)| b - k).collect();
            let coarse_rate = solve_constrained(&ops.mass, &r, &rate_dofs)?;
            let subscale = ops.recover(&coarse, &coarse_rate);
            Ok(SolutionState { t: 0.0, coarse, coarse_rate, subscale, subscale_rate: None })
        }
    }
}

/// Condensed operators of the quasi-static model, `M u' + K u = b`.
#[derive(Debug, Clone)]
struct QuasiStaticOperators {
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    rhs: Vec<f64>,
    /// Per element: `A_ff` factor, `A_fc`, rate coupling and `b_f`.
    recovery: Vec<(Vec<usize>, DenseFactor, DMatrix<f64>, DMatrix<f64>, DVector<f64>)>,
}

impl QuasiStaticOperators {
    fn new(disc: &Discretization) -> Result<Self> {
        let with_rate = disc.config.rate_in_residual;
        let parts = disc
            .blocks
            .par_iter()
            .map(|m| {
                let f = DenseFactor::new(&m.a_ff, m.element)?;
                let m_fc = if with_rate { m.m_fc.clone() } else { m.m_fc.map(|_| 0.0) };
                let xk = f.solve(&m.a_fc);
                let xm = f.solve(&m_fc);
                let xb = f.solve_vec(&m.b_f);
                let k = &m.a_cc - &m.a_cf * xk;
                let mm = &m.m_cc - &m.a_cf * xm;
                let b = &m.b_c - &m.a_cf * xb;
                Ok((k, mm, b, (m.active.clone(), f, m.a_fc.clone(), m_fc, m.b_f.clone())))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mass = disc.pattern();
        let mut stiffness = disc.pattern();
        let mut rhs = vec![0.0; disc.n_dofs()];
        scatter_matrix(&mut stiffness, disc.blocks.iter().zip(&parts).map(|(b, p)| (b.active.as_slice(), &p.0)));
        scatter_matrix(&mut mass, disc.blocks.iter().zip(&parts).map(|(b, p)| (b.active.as_slice(), &p.1)));
        scatter_vector(&mut rhs, disc.blocks.iter().zip(&parts).map(|(b, p)| (b.active.as_slice(), &p.2)));
        let recovery = parts.into_iter().map(|p| p.3).collect();
        Ok(Self { mass, stiffness, rhs, recovery })
    }

    fn recover(&self, coarse: &[f64], rate: &[f64]) -> Vec<DVector<f64>> {
        self.recovery
            .par_iter()
            .map(|(active, f, a_fc, m_fc, b_f)| {
                let u = gather(active, coarse);
                let ud = gather(active, rate);
                f.solve_vec(&(b_f - a_fc * u - m_fc * ud))
            })
            .collect()
    }
}

/// Per-element data of the condensed dynamic step operator.
#[derive(Debug, Clone)]
struct DynamicElement {
    e_ff: DenseFactor,
    e_fc: DMatrix<f64>,
    e_cf: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum Scheme {
    Dynamic(Vec<DynamicElement>),
    QuasiStatic(QuasiStaticOperators),
}

/// Fixed-step generalized-alpha integrator with a factorization reused across steps.
#[derive(Debug, Clone)]
pub struct TransientSolver<'a> {
    disc: &'a Discretization,
    tc: TimeIntegratorConfig,
    scheme: Scheme,
    lu: Option<BandedLu>,
}

impl<'a> TransientSolver<'a> {
    pub fn new(disc: &'a Discretization, tc: TimeIntegratorConfig) -> Result<Self> {
        let (am, c) = (tc.alpha_m(), tc.alpha_f() * tc.gamma() * tc.dt);
        let (scheme, op) = match disc.config.model {
            SubscaleModel::Dynamic => {
                let parts = disc
                    .blocks
                    .par_iter()
                    .map(|m| {
                        let e_ff = DenseFactor::new(&(&m.m_ff * am + &m.a_ff * c), m.element)?;
                        let e_fc = &m.m_fc * am + &m.a_fc * c;
                        let e_cf = &m.a_cf * c;
                        let e_cc = &m.m_cc * am + &m.a_cc * c;
                        let schur = e_cc - &e_cf * e_ff.solve(&e_fc);
                        Ok((DynamicElement { e_ff, e_fc, e_cf }, schur))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut op = disc.pattern();
                scatter_matrix(&mut op, disc.blocks.iter().zip(&parts).map(|(b, p)| (b.active.as_slice(), &p.1)));
                (Scheme::Dynamic(parts.into_iter().map(|p| p.0).collect()), op)
            }
            SubscaleModel::QuasiStatic => {
                let ops = QuasiStaticOperators::new(disc)?;
                let op = ops.mass.combine(am, &ops.stiffness, c);
                (Scheme::QuasiStatic(ops), op)
            }
        };
        let lu = if disc.dofs.free.is_empty() {
            None
        } else {
            Some(BandedLu::factor(&op.restrict(&disc.dofs.free))?)
        };
        Ok(Self { disc, tc, scheme, lu })
    }

    pub fn config(&self) -> &TimeIntegratorConfig {
        &self.tc
    }

    fn solve_free(&self, r: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; r.len()];
        if let Some(lu) = &self.lu {
            let mut rf: Vec<f64> = self.disc.dofs.free.iter().map(|&i| r[i]).collect();
            lu.solve(&mut rf);
            for (k, &i) in self.disc.dofs.free.iter().enumerate() {
                x[i] = rf[k];
            }
        }
        x
    }

    /// Advances `state` by one step of size `dt`.
    pub fn step(&self, state: &SolutionState) -> Result<SolutionState> {
        let tc = &self.tc;
        let (am, af, g, dt) = (tc.alpha_m(), tc.alpha_f(), tc.gamma(), tc.dt);
        let pred = |y: f64, yd: f64| y + af * dt * (1.0 - g) * yd;
        let update = |y: f64, yd: f64, yd1: f64| y + dt * ((1.0 - g) * yd + g * yd1);
        let n = state.coarse.len();
        let ytil: Vec<f64> = state.coarse.iter().zip(&state.coarse_rate).map(|(&y, &yd)| pred(y, yd)).collect();
        match &self.scheme {
            Scheme::Dynamic(parts) => {
                let wd = state.subscale_rate.as_ref().ok_or_else(|| {
                    Error::StaleRecovery("dynamic stepping needs subscale rates".into())
                })?;
                let local: Vec<(DVector<f64>, DVector<f64>)> = self
                    .disc
                    .blocks
                    .par_iter()
                    .zip(parts)
                    .zip(state.subscale.par_iter().zip(wd))
                    .map(|((m, p), (w, wdot))| {
                        let ud = gather(&m.active, &state.coarse_rate);
                        let yc = gather(&m.active, &ytil);
                        let yf = w + wdot * (af * dt * (1.0 - g));
                        let rc = &m.b_c - &m.m_cc * &ud * (1.0 - am) - &m.a_cc * &yc - &m.a_cf * &yf;
                        let rf = &m.b_f - (&m.m_fc * &ud + &m.m_ff * wdot) * (1.0 - am)
                            - &m.a_fc * &yc
                            - &m.a_ff * &yf;
                        let cond = &rc - &p.e_cf * p.e_ff.solve_vec(&rf);
                        (cond, rf)
                    })
                    .collect();
                let mut r = vec![0.0; n];
                scatter_vector(&mut r, self.disc.blocks.iter().zip(&local).map(|(m, l)| (m.active.as_slice(), &l.0)));
                let ud1 = self.solve_free(&r);
                let wd1: Vec<DVector<f64>> = self
                    .disc
                    .blocks
                    .par_iter()
                    .zip(parts)
                    .zip(&local)
                    .map(|((m, p), l)| p.e_ff.solve_vec(&(&l.1 - &p.e_fc * gather(&m.active, &ud1))))
                    .collect();
                let coarse = (0..n).map(|i| update(state.coarse[i], state.coarse_rate[i], ud1[i])).collect();
                let subscale = state
                    .subscale
                    .iter()
                    .zip(wd)
                    .zip(&wd1)
                    .map(|((w, wdot), wdot1)| w + (wdot * (1.0 - g) + wdot1 * g) * dt)
                    .collect();
                Ok(SolutionState {
                    t: state.t + dt,
                    coarse,
                    coarse_rate: ud1,
                    subscale,
                    subscale_rate: Some(wd1),
                })
            }
            Scheme::QuasiStatic(ops) => {
                let mu = ops.mass.mul_vec(&state.coarse_rate);
                let ku = ops.stiffness.mul_vec(&ytil);
                let r: Vec<f64> = (0..n).map(|i| ops.rhs[i] - (1.0 - am) * mu[i] - ku[i]).collect();
                let ud1 = self.solve_free(&r);
                let coarse: Vec<f64> =
                    (0..n).map(|i| update(state.coarse[i], state.coarse_rate[i], ud1[i])).collect();
                Ok(SolutionState {
                    t: state.t + dt,
                    coarse,
                    coarse_rate: ud1,
                    subscale: Vec::new(),
                    subscale_rate: None,
                })
            }
        }
    }

    /// Fills in quasi-static subscales, which the stepping itself does not carry.
    pub fn complete(&self, state: &mut SolutionState) {
        if let Scheme::QuasiStatic(ops) = &self.scheme {
            state.subscale = ops.recover(&state.coarse, &state.coarse_rate);
        }
    }

    /// Steps from `state` and returns the states at the requested times, which
    /// must be multiples of `dt`.
    pub fn run(&self, state: SolutionState, snapshots: &[f64]) -> Result<Vec<SolutionState>> {
        let start = (state.t / self.tc.dt).round() as usize;
        let mut targets: Vec<(usize, usize)> = snapshots
            .iter()
            .enumerate()
            .map(|(k, &t)| self.tc.steps_to(t).map(|s| (s, k)))
            .collect::<Result<_>>()?;
        targets.sort_unstable();
        if let Some(&(s, _)) = targets.first() {
            if s < start {
                return Err(Error::InvalidArgument("snapshot before the current time".into()));
            }
        }
        let mut out: Vec<Option<SolutionState>> = vec![None; snapshots.len()];
        let mut cur = state;
        let mut step = start;
        let mut k = 0;
        while k < targets.len() {
            while step < targets[k].0 {
                cur = self.step(&cur)?;
                step += 1;
                cur.t = step as f64 * self.tc.dt;
            }
            while k < targets.len() && targets[k].0 == step {
                let mut snap = cur.clone();
                self.complete(&mut snap);
                out[targets[k].1] = Some(snap);
                k += 1;
            }
        }
        Ok(out.into_iter().map(|s| s.expect("every snapshot reached")).collect())
    }
}

/// Initializes and integrates to each snapshot time (defaulting to the final time).
pub fn run_transient(
    disc: &Discretization,
    problem: &ProblemDefinition,
    tc: TimeIntegratorConfig,
    snapshots: &[f64],
) -> Result<Vec<SolutionState>> {
    let final_steps = tc.steps_to(tc.t_final)?;
    for &t in snapshots {
        if tc.steps_to(t)? > final_steps {
            return Err(Error::InvalidArgument(format!("snapshot {t} beyond final time")));
        }
    }
    let solver = TransientSolver::new(disc, tc)?;
    let init = init_transient(disc, problem)?;
    let times: Vec<f64> = if snapshots.is_empty() { vec![tc.t_final] } else { snapshots.to_vec() };
    solver.run(init, &times)
}

/// True when the discretization imposes Dirichlet data strongly.
pub fn is_strong(disc: &Discretization) -> bool {
    disc.config.bc == BcMode::Strong
}
