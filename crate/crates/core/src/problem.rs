//! Transport problem data and the benchmark catalog.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use crate::assembly::{BcMode, SubscaleModel};
use crate::error::{Error, Result};
use crate::geometry::{NurbsPatch2D, Side};

pub type ScalarField = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

pub fn scalar(f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> ScalarField {
    Arc::new(f)
}

pub fn vector(f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> VectorField {
    Arc::new(f)
}

pub fn constant(c: f64) -> ScalarField {
    Arc::new(move |_| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Coefficients and data of `du/dt + a.grad u - div(kappa grad u) = f`.
#[derive(Clone)]
pub struct ProblemDefinition {
    pub velocity: VectorField,
    pub diffusivity: ScalarField,
    pub forcing: ScalarField,
    /// Dirichlet data on sides tagged [`BoundaryKind::Dirichlet`].
    pub dirichlet: ScalarField,
    /// Neumann data on sides tagged [`BoundaryKind::Neumann`].
    pub neumann: ScalarField,
    pub initial: ScalarField,
    /// Boundary kind per patch side, indexed by [`Side::index`].
    pub boundary: [BoundaryKind; 4],
    pub steady: bool,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("boundary", &self.boundary)
            .field("steady", &self.steady)
            .finish_non_exhaustive()
    }
}

impl ProblemDefinition {
    pub fn kind(&self, side: Side) -> BoundaryKind {
        self.boundary[side.index()]
    }

    pub fn dirichlet_sides(&self) -> Vec<Side> {
        Side::ALL.into_iter().filter(|&s| self.kind(s) == BoundaryKind::Dirichlet).collect()
    }

    /// Gradient of the diffusivity by central differences.
    pub fn diffusivity_gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let h = 1e-6;
        let k = &self.diffusivity;
        [
            (k([x[0] + h, x[1]]) - k([x[0] - h, x[1]])) / (2.0 * h),
            (k([x[0], x[1] + h]) - k([x[0], x[1] - h])) / (2.0 * h),
        ]
    }

    /// Divergence of the velocity by central differences.
    pub fn velocity_divergence(&self, x: [f64; 2]) -> f64 {
        let h = 1e-5;
        let a = &self.velocity;
        (a([x[0] + h, x[1]])[0] - a([x[0] - h, x[1]])[0]) / (2.0 * h)
            + (a([x[0], x[1] + h])[1] - a([x[0], x[1] - h])[1]) / (2.0 * h)
    }

    /// Checks positivity of kappa, zero divergence and non-negative `a.n` on
    /// Neumann sides at `n` samples per direction of the patch.
    pub fn validate(&self, patch: &NurbsPatch2D, n: usize) -> Result<()> {
        let n = n.max(2);
        for j in 0..n {
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                let v = (j as f64 + 0.5) / n as f64;
                let x = patch.map(u, v);
                let k = (self.diffusivity)(x);
                if !(k > 0.0) {
                    return Err(Error::Problem(format!("kappa = {k} at {x:?}")));
                }
                let d = self.velocity_divergence(x);
                if d.abs() > 1e-8 {
                    return Err(Error::Problem(format!("div a = {d:e} at {x:?}")));
                }
            }
        }
        let elements = patch.elements();
        for side in Side::ALL {
            if self.kind(side) != BoundaryKind::Neumann {
                continue;
            }
            for e in elements.iter().filter(|e| e.on_boundary[side.index()]) {
                for t in [-0.9, -0.3, 0.3, 0.9] {
                    let s = patch.eval_edge(e, side, t)?;
                    let a = (self.velocity)(s.eval.geom.x);
                    let an = a[0] * s.normal[0] + a[1] * s.normal[1];
                    if an < -1e-12 {
                        return Err(Error::Problem(format!(
                            "inflow a.n = {an:e} on Neumann side {} at {:?}",
                            side.name(),
                            s.eval.geom.x
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exact solution with the derivatives needed by the error norms.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarField,
    pub gradient: VectorField,
    pub laplacian: ScalarField,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExactSolution")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryRecipe {
    UnitSquare,
    QuarterAnnulus { r_i: f64, r_o: f64 },
}

impl GeometryRecipe {
    pub fn build(&self, p: usize, n_el: usize) -> Result<NurbsPatch2D> {
        match *self {
            GeometryRecipe::UnitSquare => NurbsPatch2D::unit_square(p, n_el),
            GeometryRecipe::QuarterAnnulus { r_i, r_o } => {
                NurbsPatch2D::quarter_annulus(r_i, r_o, p, n_el)
            }
        }
    }
}

/// Straight sampling line from `start` to `end` in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl LineSpec {
    pub fn horizontal(y: f64, x0: f64, x1: f64) -> Self {
        Self { start: [x0, y], end: [x1, y] }
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    pub fn at(&self, s: f64) -> [f64; 2] {
        [
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        ]
    }
}

/// Catalog defaults for a benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommended {
    pub p: usize,
    pub pf: usize,
    pub n_el: usize,
    pub bc: BcMode,
    pub model: SubscaleModel,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub slice: LineSpec,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub name: &'static str,
    pub problem: ProblemDefinition,
    pub geometry: GeometryRecipe,
    pub exact: Option<ExactSolution>,
    pub recommended: Recommended,
}

impl BenchmarkSpec {
    pub fn patch(&self, p: usize, n_el: usize) -> Result<NurbsPatch2D> {
        self.geometry.build(p, n_el)
    }
}

pub const BENCHMARKS: [&str; 5] = ["manufactured", "skew", "annulus", "hill", "front"];

/// Catalog entry by name with its default parameters.
pub fn benchmark(name: &str) -> Result<BenchmarkSpec> {
    match name {
        "manufactured" => manufactured_problem(1e-6),
        "skew" => skew_problem(45.0),
        "annulus" => Ok(annulus_problem()),
        "hill" => Ok(gaussian_hill_problem()),
        "front" => Ok(advancing_front_problem()),
        other => Err(Error::Config(format!(
            "unknown problem '{other}' (expected one of {})",
            BENCHMARKS.join(", ")
        ))),
    }
}

const ALL_DIRICHLET: [BoundaryKind; 4] = [BoundaryKind::Dirichlet; 4];

/// `u = sin(pi x) sin(pi y)` on the unit square with `a = (1, 1)/sqrt 2`.
pub fn manufactured_problem(kappa: f64) -> Result<BenchmarkSpec> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let s = FRAC_1_SQRT_2;
    let forcing = scalar(move |[x, y]| {
        let (sx, cx) = (PI * x).sin_cos();
        let (sy, cy) = (PI * y).sin_cos();
        s * PI * (cx * sy + sx * cy) + 2.0 * PI * PI * kappa * sx * sy
    });
    let exact = ExactSolution {
        value: scalar(|[x, y]| (PI * x).sin() * (PI * y).sin()),
        gradient: vector(|[x, y]| {
            let (sx, cx) = (PI * x).sin_cos();
            let (sy, cy) = (PI * y).sin_cos();
            [PI * cx * sy, PI * sx * cy]
        }),
        laplacian: scalar(|[x, y]| -2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()),
    };
    Ok(BenchmarkSpec {
        name: "manufactured",
        problem: ProblemDefinition {
            velocity: vector(move |_| [s, s]),
            diffusivity: constant(kappa),
            forcing,
            dirichlet: constant(0.0),
            neumann: constant(0.0),
            initial: constant(0.0),
            boundary: ALL_DIRICHLET,
            steady: true,
        },
        geometry: GeometryRecipe::UnitSquare,
        exact: Some(exact),
        recommended: Recommended {
            p: 2,
            pf: 1,
            n_el: 16,
            bc: BcMode::Strong,
            model: SubscaleModel::Dynamic,
            dt: None,
            t_final: None,
            slice: LineSpec::horizontal(0.7, 0.0, 1.0),
        },
    })
}

/// Inflow data of the skew problem: one on the bottom edge and on the left
/// edge below `y_jump`, zero elsewhere.
pub fn skew_inflow(y_jump: f64) -> ScalarField {
    scalar(move |[x, y]| {
        let tol = 1e-12;
        if y <= tol || (x <= tol && y < y_jump) {
            1.0
        } else {
            0.0
        }
    })
}

/// Unit-speed transport at angle `theta_deg` with a discontinuous inflow.
pub fn skew_problem(theta_deg: f64) -> Result<BenchmarkSpec> {
    skew_problem_with_jump(theta_deg, 0.2)
}

pub fn skew_problem_with_jump(theta_deg: f64, y_jump: f64) -> Result<BenchmarkSpec> {
    if !(theta_deg > 0.0 && theta_deg < 90.0) {
        return Err(Error::InvalidArgument(format!("angle {theta_deg} outside (0, 90)")));
    }
    if !(y_jump > 0.0 && y_jump < 1.0) {
        return Err(Error::InvalidArgument(format!("jump location {y_jump} outside (0, 1)")));
    }
    let (s, c) = theta_deg.to_radians().sin_cos();
    Ok(BenchmarkSpec {
        name: "skew",
        problem: ProblemDefinition {
            velocity: vector(move |_| [c, s]),
            diffusivity: constant(1e-6),
            forcing: constant(0.0),
            dirichlet: skew_inflow(y_jump),
            neumann: constant(0.0),
            initial: constant(0.0),
            boundary: ALL_DIRICHLET,
            steady: true,
        },
        geometry: GeometryRecipe::UnitSquare,
        exact: None,
        recommended: Recommended {
            p: 2,
            pf: 1,
            n_el: 64,
            bc: BcMode::Strong,
            model: SubscaleModel::Dynamic,
            dt: None,
            t_final: None,
            slice: LineSpec::horizontal(0.7, 0.0, 1.0),
        },
    })
}

/// Gaussian inflow profile of the annulus problem on `y = 0`.
pub fn annulus_inflow(x: f64) -> f64 {
    let (sigma, mu) = (0.05, -1.5);
    (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Rotation `a = (y, -x)` through the quarter annulus `1 <= r <= 2`, x <= 0.
pub fn annulus_problem() -> BenchmarkSpec {
    let (r_i, r_o) = (1.0, 2.0);
    let theta = 0.75 * PI;
    BenchmarkSpec {
        name: "annulus",
        problem: ProblemDefinition {
            velocity: vector(|[x, y]| [y, -x]),
            diffusivity: constant(1e-6),
            forcing: constant(0.0),
            dirichlet: scalar(|[x, _]| annulus_inflow(x)),
            neumann: constant(0.0),
            initial: constant(0.0),
            // West is the y = 0 edge, the only inflow boundary.
            boundary: [
                BoundaryKind::Dirichlet,
                BoundaryKind::Neumann,
                BoundaryKind::Neumann,
                BoundaryKind::Neumann,
            ],
            steady: true,
        },
        geometry: GeometryRecipe::QuarterAnnulus { r_i, r_o },
        exact: None,
        recommended: Recommended {
            p: 2,
            pf: 1,
            n_el: 64,
            bc: BcMode::Strong,
            model: SubscaleModel::Dynamic,
            dt: None,
            t_final: None,
            slice: LineSpec {
                start: [r_i * theta.cos(), r_i * theta.sin()],
                end: [r_o * theta.cos(), r_o * theta.sin()],
            },
        },
    }
}

pub const HILL_SIGMA: f64 = 0.065;

/// Unit-height Gaussian centred at (0.5, 0.25).
pub fn hill_initial(x: [f64; 2]) -> f64 {
    let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.25).powi(2);
    (-r2 / (2.0 * HILL_SIGMA * HILL_SIGMA)).exp()
}

/// Gaussian hill carried by a unit-angular-speed rotation about the square's centre.
pub fn gaussian_hill_problem() -> BenchmarkSpec {
    BenchmarkSpec {
        name: "hill",
        problem: ProblemDefinition {
            velocity: vector(|[x, y]| [y - 0.5, -(x - 0.5)]),
            diffusivity: constant(1e-6),
            forcing: constant(0.0),
            dirichlet: constant(0.0),
            neumann: constant(0.0),
            initial: scalar(hill_initial),
            boundary: ALL_DIRICHLET,
            steady: false,
        },
        geometry: GeometryRecipe::UnitSquare,
        exact: None,
        recommended: Recommended {
            p: 2,
            pf: 1,
            n_el: 64,
            bc: BcMode::Strong,
            model: SubscaleModel::QuasiStatic,
            dt: Some(0.005),
            t_final: Some(6.28),
            slice: LineSpec::horizontal(0.25, 0.0, 1.0),
        },
    }
}

/// Skew transport started from rest; tends to the steady skew solution.
pub fn advancing_front_problem() -> BenchmarkSpec {
    let mut spec = skew_problem(45.0).expect("valid angle");
    spec.name = "front";
    spec.problem.steady = false;
    spec.problem.initial = constant(0.0);
    spec.recommended.bc = BcMode::Weak;
    spec.recommended.dt = Some(0.01);
    spec.recommended.t_final = Some(6.0);
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn manufactured_forcing_values() {
        let kappa = 1e-3;
        let b = manufactured_problem(kappa).unwrap();
        let f = &b.problem.forcing;
        assert_abs_diff_eq!(f([0.5, 0.5]), 2.0 * PI * PI * kappa, epsilon = 1e-14);
        let expect = PI * FRAC_1_SQRT_2 + PI * PI * kappa;
        assert_abs_diff_eq!(f([0.25, 0.25]), expect, epsilon = 1e-13);
        assert_abs_diff_eq!((b.exact.unwrap().value)([0.5, 0.5]), 1.0, epsilon = 1e-15);
        assert!(manufactured_problem(0.0).is_err());
    }

    #[test]
    fn manufactured_forcing_matches_exact_operator() {
        let kappa = 0.3;
        let b = manufactured_problem(kappa).unwrap();
        let ex = b.exact.unwrap();
        for x in [[0.1, 0.7], [0.33, 0.52], [0.9, 0.05]] {
            let a = (b.problem.velocity)(x);
            let g = (ex.gradient)(x);
            let lhs = a[0] * g[0] + a[1] * g[1] - kappa * (ex.laplacian)(x);
            assert_abs_diff_eq!(lhs, (b.problem.forcing)(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn skew_velocity_and_inflow() {
        let b = skew_problem(45.0).unwrap();
        let a = (b.problem.velocity)([0.3, 0.3]);
        assert_abs_diff_eq!(a[0], FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(a[0].hypot(a[1]), 1.0, epsilon = 1e-15);
        let pe = a[0].hypot(a[1]) * 1.0 / (b.problem.diffusivity)([0.0, 0.0]);
        assert_abs_diff_eq!(pe, 1e6, epsilon = 1e-6);
        // a.n < 0 exactly on South and West
        let normals = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];
        let inflow: Vec<bool> = normals.iter().map(|n| a[0] * n[0] + a[1] * n[1] < 0.0).collect();
        assert_eq!(inflow, vec![true, false, true, false]);
        let g = &b.problem.dirichlet;
        assert_eq!(g([0.5, 0.0]), 1.0);
        assert_eq!(g([0.0, 0.1]), 1.0);
        assert_eq!(g([0.0, 0.5]), 0.0);
        assert_eq!(g([1.0, 0.5]), 0.0);
        assert!(skew_problem(0.0).is_err());
        assert!(skew_problem(90.0).is_err());
    }

    #[test]
    fn annulus_data() {
        let b = annulus_problem();
        assert_abs_diff_eq!((b.problem.dirichlet)([-1.5, 0.0]), 7.978845608028654, epsilon = 1e-12);
        let a = (b.problem.velocity)([0.0, 1.5]);
        assert!(a[0] * 1.0 >= 0.0);
        let patch = b.patch(2, 8).unwrap();
        b.problem.validate(&patch, 20).unwrap();
    }

    #[test]
    fn hill_data() {
        let b = gaussian_hill_problem();
        assert_abs_diff_eq!((b.problem.initial)([0.5, 0.25]), 1.0, epsilon = 1e-15);
        let a = (b.problem.velocity)([0.5, 0.25]);
        assert_eq!(a, [-0.25, 0.0]);
        assert!(!b.problem.steady);
    }

    #[test]
    fn front_data() {
        let b = advancing_front_problem();
        assert_eq!((b.problem.initial)([0.5, 0.5]), 0.0);
        assert_eq!(b.recommended.dt, Some(0.01));
        assert_eq!(b.recommended.bc, BcMode::Weak);
    }

    #[test]
    fn catalog_is_valid() {
        for name in BENCHMARKS {
            let b = benchmark(name).unwrap();
            assert_eq!(b.name, name);
            let patch = b.patch(2, 4).unwrap();
            b.problem.validate(&patch, 32).unwrap();
        }
        assert!(benchmark("nope").is_err());
    }

    #[test]
    fn validation_catches_inflow_on_neumann() {
        let mut b = annulus_problem();
        b.problem.velocity = vector(|[x, y]| [-y, x]);
        let patch = b.patch(2, 2).unwrap();
        assert!(b.problem.validate(&patch, 8).is_err());
    }
}
