//! Python bindings for the subscale solver.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use subscale::analysis::{self, RateColumn};
use subscale::assembly::{BcMode, Discretization, SpaceConfig, SubscaleModel};
use subscale::problem::{self, BenchmarkSpec};
use subscale::solver::{self, SolutionState, TimeIntegratorConfig};

fn err(e: subscale::Error) -> PyErr {
    match e {
        subscale::Error::InvalidArgument(_) | subscale::Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn catalog(name: &str, kappa: Option<f64>) -> PyResult<BenchmarkSpec> {
    let mut spec = match (name, kappa) {
        ("manufactured", Some(k)) => problem::manufactured_problem(k).map_err(err)?,
        _ => problem::benchmark(name).map_err(err)?,
    };
    if let Some(k) = kappa {
        spec.problem.diffusivity = problem::constant(k);
    }
    Ok(spec)
}

/// Coarse and subscale coefficients at one time.
#[pyclass(name = "State", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: SolutionState,
}

#[pymethods]
impl PyState {
    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    #[getter]
    fn coarse(&self) -> Vec<f64> {
        self.inner.coarse.clone()
    }

    /// Subscale coefficients, one list per element.
    #[getter]
    fn subscale(&self) -> Vec<Vec<f64>> {
        self.inner.subscale.iter().map(|w| w.iter().cloned().collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!("State(t={}, n_coarse={}, n_elements={})", self.inner.t, self.inner.coarse.len(), self.inner.subscale.len())
    }
}

/// A catalog problem discretized on one mesh.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    spec: Arc<BenchmarkSpec>,
    disc: Arc<Discretization>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (problem, p=None, pf=None, nel=None, bc=None, model=None, kappa=None, c_pen=None, c_art=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        problem: &str,
        p: Option<usize>,
        pf: Option<usize>,
        nel: Option<usize>,
        bc: Option<&str>,
        model: Option<&str>,
        kappa: Option<f64>,
        c_pen: Option<f64>,
        c_art: Option<f64>,
    ) -> PyResult<Self> {
        let spec = catalog(problem, kappa)?;
        let rec = &spec.recommended;
        let (p, pf, n) = (p.unwrap_or(rec.p), pf.unwrap_or(rec.pf), nel.unwrap_or(rec.n_el));
        let bc: BcMode = bc.map(str::parse).transpose().map_err(err)?.unwrap_or(rec.bc);
        let model: SubscaleModel = model.map(str::parse).transpose().map_err(err)?.unwrap_or(rec.model);
        let mut config = SpaceConfig::new(p, pf, n).with_bc(bc).with_model(model);
        config.c_pen = c_pen;
        config.c_art = c_art;
        let patch = spec.patch(p, n).map_err(err)?;
        let disc = Discretization::new(patch, &spec.problem, &config).map_err(err)?;
        Ok(Self { spec: Arc::new(spec), disc: Arc::new(disc) })
    }

    #[getter]
    fn n_dofs(&self) -> usize {
        self.disc.n_dofs()
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.disc.elements.len()
    }

    #[getter]
    fn problem(&self) -> &'static str {
        self.spec.name
    }

    /// Steady solve; returns the state and the relative block residual.
    fn solve(&self, py: Python<'_>) -> PyResult<(PyState, f64)> {
        let disc = self.disc.clone();
        let sol = py.detach(move || solver::solve_steady(&disc)).map_err(err)?;
        Ok((PyState { inner: sol.state }, sol.residual))
    }

    /// Generalized-alpha run returning the states at `snapshots`.
    #[pyo3(signature = (dt, snapshots, rho_inf=0.5))]
    fn transient(&self, py: Python<'_>, dt: f64, snapshots: Vec<f64>, rho_inf: f64) -> PyResult<Vec<PyState>> {
        let t_final = snapshots.iter().cloned().fold(0.0, f64::max);
        let tc = TimeIntegratorConfig::new(dt, rho_inf, t_final).map_err(err)?;
        let (disc, spec) = (self.disc.clone(), self.spec.clone());
        let states = py
            .detach(move || solver::run_transient(&disc, &spec.problem, tc, &snapshots))
            .map_err(err)?;
        Ok(states.into_iter().map(|inner| PyState { inner }).collect())
    }

    /// Samples `(s, x, y, coarse, subscale)` along a line; defaults to the catalog slice.
    #[pyo3(signature = (state, n=1024, start=None, end=None))]
    fn slice(
        &self,
        state: &PyState,
        n: usize,
        start: Option<(f64, f64)>,
        end: Option<(f64, f64)>,
    ) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
        let mut line = self.spec.recommended.slice;
        if let Some(s) = start {
            line.start = [s.0, s.1];
        }
        if let Some(e) = end {
            line.end = [e.0, e.1];
        }
        let samples = analysis::extract_slice(&self.disc, &state.inner, &line, n).map_err(err)?;
        Ok(samples
            .iter()
            .map(|p| (p.s, p.value.x[0], p.value.x[1], p.value.coarse, p.value.subscale))
            .collect())
    }

    /// Error measures against the exact solution when the problem has one,
    /// otherwise the norms of the state.
    fn error_norms<'py>(&self, py: Python<'py>, state: &PyState) -> PyResult<Bound<'py, PyDict>> {
        let r = analysis::error_norms(&self.disc, &self.spec.problem, &state.inner, self.spec.exact.as_ref())
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("l2_coarse", r.l2_coarse)?;
        d.set_item("h1_coarse", r.h1_coarse)?;
        d.set_item("l2_subscale", r.l2_subscale)?;
        d.set_item("l2_total", r.l2_total)?;
        d.set_item("s_norm", r.s_norm)?;
        d.set_item("supg_norm", r.supg_norm)?;
        Ok(d)
    }

    /// Smallest observed coercivity ratio over random group vectors.
    #[pyo3(signature = (samples=200, seed=0))]
    fn coercivity(&self, samples: usize, seed: u64) -> PyResult<f64> {
        Ok(analysis::coercivity_check(&self.disc, &self.spec.problem, samples, seed).map_err(err)?.min_ratio)
    }
}

/// Trace and inverse constants of the degree-`degree` tensor polynomial space.
#[pyfunction]
#[pyo3(signature = (degree, hx=1.0, hy=1.0))]
fn constants<'py>(py: Python<'py>, degree: usize, hx: f64, hy: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = analysis::estimate_constants_eigen(degree, hx, hy).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("degree", r.degree)?;
    d.set_item("h", r.h)?;
    d.set_item("c_trace", r.c_trace)?;
    d.set_item("c_inv_grad", r.c_inv_grad)?;
    d.set_item("c_inv_lap", r.c_inv_lap)?;
    Ok(d)
}

/// Least-squares L2 and SUPG slopes of the manufactured problem for one degree pair.
#[pyfunction]
#[pyo3(signature = (p, pf, nels, kappa=1e-6))]
fn convergence(py: Python<'_>, p: usize, pf: usize, nels: Vec<usize>, kappa: f64) -> PyResult<(f64, f64)> {
    let spec = problem::manufactured_problem(kappa).map_err(err)?;
    let table = py
        .detach(move || analysis::convergence_study(&spec, &SpaceConfig::new(p, pf, 2), &[(p, pf)], &nels))
        .map_err(err)?;
    let k = table.rows.len().min(3);
    let slope = |c| table.fitted_slope(p, pf, c, k).unwrap_or(f64::NAN);
    Ok((slope(RateColumn::L2Coarse), slope(RateColumn::Supg)))
}

/// Names of the catalog problems.
#[pyfunction]
fn benchmarks() -> Vec<&'static str> {
    problem::BENCHMARKS.to_vec()
}

#[pymodule]
fn pysubscale(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    Ok(())
}
