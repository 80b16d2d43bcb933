//! Python module `wgeo`: grid fields are flat lists in node order, first axis fastest.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wgeo_core::energy;
use wgeo_core::selfsimilar::moving_ode_solve;
use wgeo_core::solver::{self, SolveResult, SolverOptions};
use wgeo_core::variation::oracle::run_suite;
use wgeo_core::{make_grid, DensityField, EnergyParams, SpaceTimeGrid, VelocityField};

fn py_err(e: wgeo_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Grid on the box `[lower, upper]` with dimension `len(lower)`.
pub fn grid(lower: &[f64], upper: &[f64], n_x: usize, n_t: usize) -> wgeo_core::Result<SpaceTimeGrid> {
    make_grid(lower.len(), lower, upper, n_x, n_t)
}

fn options(max_iterations: usize, congestion_weight: f64) -> SolverOptions {
    SolverOptions { max_iterations, congestion_weight, ..Default::default() }
}

fn result_dict<'py>(py: Python<'py>, r: &SolveResult) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let densities: Vec<Vec<f64>> = r.curve.densities().iter().map(|u| u.values().to_vec()).collect();
    out.set_item("densities", densities)?;
    out.set_item("momenta", r.curve.momenta().to_vec())?;
    out.set_item("objective", r.objective)?;
    out.set_item("action", r.report.total)?;
    out.set_item("F", r.report.congestion.clone())?;
    out.set_item("V", r.report.kinetic.clone())?;
    out.set_item("converged", r.converged)?;
    out.set_item("iterations", r.iterations)?;
    Ok(out)
}

/// `A (R^e - |x - c|^e)_+` sampled on the grid and normalized.
#[pyfunction]
#[pyo3(signature = (radius, center, lower, upper, n_x, exponent = 2.0))]
fn parabolic_profile(
    radius: f64,
    center: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_x: usize,
    exponent: f64,
) -> PyResult<Vec<f64>> {
    let g = grid(&lower, &upper, n_x, 2).map_err(py_err)?;
    let u = wgeo_core::fields::parabolic_profile(g.dim(), radius, &center, exponent, &g).map_err(py_err)?;
    Ok(u.into_values())
}

#[pyfunction]
fn lq_energy(u: Vec<f64>, q: f64, lower: Vec<f64>, upper: Vec<f64>, n_x: usize) -> PyResult<f64> {
    let g = grid(&lower, &upper, n_x, 2).map_err(py_err)?;
    let u = DensityField::new(u, &g).map_err(py_err)?;
    energy::lq_energy(&u, q, &g).map_err(py_err)
}

/// `int |v|^p u`; `v` is interleaved by node.
#[pyfunction]
fn kinetic(u: Vec<f64>, v: Vec<f64>, p: f64, lower: Vec<f64>, upper: Vec<f64>, n_x: usize) -> PyResult<f64> {
    let g = grid(&lower, &upper, n_x, 2).map_err(py_err)?;
    let u = DensityField::new(u, &g).map_err(py_err)?;
    let v = VelocityField::new(v, &g).map_err(py_err)?;
    energy::kinetic(&u, &v, p, &g).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (u0, u1, lower, upper, n_x, n_t, p = 2.0, q = 2.0, alpha = 1.0, beta = 0.5, max_iterations = 400))]
#[allow(clippy::too_many_arguments)]
fn solve_multiplicative<'py>(
    py: Python<'py>,
    u0: Vec<f64>,
    u1: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_x: usize,
    n_t: usize,
    p: f64,
    q: f64,
    alpha: f64,
    beta: f64,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let g = grid(&lower, &upper, n_x, n_t).map_err(py_err)?;
    let params = EnergyParams::new(p, q, alpha, beta).map_err(py_err)?;
    let (a, b) = (DensityField::new(u0, &g).map_err(py_err)?, DensityField::new(u1, &g).map_err(py_err)?);
    let r = py
        .detach(|| solver::solve_multiplicative(&a, &b, &params, &g, &options(max_iterations, 1.0)))
        .map_err(py_err)?;
    result_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (u0, u1, lower, upper, n_x, n_t, q = 2.0, congestion_weight = 1.0, max_iterations = 400))]
#[allow(clippy::too_many_arguments)]
fn solve_additive<'py>(
    py: Python<'py>,
    u0: Vec<f64>,
    u1: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_x: usize,
    n_t: usize,
    q: f64,
    congestion_weight: f64,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let g = grid(&lower, &upper, n_x, n_t).map_err(py_err)?;
    let (a, b) = (DensityField::new(u0, &g).map_err(py_err)?, DensityField::new(u1, &g).map_err(py_err)?);
    let r = py
        .detach(|| solver::solve_additive(&a, &b, q, &g, &options(max_iterations, congestion_weight)))
        .map_err(py_err)?;
    result_dict(py, &r)
}

/// RK4 trajectory of `R'' = -C R^(-2d-1)` on `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (r0, rate0, drift, center, steps = 1000))]
fn moving_ode<'py>(
    py: Python<'py>,
    r0: f64,
    rate0: f64,
    drift: Vec<f64>,
    center: Vec<f64>,
    steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let tr = moving_ode_solve(r0, rate0, &drift, &center, drift.len(), steps).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("t", (0..=tr.n_steps()).map(|i| tr.time(i)).collect::<Vec<_>>())?;
    out.set_item("radius", tr.radius.clone())?;
    out.set_item("rate", tr.rate.clone())?;
    out.set_item("invariant", tr.invariant)?;
    out.set_item("invariant_drift", tr.invariant_drift())?;
    Ok(out)
}

type VarcheckRow = (String, usize, f64, f64, f64);

/// Analytic first variations next to finite differences: `(quantity, case, analytic, fd, relative error)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, count = 10, n_x = 128))]
fn varcheck(py: Python<'_>, seed: u64, count: usize, n_x: usize) -> PyResult<Vec<VarcheckRow>> {
    let rows = py.detach(|| run_suite(seed, count, n_x)).map_err(py_err)?;
    Ok(rows
        .into_iter()
        .map(|c| {
            let e = c.relative_error();
            (c.quantity.to_string(), c.case, c.analytic, c.finite_difference, e)
        })
        .collect())
}

/// `(delta, 2 sqrt(F V))` minimizing `delta F + V / delta`.
#[pyfunction]
fn amgm_split(f: f64, v: f64) -> (f64, f64) {
    energy::amgm_split(f, v)
}

#[pymodule]
fn wgeo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parabolic_profile, m)?)?;
    m.add_function(wrap_pyfunction!(lq_energy, m)?)?;
    m.add_function(wrap_pyfunction!(kinetic, m)?)?;
    m.add_function(wrap_pyfunction!(solve_multiplicative, m)?)?;
    m.add_function(wrap_pyfunction!(solve_additive, m)?)?;
    m.add_function(wrap_pyfunction!(moving_ode, m)?)?;
    m.add_function(wrap_pyfunction!(varcheck, m)?)?;
    m.add_function(wrap_pyfunction!(amgm_split, m)?)?;
    Ok(())
}
