//! Python bindings for the scheduling pipeline on JSON inputs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use drsc::desk::{desk_network, desk_pipeline, desk_uc_instance, DESK_G_LIM};
use drsc::dro::SocStabilityConstraint;
use drsc::grid::{evaluate_gscr, GridModel, OperatingPoint};
use drsc::mc::{mc_moments, validation_report, McConfig};
use drsc::sensitivity::{analytic_moments, MeanCorrection, MomentEstimate, UncertainParameterSpec};
use drsc::uc::{build_uc, evaluate_schedule, solve_uc, StabilityMode};
use drsc::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidModel(_) | Error::Domain(_) | Error::Dimension(_) | Error::Parse(_) | Error::InvalidOperatingPoint(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn desk_moments(cv: f64) -> Result<MomentEstimate, Error> {
    let pipe = desk_pipeline()?;
    let spec = UncertainParameterSpec::from_cv(&pipe.nominal_params(), cv);
    analytic_moments(&pipe, &spec, MeanCorrection::SecondOrder)
}

/// gSCR of a network (JSON text) at the given source flags and per-unit
/// grid-following injections.
#[pyfunction]
fn gscr(network_json: &str, commitment: Vec<f64>, gfl_power: Vec<f64>) -> PyResult<f64> {
    let grid = GridModel::from_json_str(network_json).map_err(to_py)?;
    let op = OperatingPoint::new(commitment, gfl_power);
    Ok(evaluate_gscr(&grid, &op).map_err(to_py)?.value)
}

/// Multiplier of the moment-based chance constraint.
#[pyfunction]
#[pyo3(signature = (eta, symmetric=false))]
fn k_eta(eta: f64, symmetric: bool) -> PyResult<f64> {
    drsc::dro::k_eta(eta, symmetric).map_err(to_py)
}

/// Analytic mean and covariance of the surrogate coefficients on the
/// bundled desk case, with every source reactance at coefficient of
/// variation `cv`.
#[pyfunction]
#[pyo3(signature = (cv=0.05))]
fn desk_coefficient_moments(py: Python<'_>, cv: f64) -> PyResult<Bound<'_, PyDict>> {
    let m = desk_moments(cv).map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("mu", m.mu)?;
    d.set_item("sigma", m.sigma)?;
    Ok(d)
}

/// Analytic moments checked against Monte Carlo on the desk case.
#[pyfunction]
#[pyo3(signature = (n_samples=2000, seed=0, cv=0.05))]
fn desk_validate(py: Python<'_>, n_samples: usize, seed: u64, cv: f64) -> PyResult<Bound<'_, PyDict>> {
    let run = || -> Result<_, Error> {
        let pipe = desk_pipeline()?;
        let spec = UncertainParameterSpec::from_cv(&pipe.nominal_params(), cv);
        let ana = analytic_moments(&pipe, &spec, MeanCorrection::SecondOrder)?;
        let mc = mc_moments(&pipe, &spec, &McConfig::with_samples(n_samples, seed))?;
        validation_report(&ana, &mc)
    };
    let rep = py.allow_threads(run).map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("mape_mu", rep.mape_mu)?;
    d.set_item("mape_var", rep.mape_var)?;
    d.set_item("n_effective", rep.n_effective)?;
    d.set_item("dropped", rep.dropped)?;
    Ok(d)
}

/// Unit commitment on the desk case in mode `none`, `det` or `dro`.
/// Returns the cost, commitment matrix and the violation rate at the
/// nominal reactances.
#[pyfunction]
#[pyo3(signature = (mode="dro", eta=0.8, cv=0.05))]
fn desk_schedule<'py>(py: Python<'py>, mode: &str, eta: f64, cv: f64) -> PyResult<Bound<'py, PyDict>> {
    let mode = mode.to_string();
    let run = move || -> Result<_, Error> {
        let stability = match mode.as_str() {
            "none" => StabilityMode::None,
            "det" => StabilityMode::Deterministic { k: desk_moments(cv)?.mu, g_lim: DESK_G_LIM },
            "dro" => {
                StabilityMode::Dro(SocStabilityConstraint::from_moments(&desk_moments(cv)?, DESK_G_LIM, eta, false)?)
            }
            other => return Err(Error::Domain(format!("unknown mode {other:?}; expected none, det or dro"))),
        };
        let schedule = solve_uc(&build_uc(&desk_uc_instance(), &stability)?)?;
        let grid = desk_network();
        let eval = evaluate_schedule(&schedule, &grid, &grid.source_reactances(), DESK_G_LIM)?;
        Ok((schedule, eval.violation_rate))
    };
    let (schedule, rate) = py.allow_threads(run).map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("cost", schedule.cost)?;
    d.set_item("units", schedule.unit_names)?;
    d.set_item("commitment", schedule.commitment)?;
    d.set_item("nominal_violation_rate", rate)?;
    Ok(d)
}

#[pymodule]
pub fn drsc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gscr, m)?)?;
    m.add_function(wrap_pyfunction!(k_eta, m)?)?;
    m.add_function(wrap_pyfunction!(desk_coefficient_moments, m)?)?;
    m.add_function(wrap_pyfunction!(desk_validate, m)?)?;
    m.add_function(wrap_pyfunction!(desk_schedule, m)?)?;
    Ok(())
}
