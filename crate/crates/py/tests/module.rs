use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
    Python::with_gil(|py| {
        let m = PyModule::new_bound(py, "drsc_py").unwrap();
        drsc_py::drsc_py(&m).unwrap();
        f(&m);
    });
}

#[test]
fn k_eta_matches_closed_form() {
    with_module(|m| {
        let k: f64 = m.getattr("k_eta").unwrap().call1((0.8,)).unwrap().extract().unwrap();
        assert!((k - 2.0).abs() < 1e-12);
    });
}

#[test]
fn invalid_eta_raises_value_error() {
    with_module(|m| {
        let err = m.getattr("k_eta").unwrap().call1((1.5,)).unwrap_err();
        Python::with_gil(|py| assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py)));
    });
}

#[test]
fn unknown_mode_raises_value_error() {
    with_module(|m| {
        let err = m.getattr("desk_schedule").unwrap().call1(("firm",)).unwrap_err();
        Python::with_gil(|py| assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py)));
    });
}

#[test]
fn bad_network_json_raises_value_error() {
    with_module(|m| {
        let err = m.getattr("gscr").unwrap().call1(("{", vec![1.0], vec![1.0])).unwrap_err();
        Python::with_gil(|py| assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py)));
    });
}
