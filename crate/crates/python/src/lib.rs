//! Python module `immpc`: scenario runs, design summaries, verification suites and a
//! step-by-step controller.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn load(config_json: &str) -> PyResult<immpc::config::Scenario> {
    immpc::config::ScenarioConfig::from_json(config_json).and_then(|c| c.build()).map_err(py_err)
}

#[pymodule(name = "immpc")]
mod immpc_module {
    use super::*;
    use immpc::linalg::Vector;

    /// JSON text of a bundled scenario (`four_tank_sine` or `four_tank_unreachable`).
    #[pyfunction]
    fn builtin_scenario(name: &str) -> PyResult<String> {
        match name {
            "four_tank_sine" => Ok(immpc::config::four_tank_sine().to_json()),
            "four_tank_unreachable" => Ok(immpc::config::four_tank_unreachable().to_json()),
            other => Err(py_err(format!("unknown scenario '{other}'"))),
        }
    }

    /// Runs a scenario; returns `(report, csv_text)`.
    #[pyfunction]
    #[pyo3(signature = (config_json, with_timing = false))]
    fn simulate<'py>(py: Python<'py>, config_json: &str, with_timing: bool) -> PyResult<(Bound<'py, PyAny>, String)> {
        let sc = load(config_json)?;
        let log = py.detach(|| immpc::sim::run(&sc)).map_err(py_err)?;
        let report = immpc::sim::RunReport::new(&sc, &log);
        let mut csv = Vec::new();
        log.write_csv(&mut csv, with_timing).map_err(py_err)?;
        let text = serde_json::to_string(&report).map_err(py_err)?;
        Ok((json_to_py(py, &text)?, String::from_utf8(csv).map_err(py_err)?))
    }

    /// Printable design summary.
    #[pyfunction]
    fn design(config_json: &str) -> PyResult<String> {
        let sc = load(config_json)?;
        immpc::design::design_report(&sc.mpc).map(|r| r.to_string()).map_err(py_err)
    }

    /// Runs a verification suite; returns its summary.
    #[pyfunction]
    fn verify<'py>(py: Python<'py>, suite: &str) -> PyResult<Bound<'py, PyAny>> {
        let rep = py.detach(|| immpc::verify::run_suite(suite)).map_err(py_err)?;
        json_to_py(py, &serde_json::to_string(&rep).map_err(py_err)?)
    }

    /// Receding-horizon controller of a scenario, fed with deviation measurements.
    #[pyclass(unsendable)]
    struct Controller {
        inner: immpc::mpc::Controller,
    }

    #[pymethods]
    impl Controller {
        #[new]
        fn new(config_json: &str) -> PyResult<Self> {
            let sc = load(config_json)?;
            Ok(Self { inner: immpc::mpc::Controller::new(sc.mpc).map_err(py_err)? })
        }

        /// Returns a dict with `u`, `feasible`, `held`, `slack` and `objective`.
        fn step<'py>(&mut self, py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
            let r = self.inner.step(&Vector::from_vec(x), &Vector::from_vec(y)).map_err(py_err)?;
            let d = pyo3::types::PyDict::new(py);
            d.set_item("u", r.u.as_slice().to_vec())?;
            d.set_item("feasible", r.feasible)?;
            d.set_item("held", r.held)?;
            d.set_item("slack", r.slack)?;
            d.set_item("objective", r.objective)?;
            Ok(d.into_any())
        }

        #[getter]
        fn time(&self) -> usize {
            self.inner.time()
        }
    }
}
