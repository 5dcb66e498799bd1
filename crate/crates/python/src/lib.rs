//! Python bindings: closed-form errors, Monte Carlo estimates and presets.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ptransfer::analytic::{self, ExtendedError};
use ptransfer::cli::{run_preset, Mode};
use ptransfer::linalg::Selector;
use ptransfer::model::{task_scalars, ConfigFile, CoordinateLayout, ProblemConfig};
use ptransfer::montecarlo::{self, SweepPoint};

fn py_err(e: ptransfer::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_float(v: ExtendedError) -> f64 {
    v.to_f64()
}

/// Problem configuration. Built from the JSON schema used by the CLI, or the reference defaults.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: ProblemConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let file = match json {
            Some(s) => ConfigFile::from_json_str(s).map_err(py_err)?,
            None => ConfigFile::default(),
        };
        Ok(Self { inner: file.build().map_err(py_err)? })
    }

    fn with_sigma_eta_sq(&self, sigma_eta_sq: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_sigma_eta_sq(sigma_eta_sq).map_err(py_err)? })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn kappa(&self) -> PyResult<f64> {
        Ok(task_scalars(&self.inner, None).map_err(py_err)?.kappa)
    }

    #[getter]
    fn rho(&self) -> PyResult<f64> {
        Ok(task_scalars(&self.inner, None).map_err(py_err)?.rho)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(d={}, n_src={}, n_tgt={}, sigma_xi_sq={}, sigma_eps_sq={}, sigma_eta_sq={})",
            c.d(),
            c.n_src(),
            c.n_tgt(),
            c.sigma_xi_sq(),
            c.sigma_eps_sq(),
            c.sigma_eta_sq()
        )
    }
}

/// Expected target error over uniform layouts; `inf` on the peak bands.
#[pyfunction]
fn expected_target_error(config: &PyConfig, p_tilde: usize, p: usize, t: usize) -> PyResult<f64> {
    analytic::expected_target_error_uniform(&config.inner, p_tilde, p, t).map(to_float).map_err(py_err)
}

#[pyfunction]
fn expected_source_error(config: &PyConfig, p_tilde: usize) -> PyResult<f64> {
    analytic::expected_source_error(&config.inner, p_tilde).map(to_float).map_err(py_err)
}

/// ΔE_transfer: change in expected target error per transferred parameter.
#[pyfunction]
fn delta_transfer(config: &PyConfig, p_tilde: usize) -> PyResult<f64> {
    analytic::delta_transfer_uniform(&config.inner, p_tilde).map(to_float).map_err(py_err)
}

/// Inclusive p̃ intervals where transfer is beneficial.
#[pyfunction]
fn beneficial_ranges(config: &PyConfig) -> PyResult<Vec<(usize, usize)>> {
    Ok(analytic::ptilde_beneficial_ranges(&config.inner).map_err(py_err)?.intervals)
}

/// Target error for a fixed layout given by 1-based coordinate lists.
#[pyfunction]
fn target_error_specific(config: &PyConfig, s: Vec<usize>, f: Vec<usize>, t: Vec<usize>) -> PyResult<f64> {
    let layout = CoordinateLayout::from_sets(config.inner.d(), s, f, t).map_err(py_err)?;
    analytic::target_error_specific(&config.inner, &layout).map(to_float).map_err(py_err)
}

/// Monte Carlo (mean, stderr) of the target error over uniform layouts.
#[pyfunction]
#[pyo3(signature = (config, p_tilde, p, t, trials = 250, seed = 0))]
fn mc_target_error(config: &PyConfig, p_tilde: usize, p: usize, t: usize, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    let est = montecarlo::estimate_mean_risk(&config.inner, &SweepPoint::uniform(0, p_tilde, p, t), trials, seed, 0)
        .map_err(py_err)?;
    Ok((est.mean, est.stderr))
}

/// Monte Carlo (mean, stderr) of the source error at a uniform S of size p̃.
#[pyfunction]
#[pyo3(signature = (config, p_tilde, trials = 1000, seed = 0))]
fn mc_source_error(config: &PyConfig, p_tilde: usize, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    let est = montecarlo::estimate_source_risk(&config.inner, p_tilde, trials, seed, 0).map_err(py_err)?;
    Ok((est.mean, est.stderr))
}

/// Analytic CSV tables of a figure preset as (suffix, csv) pairs.
#[pyfunction]
fn preset_csv(name: &str) -> PyResult<Vec<(String, String)>> {
    Ok(run_preset(name, Mode::Analytic, None, 0, 0).map_err(py_err)?.parts)
}

/// Complement of a 1-based coordinate set within [d].
#[pyfunction]
fn complement(coords: Vec<usize>, d: usize) -> PyResult<Vec<usize>> {
    Ok(Selector::from_unsorted(coords, d).map_err(py_err)?.complement().coords().to_vec())
}

#[pymodule]
fn ptransfer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(expected_target_error, m)?)?;
    m.add_function(wrap_pyfunction!(expected_source_error, m)?)?;
    m.add_function(wrap_pyfunction!(delta_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(beneficial_ranges, m)?)?;
    m.add_function(wrap_pyfunction!(target_error_specific, m)?)?;
    m.add_function(wrap_pyfunction!(mc_target_error, m)?)?;
    m.add_function(wrap_pyfunction!(mc_source_error, m)?)?;
    m.add_function(wrap_pyfunction!(preset_csv, m)?)?;
    m.add_function(wrap_pyfunction!(complement, m)?)?;
    Ok(())
}
