//! Python bindings. Matrices cross the boundary as nested lists and
//! reports as plain dicts, so the module has no NumPy dependency.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use fosr_core::cli::simulate_from_config;
use fosr_core::cov::{build_cov, Ar1Spec, CovMode, CovSetting, SuppVariant};
use fosr_core::diagnostics::compute_diagnostics;
use fosr_core::eb::{eb_hyperparams as eb_fit, fit_pilot};
use fosr_core::io::{self, RunConfig};
use fosr_core::posterior::{self, KrigeOptions, KrigingPlan};
use fosr_core::sampler::run_chains;
use fosr_core::{scoring, BasisSystem, DrawStore, EnsembleDataset, FosrError, FosrModel};

fn err(e: FosrError) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.kind()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Any serializable report as native Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_mode(name: &str) -> Result<CovMode, FosrError> {
    match name {
        "decade" => Ok(CovMode::Decade),
        "continuous" => Ok(CovMode::Continuous),
        "supp-obs" => Ok(CovMode::Supplementary(SuppVariant::Obs)),
        "supp-full" => Ok(CovMode::Supplementary(SuppVariant::Full)),
        other => Err(FosrError::Config(format!(
            "mode must be decade, continuous, supp-obs or supp-full, got {other:?}"
        ))),
    }
}

/// Run configuration with `entries` applied in order.
fn config(entries: &[(&str, String)]) -> Result<RunConfig, FosrError> {
    let mut cfg = RunConfig::default();
    for (k, v) in entries {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Clamped cubic B-spline basis with its roughness penalty.
#[pyclass(name = "Basis", frozen)]
pub struct PyBasis {
    inner: BasisSystem,
}

#[pymethods]
impl PyBasis {
    #[new]
    #[pyo3(signature = (k, t_min, t_max, alpha = 0.01))]
    fn new(k: usize, t_min: f64, t_max: f64, alpha: f64) -> PyResult<Self> {
        Ok(Self { inner: BasisSystem::new(k, t_min, t_max, alpha).map_err(err)? })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.inner.knots().to_vec()
    }

    /// Basis matrix, one row per time.
    fn eval(&self, times: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.eval(&times).map_err(err)?))
    }

    fn penalty(&self) -> Vec<Vec<f64>> {
        rows(self.inner.penalty())
    }
}

/// AR(1) error covariance over `times`.
#[pyfunction]
#[pyo3(signature = (sigma2, rho, mode, times, base_step = 10.0))]
fn cov_matrix(sigma2: f64, rho: f64, mode: &str, times: Vec<f64>, base_step: f64) -> PyResult<Vec<Vec<f64>>> {
    let spec = Ar1Spec::new(sigma2, rho, parse_mode(mode).map_err(err)?, base_step).map_err(err)?;
    Ok(rows(&build_cov(&spec, &times).map_err(err)?))
}

/// Balanced-or-not ensemble of simulator curves on a shared time grid.
#[pyclass(name = "Dataset", frozen)]
pub struct PyDataset {
    inner: Arc<EnsembleDataset>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, log_transform = true))]
    fn from_csv(path: PathBuf, log_transform: bool) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(io::ingest(&path, log_transform).map_err(err)?) })
    }

    /// Synthetic 23-scenario ensemble from planted parameters.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, n_models = 5, sigma2 = 0.04, rho = 0.5, sig2_z = 5e-5, k = 8, cov_mode = "continuous"))]
    fn simulate(
        seed: u64,
        n_models: usize,
        sigma2: f64,
        rho: f64,
        sig2_z: f64,
        k: usize,
        cov_mode: &str,
    ) -> PyResult<Self> {
        let cfg = config(&[
            ("seed", seed.to_string()),
            ("sim_models", n_models.to_string()),
            ("sim_sigma2", sigma2.to_string()),
            ("sim_rho", rho.to_string()),
            ("sim_sig2_z", sig2_z.to_string()),
            ("k", k.to_string()),
            ("cov_mode", cov_mode.to_string()),
        ])
        .map_err(err)?;
        let (data, _, _) = simulate_from_config(&cfg).map_err(err)?;
        Ok(Self { inner: Arc::new(data) })
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_scenarios(&self) -> usize {
        self.inner.n_scenarios()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn scenario_labels(&self) -> Vec<String> {
        self.inner.scenario_labels.clone()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    #[getter]
    fn group_of(&self) -> Vec<usize> {
        self.inner.group_of.clone()
    }

    /// Responses, one row per curve.
    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.y)
    }

    /// Scenario design matrix including the intercept column.
    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.w)
    }
}

/// Empirical-Bayes prior constants from per-scenario least-squares fits.
#[pyfunction]
#[pyo3(signature = (dataset, k = 8, alpha = 0.01))]
fn eb_hyperparams(py: Python<'_>, dataset: &PyDataset, k: usize, alpha: f64) -> PyResult<Py<PyAny>> {
    let cfg = config(&[("k", k.to_string()), ("alpha", alpha.to_string())]).map_err(err)?;
    let basis = cfg.basis_for(&dataset.inner).map_err(err)?;
    let eb = fit_pilot(&dataset.inner, &basis)
        .and_then(|p| eb_fit(&p, &dataset.inner, &basis))
        .map_err(err)?;
    to_py(py, &eb)
}

/// A dataset bound to a basis, a prior and an error covariance.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    inner: Arc<FosrModel>,
    setting: CovSetting,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (dataset, k = 8, alpha = 0.01, preset = "paper-reference", cov_mode = "continuous"))]
    fn new(dataset: &PyDataset, k: usize, alpha: f64, preset: &str, cov_mode: &str) -> PyResult<Self> {
        let cfg = config(&[
            ("k", k.to_string()),
            ("alpha", alpha.to_string()),
            ("prior", preset.to_string()),
            ("cov_mode", cov_mode.to_string()),
        ])
        .map_err(err)?;
        let data = (*dataset.inner).clone();
        let basis = cfg.basis_for(&data).map_err(err)?;
        let hp = cfg.hyperparams_for(&data, &basis).map_err(err)?;
        let (mode, step) = cfg.cov_mode.fit_mode();
        let model = FosrModel::new(data, basis, hp, mode, step).map_err(err)?;
        Ok(Self { inner: Arc::new(model), setting: cfg.cov_mode })
    }

    #[getter]
    fn hyperparams(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.hp)
    }

    /// Runs the sampler with the interpreter released.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (n_chains = 4, n_iter = 20_000, n_warmup = 15_000, thin = 1, seed = 0, score_update = "collapsed"))]
    fn fit(
        &self,
        py: Python<'_>,
        n_chains: usize,
        n_iter: usize,
        n_warmup: usize,
        thin: usize,
        seed: u64,
        score_update: &str,
    ) -> PyResult<PyDraws> {
        let mut cfg = RunConfig::default().sampler;
        cfg.n_chains = n_chains;
        cfg.n_iter = n_iter;
        cfg.n_warmup = n_warmup;
        cfg.thin = thin;
        cfg.seed = seed;
        cfg.score_update = score_update.parse().map_err(err)?;
        let model = Arc::clone(&self.inner);
        let store = py.detach(move || run_chains(&model, &cfg)).map_err(err)?;
        Ok(PyDraws { store, model: Arc::clone(&self.inner), setting: self.setting })
    }

    /// Reloads draws written by `Draws.save` or the `fit` subcommand.
    fn load_draws(&self, path: PathBuf) -> PyResult<PyDraws> {
        let (store, _) = io::read_draws(&path).map_err(err)?;
        let d = &self.inner.data;
        if store.k != self.inner.k() || store.n_cov != d.n_covariates() || store.n_scen != d.n_scenarios() {
            return Err(err(FosrError::DimensionMismatch("draws do not match the model".into())));
        }
        Ok(PyDraws { store, model: Arc::clone(&self.inner), setting: self.setting })
    }
}

/// Retained posterior draws together with the model they came from.
#[pyclass(name = "Draws", frozen)]
pub struct PyDraws {
    store: DrawStore,
    model: Arc<FosrModel>,
    setting: CovSetting,
}

impl PyDraws {
    fn grid(&self, grid: Option<Vec<f64>>) -> Vec<f64> {
        grid.unwrap_or_else(|| RunConfig::default().summary_grid(&self.model.basis))
    }
}

#[pymethods]
impl PyDraws {
    #[getter]
    fn n_draws(&self) -> usize {
        self.store.n_draws()
    }

    #[getter]
    fn n_chains(&self) -> usize {
        self.store.n_chains
    }

    #[getter]
    fn rho_accept(&self) -> Vec<f64> {
        self.store.rho_accept.clone()
    }

    fn scalar_names(&self) -> Vec<String> {
        self.store.scalar_names()
    }

    /// All draws of one named scalar, in storage order.
    fn scalar(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = self
            .store
            .scalar_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown parameter {name:?}")))?;
        Ok(self.store.draws.iter().map(|d| d.to_flat()[idx]).collect())
    }

    #[pyo3(signature = (grid = None, level = 0.95))]
    fn summarize_beta(&self, py: Python<'_>, grid: Option<Vec<f64>>, level: f64) -> PyResult<Py<PyAny>> {
        let g = self.grid(grid);
        to_py(py, &posterior::summarize_beta(&self.store, &self.model.basis, &g, level).map_err(err)?)
    }

    #[pyo3(signature = (grid = None, level = 0.95))]
    fn summarize_c(&self, py: Python<'_>, grid: Option<Vec<f64>>, level: f64) -> PyResult<Py<PyAny>> {
        let g = self.grid(grid);
        to_py(py, &posterior::summarize_c(&self.store, &self.model.basis, &g, level).map_err(err)?)
    }

    #[pyo3(signature = (grid = None))]
    fn rope(&self, py: Python<'_>, grid: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let g = self.grid(grid);
        to_py(py, &posterior::rope_probability(&self.store, &self.model.basis, &g).map_err(err)?)
    }

    #[pyo3(signature = (pred_times = None, level = 0.95, seed = 0))]
    fn krige(&self, py: Python<'_>, pred_times: Option<Vec<f64>>, level: f64, seed: u64) -> PyResult<Py<PyAny>> {
        let pred = pred_times.unwrap_or_else(posterior::default_pred_grid);
        let (mode, step) = self.setting.krige_mode();
        let plan = KrigingPlan::new(&self.model.basis, &self.model.data.times, &pred, mode, step).map_err(err)?;
        let opts = KrigeOptions { level, seed, keep_samples: false };
        let res = py
            .detach(|| posterior::krige(&self.store, &plan, &self.model.data, &opts))
            .map_err(err)?;
        to_py(py, &res)
    }

    /// WAIC, LPML and predictive MSE.
    fn scores(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &scoring::score(&self.store, &self.model).map_err(err)?)
    }

    fn diagnostics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &compute_diagnostics(&self.store).map_err(err)?)
    }

    /// Binary draw file readable by the command-line tool.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let hash = RunConfig::default().hash();
        io::write_draws(&path, &self.store, &hash).map_err(err)
    }
}

#[pymodule]
fn fosr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", fosr_core::VERSION)?;
    m.add_class::<PyBasis>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDraws>()?;
    m.add_function(wrap_pyfunction!(cov_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(eb_hyperparams, m)?)?;
    Ok(())
}
