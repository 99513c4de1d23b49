//! Python bindings: the optimizers, the reconstruction oracles, models,
//! dataset generators and the experiment harness.
//!
//! Vectors cross the boundary as `list[float]`, matrices as `list[list[float]]`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kalmanopt::harness::{self, RunConfig, Settings};
use kalmanopt::models::{Activation, Batch, ModelSpec};
use kalmanopt::optim::{self, KoalaHyper, RMode, Variant, DEFAULT_EPS};
use kalmanopt::{oracle, Error, GradVector};

fn to_py(err: Error) -> PyErr {
    match harness::exit_code(&err) {
        2 => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn hyper(q: f64, sigma0: f64, r_mode: &str, r: f64, alpha: f64, variant: &str, eps: f64) -> PyResult<KoalaHyper> {
    let r_mode = match r_mode {
        "fixed" => RMode::Fixed { r },
        "ema" => RMode::Ema { alpha },
        other => return Err(PyValueError::new_err(format!("r_mode must be 'fixed' or 'ema', got {other:?}"))),
    };
    let variant = match variant {
        "sym" | "symmetric" => Variant::Symmetric,
        "ns" | "asymmetric" => Variant::Asymmetric,
        other => return Err(PyValueError::new_err(format!("variant must be 'sym' or 'ns', got {other:?}"))),
    };
    let h = KoalaHyper {
        q,
        sigma0,
        r_mode,
        variant,
        eps,
        weight_decay: 0.0,
    };
    h.validate().map_err(to_py)?;
    Ok(h)
}

/// Surrogate-covariance Kalman optimizer.
#[pyclass(name = "KoalaPlusPlus", module = "kalmanopt")]
struct PyKoala {
    inner: optim::KoalaPlusPlus,
}

#[pymethods]
impl PyKoala {
    #[new]
    #[pyo3(signature = (q=0.1, sigma0=0.1, r_mode="ema", r=1.0, alpha=0.9, variant="sym", eps=DEFAULT_EPS))]
    fn new(q: f64, sigma0: f64, r_mode: &str, r: f64, alpha: f64, variant: &str, eps: f64) -> PyResult<Self> {
        let h = hyper(q, sigma0, r_mode, r, alpha, variant, eps)?;
        Ok(Self {
            inner: optim::KoalaPlusPlus::new(h).map_err(to_py)?,
        })
    }

    /// Parameter delta for one minibatch; add it to the parameters.
    fn step(&mut self, loss: f64, grad: Vec<f64>, lr: f64) -> PyResult<Vec<f64>> {
        let delta = self.inner.step(loss, &GradVector::new(grad), lr).map_err(to_py)?;
        Ok(delta.into_inner())
    }

    /// Current surrogate `v_k`, or `None` before the first step.
    #[getter]
    fn v(&self) -> Option<Vec<f64>> {
        self.inner.state().map(|s| s.v.to_vec())
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.state().map_or(0, |s| s.step)
    }

    #[getter]
    fn s_prev(&self) -> Option<f64> {
        self.inner.state().map(|s| s.s_prev)
    }

    #[getter]
    fn r_last(&self) -> Option<f64> {
        self.inner.state().map(|s| s.r_last)
    }

    #[getter]
    fn floor_hits(&self) -> u64 {
        self.inner.state().map_or(0, |s| s.floor_hits)
    }
}

/// Scalar-covariance Kalman optimizer.
#[pyclass(name = "KoalaV", module = "kalmanopt")]
struct PyKoalaV {
    inner: optim::KoalaV,
}

#[pymethods]
impl PyKoalaV {
    #[new]
    #[pyo3(signature = (q=0.1, sigma0=0.1, r_mode="ema", r=1.0, alpha=0.9, eps=DEFAULT_EPS))]
    fn new(q: f64, sigma0: f64, r_mode: &str, r: f64, alpha: f64, eps: f64) -> PyResult<Self> {
        let h = hyper(q, sigma0, r_mode, r, alpha, "sym", eps)?;
        Ok(Self {
            inner: optim::KoalaV::new(h).map_err(to_py)?,
        })
    }

    fn step(&mut self, loss: f64, grad: Vec<f64>, lr: f64) -> PyResult<Vec<f64>> {
        let delta = self.inner.step(loss, &GradVector::new(grad), lr).map_err(to_py)?;
        Ok(delta.into_inner())
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }
}

/// A differentiable model with analytic gradients.
#[pyclass(name = "Model", module = "kalmanopt")]
struct PyModel {
    inner: ModelSpec,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (widths, activation="tanh", weight_decay=0.0))]
    fn mlp(widths: Vec<usize>, activation: &str, weight_decay: f64) -> PyResult<Self> {
        let activation = match activation {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => return Err(PyValueError::new_err(format!("unknown activation {other:?}"))),
        };
        let inner = ModelSpec::mlp(widths, activation)
            .and_then(|m| m.with_weight_decay(weight_decay))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn logistic_regression(features: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ModelSpec::logistic_regression(features).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn quadratic_bowl(curvature: Vec<f64>, center: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ModelSpec::quadratic_bowl(curvature, center).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn rosenbrock(dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ModelSpec::rosenbrock(dim).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        self.inner.init_params(seed).into_inner()
    }

    /// `(loss, grad)` on a batch given as rows of features and labels.
    #[pyo3(signature = (theta, inputs=vec![], targets=vec![]))]
    fn loss_and_grad(&self, theta: Vec<f64>, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let batch = batch_from_rows(&self.inner, inputs, targets)?;
        let (loss, grad) = self.inner.loss_and_grad(&theta, &batch).map_err(to_py)?;
        Ok((loss, grad.into_inner()))
    }

    fn predict(&self, theta: Vec<f64>, inputs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let n = inputs.len();
        let batch = batch_from_rows(&self.inner, inputs, vec![0.0; n])?;
        self.inner.predict(&theta, &batch).map_err(to_py)
    }
}

fn batch_from_rows(model: &ModelSpec, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> PyResult<Batch> {
    let width = inputs
        .first()
        .map(Vec::len)
        .or_else(|| model.input_width())
        .unwrap_or(1);
    if inputs.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("ragged input rows"));
    }
    let (inputs, targets) = if inputs.is_empty() && targets.is_empty() {
        (vec![0.0; width], vec![0.0])
    } else {
        (inputs.concat(), targets)
    };
    Batch::new(inputs, width, targets).map_err(to_py)
}

#[pyfunction]
fn innovation_s(h: Vec<f64>, v: Vec<f64>, q: f64, r: f64) -> PyResult<f64> {
    optim::innovation_s(&h, &v, q, r).map_err(to_py)
}

/// `(delta, new_p)` of one scalar-covariance update.
#[pyfunction]
fn koala_v_step(p: f64, q: f64, r: f64, loss: f64, h: Vec<f64>, l_target: f64) -> PyResult<(Vec<f64>, f64)> {
    let (delta, p) = optim::koala_v_step(p, q, r, loss, &GradVector::new(h), l_target).map_err(to_py)?;
    Ok((delta.into_inner(), p))
}

#[pyfunction]
fn min_norm_p_vanilla(h: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&oracle::min_norm_p_vanilla(&h, &v).map_err(to_py)?))
}

#[pyfunction]
fn min_norm_p_symmetric(h: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&oracle::min_norm_p_symmetric(&h, &v).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (h, v, symmetric=true))]
fn numeric_min_norm_solve(h: Vec<f64>, v: Vec<f64>, symmetric: bool) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&oracle::numeric_min_norm_solve(&h, &v, symmetric).map_err(to_py)?))
}

/// `(lambda1, lambda2)` of the symmetric reconstruction.
#[pyfunction]
fn eig_closed_form(h: Vec<f64>, v: Vec<f64>) -> PyResult<(f64, f64)> {
    let e = oracle::eig_closed_form(&h, &v).map_err(to_py)?;
    Ok((e.lambda1, e.lambda2))
}

/// `(h v^T, angle in degrees)`.
#[pyfunction]
fn psd_direction_check(h: Vec<f64>, v: Vec<f64>) -> PyResult<(f64, f64)> {
    oracle::psd_direction_check(&h, &v).map_err(to_py)
}

#[pyfunction]
fn ground_truth_m(h: Vec<f64>, v: Vec<f64>, q: f64, r: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&oracle::ground_truth_m(&h, &v, q, r, DEFAULT_EPS).map_err(to_py)?.m))
}

/// `(inputs, labels)` of the two-moons dataset.
#[pyfunction]
#[pyo3(signature = (n, noise=0.1, seed=42))]
fn make_two_moons(n: usize, noise: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = kalmanopt::data::make_two_moons(n, noise, seed).map_err(to_py)?;
    Ok(((0..d.len()).map(|i| d.row(i).to_vec()).collect(), d.targets().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (n, centers=3, std=0.5, seed=42))]
fn make_gaussian_blobs(n: usize, centers: usize, std: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = kalmanopt::data::make_gaussian_blobs(n, centers, std, seed).map_err(to_py)?;
    Ok(((0..d.len()).map(|i| d.row(i).to_vec()).collect(), d.targets().to_vec()))
}

/// Trains the configuration given as TOML text (same keys as the CLI config
/// file) and writes `metrics.csv` and `manifest.json` under its `out`.
/// Returns the final epoch metrics.
#[pyfunction]
fn train<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyDict>> {
    let layer = Settings::from_toml_str(config_toml).map_err(PyValueError::new_err)?;
    let settings = Settings::resolve_layers(&[layer]);
    let cfg = RunConfig::from_settings(&settings).map_err(to_py)?;
    let run = py
        .detach(|| harness::cmd_train(&cfg, &settings))
        .map_err(|f| to_py(f.error))?;
    let out = PyDict::new(py);
    out.set_item("train_loss", run.final_metrics.train_loss)?;
    out.set_item("val_loss", run.final_metrics.val_loss)?;
    out.set_item("top1_err_pct", run.final_metrics.top1_err_pct)?;
    out.set_item("steps", run.epoch_records().last().map_or(0, |r| r.step))?;
    out.set_item("out", cfg.out.display().to_string())?;
    Ok(out)
}

/// Runs the verification battery; returns `(name, passed, detail)` rows.
#[pyfunction]
fn verify(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(harness::run_verify)
        .into_iter()
        .map(|r| (r.name.to_string(), r.passed, r.detail))
        .collect()
}

#[pymodule]
#[pyo3(name = "kalmanopt")]
fn kalmanopt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKoala>()?;
    m.add_class::<PyKoalaV>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(innovation_s, m)?)?;
    m.add_function(wrap_pyfunction!(koala_v_step, m)?)?;
    m.add_function(wrap_pyfunction!(min_norm_p_vanilla, m)?)?;
    m.add_function(wrap_pyfunction!(min_norm_p_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(numeric_min_norm_solve, m)?)?;
    m.add_function(wrap_pyfunction!(eig_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(psd_direction_check, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth_m, m)?)?;
    m.add_function(wrap_pyfunction!(make_two_moons, m)?)?;
    m.add_function(wrap_pyfunction!(make_gaussian_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
