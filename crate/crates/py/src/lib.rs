//! Python bindings. Structured arguments are plain dicts with the same layout
//! as the CLI configs; reports come back as dicts.

use fmlab::fm_analysis::{DEFAULT_MARGIN_TOL, DEFAULT_PROBE_TOL};
use fmlab::{
    ApproximatorConfig, CascadeApproximator, EnsembleSpec, FitOptions, FmCertificateCandidate,
    GainFamily, GainFunction, LyapunovCheckSpec, MemoryKernel, ModelSpec, SampledSignal,
    SignalGeneratorSpec, TimeGrid,
};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn to_py_err(e: fmlab::Error) -> PyErr {
    use fmlab::Error as E;
    match e {
        E::Numeric(_) | E::Divergence { .. } | E::Singular(_) => {
            PyArithmeticError::new_err(e.to_string())
        }
        E::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts a Python object to a Rust value through its JSON form.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn opt_from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.filter(|o| !o.is_none())
        .map(from_py)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(s: &SampledSignal) -> Vec<Vec<f64>> {
    (0..s.len()).map(|k| s.at(k).to_vec()).collect()
}

fn signal_from_rows(grid: TimeGrid, values: Vec<Vec<f64>>) -> PyResult<SampledSignal> {
    let dim = values.first().map_or(0, Vec::len);
    if values.len() != grid.n || values.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err(format!(
            "expected {} rows of equal length",
            grid.n
        )));
    }
    SampledSignal::new(grid, dim, values.concat()).map_err(to_py_err)
}

/// Samples a generator spec on a grid; one row per grid point.
#[pyfunction]
fn generate_signal(spec: &Bound<'_, PyAny>, grid: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<f64>>> {
    let spec: SignalGeneratorSpec = from_py(spec)?;
    let grid: TimeGrid = from_py(grid)?;
    fmlab::generate_signal(&spec, &grid)
        .map(|s| rows(&s))
        .map_err(to_py_err)
}

/// Integrates `model` from `x0` under `input`, given either as a generator spec
/// dict or as rows of samples. Returns `{"t", "states", "outputs"}`.
#[pyfunction]
#[pyo3(signature = (model, x0, input, grid, substeps = 1))]
fn simulate<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    x0: Vec<f64>,
    input: &Bound<'py, PyAny>,
    grid: &Bound<'py, PyAny>,
    substeps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let model = from_py::<ModelSpec>(model)?.build().map_err(to_py_err)?;
    let grid: TimeGrid = from_py(grid)?;
    let u = if input.is_instance_of::<PyDict>() {
        fmlab::generate_signal(&from_py(input)?, &grid).map_err(to_py_err)?
    } else {
        signal_from_rows(grid, input.extract()?)?
    };
    let traj = py
        .detach(|| fmlab::integrate(&model, &x0, &u, substeps))
        .map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("t", (0..grid.n).map(|k| grid.time(k)).collect::<Vec<_>>())?;
    out.set_item(
        "states",
        (0..grid.n)
            .map(|k| traj.state(k).to_vec())
            .collect::<Vec<_>>(),
    )?;
    out.set_item("outputs", rows(&traj.outputs))?;
    Ok(out)
}

/// Samples `ensemble` and reports the worst margin of `candidate`.
#[pyfunction]
#[pyo3(signature = (model, candidate, ensemble, tol = DEFAULT_MARGIN_TOL))]
fn falsify_fm<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    candidate: &Bound<'py, PyAny>,
    ensemble: &Bound<'py, PyAny>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let model = from_py::<ModelSpec>(model)?.build().map_err(to_py_err)?;
    let cand: FmCertificateCandidate = from_py(candidate)?;
    let ens: EnsembleSpec = from_py(ensemble)?;
    let report = py
        .detach(|| fmlab::falsify_fm(&model, &cand, &ens, tol))
        .map_err(to_py_err)?;
    to_py(py, &report)
}

/// Largest certifiable exponential kernel rate on `ensemble`.
#[pyfunction]
#[pyo3(signature = (model, ensemble, family = None, options = None))]
fn fit_exponential_rate<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    ensemble: &Bound<'py, PyAny>,
    family: Option<&Bound<'py, PyAny>>,
    options: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let model = from_py::<ModelSpec>(model)?.build().map_err(to_py_err)?;
    let ens: EnsembleSpec = from_py(ensemble)?;
    let family: GainFamily = opt_from_py(family)?;
    let opts: FitOptions = opt_from_py(options)?;
    let fit = py
        .detach(|| fmlab::fit_exponential_rate(&model, &family, &ens, &opts))
        .map_err(to_py_err)?;
    to_py(py, &fit)
}

/// Admissible input mismatch at each grid time for an output target `r` at `t_star`.
#[pyfunction]
fn input_budget(
    gamma: &Bound<'_, PyAny>,
    kernel: &Bound<'_, PyAny>,
    r: f64,
    t_star: f64,
    grid: &Bound<'_, PyAny>,
) -> PyResult<Vec<f64>> {
    let gamma: GainFunction = from_py(gamma)?;
    let kernel: MemoryKernel = from_py(kernel)?;
    let grid: TimeGrid = from_py(grid)?;
    fmlab::input_budget(&gamma, &kernel, r, t_star, &grid)
        .map(|b| b.channel(0))
        .map_err(to_py_err)
}

/// Kernel weights built from a gain `mu` and decay rate, evaluated at `lags`.
#[pyfunction]
fn kernel_from_gain(
    mu: &Bound<'_, PyAny>,
    decay: f64,
    input_bound: f64,
    lags: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let mu: GainFunction = from_py(mu)?;
    let kernel = fmlab::kernel_from_gain(&mu, decay, input_bound, &lags).map_err(to_py_err)?;
    lags.iter()
        .map(|&t| kernel.eval(t).map_err(to_py_err))
        .collect()
}

#[pyfunction]
#[pyo3(signature = (model, x0_a, x0_b, input_a, input_b, grid, tail_window, tol = DEFAULT_PROBE_TOL, substeps = 1))]
#[allow(clippy::too_many_arguments)]
fn cico_probe<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    x0_a: Vec<f64>,
    x0_b: Vec<f64>,
    input_a: &Bound<'py, PyAny>,
    input_b: &Bound<'py, PyAny>,
    grid: &Bound<'py, PyAny>,
    tail_window: f64,
    tol: f64,
    substeps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let model = from_py::<ModelSpec>(model)?.build().map_err(to_py_err)?;
    let grid: TimeGrid = from_py(grid)?;
    let u_a = fmlab::generate_signal(&from_py(input_a)?, &grid).map_err(to_py_err)?;
    let u_b = fmlab::generate_signal(&from_py(input_b)?, &grid).map_err(to_py_err)?;
    let report = fmlab::cico_probe(&model, &x0_a, &x0_b, &u_a, &u_b, tail_window, tol, substeps)
        .map_err(to_py_err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (model, x0, input, grid, period, periods, burn_in, substeps = 1))]
#[allow(clippy::too_many_arguments)]
fn pipo_probe<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    x0: Vec<f64>,
    input: &Bound<'py, PyAny>,
    grid: &Bound<'py, PyAny>,
    period: f64,
    periods: usize,
    burn_in: f64,
    substeps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let model = from_py::<ModelSpec>(model)?.build().map_err(to_py_err)?;
    let grid: TimeGrid = from_py(grid)?;
    let u = fmlab::generate_signal(&from_py(input)?, &grid).map_err(to_py_err)?;
    let report = fmlab::pipo_probe(&model, &x0, &u, period, periods, burn_in, substeps)
        .map_err(to_py_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn lyapunov_sample_check<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    spec: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let model = from_py::<ModelSpec>(model)?.build().map_err(to_py_err)?;
    let spec: LyapunovCheckSpec = from_py(spec)?;
    let report = py
        .detach(|| fmlab::lyapunov_sample_check(&model, &spec))
        .map_err(to_py_err)?;
    to_py(py, &report)
}

/// Filter bank followed by a polynomial readout.
#[pyclass(module = "fmlab_py")]
struct Cascade {
    inner: CascadeApproximator,
}

#[pymethods]
impl Cascade {
    /// Trains on the `u_a` inputs of `ensemble`, each target run starting from `x0`.
    #[staticmethod]
    fn train(
        py: Python<'_>,
        target: &Bound<'_, PyAny>,
        x0: Vec<f64>,
        ensemble: &Bound<'_, PyAny>,
        config: &Bound<'_, PyAny>,
    ) -> PyResult<Self> {
        let target = from_py::<ModelSpec>(target)?.build().map_err(to_py_err)?;
        let ens: EnsembleSpec = from_py(ensemble)?;
        let cfg: ApproximatorConfig = from_py(config)?;
        let inner = py
            .detach(|| fmlab::train_approximator(&target, &x0, &ens, &cfg))
            .map_err(to_py_err)?;
        Ok(Cascade { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CascadeApproximator =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py_err)?;
        Ok(Cascade { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Output rows for `input`, a generator spec dict or rows of samples.
    fn predict(
        &self,
        input: &Bound<'_, PyAny>,
        grid: &Bound<'_, PyAny>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let grid: TimeGrid = from_py(grid)?;
        let u = if input.is_instance_of::<PyDict>() {
            fmlab::generate_signal(&from_py(input)?, &grid).map_err(to_py_err)?
        } else {
            signal_from_rows(grid, input.extract()?)?
        };
        fmlab::approx_eval(&self.inner, &u)
            .map(|y| rows(&y))
            .map_err(to_py_err)
    }

    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.inner.bank.rates.clone()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.readout.degree
    }

    /// Training metadata as a dict, or `None` for hand-built cascades.
    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner
            .metadata
            .as_ref()
            .map(|m| to_py(py, m))
            .transpose()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cascade(filters={}, degree={})",
            self.inner.bank.rates.len(),
            self.inner.readout.degree
        )
    }
}

/// Normalized RMSE pooled over signals, each given as rows of samples.
#[pyfunction]
fn nrmse(predictions: Vec<Vec<Vec<f64>>>, targets: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let to_signals = |sets: Vec<Vec<Vec<f64>>>| -> PyResult<Vec<SampledSignal>> {
        sets.into_iter()
            .map(|s| signal_from_rows(TimeGrid::new(0.0, 1.0, s.len()).map_err(to_py_err)?, s))
            .collect()
    };
    fmlab::nrmse(&to_signals(predictions)?, &to_signals(targets)?).map_err(to_py_err)
}

#[pymodule]
fn fmlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_signal, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(falsify_fm, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential_rate, m)?)?;
    m.add_function(wrap_pyfunction!(input_budget, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_from_gain, m)?)?;
    m.add_function(wrap_pyfunction!(cico_probe, m)?)?;
    m.add_function(wrap_pyfunction!(pipo_probe, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_sample_check, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_class::<Cascade>()?;
    m.add("DEFAULT_MARGIN_TOL", DEFAULT_MARGIN_TOL)?;
    m.add("DEFAULT_PROBE_TOL", DEFAULT_PROBE_TOL)?;
    Ok(())
}
