//! Python bindings for the Koopman distributed moving horizon estimator.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use kdmhe::config::{presets, RunConfig};
use kdmhe::identify::KoopmanModel;
use kdmhe::pipeline;
use kdmhe::simulate::Trajectory as CoreTrajectory;

create_exception!(pykdmhe, NumericalError, PyException);

fn to_py(e: kdmhe::Error) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        NumericalError::new_err(e.to_string())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], cols: usize) -> PyResult<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!(
            "every row must have {cols} entries"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

/// Run configuration: process, topology, lifting, noise and estimator settings.
#[pyclass(module = "pykdmhe", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    /// Built-in configuration: "cstr", "agro" or "linear".
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        presets::by_name(name)
            .map(|inner| Config { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset '{name}'")))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml(text)
            .map(|inner| Config { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        RunConfig::from_file(path)
            .map(|inner| Config { inner })
            .map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn subsystems(&self) -> usize {
        self.inner.topology.m()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.topology.n_states
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(name={:?}, seed={})",
            self.inner.name, self.inner.seed
        )
    }
}

/// Sampled trajectory; matrices are lists of rows, one row per instant.
#[pyclass(module = "pykdmhe", skip_from_py_object)]
#[derive(Clone)]
struct Trajectory {
    inner: CoreTrajectory,
}

#[pymethods]
impl Trajectory {
    /// Noise-free trajectory measured at `sensor_states`.
    #[new]
    #[pyo3(signature = (time, states, inputs, sensor_states, seed = 0))]
    fn new(
        time: Vec<f64>,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
        sensor_states: Vec<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let n_x = states.first().map_or(0, Vec::len);
        let n_u = inputs.first().map_or(0, Vec::len);
        if states.len() != time.len() || inputs.len() != time.len() {
            return Err(PyValueError::new_err(
                "time, states and inputs must have the same length",
            ));
        }
        if let Some(&g) = sensor_states.iter().find(|&&g| g >= n_x) {
            return Err(PyValueError::new_err(format!(
                "sensor state {g} out of range"
            )));
        }
        let states = matrix(&states, n_x)?;
        let inputs = matrix(&inputs, n_u)?;
        Ok(Trajectory {
            inner: CoreTrajectory::new(time, states, inputs, sensor_states, seed),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        kdmhe::io::read_trajectory(path)
            .map(|inner| Trajectory { inner })
            .map_err(to_py)
    }

    #[pyo3(signature = (path, config_hash = ""))]
    fn save(&self, path: &str, config_hash: &str) -> PyResult<()> {
        kdmhe::io::write_trajectory(path, &self.inner, config_hash).map_err(to_py)
    }

    #[getter]
    fn time(&self) -> Vec<f64> {
        self.inner.time.clone()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.states)
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.inputs)
    }

    #[getter]
    fn measurements(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.measurements)
    }

    #[getter]
    fn sensor_states(&self) -> Vec<usize> {
        self.inner.sensor_states.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(samples={}, states={})",
            self.inner.len(),
            self.inner.n_x()
        )
    }
}

/// Training, validation and test segments of one simulated run.
#[pyclass(module = "pykdmhe", get_all, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    train: Trajectory,
    validate: Trajectory,
    test: Trajectory,
}

impl Dataset {
    fn core(&self) -> pipeline::Dataset {
        pipeline::Dataset {
            train: self.train.inner.clone(),
            validate: self.validate.inner.clone(),
            test: self.test.inner.clone(),
        }
    }
}

/// Identified lifted model of every subsystem.
#[pyclass(module = "pykdmhe", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: KoopmanModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        KoopmanModel::load(path)
            .map(|inner| Model { inner })
            .map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Lifted dimension of each subsystem.
    #[getter]
    fn lifted_dims(&self) -> Vec<usize> {
        self.inner.subsystems.iter().map(|s| s.n_z()).collect()
    }

    /// Assembled global state matrix.
    fn global_a(&self) -> PyResult<Vec<Vec<f64>>> {
        self.inner.global().map(|g| rows(&g.a)).map_err(to_py)
    }

    /// Assembled global input matrix.
    fn global_b(&self) -> PyResult<Vec<Vec<f64>>> {
        self.inner.global().map(|g| rows(&g.b)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(subsystems={}, lifted={:?})",
            self.inner.subsystems.len(),
            self.lifted_dims()
        )
    }
}

/// Open-loop prediction quality on held-out data.
#[pyclass(module = "pykdmhe", get_all)]
struct Validation {
    rmse: f64,
    rmse_per_state: Vec<f64>,
    states: Vec<Vec<f64>>,
}

/// Estimated trajectory with error and cost statistics.
#[pyclass(module = "pykdmhe", get_all)]
struct Estimate {
    states: Vec<Vec<f64>>,
    error_norms: Vec<f64>,
    rmse: f64,
    mean_solve_time: f64,
    max_violation: f64,
    min_covariance_eigenvalue: f64,
}

impl From<&pipeline::EstimationReport> for Estimate {
    fn from(r: &pipeline::EstimationReport) -> Self {
        Estimate {
            states: rows(&r.estimate.states),
            error_norms: r.error_norms.clone(),
            rmse: r.rmse,
            mean_solve_time: r.mean_solve_time,
            max_violation: r.estimate.max_violation,
            min_covariance_eigenvalue: r.estimate.covariance.min_eigenvalue,
        }
    }
}

/// Lifted estimator against the linearized baseline.
#[pyclass(module = "pykdmhe", get_all)]
struct Comparison {
    koopman: Py<Estimate>,
    baseline: Py<Estimate>,
    ratio: f64,
}

/// Simulate the configured process and split it into segments.
#[pyfunction]
fn simulate(py: Python<'_>, config: &Config) -> PyResult<Dataset> {
    let data = py
        .detach(|| pipeline::simulate(&config.inner))
        .map_err(to_py)?;
    Ok(Dataset {
        train: Trajectory { inner: data.train },
        validate: Trajectory {
            inner: data.validate,
        },
        test: Trajectory { inner: data.test },
    })
}

/// Fit the lifted model of every subsystem on a training trajectory.
#[pyfunction]
#[pyo3(signature = (config, training, parallel = true))]
fn identify(
    py: Python<'_>,
    config: &Config,
    training: &Trajectory,
    parallel: bool,
) -> PyResult<Model> {
    py.detach(|| pipeline::identify(&config.inner, &training.inner, parallel))
        .map(|inner| Model { inner })
        .map_err(to_py)
}

/// Open-loop prediction from the first sample of `data`.
#[pyfunction]
fn validate(py: Python<'_>, model: &Model, data: &Trajectory) -> PyResult<Validation> {
    let r = py
        .detach(|| pipeline::validate(&model.inner, &data.inner))
        .map_err(to_py)?;
    Ok(Validation {
        rmse: r.rmse,
        rmse_per_state: r.rmse_per_state,
        states: rows(&r.prediction.states),
    })
}

/// Run the distributed estimator over `data`.
#[pyfunction]
#[pyo3(signature = (config, model, data, parallel = true))]
fn estimate(
    py: Python<'_>,
    config: &Config,
    model: &Model,
    data: &Trajectory,
    parallel: bool,
) -> PyResult<Estimate> {
    let r = py
        .detach(|| {
            pipeline::estimate(
                &config.inner,
                &model.inner,
                &data.inner,
                &model.inner.scaler,
                parallel,
            )
        })
        .map_err(to_py)?;
    Ok(Estimate::from(&r))
}

/// Estimate the test segment with the lifted model and the linearized baseline.
#[pyfunction]
#[pyo3(signature = (config, model, dataset, parallel = true))]
fn compare(
    py: Python<'_>,
    config: &Config,
    model: &Model,
    dataset: &Dataset,
    parallel: bool,
) -> PyResult<Comparison> {
    let data = dataset.core();
    let c = py
        .detach(|| pipeline::compare(&config.inner, &model.inner, &data, parallel))
        .map_err(to_py)?;
    Ok(Comparison {
        koopman: Py::new(py, Estimate::from(&c.koopman))?,
        baseline: Py::new(py, Estimate::from(&c.baseline))?,
        ratio: c.ratio(),
    })
}

#[pymodule]
fn pykdmhe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<Config>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Validation>()?;
    m.add_class::<Estimate>()?;
    m.add_class::<Comparison>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
