//! Python module `vecsim`: thin wrappers over `vecsim_core`.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vecsim_core::clustering::{elbow_select_k, kmeans_fit, CapacityClusters};
use vecsim_core::config::ExperimentConfig;
use vecsim_core::fleet::{generate_fleet as gen_fleet, generate_traces as gen_traces, generate_workloads, FleetConfig, GeoPoint};
use vecsim_core::forecast::{self, ForecastModel, ProfileForecaster, RnnModel};
use vecsim_core::scheduler::SchedulerKind;
use vecsim_core::sim::{run_simulation, SimInputs, Subset};
use vecsim_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::ConfigLine { .. } | Error::MissingKey(_) | Error::Dimension(_) | Error::Data(_)
        | Error::InvalidK { .. } | Error::UnknownVolunteer { .. } | Error::OutOfRange { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyfunction]
fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> PyResult<f64> {
    let a = GeoPoint::new(lat1, lon1).map_err(to_py)?;
    let b = GeoPoint::new(lat2, lon2).map_err(to_py)?;
    Ok(vecsim_core::scheduler::haversine_km(a, b))
}

#[pyfunction]
fn sigmoid(x: f64) -> f64 {
    forecast::sigmoid(x)
}

#[pyfunction]
fn bce_with_logits(logit: f64, label: f64) -> f64 {
    forecast::bce_with_logits(logit, label)
}

#[pyfunction]
fn productivity_rate(recovery_s: f64, total_s: f64) -> PyResult<f64> {
    vecsim_core::sim::productivity_rate(recovery_s, total_s).map_err(to_py)
}

/// Digest of the resolved configuration in `text` (INI).
#[pyfunction]
fn config_digest(text: &str) -> PyResult<String> {
    Ok(ExperimentConfig::from_ini(text).map_err(to_py)?.digest())
}

/// Nodes as dicts with capacity, location, CC flag and profile name.
#[pyfunction]
fn generate_fleet<'py>(py: Python<'py>, node_count: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = FleetConfig { node_count, ..FleetConfig::default() };
    gen_fleet(&cfg, seed)
        .map_err(to_py)?
        .into_iter()
        .map(|n| {
            let d = PyDict::new(py);
            d.set_item("node_id", n.node_id)?;
            d.set_item("cpu", n.capacity.cpu_count)?;
            d.set_item("ram_gb", n.capacity.ram_gb)?;
            d.set_item("storage_gb", n.capacity.storage_gb)?;
            d.set_item("lat", n.location.lat)?;
            d.set_item("lon", n.location.lon)?;
            d.set_item("cc_capable", n.cc_capable)?;
            d.set_item("profile", n.profile.kind.as_str())?;
            Ok(d)
        })
        .collect()
}

/// Hourly 0/1 availability per node of a default fleet.
#[pyfunction]
fn generate_traces(node_count: usize, horizon_hours: usize, seed: u64) -> PyResult<Vec<Vec<u8>>> {
    let cfg = FleetConfig { node_count, horizon_hours, ..FleetConfig::default() };
    let fleet = gen_fleet(&cfg, seed).map_err(to_py)?;
    let traces = gen_traces(&fleet, cfg.start_epoch, horizon_hours, seed).map_err(to_py)?;
    Ok(traces.into_iter().map(|t| t.hours).collect())
}

/// Returns `(centroids, assignments, ssd)`.
#[pyfunction]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, f64)> {
    let m = kmeans_fit(&points, k, seed).map_err(to_py)?;
    Ok((m.centroids, m.assignments, m.ssd))
}

/// Returns `(k_optimal, [(k, ssd), ...])`.
#[pyfunction]
fn elbow(points: Vec<Vec<f64>>, k_min: usize, k_max: usize, seed: u64) -> PyResult<(usize, Vec<(usize, f64)>)> {
    let e = elbow_select_k(&points, k_min..=k_max, seed).map_err(to_py)?;
    Ok((e.k_optimal, e.curve))
}

#[pyclass(name = "Rnn", module = "vecsim")]
struct PyRnn {
    inner: RnnModel,
}

#[pymethods]
impl PyRnn {
    #[new]
    #[pyo3(signature = (input_size, hidden_size, seed=0))]
    fn new(input_size: usize, hidden_size: usize, seed: u64) -> PyResult<Self> {
        Ok(PyRnn { inner: RnnModel::init(input_size, hidden_size, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_params(input_size: usize, hidden_size: usize, params: Vec<f64>) -> PyResult<Self> {
        Ok(PyRnn { inner: RnnModel::from_params(input_size, hidden_size, params).map_err(to_py)? })
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.len()
    }

    /// Per-step logits and the final hidden state.
    #[pyo3(signature = (sequence, h0=None))]
    fn forward(&self, sequence: Vec<Vec<f64>>, h0: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        forecast::rnn_forward(&self.inner, &sequence, h0.as_deref()).map_err(to_py)
    }
}

#[pyclass(name = "Forecaster", module = "vecsim")]
struct PyForecaster {
    inner: ForecastModel,
}

#[pymethods]
impl PyForecaster {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyForecaster { inner: ForecastModel::load(&path).map_err(to_py)? })
    }

    /// Probability that `node_id` is online during the hour containing `t`
    /// (UTC seconds).
    fn predict(&self, node_id: usize, t: i64) -> PyResult<f64> {
        let history = self.inner.history_at(node_id, t).map_err(to_py)?;
        forecast::predict_availability(&self.inner, node_id, t, &history)
            .map(|f| f.predicted_availability)
            .map_err(to_py)
    }
}

/// Generates everything from an INI config and runs one scheduler in memory,
/// scoring nodes with the profile forecaster. Returns summary figures.
#[pyfunction]
#[pyo3(signature = (config_text, scheduler, seed=None))]
fn simulate<'py>(py: Python<'py>, config_text: &str, scheduler: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_ini(config_text).map_err(to_py)?;
    let kind: SchedulerKind = scheduler.parse().map_err(to_py)?;
    let seed = seed.unwrap_or(cfg.seed);
    let report = py
        .detach(|| -> vecsim_core::Result<_> {
            let fleet = gen_fleet(&cfg.fleet, seed)?;
            let traces = gen_traces(&fleet, cfg.fleet.start_epoch, cfg.fleet.horizon_hours, seed)?;
            let workloads = generate_workloads(&cfg.workload, seed)?;
            let (clusters, _) = CapacityClusters::fit(&fleet, cfg.k_min..=cfg.k_max, seed)?;
            let forecaster = ProfileForecaster::new(&fleet);
            let inputs = SimInputs {
                fleet: &fleet,
                traces: &traces,
                workloads: &workloads,
                clusters: &clusters,
                forecaster: &forecaster,
            };
            run_simulation(&inputs, kind, &cfg.sim, seed)
        })
        .map_err(to_py)?;
    let lat = report.latency_stats();
    let d = PyDict::new(py);
    d.set_item("scheduler", kind.as_str())?;
    d.set_item("workflows", report.records.len())?;
    d.set_item("completed", report.count(vecsim_core::sim::Outcome::Completed))?;
    d.set_item("mean_search_latency_ms", lat.mean_ms)?;
    d.set_item("mean_nodes_sampled", lat.mean_nodes_sampled)?;
    d.set_item("mean_productivity_completed", report.productivity_stats(Subset::Completed).mean)?;
    d.set_item("mean_productivity_recovered", report.productivity_stats(Subset::Recovered).mean)?;
    Ok(d)
}

#[pymodule]
fn vecsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(bce_with_logits, m)?)?;
    m.add_function(wrap_pyfunction!(productivity_rate, m)?)?;
    m.add_function(wrap_pyfunction!(config_digest, m)?)?;
    m.add_function(wrap_pyfunction!(generate_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(generate_traces, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(elbow, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<PyRnn>()?;
    m.add_class::<PyForecaster>()?;
    Ok(())
}
