//! Python bindings for the enharvest simulator.
//!
//! Results that are plain data (ledgers, summaries, reports) come back as
//! dicts and lists built from the same JSON the CLI writes.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use enharvest_core as core;
use enharvest_core::config::{DeploymentConfig, NodeConfig};
use enharvest_core::deployment::NodeTraces;
use enharvest_core::qos::{ApplicationMode, ControllerState, QosState};
use enharvest_core::sim::Recording;
use enharvest_core::Trace;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<ApplicationMode> {
    match mode {
        "periodic_sensing" => Ok(ApplicationMode::PeriodicSensing),
        "event_detection" => Ok(ApplicationMode::EventDetection),
        "advertising" => Ok(ApplicationMode::Advertising),
        other => Err(value_error(format!("unknown mode `{other}`"))),
    }
}

fn state(s: u8) -> PyResult<QosState> {
    QosState::new(s).map_err(value_error)
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// The seven-row QoS lookup table.
#[pyclass(name = "QosTable", module = "enharvest", from_py_object)]
#[derive(Clone, Default)]
struct PyQosTable {
    inner: core::QosTable,
}

#[pymethods]
impl PyQosTable {
    #[new]
    fn new() -> Self {
        PyQosTable::default()
    }

    /// State whose voltage bucket contains `volt`.
    fn lookup(&self, volt: f64) -> PyResult<u8> {
        self.inner
            .lookup_state(volt)
            .map(QosState::get)
            .map_err(value_error)
    }

    #[pyo3(signature = (state, mode = "periodic_sensing"))]
    fn interval(&self, state: u8, mode: &str) -> PyResult<f64> {
        Ok(self
            .inner
            .interval_for(self::state(state)?, parse_mode(mode)?))
    }

    fn rows(&self) -> Vec<(u8, f64, f64, f64, f64, f64)> {
        self.inner
            .rows()
            .iter()
            .map(|r| {
                (
                    r.state,
                    r.v_lo,
                    r.v_hi,
                    r.sense_interval,
                    r.pir_interval,
                    r.adv_interval,
                )
            })
            .collect()
    }
}

/// Adaptive QoS controller over the default table.
#[pyclass(name = "Controller", module = "enharvest")]
#[derive(Default)]
struct PyController {
    state: ControllerState,
    table: core::QosTable,
}

#[pymethods]
impl PyController {
    #[new]
    fn new() -> Self {
        PyController::default()
    }

    /// Feeds one (voltage, light) reading and returns the new state.
    fn step(&mut self, volt: f64, light: f64) -> PyResult<u8> {
        let (next, qos) = self
            .state
            .step(volt, light, &self.table)
            .map_err(value_error)?;
        self.state = next;
        Ok(qos.get())
    }

    fn reset(&mut self) {
        self.state = self.state.reset();
    }

    #[getter]
    fn qos(&self) -> u8 {
        self.state.qos.get()
    }

    #[getter]
    fn index(&self) -> u64 {
        self.state.index
    }
}

/// A node configuration; see `configs/node.toml` for the schema.
#[pyclass(name = "NodeConfig", module = "enharvest", from_py_object)]
#[derive(Clone, Default)]
struct PyNodeConfig {
    inner: NodeConfig,
}

#[pymethods]
impl PyNodeConfig {
    #[new]
    fn new() -> Self {
        PyNodeConfig::default()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        NodeConfig::from_toml_str(text, "<string>")
            .map(|inner| PyNodeConfig { inner })
            .map_err(value_error)
    }

    #[getter]
    fn node_id(&self) -> String {
        self.inner.node_id.clone()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn capacitance(&self) -> f64 {
        self.inner.supercap.capacitance
    }

    #[getter]
    fn voltage(&self) -> f64 {
        self.inner.supercap.voltage
    }

    /// Average storage-side power at a fixed state, in watts.
    fn steady_state_power(&self, state: u8) -> PyResult<f64> {
        Ok(core::steady_state_power(&self.inner, self::state(state)?))
    }

    fn min_lux(&self, state: u8) -> PyResult<f64> {
        Ok(core::min_lux_for_perpetual(
            &self.inner,
            self::state(state)?,
        ))
    }

    fn darkness_survival(&self, v_start: f64, state: u8) -> PyResult<f64> {
        Ok(core::explorer::darkness_survival(
            &self.inner,
            v_start,
            self::state(state)?,
        ))
    }
}

#[pyfunction]
#[pyo3(signature = (lux, i_ref = 46.5e-6, v_ref = 1.5, lux_ref = 300.0))]
fn harvest_power(lux: f64, i_ref: f64, v_ref: f64, lux_ref: f64) -> PyResult<f64> {
    if !(lux >= 0.0 && lux.is_finite()) {
        return Err(value_error(format!(
            "lux must be finite and non-negative, got {lux}"
        )));
    }
    let model = core::HarvesterModel {
        i_ref,
        v_ref,
        lux_ref,
        ..core::HarvesterModel::default()
    };
    Ok(core::energy::harvest_power(&model, lux))
}

#[pyfunction]
fn stored_energy(capacitance: f64, voltage: f64) -> f64 {
    0.5 * capacitance * voltage * voltage
}

fn light_trace(samples: Vec<(f64, f64)>) -> PyResult<Trace> {
    Trace::light(samples).map_err(value_error)
}

fn event_trace(times: Option<Vec<f64>>) -> PyResult<Trace> {
    Trace::new(times.unwrap_or_default().into_iter().map(|t| (t, 1.0))).map_err(value_error)
}

/// Simulates one node; returns the ledger and summary as a dict.
#[pyfunction]
#[pyo3(signature = (config, light, duration_s, events = None, seed = 0))]
fn run_node<'py>(
    py: Python<'py>,
    config: &PyNodeConfig,
    light: Vec<(f64, f64)>,
    duration_s: f64,
    events: Option<Vec<f64>>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let light = light_trace(light)?;
    let events = event_trace(events)?;
    let cfg = config.inner.clone();
    let log = py
        .detach(|| {
            core::sim::run_node_with(
                &cfg,
                &light,
                &events,
                duration_s,
                seed,
                Recording::SummaryOnly,
            )
        })
        .map_err(value_error)?;
    to_py(py, &log.ledger_json())
}

/// Simulates a deployment given as TOML text and per-node light traces.
#[pyfunction]
#[pyo3(signature = (config_toml, light, duration_s, seed = 0))]
fn run_deployment<'py>(
    py: Python<'py>,
    config_toml: &str,
    light: BTreeMap<String, Vec<(f64, f64)>>,
    duration_s: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = DeploymentConfig::from_toml_str(config_toml, "<string>").map_err(value_error)?;
    let traces = light
        .into_iter()
        .map(|(id, samples)| Ok((id, NodeTraces::light_only(light_trace(samples)?))))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let report = py
        .detach(|| core::run_deployment(&cfg, &traces, duration_s, seed, Recording::SummaryOnly))
        .map_err(value_error)?;
    to_py(py, &report.summary_json())
}

#[pymodule]
fn enharvest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQosTable>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyNodeConfig>()?;
    m.add_function(wrap_pyfunction!(harvest_power, m)?)?;
    m.add_function(wrap_pyfunction!(stored_energy, m)?)?;
    m.add_function(wrap_pyfunction!(run_node, m)?)?;
    m.add_function(wrap_pyfunction!(run_deployment, m)?)?;
    Ok(())
}
