//! Python bindings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gs::attack::{apply_attack as apply_spec, AttackKind, AttackSpec, AttackTarget, Channel, Schedule};
use gs::cli::{resolve_scenario, RunSummary};
use gs::converter::{power_flow as flow, thd as waveform_thd, clipped_sine};
use gs::engine::{run_sweep, run_with, RunOptions};
use gs::mitigation::{bess_step, check_bess_feasible, BessState as CoreBess};
use gs::scenario::ScenarioConfig;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let json = py.import("json")?;
    json.call_method1("loads", (v.to_string(),))
}

/// A loaded and validated scenario.
#[pyclass(name = "Scenario", module = "gridshield", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Loads a scenario file, or a bundled scenario by name.
    #[new]
    #[pyo3(signature = (spec, overrides = Vec::new()))]
    fn new(spec: &str, overrides: Vec<String>) -> PyResult<Self> {
        resolve_scenario(spec, &overrides)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn agent_count(&self) -> usize {
        self.inner.agent_count()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.sim.duration
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.sim.dt
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.sim.seed
    }

    fn attack_free(&self) -> Self {
        Self {
            inner: self.inner.attack_free(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, agents={}, attacks={}, duration={})",
            self.inner.name,
            self.inner.agent_count(),
            self.inner.attacks.len(),
            self.inner.sim.duration
        )
    }
}

/// Outcome of one simulation run.
#[pyclass(name = "RunResult", module = "gridshield")]
struct PyRunResult {
    csv: String,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    events: Vec<serde_json::Value>,
    summary: serde_json::Value,
    exit_code: i32,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn columns(&self) -> Vec<String> {
        self.columns.clone()
    }

    /// Numeric rows; status columns are encoded 0 = ON, 1 = OFF, 2 = RESTORING.
    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.rows.clone()
    }

    #[getter]
    fn exit_code(&self) -> i32 {
        self.exit_code
    }

    fn to_csv(&self) -> &str {
        &self.csv
    }

    fn events<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.events.iter().map(|e| json_to_py(py, e)).collect()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.summary)
    }

    /// Values of one column.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| value_err(format!("no column {name}")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[pyfunction]
fn run(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyRunResult> {
    let cfg = scenario.inner.clone();
    let out = py
        .detach(|| run_with(&cfg, RunOptions::default()))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let summary = RunSummary::from_run(&cfg, &out);
    let rows = out
        .record
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.t];
            for a in &r.agents {
                v.extend([a.v, a.f, a.p, a.q, a.thd, a.status as u8 as f64, f64::from(u8::from(a.flag))]);
            }
            v.extend([r.bess_soc, r.bess_p, r.consensus_err]);
            v
        })
        .collect();
    Ok(PyRunResult {
        csv: out.record.to_csv_string(),
        columns: out.record.columns(),
        rows,
        events: out
            .events
            .iter()
            .map(|e| serde_json::to_value(e).map_err(value_err))
            .collect::<PyResult<_>>()?,
        summary: serde_json::to_value(&summary).map_err(value_err)?,
        exit_code: summary.exit_status.code(),
    })
}

/// Sensitivity grid; returns one dict per cell.
#[pyfunction]
#[pyo3(signature = (scenario, additive, scaling, jobs = 1))]
fn sweep<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    additive: Vec<f64>,
    scaling: Vec<f64>,
    jobs: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = scenario.inner.clone();
    let result = py
        .detach(|| run_sweep(&cfg, &additive, &scaling, jobs))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    result
        .cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("a_a", c.additive)?;
            d.set_item("scale_factor", c.factor)?;
            d.set_item("dV_pu", c.dv_pu)?;
            d.set_item("df_hz", c.df_hz)?;
            d.set_item("diverged", c.diverged)?;
            Ok(d)
        })
        .collect()
}

/// `(P, Q)` through `z∠theta` from `v_i∠beta` into `v_g∠0`.
#[pyfunction]
fn power_flow(v_g: f64, v_i: f64, beta: f64, z: f64, theta: f64) -> PyResult<(f64, f64)> {
    flow(v_g, v_i, beta, z, theta).map_err(value_err)
}

/// Delivered value of `y` at `t` under a one-shot attack on `[start, end]`.
#[pyfunction]
#[pyo3(signature = (kind, magnitude, y, t, start, end))]
fn apply_attack(kind: &str, magnitude: f64, y: f64, t: f64, start: f64, end: f64) -> PyResult<f64> {
    let kind = match kind {
        "scaling" => AttackKind::Scaling,
        "additive" => AttackKind::Additive,
        "ramping" => AttackKind::Ramping,
        other => return Err(value_err(format!("unknown attack kind {other}"))),
    };
    let spec = AttackSpec {
        kind,
        magnitude,
        target: AttackTarget {
            agent: 0,
            channel: Channel::VMod,
        },
        start,
        end,
        schedule: Schedule::OneShot,
    };
    spec.validate().map_err(value_err)?;
    Ok(apply_spec(&spec, y, t))
}

/// THD of one period of a sine of amplitude `amplitude` clipped at `clip`.
#[pyfunction]
#[pyo3(signature = (amplitude, clip = 1.2, samples = 4096))]
fn clipped_thd(amplitude: f64, clip: f64, samples: usize) -> f64 {
    let wave: Vec<f64> = (0..samples)
        .map(|k| clipped_sine(amplitude, std::f64::consts::TAU * k as f64 / samples as f64, clip))
        .collect();
    waveform_thd(&wave)
}

/// Battery at the PCC; powers in W, capacity in Wh.
#[pyclass(name = "BessState", module = "gridshield", skip_from_py_object)]
#[derive(Clone)]
struct PyBess {
    inner: CoreBess,
}

#[pymethods]
impl PyBess {
    #[new]
    #[pyo3(signature = (p_max, soc, capacity_wh, soc_min = 0.2, soc_max = 0.95, p_min = 0.0))]
    fn new(p_max: f64, soc: f64, capacity_wh: f64, soc_min: f64, soc_max: f64, p_min: f64) -> PyResult<Self> {
        let inner = CoreBess::new(p_min, p_max, soc, soc_min, soc_max, capacity_wh);
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn soc(&self) -> f64 {
        self.inner.soc
    }

    #[getter]
    fn output(&self) -> f64 {
        self.inner.current_output
    }

    #[getter]
    fn limit_reached(&self) -> bool {
        self.inner.limit_reached
    }

    /// Discharges at `demand` W for `dt` s, in place.
    fn step(&mut self, demand: f64, dt: f64) {
        self.inner = bess_step(&self.inner, demand, dt);
    }

    fn feasible(&self, demand: f64, horizon: f64) -> bool {
        check_bess_feasible(&self.inner, demand, horizon).feasible
    }
}

#[pymodule]
fn gridshield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyBess>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(power_flow, m)?)?;
    m.add_function(wrap_pyfunction!(apply_attack, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_thd, m)?)?;
    Ok(())
}
