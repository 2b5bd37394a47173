//! Python module `ldqos`: transition matrices, decay rates, the constrained
//! minimization and the four overflow estimates.
//!
//! States are 0-based here, unlike the text file formats.

use ldqos_core::optimizer::{algorithm_a, algorithm_b};
use ldqos_core::simkit::QueueSimConfig;
use ldqos_core::{
    compute_empirical_measure, Error, EstimateRequest, LdConfig, ObjectiveParams, OptimizerConfig, StateLaw, StateTrace,
};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyNotImplementedError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Unsupported(_) => PyNotImplementedError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        Error::Numerical { .. } | Error::Boundary | Error::LineSearch { .. } => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

/// Row-stochastic matrix.
#[pyclass(frozen)]
struct TransitionMatrix(ldqos_core::TransitionMatrix);

#[pymethods]
impl TransitionMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self(ldqos_core::TransitionMatrix::from_rows(&rows).map_err(to_py)?))
    }

    #[getter]
    fn states(&self) -> usize {
        self.0.states()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.to_rows()
    }

    fn is_irreducible(&self) -> bool {
        self.0.is_irreducible()
    }

    fn stationary(&self) -> PyResult<Vec<f64>> {
        Ok(ldqos_core::stationary_distribution(&self.0)
            .map_err(to_py)?
            .iter()
            .copied()
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("TransitionMatrix({:?})", self.0.to_rows())
    }
}

/// Pair frequencies `q(i, j)` of an observed trace.
#[pyclass(frozen)]
struct EmpiricalMeasure {
    em: ldqos_core::EmpiricalMeasure,
    n: usize,
}

#[pymethods]
impl EmpiricalMeasure {
    #[staticmethod]
    fn from_trace(initial_state: usize, states: Vec<usize>, m: usize) -> PyResult<Self> {
        let trace = StateTrace::new(initial_state, states).map_err(to_py)?;
        let n = trace.len();
        Ok(Self {
            em: compute_empirical_measure(&trace, m).map_err(to_py)?,
            n,
        })
    }

    /// Measure with row weights equal to the stationary law of `qf`, as for
    /// an infinitely long trace; `n` is the nominal observation count.
    #[staticmethod]
    fn stationary(qf: &TransitionMatrix, n: usize) -> PyResult<Self> {
        let p1 = ldqos_core::stationary_distribution(&qf.0).map_err(to_py)?;
        let em = ldqos_core::EmpiricalMeasure::from_conditionals(p1.as_slice(), &qf.0).map_err(to_py)?;
        Ok(Self { em, n })
    }

    #[getter]
    fn n(&self) -> usize {
        self.n
    }

    fn frequencies(&self) -> Vec<Vec<f64>> {
        rows(self.em.frequencies())
    }

    fn mle(&self) -> PyResult<TransitionMatrix> {
        Ok(TransitionMatrix(ldqos_core::mle_transition(&self.em).map_err(to_py)?))
    }
}

/// Per-state arrival laws, a constant service rate and root-finding settings.
#[pyclass(frozen)]
struct Model {
    arr: ldqos_core::ArrivalModel,
    svc: ldqos_core::ServiceModel,
    ld: LdConfig,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (rates, service, poisson = false, theta_max = None))]
    fn new(rates: Vec<f64>, service: f64, poisson: bool, theta_max: Option<f64>) -> PyResult<Self> {
        let arr = if poisson {
            ldqos_core::ArrivalModel::new(rates.iter().map(|&mean| StateLaw::Poisson { mean }).collect())
        } else {
            ldqos_core::ArrivalModel::deterministic(&rates)
        }
        .map_err(to_py)?;
        let mut ld = LdConfig::default();
        if let Some(t) = theta_max {
            ld.theta_max = t;
        }
        ld.validate().map_err(to_py)?;
        Ok(Self {
            arr,
            svc: ldqos_core::ServiceModel::deterministic(service).map_err(to_py)?,
            ld,
        })
    }

    fn lambda_a(&self, theta: f64, p: &TransitionMatrix) -> PyResult<f64> {
        ldqos_core::lambda_a(theta, &p.0, &self.arr).map_err(to_py)
    }

    fn mean_arrival(&self, p: &TransitionMatrix) -> PyResult<f64> {
        ldqos_core::mean_arrival_rate(&p.0, &self.arr).map_err(to_py)
    }

    /// `"I1"`, `"I2"` or `"I3"`.
    fn region(&self, p: &TransitionMatrix) -> PyResult<String> {
        Ok(ldqos_core::classify_region(&p.0, &self.arr, &self.svc)
            .map_err(to_py)?
            .to_string())
    }

    fn theta_star(&self, p: &TransitionMatrix) -> PyResult<f64> {
        ldqos_core::theta_star(&p.0, &self.arr, &self.svc, &self.ld).map_err(to_py)
    }

    fn grad_theta_star(&self, p: &TransitionMatrix) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(
            &ldqos_core::grad_theta_star(&p.0, &self.arr, &self.svc, &self.ld).map_err(to_py)?,
        ))
    }
}

/// Perron root and left/right vectors of a nonnegative irreducible matrix.
#[pyfunction]
fn perron(a: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let m = a.len();
    if a.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let t = ldqos_core::perron(&DMatrix::from_fn(m, m, |i, j| a[i][j])).map_err(to_py)?;
    Ok((t.rho, t.u.iter().copied().collect(), t.v.iter().copied().collect()))
}

/// Minimizes `ell s theta*(p) + I3(p)` and returns the solve trace as a dict.
#[pyfunction]
#[pyo3(signature = (em, model, s, ell = 1, algorithm = "b", epsilon = None))]
fn optimize<'py>(
    py: Python<'py>,
    em: &EmpiricalMeasure,
    model: &Model,
    s: f64,
    ell: u32,
    algorithm: &str,
    epsilon: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let params = ObjectiveParams::new(ell, s, em.em.clone(), model.arr.clone(), model.svc, model.ld).map_err(to_py)?;
    let mut cfg = OptimizerConfig::default();
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    cfg.validate().map_err(to_py)?;
    let trace = py
        .detach(|| match algorithm {
            "a" | "A" => algorithm_a(&params, &cfg),
            "b" | "B" => algorithm_b(&params, &cfg),
            other => Err(Error::Input(format!("unknown algorithm `{other}`"))),
        })
        .map_err(to_py)?;
    json(py, &trace)
}

/// All four log-domain estimates as a dict.
#[pyfunction]
#[pyo3(signature = (em, model, buffer, mu = 0.0, n = None))]
fn estimate<'py>(
    py: Python<'py>,
    em: &EmpiricalMeasure,
    model: &Model,
    buffer: f64,
    mu: f64,
    n: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let req = EstimateRequest {
        em: em.em.clone(),
        n: n.unwrap_or(em.n),
        buffer,
        mu,
        arr: model.arr.clone(),
        svc: model.svc,
        ld: model.ld,
        cfg: OptimizerConfig::default(),
    };
    let report = py.detach(|| ldqos_core::estimate(&req)).map_err(to_py)?;
    json(py, &report)
}

/// `(initial_state, states)` of a sampled trace.
#[pyfunction]
fn generate_trace(p: &TransitionMatrix, n: usize, seed: u64) -> PyResult<(usize, Vec<usize>)> {
    let t = ldqos_core::generate_trace(&p.0, n, seed).map_err(to_py)?;
    Ok((t.initial_state, t.states))
}

/// Tail frequencies of the simulated queue as a list of dicts.
#[pyfunction]
#[pyo3(signature = (p, model, horizon, seed = 0, thresholds = None, replications = 1))]
fn simulate_queue<'py>(
    py: Python<'py>,
    p: &TransitionMatrix,
    model: &Model,
    horizon: u64,
    seed: u64,
    thresholds: Option<Vec<f64>>,
    replications: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = QueueSimConfig::new(p.0.clone(), model.arr.clone(), model.svc, horizon, seed);
    cfg.thresholds = thresholds;
    cfg.replications = replications;
    let est = py.detach(|| ldqos_core::simulate_queue(&cfg)).map_err(to_py)?;
    json(py, &est.points)
}

#[pymodule]
fn ldqos(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TransitionMatrix>()?;
    m.add_class::<EmpiricalMeasure>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(perron, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_queue, m)?)?;
    Ok(())
}
