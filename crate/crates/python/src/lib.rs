//! Python module `anonmatch`.

use anonmatch as core;
use core::anonymize::{self, Permutation};
use core::attack::{self, AssignmentOptions, AttackKind};
use core::oracle::{self, PosteriorMethod};
use core::population;
use core::rng::{Role, StreamKey};
use core::stats::{self, ThresholdSpec};
use core::tracegen;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: core::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn samples(traces: &[tracegen::Trace]) -> Vec<Vec<u8>> {
    traces.iter().map(|t| t.samples().to_vec()).collect()
}

#[pyclass(name = "ModelSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModelSpec(population::ModelSpec);

#[pymethods]
impl PyModelSpec {
    #[staticmethod]
    fn two_state() -> Self {
        PyModelSpec(population::ModelSpec::TwoState)
    }

    #[staticmethod]
    fn r_state(r: usize) -> PyResult<Self> {
        population::ModelSpec::r_state(r).map(PyModelSpec).map_err(to_py)
    }

    #[staticmethod]
    fn markov(r: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        population::ModelSpec::markov(r, edges).map(PyModelSpec).map_err(to_py)
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.0.feature_dim()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.0.num_states()
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec({})", self.0.label())
    }
}

#[pyclass(name = "PriorSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPriorSpec(population::PriorSpec);

#[pymethods]
impl PyPriorSpec {
    #[staticmethod]
    fn uniform() -> Self {
        PyPriorSpec(population::PriorSpec::uniform())
    }

    #[staticmethod]
    fn truncated_uniform(low: f64, high: f64) -> Self {
        PyPriorSpec(population::PriorSpec::truncated_uniform(low, high))
    }

    fn with_bounds(&self, delta1: f64, delta2: f64) -> Self {
        PyPriorSpec(self.0.with_bounds(delta1, delta2))
    }
}

fn prior_or_default(prior: Option<&PyPriorSpec>) -> population::PriorSpec {
    prior.map(|p| p.0).unwrap_or_default()
}

#[pyclass(name = "TraceCollection", frozen)]
struct PyTraceCollection(tracegen::TraceCollection);

#[pymethods]
impl PyTraceCollection {
    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn training(&self) -> Vec<Vec<u8>> {
        samples(&self.0.training)
    }

    #[getter]
    fn actual(&self) -> Vec<Vec<u8>> {
        samples(&self.0.actual)
    }

    /// Free parameter vector of each user.
    #[getter]
    fn params(&self) -> Vec<Vec<f64>> {
        self.0.params.iter().map(|p| p.free_vector()).collect()
    }
}

#[pyclass(name = "AnonymizedCollection", frozen)]
struct PyAnonymized(anonymize::AnonymizedCollection);

fn method_from(name: &str) -> PyResult<PosteriorMethod> {
    match name {
        "enum" | "enumeration" => Ok(PosteriorMethod::Enumeration),
        "permanent" => Ok(PosteriorMethod::Permanent),
        other => Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    }
}

#[pymethods]
impl PyAnonymized {
    #[getter]
    fn training(&self) -> Vec<Vec<u8>> {
        samples(self.0.training())
    }

    #[getter]
    fn observed(&self) -> Vec<Vec<u8>> {
        samples(self.0.observed())
    }

    /// The hidden permutation: `hidden[u]` is user u's pseudonym.
    #[getter]
    fn hidden(&self) -> Vec<usize> {
        self.0.hidden().forward().to_vec()
    }

    fn distances_from(&self, target: usize) -> Vec<f64> {
        self.0.adversary_view().distances_from(target)
    }

    fn threshold_match<'py>(&self, py: Python<'py>, target: usize, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
        let out = attack::threshold_match(&self.0.adversary_view(), target, alpha).map_err(to_py)?;
        json_to_py(py, &out)
    }

    fn nearest_neighbor_match<'py>(&self, py: Python<'py>, target: usize) -> PyResult<Bound<'py, PyAny>> {
        let out = attack::nearest_neighbor_match(&self.0.adversary_view(), target).map_err(to_py)?;
        json_to_py(py, &out)
    }

    /// Pseudonym assigned to each user by a minimum-cost matching.
    #[pyo3(signature = (cap = 2000, greedy_beyond_cap = false))]
    fn full_assignment(&self, cap: usize, greedy_beyond_cap: bool) -> PyResult<Vec<Option<usize>>> {
        let opts = AssignmentOptions { cap, greedy_beyond_cap };
        let out = attack::full_assignment_match(&self.0.adversary_view(), opts).map_err(to_py)?;
        Ok(out.iter().map(|o| o.verdict.matched()).collect())
    }

    #[pyo3(signature = (target, method = "permanent", prior = None))]
    fn posterior<'py>(&self, py: Python<'py>, target: usize, method: &str, prior: Option<&PyPriorSpec>) -> PyResult<Bound<'py, PyAny>> {
        let summary = oracle::posterior(&self.0.adversary_view(), &prior_or_default(prior), target, method_from(method)?)
            .map_err(to_py)?;
        json_to_py(py, &summary)
    }
}

#[pyfunction]
#[pyo3(signature = (model, n, m, l, seed, prior = None))]
fn gen_collection(model: &PyModelSpec, n: usize, m: usize, l: usize, seed: u64, prior: Option<&PyPriorSpec>) -> PyResult<PyTraceCollection> {
    tracegen::gen_users(&model.0, &prior_or_default(prior), n, m, l, StreamKey::root(seed))
        .map(PyTraceCollection)
        .map_err(to_py)
}

/// Publishes the actual traces under a permutation; random from `seed`
/// unless `permutation` is given.
#[pyfunction]
#[pyo3(name = "anonymize", signature = (collection, seed = 0, permutation = None))]
fn anonymize_collection(collection: &PyTraceCollection, seed: u64, permutation: Option<Vec<usize>>) -> PyResult<PyAnonymized> {
    let pi = match permutation {
        Some(f) => Permutation::from_forward(f),
        None => anonymize::sample_permutation(collection.0.n, &mut StreamKey::root(seed).role(Role::Permutation).rng()),
    }
    .map_err(to_py)?;
    anonymize::apply(&collection.0, &pi).map(PyAnonymized).map_err(to_py)
}

#[pyfunction]
fn threshold(n: usize, alpha: f64, dim: usize) -> PyResult<f64> {
    stats::threshold(ThresholdSpec { n, alpha, dim }).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n, alpha, dim, c = 1.0))]
fn required_length(n: usize, alpha: f64, dim: usize, c: f64) -> PyResult<usize> {
    stats::required_length(n, alpha, c, dim).map_err(to_py)
}

#[pyfunction]
fn chernoff_bound(m: usize, delta: f64, p: f64) -> PyResult<f64> {
    stats::chernoff_bound(m, delta, p).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (model, delta, n, prior = None))]
fn separation_bound(model: &PyModelSpec, delta: f64, n: usize, prior: Option<&PyPriorSpec>) -> PyResult<f64> {
    population::separation_bound(&prior_or_default(prior), &model.0, delta, n).map_err(to_py)
}

/// Runs `trials` trials of one cell and returns the trial records as dicts.
#[pyfunction]
#[pyo3(signature = (model, n, m, l, alpha, seed, trials, attacks = vec!["threshold".to_string()], entropy = false))]
#[allow(clippy::too_many_arguments)]
fn run_cell<'py>(
    py: Python<'py>,
    model: &PyModelSpec,
    n: usize,
    m: usize,
    l: usize,
    alpha: f64,
    seed: u64,
    trials: u64,
    attacks: Vec<String>,
    entropy: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let kinds = attacks
        .iter()
        .map(|a| AttackKind::parse(a))
        .collect::<core::Result<Vec<_>>>()
        .map_err(to_py)?;
    let cell = core::experiments::CellConfig::new(model.0.clone(), n, m, l, alpha, seed)
        .with_attacks(&kinds)
        .with_entropy(entropy);
    let records = py.detach(|| core::experiments::run_cell(&cell, trials)).map_err(to_py)?;
    json_to_py(py, &records)
}

#[pymodule]
#[pyo3(name = "anonmatch")]
fn anonmatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyPriorSpec>()?;
    m.add_class::<PyTraceCollection>()?;
    m.add_class::<PyAnonymized>()?;
    m.add_function(wrap_pyfunction!(gen_collection, m)?)?;
    m.add_function(wrap_pyfunction!(anonymize_collection, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(required_length, m)?)?;
    m.add_function(wrap_pyfunction!(chernoff_bound, m)?)?;
    m.add_function(wrap_pyfunction!(separation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_cell, m)?)?;
    Ok(())
}
