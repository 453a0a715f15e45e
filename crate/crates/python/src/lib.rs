//! Python bindings: scenario runs and sweeps, the LWW map, Merkle helpers,
//! vector clock comparison and the exhaustive Paxos explorer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use quorumlab::antientropy::merkle::{self, MerkleTree};
use quorumlab::antientropy::{lww_merge, LwwMap};
use quorumlab::clocks::{vc_compare, LogicalTimestamp, VectorTimestamp};
use quorumlab::explore::{explore, PaxosModel};
use quorumlab::scenario::{self, Protocol};

fn err(e: quorumlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::Scenario::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::Scenario::parse(text).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn protocol(&self) -> &'static str {
        self.inner.protocol.name()
    }

    #[getter]
    fn n_processes(&self) -> usize {
        self.inner.sim.n_processes
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.sim.seed
    }

    /// Runs in memory; returns the report as a dict.
    #[pyo3(signature = (seed=None))]
    fn run<'py>(&self, py: Python<'py>, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
        let out = scenario::execute(&self.inner, seed).map_err(err)?;
        to_py(py, &out.report)
    }

    /// Runs and writes `<name>-<seed>.trace`; returns `(report, path)`.
    #[pyo3(signature = (trace_dir, seed=None, force=false))]
    fn run_to_file<'py>(
        &self,
        py: Python<'py>,
        trace_dir: PathBuf,
        seed: Option<u64>,
        force: bool,
    ) -> PyResult<(Bound<'py, PyAny>, PathBuf)> {
        let (report, path) = scenario::run(&self.inner, seed, &trace_dir, force).map_err(err)?;
        Ok((to_py(py, &report)?, path))
    }

    /// Trace of one run as JSON lines.
    #[pyo3(signature = (seed=None))]
    fn trace(&self, seed: Option<u64>) -> PyResult<Vec<String>> {
        let out = scenario::execute(&self.inner, seed).map_err(err)?;
        Ok(out.trace.iter().map(|r| r.to_line()).collect())
    }

    fn sweep<'py>(&self, py: Python<'py>, start: u64, end: u64) -> PyResult<Bound<'py, PyAny>> {
        let report = py
            .detach(|| scenario::sweep(&self.inner, start..end))
            .map_err(err)?;
        to_py(py, &report)
    }
}

#[pyfunction]
fn explain(protocol: &str) -> PyResult<String> {
    Ok(scenario::explain(Protocol::from_name(protocol).map_err(err)?))
}

#[pyfunction]
fn protocols() -> Vec<&'static str> {
    Protocol::ALL.iter().map(|p| p.name()).collect()
}

#[pyfunction]
fn quorum_size(n: usize) -> PyResult<usize> {
    quorumlab::election::quorum_size(n).map_err(err)
}

/// `"Before"`, `"After"`, `"Equal"` or `"Concurrent"`.
#[pyfunction]
fn vc_order(a: Vec<u64>, b: Vec<u64>) -> PyResult<String> {
    let a = VectorTimestamp::from_components(a, 0).map_err(err)?;
    let b = VectorTimestamp::from_components(b, 0).map_err(err)?;
    Ok(format!("{:?}", vc_compare(&a, &b).map_err(err)?))
}

#[pyclass(name = "LwwMap", skip_from_py_object)]
#[derive(Clone, Default)]
struct PyLwwMap {
    inner: LwwMap,
}

#[pymethods]
impl PyLwwMap {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    /// Returns whether the write won.
    fn put(&mut self, key: String, value: String, ts: u64, owner: usize) -> bool {
        self.inner.put(key, value, LogicalTimestamp::at(ts, owner))
    }

    fn delete(&mut self, key: String, ts: u64, owner: usize) -> bool {
        self.inner.delete(key, LogicalTimestamp::at(ts, owner))
    }

    fn get(&self, key: &str) -> Option<String> {
        self.inner.get(key).map(str::to_string)
    }

    fn merge(&self, other: &PyLwwMap) -> PyLwwMap {
        PyLwwMap {
            inner: lww_merge(&self.inner, &other.inner),
        }
    }

    fn dump(&self) -> String {
        self.inner.dump()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyLwwMap) -> bool {
        self.inner == other.inner
    }
}

fn tree(items: &BTreeMap<String, Vec<u8>>) -> PyResult<MerkleTree> {
    let items: Vec<(&String, &Vec<u8>)> = items.iter().collect();
    merkle::merkle_build(&items).map_err(err)
}

#[pyfunction]
fn merkle_root<'py>(py: Python<'py>, items: BTreeMap<String, Vec<u8>>) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &tree(&items)?.root()))
}

/// Keys whose values differ between two replicas, plus the number of hash
/// comparisons the pruned walk needed.
#[pyfunction]
fn merkle_diff(a: BTreeMap<String, Vec<u8>>, b: BTreeMap<String, Vec<u8>>) -> PyResult<(BTreeSet<String>, usize)> {
    let keys: BTreeSet<String> = a.keys().chain(b.keys()).cloned().collect();
    let ta = MerkleTree::padded(&keys, |k| a.get(k).map(Vec::as_slice));
    let tb = MerkleTree::padded(&keys, |k| b.get(k).map(Vec::as_slice));
    let d = merkle::merkle_diff(&ta, &tb).map_err(err)?;
    Ok((d.keys, d.comparisons))
}

/// Audit proof for `key`, verified against the tree root. Returns the proof's
/// path length.
#[pyfunction]
fn merkle_audit(items: BTreeMap<String, Vec<u8>>, key: &str) -> PyResult<(bool, usize)> {
    let t = tree(&items)?;
    let proof = merkle::merkle_audit_proof(&t, key).map_err(err)?;
    let value = &items[key];
    Ok((merkle::merkle_verify_audit(&t.root(), key, value, &proof), proof.path.len()))
}

/// Exhaustive single-value Paxos exploration with proposer 0.
#[pyfunction]
#[pyo3(signature = (n=3, depth=8, max_crashes=1, timeouts=true))]
fn explore_paxos<'py>(
    py: Python<'py>,
    n: usize,
    depth: usize,
    max_crashes: usize,
    timeouts: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let model = PaxosModel {
        n,
        proposals: vec![(0, "A".into())],
        max_crashes,
        timeouts,
    };
    let report = py.detach(|| explore(&model, model.init(), depth));
    let summary = serde_json::json!({
        "distinct_states": report.distinct_states,
        "transitions": report.transitions,
        "violation": report.counterexample.as_ref().map(|c| c.violation.clone()),
    });
    to_py(py, &summary)
}

#[pymodule]
#[pyo3(name = "quorumlab")]
fn quorumlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyLwwMap>()?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(protocols, m)?)?;
    m.add_function(wrap_pyfunction!(quorum_size, m)?)?;
    m.add_function(wrap_pyfunction!(vc_order, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_root, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_diff, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_audit, m)?)?;
    m.add_function(wrap_pyfunction!(explore_paxos, m)?)?;
    Ok(())
}
