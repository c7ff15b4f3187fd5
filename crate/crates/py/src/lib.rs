//! Python bindings for the coded distributed MARL toolkit.
//!
//! Exposes the assignment-matrix constructions with encode/decode and
//! tolerance analysis, the particle environments, and the benchmark grid
//! runner. Build with `cargo build -p coded-marl-py`, rename the produced
//! `libcodedmarl.so` to `codedmarl.so` (or let `python/smoke_test.py` do
//! it), and `import codedmarl`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coded_marl::bench;
use coded_marl::coding;
use coded_marl::mpe;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// N x M agent-to-learner assignment matrix.
#[pyclass(name = "AssignmentMatrix", frozen)]
struct PyAssignmentMatrix {
    inner: coding::AssignmentMatrix,
}

#[pymethods]
impl PyAssignmentMatrix {
    #[staticmethod]
    fn uncoded(n: usize, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: coding::build_uncoded(n, m).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn replication(n: usize, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: coding::build_replication(n, m).map_err(value_err)?,
        })
    }

    /// Vandermonde MDS matrix; `alphas` defaults to the built-in
    /// evaluation points.
    #[staticmethod]
    #[pyo3(signature = (n, m, alphas=None))]
    fn mds(n: usize, m: usize, alphas: Option<Vec<f64>>) -> PyResult<Self> {
        let alphas = alphas.unwrap_or_else(|| coding::default_alphas(m));
        Ok(Self {
            inner: coding::build_mds(n, m, &alphas).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, m, p_m=0.8, seed=0))]
    fn random_sparse(n: usize, m: usize, p_m: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: coding::build_random_sparse(n, m, p_m, seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn ldpc(n: usize, m: usize, w: usize) -> PyResult<Self> {
        Ok(Self {
            inner: coding::build_ldpc(n, m, w).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: coding::AssignmentMatrix::from_json(json).map_err(value_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_learners()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme().name()
    }

    /// Entries as a list of rows.
    #[getter]
    fn entries(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_learners())
            .map(|j| self.inner.row(j).to_vec())
            .collect()
    }

    fn row(&self, learner: usize) -> PyResult<Vec<f64>> {
        if learner >= self.inner.n_learners() {
            return Err(value_err(format!("learner {learner} out of range")));
        }
        Ok(self.inner.row(learner).to_vec())
    }

    fn is_decodable(&self, learners: Vec<usize>) -> PyResult<bool> {
        let set: BTreeSet<usize> = learners.into_iter().collect();
        coding::is_decodable(&self.inner, &set).map_err(value_err)
    }

    /// `y_j = sum_i c[j][i] * blocks[i]` for the blocks this learner needs.
    fn encode_response(
        &self,
        learner: usize,
        blocks: BTreeMap<usize, Vec<f64>>,
    ) -> PyResult<Vec<f64>> {
        coding::encode_response(&self.inner, learner, &blocks).map_err(value_err)
    }

    /// Least-squares recovery from `{learner: payload}` responses.
    fn decode(&self, responses: BTreeMap<usize, Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let rs: coding::ResponseSet = responses.into_iter().collect();
        Ok(coding::decode(&self.inner, &rs)
            .map_err(value_err)?
            .into_blocks())
    }

    /// Linear-time peeling recovery (binary matrices only).
    fn peel_decode(&self, responses: BTreeMap<usize, Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let rs: coding::ResponseSet = responses.into_iter().collect();
        Ok(coding::peel_decode(&self.inner, &rs)
            .map_err(value_err)?
            .into_blocks())
    }

    /// Largest `k` such that losing any `k` responses keeps every round
    /// decodable.
    fn worst_case_tolerance(&self) -> PyResult<usize> {
        coding::worst_case_tolerance(&self.inner).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "AssignmentMatrix(scheme='{}', n={}, m={})",
            self.inner.scheme().name(),
            self.inner.n_learners(),
            self.inner.n_agents()
        )
    }
}

/// Immutable world snapshot.
#[pyclass(name = "WorldState", frozen)]
struct PyWorldState {
    inner: mpe::WorldState,
}

#[pymethods]
impl PyWorldState {
    #[getter]
    fn agent_pos(&self) -> Vec<[f64; 2]> {
        self.inner.agent_pos.clone()
    }

    #[getter]
    fn agent_vel(&self) -> Vec<[f64; 2]> {
        self.inner.agent_vel.clone()
    }

    #[getter]
    fn landmark_pos(&self) -> Vec<[f64; 2]> {
        self.inner.landmark_pos.clone()
    }

    #[getter]
    fn obstacle_pos(&self) -> Vec<[f64; 2]> {
        self.inner.obstacle_pos.clone()
    }

    #[getter]
    fn target_index(&self) -> Option<usize> {
        self.inner.target_index
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.inner.step_count
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(runtime_err)
    }
}

/// One of the four particle tasks.
#[pyclass(name = "Env", frozen)]
struct PyEnv {
    inner: mpe::EnvSpec,
}

fn parse_kind(kind: &str) -> PyResult<mpe::EnvKind> {
    match kind {
        "coop_nav" => Ok(mpe::EnvKind::CoopNav),
        "predator_prey" => Ok(mpe::EnvKind::PredatorPrey),
        "physical_deception" => Ok(mpe::EnvKind::PhysicalDeception),
        "keep_away" => Ok(mpe::EnvKind::KeepAway),
        other => Err(value_err(format!(
            "unknown env kind {other:?}; expected coop_nav | predator_prey | \
             physical_deception | keep_away"
        ))),
    }
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (kind, agents, adversaries=0, landmarks=0, max_episode_len=25))]
    fn new(
        kind: &str,
        agents: usize,
        adversaries: usize,
        landmarks: usize,
        max_episode_len: usize,
    ) -> PyResult<Self> {
        let spec = mpe::EnvSpec::new(parse_kind(kind)?, agents, adversaries, landmarks)
            .map_err(value_err)?
            .with_max_len(max_episode_len);
        Ok(Self { inner: spec })
    }

    #[getter]
    fn obs_len(&self) -> usize {
        self.inner.obs_len()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents
    }

    fn reset(&self, seed: u64) -> PyWorldState {
        PyWorldState {
            inner: self.inner.reset(seed),
        }
    }

    /// Steps the world; forces are one `(fx, fy)` pair per agent, clamped
    /// into [-1, 1]. Returns `(next_state, rewards)`.
    fn step(
        &self,
        state: &PyWorldState,
        forces: Vec<[f64; 2]>,
    ) -> PyResult<(PyWorldState, Vec<f64>)> {
        let action = mpe::JointAction::new(forces);
        let (next, rewards) = self.inner.step(&state.inner, &action).map_err(value_err)?;
        Ok((PyWorldState { inner: next }, rewards))
    }

    fn observe(&self, state: &PyWorldState, agent: usize) -> PyResult<Vec<f64>> {
        if agent >= self.inner.n_agents {
            return Err(value_err(format!("agent {agent} out of range")));
        }
        Ok(self.inner.observe(&state.inner, agent))
    }
}

/// Runs a scheme x straggler grid from a JSON experiment config, writing
/// CSVs, checkpoints, and the provenance sidecar under `out_dir`. Returns
/// a per-cell summary.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str, out_dir: &str) -> PyResult<Py<PyDict>> {
    let config = bench::ExperimentConfig::from_json(config_json).map_err(value_err)?;
    let report = bench::run_grid(&config, Path::new(out_dir), None).map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("config_hash", config.hash())?;
    out.set_item("summary_csv", report.summary_csv.to_string_lossy())?;
    out.set_item("sidecar", report.sidecar.to_string_lossy())?;
    let cells: Vec<Py<PyDict>> = report
        .cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("scheme", &c.scheme)?;
            d.set_item("k", c.k)?;
            d.set_item("t_s", c.t_s)?;
            d.set_item("csv", c.csv.to_string_lossy())?;
            d.set_item("mean_round_time", c.mean_round_time)?;
            d.set_item("mean_reward", c.mean_reward)?;
            Ok(d.unbind())
        })
        .collect::<PyResult<_>>()?;
    out.set_item("cells", cells)?;
    Ok(out.unbind())
}

/// Diffs two per-iteration metric CSVs; `within_tolerance` is the CI
/// verdict.
#[pyfunction]
#[pyo3(signature = (baseline, candidate, tol=0.0, window=10))]
fn compare_csv(
    py: Python<'_>,
    baseline: &str,
    candidate: &str,
    tol: f64,
    window: usize,
) -> PyResult<Py<PyDict>> {
    let report = bench::compare(Path::new(baseline), Path::new(candidate), tol, window)
        .map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("rows", report.rows)?;
    out.set_item("window_reward_deltas", &report.window_reward_deltas)?;
    out.set_item("max_reward_delta", report.max_reward_delta)?;
    out.set_item("max_theta_linf_delta", report.max_theta_linf_delta)?;
    out.set_item("round_time_ratio", report.round_time_ratio)?;
    out.set_item("within_tolerance", report.within_tolerance)?;
    Ok(out.unbind())
}

#[pymodule]
fn codedmarl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAssignmentMatrix>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyWorldState>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare_csv, m)?)?;
    Ok(())
}
