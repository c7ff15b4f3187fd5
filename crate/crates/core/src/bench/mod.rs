//! Experiment harness: JSON configs, scheme x straggler grids, CSV
//! metrics, and run comparison.
//!
//! One config describes one environment plus a list of coding schemes and a
//! list of straggler cells; [`run_grid`] trains every (scheme, cell)
//! combination with the same seeds and writes per-iteration CSVs, windowed
//! summaries, and a provenance sidecar. [`compare`] diffs two metric CSVs
//! for use as a CI gate. Outputs carry no timestamps or ambient state:
//! rerunning a config byte-identically reproduces every file.

mod compare;
mod grid;

pub use compare::{compare, CompareReport};
pub use grid::{run_grid, CellResult, GridReport, ITERATION_CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::coding::{
    build_ldpc, build_mds, build_random_sparse, build_replication, build_uncoded, default_alphas,
    AssignmentMatrix, CodingError,
};
use crate::maddpg::Hyper;
use crate::mpe::{EnvKind, EnvSpec};
use crate::orchestra::{ComputeCostModel, OrchestraError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid config at {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Orchestra(#[from] OrchestraError),
    #[error(transparent)]
    Coding(#[from] CodingError),
}

fn invalid(path: &str, message: impl Into<String>) -> BenchError {
    BenchError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Environment block of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub agents: usize,
    #[serde(default)]
    pub adversaries: usize,
    #[serde(default)]
    pub landmarks: usize,
}

/// A coding scheme plus its construction parameters. Optional fields fall
/// back to the scheme defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeSpec {
    Uncoded,
    Replication,
    Mds {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alphas: Option<Vec<f64>>,
    },
    RandomSparse {
        #[serde(default = "default_p_m")]
        p_m: f64,
        #[serde(default)]
        seed: u64,
    },
    Ldpc {
        w: usize,
    },
}

fn default_p_m() -> f64 {
    0.8
}

impl SchemeSpec {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeSpec::Uncoded => "uncoded",
            SchemeSpec::Replication => "replication",
            SchemeSpec::Mds { .. } => "mds",
            SchemeSpec::RandomSparse { .. } => "random_sparse",
            SchemeSpec::Ldpc { .. } => "ldpc",
        }
    }

    pub fn build(&self, n: usize, m: usize) -> Result<AssignmentMatrix, CodingError> {
        match self {
            SchemeSpec::Uncoded => build_uncoded(n, m),
            SchemeSpec::Replication => build_replication(n, m),
            SchemeSpec::Mds { alphas } => match alphas {
                Some(a) => build_mds(n, m, a),
                None => build_mds(n, m, &default_alphas(m)),
            },
            SchemeSpec::RandomSparse { p_m, seed } => build_random_sparse(n, m, *p_m, *seed),
            SchemeSpec::Ldpc { w } => build_ldpc(n, m, *w),
        }
    }
}

/// One straggler grid cell: `k` learners delayed by `t_s` virtual seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StragglerCell {
    pub k: usize,
    pub t_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedsConfig {
    pub init: u64,
    pub env: u64,
    pub batch: u64,
    pub straggler: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Sim,
    Tcp,
}

/// The whole experiment description. See the crate README for a worked
/// example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    /// Total learner count `N`.
    pub learners: usize,
    pub schemes: Vec<SchemeSpec>,
    pub stragglers: Vec<StragglerCell>,
    #[serde(default)]
    pub cost: ComputeCostModel,
    #[serde(default)]
    pub hyper: Hyper,
    pub max_iteration: usize,
    pub episodes_per_iteration: usize,
    pub episode_length: usize,
    #[serde(default = "default_reward_window")]
    pub reward_window: usize,
    pub seeds: SeedsConfig,
    #[serde(default)]
    pub transport: TransportKind,
    /// One `host:port` per learner; required for the TCP transport.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_endpoints: Option<Vec<String>>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
}

fn default_reward_window() -> usize {
    250
}

fn default_timeout_s() -> f64 {
    30.0
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self, BenchError> {
        let cfg: ExperimentConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, BenchError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash over the canonical JSON form; recorded in the sidecar so every
    /// output row traces back to the exact config and seeds.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", crate::util::fnv1a64(canonical.as_bytes()))
    }

    pub fn env_spec(&self) -> Result<EnvSpec, BenchError> {
        EnvSpec::new(
            self.env.kind,
            self.env.agents,
            self.env.adversaries,
            self.env.landmarks,
        )
        .map(|e| e.with_max_len(self.episode_length))
        .map_err(|e| invalid("env", e.to_string()))
    }

    /// Field-by-field validation; the reported path names the offender.
    pub fn validate(&self) -> Result<(), BenchError> {
        self.env_spec()?;
        if self.learners < self.env.agents {
            return Err(invalid(
                "learners",
                format!(
                    "need at least {} learners for {} agents",
                    self.env.agents, self.env.agents
                ),
            ));
        }
        // An empty scheme or straggler list is a legal (empty) grid.
        for (i, scheme) in self.schemes.iter().enumerate() {
            scheme
                .build(self.learners, self.env.agents)
                .map_err(|e| invalid(&format!("schemes[{i}]"), e.to_string()))?;
        }
        for (i, cell) in self.stragglers.iter().enumerate() {
            if cell.k > self.learners {
                return Err(invalid(
                    &format!("stragglers[{i}].k"),
                    format!("{} stragglers exceed {} learners", cell.k, self.learners),
                ));
            }
            if cell.t_s.is_nan() || cell.t_s < 0.0 {
                return Err(invalid(&format!("stragglers[{i}].t_s"), "must be >= 0"));
            }
        }
        if !(self.cost.base.is_finite() && self.cost.per_agent.is_finite())
            || self.cost.base < 0.0
            || self.cost.per_agent < 0.0
        {
            return Err(invalid("cost", "base and per_agent must be >= 0"));
        }
        if self.episode_length == 0 {
            return Err(invalid("episode_length", "must be positive"));
        }
        if self.episodes_per_iteration == 0 {
            return Err(invalid("episodes_per_iteration", "must be positive"));
        }
        if self.max_iteration > 0
            && self.episodes_per_iteration * self.episode_length < self.hyper.batch_size
        {
            return Err(invalid(
                "episodes_per_iteration",
                format!(
                    "first iteration stores {} transitions but the minibatch needs {}",
                    self.episodes_per_iteration * self.episode_length,
                    self.hyper.batch_size
                ),
            ));
        }
        if self.reward_window == 0 {
            return Err(invalid("reward_window", "must be positive"));
        }
        if !(self.hyper.tau > 0.0 && self.hyper.tau < 1.0) {
            return Err(invalid("hyper.tau", "must lie strictly inside (0, 1)"));
        }
        if !(self.hyper.gamma > 0.0 && self.hyper.gamma <= 1.0) {
            return Err(invalid("hyper.gamma", "must lie inside (0, 1]"));
        }
        if self.hyper.batch_size == 0 {
            return Err(invalid("hyper.batch_size", "must be positive"));
        }
        if self.hyper.hidden.is_empty() || self.hyper.hidden.contains(&0) {
            return Err(invalid(
                "hyper.hidden",
                "need non-empty, non-zero hidden widths",
            ));
        }
        if !(self.hyper.lr_critic >= 0.0 && self.hyper.lr_policy >= 0.0) {
            return Err(invalid("hyper", "learning rates must be >= 0"));
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(invalid("timeout_s", "must be positive"));
        }
        if self.transport == TransportKind::Tcp {
            match &self.tcp_endpoints {
                None => return Err(invalid("tcp_endpoints", "required for the tcp transport")),
                Some(eps) if eps.len() != self.learners => {
                    return Err(invalid(
                        "tcp_endpoints",
                        format!("{} endpoints for {} learners", eps.len(), self.learners),
                    ));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}
