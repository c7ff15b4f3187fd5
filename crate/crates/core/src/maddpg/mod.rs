//! Deterministic manual-gradient MADDPG learner.
//!
//! Each agent `i` owns four networks: a policy `pi_i` over its local
//! observation, a centralized critic `Q_i` over all observations and
//! actions, and Polyak-averaged target copies of both. One learner pass
//! over an agent performs, in order, a critic descent step on the
//! temporal-difference loss, a policy ascent step along
//! `grad pi_i * grad_{a_i} Q_i`, and a target blend - all computed from the
//! broadcast parameter snapshot, so any two learners assigned the same
//! agent produce bitwise-identical results.
//!
//! The whole agent state flattens to one parameter block (policy, critic,
//! target policy, target critic, zero padding), which is the unit the
//! coding layer combines and the checkpoint format stores.

mod buffer;
mod checkpoint;
mod net;
mod update;

pub use buffer::{Minibatch, ReplayBuffer, Transition};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use net::{Dense, ForwardCache, Grads, Mlp, OutputActivation};
pub use update::{
    act, central_update, critic_update, learner_update, learner_update_with_abort, policy_update,
    target_update, update_agent,
};

use serde::{Deserialize, Serialize};

use crate::coding::StackedParams;
use crate::rng::stream;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MaddpgError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("tau must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferTooSmall { have: usize, need: usize },
}

/// Training hyperparameters. Plain SGD throughout: adaptive optimizers
/// carry per-parameter state that would break the requirement that
/// replicated learners agree bitwise from a shared snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub lr_critic: f64,
    pub lr_policy: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub noise_start: f64,
    pub noise_end: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr_critic: 1e-2,
            lr_policy: 1e-3,
            gamma: 0.95,
            tau: 0.99,
            batch_size: 64,
            buffer_capacity: 100_000,
            hidden: vec![64, 64],
            noise_start: 0.3,
            noise_end: 0.05,
        }
    }
}

impl Hyper {
    /// Exploration noise scale, annealed linearly over the training run.
    pub fn noise_at(&self, iteration: usize, max_iteration: usize) -> f64 {
        if max_iteration <= 1 {
            return self.noise_start;
        }
        let t = iteration as f64 / (max_iteration - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * t.clamp(0.0, 1.0)
    }
}

/// Network shapes shared by every agent of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
}

impl NetSpec {
    pub fn new(n_agents: usize, obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        Self {
            n_agents,
            obs_dim,
            act_dim,
            hidden: hidden.to_vec(),
        }
    }

    pub fn for_env(env: &crate::mpe::EnvSpec, hidden: &[usize]) -> Self {
        Self::new(env.n_agents, env.obs_len(), 2, hidden)
    }

    pub fn policy_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.obs_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.act_dim);
        dims
    }

    /// Critic input is every agent's observation followed by every agent's
    /// action; output is the scalar value.
    pub fn critic_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.n_agents * (self.obs_dim + self.act_dim)];
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }

    fn params_of(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn policy_param_len(&self) -> usize {
        Self::params_of(&self.policy_dims())
    }

    pub fn critic_param_len(&self) -> usize {
        Self::params_of(&self.critic_dims())
    }

    /// Unpadded length of one agent's flattened parameter block.
    pub fn block_len(&self) -> usize {
        2 * (self.policy_param_len() + self.critic_param_len())
    }
}

/// One agent's four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub policy: Mlp,
    pub critic: Mlp,
    pub target_policy: Mlp,
    pub target_critic: Mlp,
}

impl AgentNets {
    /// Fresh networks with fan-in scaled-uniform weights; targets start as
    /// exact copies of the live networks.
    pub fn init(spec: &NetSpec, seed: u64) -> Self {
        let policy = Mlp::init(&spec.policy_dims(), OutputActivation::Tanh, stream(seed, 0));
        let critic = Mlp::init(
            &spec.critic_dims(),
            OutputActivation::Linear,
            stream(seed, 1),
        );
        Self {
            target_policy: policy.clone(),
            target_critic: critic.clone(),
            policy,
            critic,
        }
    }

    /// Flattens `[policy, critic, target policy, target critic]` and
    /// zero-pads to `padded_len`.
    pub fn flatten(&self, padded_len: usize) -> Result<Vec<f64>, MaddpgError> {
        let mut out = Vec::with_capacity(padded_len);
        self.policy.flatten_into(&mut out);
        self.critic.flatten_into(&mut out);
        self.target_policy.flatten_into(&mut out);
        self.target_critic.flatten_into(&mut out);
        if out.len() > padded_len {
            return Err(MaddpgError::DimMismatch(format!(
                "block needs {} values but padded length is {padded_len}",
                out.len()
            )));
        }
        out.resize(padded_len, 0.0);
        Ok(out)
    }

    /// Rebuilds the four networks from a flattened block, ignoring any
    /// zero padding past the real parameters.
    pub fn unflatten(spec: &NetSpec, block: &[f64]) -> Result<Self, MaddpgError> {
        let mut nets = Self {
            policy: Mlp::zeros(&spec.policy_dims(), OutputActivation::Tanh),
            critic: Mlp::zeros(&spec.critic_dims(), OutputActivation::Linear),
            target_policy: Mlp::zeros(&spec.policy_dims(), OutputActivation::Tanh),
            target_critic: Mlp::zeros(&spec.critic_dims(), OutputActivation::Linear),
        };
        if block.len() < spec.block_len() {
            return Err(MaddpgError::DimMismatch(format!(
                "block has {} values, spec needs {}",
                block.len(),
                spec.block_len()
            )));
        }
        let mut off = 0;
        off += nets.policy.read_from(&block[off..])?;
        off += nets.critic.read_from(&block[off..])?;
        off += nets.target_policy.read_from(&block[off..])?;
        off += nets.target_critic.read_from(&block[off..])?;
        debug_assert_eq!(off, spec.block_len());
        Ok(nets)
    }
}

/// Initializes every agent's block and stacks them at a common padded
/// dimension.
pub fn init_stacked(spec: &NetSpec, seed: u64) -> Result<StackedParams, MaddpgError> {
    let d = spec.block_len();
    let blocks: Result<Vec<Vec<f64>>, MaddpgError> = (0..spec.n_agents)
        .map(|i| AgentNets::init(spec, stream(seed, i as u64)).flatten(d))
        .collect();
    StackedParams::new(blocks?).map_err(|e| MaddpgError::DimMismatch(e.to_string()))
}
