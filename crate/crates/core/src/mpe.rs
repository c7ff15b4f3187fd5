//! Deterministic 2-D multi-agent particle environments.
//!
//! Four tasks over point-mass agents in the square `[-1.5, 1.5]^2`:
//!
//! - **Cooperative navigation**: `M` agents cover `M` landmarks; everyone
//!   shares one reward (negated landmark-coverage distance minus a penalty
//!   per colliding pair).
//! - **Predator-prey**: slow good agents chase faster adversaries around
//!   two static obstacle discs; a tag (good-adversary contact) pays the
//!   good team and charges the adversaries.
//! - **Physical deception**: good agents cover landmarks to hide which one
//!   is the target from a single adversary that wants to reach it.
//! - **Keep away**: both teams are scored by their team distance to the
//!   target; adversaries earn a bonus for camping on it.
//!
//! Dynamics are a damped double integrator stepped at a fixed `dt`, fully
//! deterministic in `(state, action)`; the only randomness is the seeded
//! placement at [`EnvSpec::reset`]. Agents `0..m-k` are the good team,
//! agents `m-k..m` the adversaries.

use serde::{Deserialize, Serialize};

use crate::rng::DetRng;

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.25;
pub const ACCEL_GAIN_GOOD: f64 = 5.0;
pub const ACCEL_GAIN_PREY: f64 = 6.5;
pub const SPEED_CAP_GOOD: f64 = 1.0;
pub const SPEED_CAP_PREY: f64 = 1.3;
pub const WORLD_BOUND: f64 = 1.5;
pub const COLLISION_RADIUS: f64 = 0.15;
pub const OBSTACLE_RADIUS: f64 = 0.2;
pub const PREDATOR_PREY_OBSTACLES: usize = 2;
pub const TAG_REWARD: f64 = 10.0;
pub const OCCUPANCY_BONUS: f64 = 1.0;
pub const DEFAULT_EPISODE_LEN: usize = 25;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MpeError {
    #[error("invalid roles for {kind:?}: m={m}, k={k}, l={l} ({reason})")]
    InvalidRoles {
        kind: EnvKind,
        m: usize,
        k: usize,
        l: usize,
        reason: String,
    },
    #[error("episode is over (step {step} of {max})")]
    EpisodeOver { step: usize, max: usize },
    #[error("joint action has {got} agent actions, expected {want}")]
    BadActionArity { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    CoopNav,
    PredatorPrey,
    PhysicalDeception,
    KeepAway,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::CoopNav => "coop_nav",
            EnvKind::PredatorPrey => "predator_prey",
            EnvKind::PhysicalDeception => "physical_deception",
            EnvKind::KeepAway => "keep_away",
        }
    }
}

/// Static description of an environment instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Total number of agents `m` (good + adversary).
    pub n_agents: usize,
    /// Number of adversaries `k` (the last `k` agent ids).
    pub n_adversaries: usize,
    /// Number of landmarks `l`.
    pub n_landmarks: usize,
    pub max_episode_len: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, m: usize, k: usize, l: usize) -> Result<Self, MpeError> {
        let invalid = |reason: &str| MpeError::InvalidRoles {
            kind,
            m,
            k,
            l,
            reason: reason.to_string(),
        };
        if m == 0 {
            return Err(invalid("need at least one agent"));
        }
        match kind {
            EnvKind::CoopNav => {
                if k != 0 {
                    return Err(invalid("cooperative navigation has no adversaries"));
                }
            }
            EnvKind::PredatorPrey | EnvKind::PhysicalDeception | EnvKind::KeepAway => {
                if k == 0 || k >= m {
                    return Err(invalid("need 1 <= k < m adversaries"));
                }
            }
        }
        if matches!(kind, EnvKind::PhysicalDeception | EnvKind::KeepAway) && l == 0 {
            return Err(invalid("need at least one landmark to hold the target"));
        }
        Ok(Self {
            kind,
            n_agents: m,
            n_adversaries: k,
            n_landmarks: l,
            max_episode_len: DEFAULT_EPISODE_LEN,
        })
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_episode_len = max_len;
        self
    }

    pub fn is_adversary(&self, agent: usize) -> bool {
        agent >= self.n_agents - self.n_adversaries
    }

    fn n_obstacles(&self) -> usize {
        match self.kind {
            EnvKind::PredatorPrey => PREDATOR_PREY_OBSTACLES,
            _ => 0,
        }
    }

    fn speed_cap(&self, agent: usize) -> f64 {
        if self.kind == EnvKind::PredatorPrey && self.is_adversary(agent) {
            SPEED_CAP_PREY
        } else {
            SPEED_CAP_GOOD
        }
    }

    fn accel_gain(&self, agent: usize) -> f64 {
        if self.kind == EnvKind::PredatorPrey && self.is_adversary(agent) {
            ACCEL_GAIN_PREY
        } else {
            ACCEL_GAIN_GOOD
        }
    }

    /// Fixed observation length: own velocity and position, then landmark,
    /// obstacle, and other-agent positions relative to the observer.
    pub fn obs_len(&self) -> usize {
        4 + 2 * (self.n_landmarks + self.n_obstacles()) + 2 * (self.n_agents - 1)
    }

    /// Seeds a fresh world: positions uniform in `[-1, 1]^2`, velocities
    /// zero, target landmark drawn uniformly where the task has one.
    pub fn reset(&self, seed: u64) -> WorldState {
        let mut rng = DetRng::new(seed);
        let draw_pos = |rng: &mut DetRng| {
            let x = rng.range_f64(-1.0, 1.0);
            let y = rng.range_f64(-1.0, 1.0);
            [x, y]
        };
        let agent_pos: Vec<[f64; 2]> = (0..self.n_agents).map(|_| draw_pos(&mut rng)).collect();
        let landmark_pos: Vec<[f64; 2]> =
            (0..self.n_landmarks).map(|_| draw_pos(&mut rng)).collect();
        let obstacle_pos: Vec<[f64; 2]> = (0..self.n_obstacles())
            .map(|_| draw_pos(&mut rng))
            .collect();
        let target_index = match self.kind {
            EnvKind::PhysicalDeception | EnvKind::KeepAway => {
                Some(rng.below(self.n_landmarks as u64) as usize)
            }
            _ => None,
        };
        WorldState {
            agent_pos,
            agent_vel: vec![[0.0, 0.0]; self.n_agents],
            landmark_pos,
            obstacle_pos,
            target_index,
            step_count: 0,
            rng_state: rng.state(),
        }
    }

    /// Advances the world one tick and returns the per-agent rewards.
    ///
    /// `vel' = (1 - damping) * vel + gain * force * dt`, clamped per
    /// component to the role's speed cap; `pos' = pos + vel' * dt`,
    /// reflected at the world boundary and pushed off obstacle discs.
    pub fn step(
        &self,
        state: &WorldState,
        action: &JointAction,
    ) -> Result<(WorldState, Vec<f64>), MpeError> {
        if state.step_count >= self.max_episode_len {
            return Err(MpeError::EpisodeOver {
                step: state.step_count,
                max: self.max_episode_len,
            });
        }
        if action.forces.len() != self.n_agents {
            return Err(MpeError::BadActionArity {
                got: action.forces.len(),
                want: self.n_agents,
            });
        }
        let mut next = state.clone();
        for i in 0..self.n_agents {
            let cap = self.speed_cap(i);
            let gain = self.accel_gain(i);
            for axis in 0..2 {
                let mut v =
                    (1.0 - DAMPING) * state.agent_vel[i][axis] + gain * action.forces[i][axis] * DT;
                v = v.clamp(-cap, cap);
                let mut p = state.agent_pos[i][axis] + v * DT;
                if p > WORLD_BOUND {
                    p = 2.0 * WORLD_BOUND - p;
                    v = -v;
                } else if p < -WORLD_BOUND {
                    p = -2.0 * WORLD_BOUND - p;
                    v = -v;
                }
                next.agent_vel[i][axis] = v;
                next.agent_pos[i][axis] = p;
            }
            for obstacle in &state.obstacle_pos {
                resolve_obstacle(&mut next.agent_pos[i], &mut next.agent_vel[i], obstacle);
            }
        }
        next.step_count = state.step_count + 1;
        let rewards = self.rewards(&next);
        Ok((next, rewards))
    }

    /// Observation of agent `i`: `[own vel, own pos, landmarks - pos,
    /// obstacles - pos, other agents - pos]`, flattened.
    pub fn observe(&self, state: &WorldState, agent: usize) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_len());
        obs.extend_from_slice(&state.agent_vel[agent]);
        obs.extend_from_slice(&state.agent_pos[agent]);
        let own = state.agent_pos[agent];
        for lm in &state.landmark_pos {
            obs.push(lm[0] - own[0]);
            obs.push(lm[1] - own[1]);
        }
        for ob in &state.obstacle_pos {
            obs.push(ob[0] - own[0]);
            obs.push(ob[1] - own[1]);
        }
        for (j, pos) in state.agent_pos.iter().enumerate() {
            if j != agent {
                obs.push(pos[0] - own[0]);
                obs.push(pos[1] - own[1]);
            }
        }
        obs
    }

    fn rewards(&self, state: &WorldState) -> Vec<f64> {
        let m = self.n_agents;
        let k = self.n_adversaries;
        let good = 0..(m - k);
        let advs = (m - k)..m;
        match self.kind {
            EnvKind::CoopNav => {
                // Shared: negated sum over landmarks of the closest agent's
                // distance, minus one per colliding pair.
                let mut r = 0.0;
                for lm in &state.landmark_pos {
                    let closest = state
                        .agent_pos
                        .iter()
                        .map(|p| dist(p, lm))
                        .fold(f64::INFINITY, f64::min);
                    r -= closest;
                }
                let mut collisions = 0usize;
                for i in 0..m {
                    for j in (i + 1)..m {
                        if dist(&state.agent_pos[i], &state.agent_pos[j]) < COLLISION_RADIUS {
                            collisions += 1;
                        }
                    }
                }
                r -= collisions as f64;
                vec![r; m]
            }
            EnvKind::PredatorPrey => {
                let mut tags = 0usize;
                for i in good.clone() {
                    for j in advs.clone() {
                        if dist(&state.agent_pos[i], &state.agent_pos[j]) < COLLISION_RADIUS {
                            tags += 1;
                        }
                    }
                }
                let tag_term = tags as f64 * TAG_REWARD;
                (0..m)
                    .map(|i| {
                        if self.is_adversary(i) {
                            // Prey: paid for keeping clear of the predators.
                            let nearest = good
                                .clone()
                                .map(|g| dist(&state.agent_pos[i], &state.agent_pos[g]))
                                .fold(f64::INFINITY, f64::min);
                            nearest - tag_term
                        } else {
                            let nearest = advs
                                .clone()
                                .map(|a| dist(&state.agent_pos[i], &state.agent_pos[a]))
                                .fold(f64::INFINITY, f64::min);
                            -nearest + tag_term
                        }
                    })
                    .collect()
            }
            EnvKind::PhysicalDeception => {
                let target = &state.landmark_pos[state.target_index.expect("deception target")];
                let good_term = good
                    .clone()
                    .map(|g| dist(&state.agent_pos[g], target))
                    .fold(f64::INFINITY, f64::min);
                let adv_term = advs
                    .clone()
                    .map(|a| dist(&state.agent_pos[a], target))
                    .fold(f64::INFINITY, f64::min);
                (0..m)
                    .map(|i| {
                        if self.is_adversary(i) {
                            -dist(&state.agent_pos[i], target)
                        } else {
                            -good_term + adv_term
                        }
                    })
                    .collect()
            }
            EnvKind::KeepAway => {
                let target = &state.landmark_pos[state.target_index.expect("keep-away target")];
                let good_team = good
                    .clone()
                    .map(|g| dist(&state.agent_pos[g], target))
                    .fold(f64::INFINITY, f64::min);
                let adv_team = advs
                    .clone()
                    .map(|a| dist(&state.agent_pos[a], target))
                    .fold(f64::INFINITY, f64::min);
                (0..m)
                    .map(|i| {
                        if self.is_adversary(i) {
                            let camping = dist(&state.agent_pos[i], target) < COLLISION_RADIUS;
                            -adv_team + if camping { OCCUPANCY_BONUS } else { 0.0 }
                        } else {
                            -good_team
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Pushes the agent out of an impassable disc and projects its velocity
/// onto the tangent so it slides instead of penetrating.
fn resolve_obstacle(pos: &mut [f64; 2], vel: &mut [f64; 2], center: &[f64; 2]) {
    let dx = pos[0] - center[0];
    let dy = pos[1] - center[1];
    let d = (dx * dx + dy * dy).sqrt();
    if d >= OBSTACLE_RADIUS {
        return;
    }
    let (nx, ny) = if d > 0.0 {
        (dx / d, dy / d)
    } else {
        (1.0, 0.0)
    };
    pos[0] = center[0] + nx * OBSTACLE_RADIUS;
    pos[1] = center[1] + ny * OBSTACLE_RADIUS;
    let radial = vel[0] * nx + vel[1] * ny;
    if radial < 0.0 {
        vel[0] -= radial * nx;
        vel[1] -= radial * ny;
    }
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Full world snapshot. Plain data: cloning and serializing it is the whole
/// story of checkpointing an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent_pos: Vec<[f64; 2]>,
    pub agent_vel: Vec<[f64; 2]>,
    pub landmark_pos: Vec<[f64; 2]>,
    pub obstacle_pos: Vec<[f64; 2]>,
    pub target_index: Option<usize>,
    pub step_count: usize,
    /// Residual RNG stream state after the reset draws.
    pub rng_state: u64,
}

/// One 2-D force per agent, every component clamped into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    forces: Vec<[f64; 2]>,
}

impl JointAction {
    pub fn new(forces: Vec<[f64; 2]>) -> Self {
        let forces = forces
            .into_iter()
            .map(|f| [f[0].clamp(-1.0, 1.0), f[1].clamp(-1.0, 1.0)])
            .collect();
        Self { forces }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            forces: vec![[0.0, 0.0]; m],
        }
    }

    pub fn forces(&self) -> &[[f64; 2]] {
        &self.forces
    }
}

/// One step of an episode trace, serializable to JSON lines for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: WorldState,
    pub actions: JointAction,
    pub rewards: Vec<f64>,
}

/// Writes one JSON object per line.
pub fn write_episode_jsonl<W: std::io::Write>(
    mut w: W,
    records: &[StepRecord],
) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSON-lines episode trace written by [`write_episode_jsonl`].
pub fn read_episode_jsonl(data: &str) -> serde_json::Result<Vec<StepRecord>> {
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
