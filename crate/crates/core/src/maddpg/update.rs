//! The three MADDPG update rules and the per-learner combination step.
//!
//! Everything here is a pure function of the broadcast parameter snapshot,
//! the minibatch, and the hyperparameters. Batch elements are always
//! reduced in index order and agents in ascending id, so replicated
//! learners agree bitwise on every block they share.

use super::net::{Grads, Mlp, OutputActivation};
use super::{AgentNets, Hyper, MaddpgError, Minibatch, NetSpec};
use crate::coding::StackedParams;
use crate::rng::DetRng;

/// Deterministic policy action for one agent plus seeded exploration noise,
/// clamped into `[-1, 1]^2`. `noise_scale = 0` is the pure policy output.
pub fn act(
    policy: &Mlp,
    obs: &[f64],
    noise_scale: f64,
    seed: u64,
) -> Result<[f64; 2], MaddpgError> {
    let out = policy.forward(obs)?;
    if out.len() != 2 {
        return Err(MaddpgError::DimMismatch(format!(
            "policy outputs {} values, expected a 2-D force",
            out.len()
        )));
    }
    let mut a = [out[0], out[1]];
    if noise_scale != 0.0 {
        let mut rng = DetRng::new(seed);
        a[0] += noise_scale * rng.gaussian();
        a[1] += noise_scale * rng.gaussian();
    }
    Ok([a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])
}

/// Concatenates all observations followed by all actions - the critic's
/// input layout.
fn joint_input(obs: &[Vec<f64>], actions: &[[f64; 2]]) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.iter().map(|o| o.len()).sum::<usize>() + 2 * actions.len());
    for o in obs {
        x.extend_from_slice(o);
    }
    for a in actions {
        x.extend_from_slice(a);
    }
    x
}

/// Offset of agent `i`'s action inside [`joint_input`].
fn action_offset(obs: &[Vec<f64>], agent: usize) -> usize {
    obs.iter().map(|o| o.len()).sum::<usize>() + 2 * agent
}

/// One SGD step on the temporal-difference loss
/// `(1/B) * sum_b (r_i + gamma * Qhat_i(s', pihat(s')) - Q_i(s, a))^2`.
/// The target term is a constant: no gradient flows through the target
/// networks.
pub fn critic_update(
    critic: &mut Mlp,
    target_critic: &Mlp,
    target_policies: &[Mlp],
    agent: usize,
    batch: &Minibatch,
    lr: f64,
    gamma: f64,
) -> Result<(), MaddpgError> {
    let b = batch.len();
    if b == 0 {
        return Ok(());
    }
    let inv_b = 1.0 / b as f64;
    let mut acc = Grads::zeros_like(critic);
    for t in &batch.transitions {
        // Next joint action under the target policies.
        let mut next_actions = Vec::with_capacity(target_policies.len());
        for (k, pi_hat) in target_policies.iter().enumerate() {
            let a = pi_hat.forward(&t.next_obs[k])?;
            if a.len() != 2 {
                return Err(MaddpgError::DimMismatch(
                    "target policy output is not 2-D".into(),
                ));
            }
            next_actions.push([a[0], a[1]]);
        }
        let q_next = target_critic.forward(&joint_input(&t.next_obs, &next_actions))?[0];
        let label = t.rewards[agent] + gamma * q_next;

        let cache = critic.forward_cached(&joint_input(&t.obs, &t.actions))?;
        let q = cache.output()[0];
        // d/dq of (label - q)^2, averaged over the batch.
        let upstream = [2.0 * (q - label) * inv_b];
        let (grads, _) = critic.backward(&cache, &upstream);
        acc.accumulate(&grads);
    }
    critic.apply_grads(&acc, lr);
    Ok(())
}

/// One gradient-ascent step on the surrogate
/// `(1/B) * sum_b Q_i(s, a_{-i}, pi_i(s_i))`: the batch supplies the other
/// agents' actions, agent `i`'s own action is re-evaluated through its
/// policy so the critic's action gradient chains into the policy weights.
pub fn policy_update(
    policy: &mut Mlp,
    critic: &Mlp,
    agent: usize,
    batch: &Minibatch,
    lr: f64,
) -> Result<(), MaddpgError> {
    let b = batch.len();
    if b == 0 {
        return Ok(());
    }
    let inv_b = 1.0 / b as f64;
    let mut acc = Grads::zeros_like(policy);
    for t in &batch.transitions {
        let pcache = policy.forward_cached(&t.obs[agent])?;
        let out = pcache.output();
        if out.len() != 2 {
            return Err(MaddpgError::DimMismatch("policy output is not 2-D".into()));
        }
        let mut actions = t.actions.clone();
        actions[agent] = [out[0], out[1]];

        let qcache = critic.forward_cached(&joint_input(&t.obs, &actions))?;
        let (_, dinput) = critic.backward(&qcache, &[inv_b]);
        let off = action_offset(&t.obs, agent);
        let upstream = [dinput[off], dinput[off + 1]];
        let (grads, _) = policy.backward(&pcache, &upstream);
        acc.accumulate(&grads);
    }
    // Ascent: negative step.
    policy.apply_grads(&acc, -lr);
    Ok(())
}

/// Polyak blend of both targets toward the live networks:
/// `theta_hat <- tau * theta_hat + (1 - tau) * theta`.
pub fn target_update(nets: &mut AgentNets, tau: f64) -> Result<(), MaddpgError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MaddpgError::InvalidTau(tau));
    }
    blend(&mut nets.target_policy, &nets.policy, tau);
    blend(&mut nets.target_critic, &nets.critic, tau);
    Ok(())
}

fn blend(target: &mut Mlp, live: &Mlp, tau: f64) {
    for (tl, ll) in target.layers.iter_mut().zip(&live.layers) {
        for (t, l) in tl.w.iter_mut().zip(&ll.w) {
            *t = tau * *t + (1.0 - tau) * l;
        }
        for (t, l) in tl.b.iter_mut().zip(&ll.b) {
            *t = tau * *t + (1.0 - tau) * l;
        }
    }
}

/// Reads just the target-policy segment out of a flattened agent block
/// (cheaper than rebuilding all four networks when only `pihat_k` is
/// needed).
fn read_target_policy(spec: &NetSpec, block: &[f64]) -> Result<Mlp, MaddpgError> {
    let off = spec.policy_param_len() + spec.critic_param_len();
    if block.len() < off + spec.policy_param_len() {
        return Err(MaddpgError::DimMismatch(format!(
            "block has {} values, target policy ends at {}",
            block.len(),
            off + spec.policy_param_len()
        )));
    }
    let mut pi = Mlp::zeros(&spec.policy_dims(), OutputActivation::Tanh);
    pi.read_from(&block[off..])?;
    Ok(pi)
}

/// Full per-agent update from the broadcast snapshot: critic step, policy
/// step, target blend, in that order. Returns the agent's updated block at
/// the snapshot's padded dimension.
pub fn update_agent(
    theta_all: &StackedParams,
    agent: usize,
    batch: &Minibatch,
    hyper: &Hyper,
    spec: &NetSpec,
) -> Result<Vec<f64>, MaddpgError> {
    if theta_all.n_blocks() != spec.n_agents {
        return Err(MaddpgError::DimMismatch(format!(
            "snapshot has {} blocks, spec expects {}",
            theta_all.n_blocks(),
            spec.n_agents
        )));
    }
    let mut nets = AgentNets::unflatten(spec, theta_all.block(agent))?;
    let target_policies: Vec<Mlp> = (0..spec.n_agents)
        .map(|k| read_target_policy(spec, theta_all.block(k)))
        .collect::<Result<_, _>>()?;
    critic_update(
        &mut nets.critic,
        &nets.target_critic,
        &target_policies,
        agent,
        batch,
        hyper.lr_critic,
        hyper.gamma,
    )?;
    let critic = nets.critic.clone();
    policy_update(&mut nets.policy, &critic, agent, batch, hyper.lr_policy)?;
    target_update(&mut nets, hyper.tau)?;
    nets.flatten(theta_all.dim())
}

/// Learner `j`'s whole pass: update every assigned agent (ascending id)
/// from the snapshot and accumulate `y_j += c[j][i] * theta_i'`.
/// `should_abort` is polled between agents; a `true` cancels the rest of
/// the round and yields `None`.
pub fn learner_update_with_abort(
    row: &[f64],
    theta_all: &StackedParams,
    batch: &Minibatch,
    hyper: &Hyper,
    spec: &NetSpec,
    mut should_abort: impl FnMut() -> bool,
) -> Result<Option<Vec<f64>>, MaddpgError> {
    if row.len() != theta_all.n_blocks() {
        return Err(MaddpgError::DimMismatch(format!(
            "assignment row covers {} agents, snapshot has {}",
            row.len(),
            theta_all.n_blocks()
        )));
    }
    let mut y = vec![0.0; theta_all.dim()];
    for (agent, &coeff) in row.iter().enumerate() {
        if coeff == 0.0 {
            continue;
        }
        if should_abort() {
            return Ok(None);
        }
        let block = update_agent(theta_all, agent, batch, hyper, spec)?;
        for (acc, v) in y.iter_mut().zip(&block) {
            *acc += coeff * v;
        }
    }
    Ok(Some(y))
}

/// [`learner_update_with_abort`] without a cancellation hook.
pub fn learner_update(
    row: &[f64],
    theta_all: &StackedParams,
    batch: &Minibatch,
    hyper: &Hyper,
    spec: &NetSpec,
) -> Result<Vec<f64>, MaddpgError> {
    Ok(
        learner_update_with_abort(row, theta_all, batch, hyper, spec, || false)?
            .expect("abort hook never fires"),
    )
}

/// Single-node reference: updates every agent directly from the snapshot.
pub fn central_update(
    theta_all: &StackedParams,
    batch: &Minibatch,
    hyper: &Hyper,
    spec: &NetSpec,
) -> Result<StackedParams, MaddpgError> {
    let blocks: Result<Vec<Vec<f64>>, MaddpgError> = (0..spec.n_agents)
        .map(|i| update_agent(theta_all, i, batch, hyper, spec))
        .collect();
    StackedParams::new(blocks?).map_err(|e| MaddpgError::DimMismatch(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maddpg::{init_stacked, Transition};

    fn tiny_spec() -> NetSpec {
        NetSpec::new(2, 3, 2, &[4])
    }

    fn tiny_batch(spec: &NetSpec, seed: u64) -> Minibatch {
        let mut rng = DetRng::new(seed);
        let obs = |rng: &mut DetRng| -> Vec<Vec<f64>> {
            (0..spec.n_agents)
                .map(|_| {
                    (0..spec.obs_dim)
                        .map(|_| rng.range_f64(-1.0, 1.0))
                        .collect()
                })
                .collect()
        };
        let transitions = (0..2)
            .map(|_| Transition {
                obs: obs(&mut rng),
                actions: (0..spec.n_agents)
                    .map(|_| [rng.range_f64(-1.0, 1.0), rng.range_f64(-1.0, 1.0)])
                    .collect(),
                rewards: (0..spec.n_agents)
                    .map(|_| rng.range_f64(-1.0, 1.0))
                    .collect(),
                next_obs: obs(&mut rng),
            })
            .collect();
        Minibatch { transitions, seed }
    }

    #[test]
    fn act_zero_noise_deterministic() {
        let pi = Mlp::init(&[3, 4, 2], OutputActivation::Tanh, 1);
        let obs = [0.2, -0.4, 0.8];
        let a = act(&pi, &obs, 0.0, 1).unwrap();
        let b = act(&pi, &obs, 0.0, 999).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, {
            let out = pi.forward(&obs).unwrap();
            [out[0], out[1]]
        });
    }

    #[test]
    fn act_zero_net_zero_action() {
        let pi = Mlp::zeros(&[3, 4, 2], OutputActivation::Tanh);
        assert_eq!(act(&pi, &[1.0, 2.0, 3.0], 0.0, 0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn act_always_in_unit_box() {
        let mut rng = DetRng::new(2);
        for trial in 0..1000 {
            let pi = Mlp::init(&[3, 4, 2], OutputActivation::Tanh, trial);
            let obs: Vec<f64> = (0..3).map(|_| rng.range_f64(-5.0, 5.0)).collect();
            let a = act(&pi, &obs, 0.5, trial * 7 + 1).unwrap();
            assert!(a[0].abs() <= 1.0 && a[1].abs() <= 1.0);
        }
    }

    #[test]
    fn act_noise_seeded() {
        let pi = Mlp::init(&[3, 4, 2], OutputActivation::Tanh, 1);
        let obs = [0.2, -0.4, 0.8];
        assert_eq!(
            act(&pi, &obs, 0.3, 5).unwrap(),
            act(&pi, &obs, 0.3, 5).unwrap()
        );
        assert_ne!(
            act(&pi, &obs, 0.3, 5).unwrap(),
            act(&pi, &obs, 0.3, 6).unwrap()
        );
    }

    #[test]
    fn act_rejects_bad_obs_len() {
        let pi = Mlp::init(&[3, 4, 2], OutputActivation::Tanh, 1);
        assert!(act(&pi, &[0.0; 5], 0.0, 0).is_err());
    }

    #[test]
    fn critic_update_zero_lr_is_identity() {
        let spec = tiny_spec();
        let nets = AgentNets::init(&spec, 1);
        let batch = tiny_batch(&spec, 2);
        let mut critic = nets.critic.clone();
        critic_update(
            &mut critic,
            &nets.target_critic,
            &[nets.target_policy.clone(), nets.target_policy.clone()],
            0,
            &batch,
            0.0,
            0.95,
        )
        .unwrap();
        assert_eq!(critic, nets.critic);
    }

    #[test]
    fn critic_update_no_gradient_at_zero_loss() {
        // Zero critic, zero rewards, gamma 0: every label and prediction is
        // zero, so even a large learning rate changes nothing.
        let spec = tiny_spec();
        let nets = AgentNets::init(&spec, 3);
        let mut batch = tiny_batch(&spec, 4);
        for t in &mut batch.transitions {
            t.rewards = vec![0.0; spec.n_agents];
        }
        let mut critic = Mlp::zeros(&spec.critic_dims(), OutputActivation::Linear);
        let before = critic.clone();
        critic_update(
            &mut critic,
            &Mlp::zeros(&spec.critic_dims(), OutputActivation::Linear),
            &[nets.target_policy.clone(), nets.target_policy.clone()],
            0,
            &batch,
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(critic, before);
    }

    #[test]
    fn policy_update_zero_lr_is_identity() {
        let spec = tiny_spec();
        let nets = AgentNets::init(&spec, 5);
        let batch = tiny_batch(&spec, 6);
        let mut policy = nets.policy.clone();
        policy_update(&mut policy, &nets.critic, 1, &batch, 0.0).unwrap();
        assert_eq!(policy, nets.policy);
    }

    #[test]
    fn policy_update_noop_when_critic_ignores_action() {
        // Zero the first-layer columns that read agent actions: the critic
        // becomes constant in a_i, so the chained gradient vanishes.
        let spec = tiny_spec();
        let nets = AgentNets::init(&spec, 7);
        let batch = tiny_batch(&spec, 8);
        let mut critic = nets.critic.clone();
        let obs_total = spec.n_agents * spec.obs_dim;
        let layer = &mut critic.layers[0];
        for o in 0..layer.out_dim {
            for c in obs_total..layer.in_dim {
                layer.w[o * layer.in_dim + c] = 0.0;
            }
        }
        let mut policy = nets.policy.clone();
        policy_update(&mut policy, &critic, 0, &batch, 0.5).unwrap();
        assert_eq!(policy, nets.policy);
    }

    #[test]
    fn target_update_convention_and_fixed_point() {
        let spec = tiny_spec();
        let mut nets = AgentNets::init(&spec, 9);
        // Targets equal live nets at init: Polyak blending is a fixed point.
        let before = nets.clone();
        target_update(&mut nets, 0.99).unwrap();
        assert_eq!(nets, before);

        // Convention: target 0, live 1, tau 0.9 -> target 0.1.
        for l in nets.target_policy.layers.iter_mut() {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        for l in nets.policy.layers.iter_mut() {
            l.w.iter_mut().for_each(|w| *w = 1.0);
            l.b.iter_mut().for_each(|b| *b = 1.0);
        }
        target_update(&mut nets, 0.9).unwrap();
        for l in &nets.target_policy.layers {
            assert!(l.w.iter().all(|&w| (w - 0.1).abs() < 1e-15));
        }
    }

    #[test]
    fn target_update_geometric_contraction() {
        let spec = tiny_spec();
        let mut nets = AgentNets::init(&spec, 10);
        // Perturb the target away from the live net, then blend repeatedly
        // with the live net frozen: the gap must shrink by exactly tau.
        for l in nets.target_policy.layers.iter_mut() {
            l.w.iter_mut().for_each(|w| *w += 1.0);
        }
        let tau = 0.75;
        let gap = |nets: &AgentNets| -> f64 {
            nets.target_policy
                .layers
                .iter()
                .zip(&nets.policy.layers)
                .flat_map(|(t, l)| t.w.iter().zip(&l.w))
                .map(|(t, l)| (t - l).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let gap0 = gap(&nets);
        let mut prev = gap0;
        for _ in 0..20 {
            target_update(&mut nets, tau).unwrap();
            let now = gap(&nets);
            assert!((now - tau * prev).abs() < 1e-9 * (1.0 + prev));
            prev = now;
        }
        // Closed form of the geometric decay after 20 blends.
        assert!((prev - tau.powi(20) * gap0).abs() < 1e-9 * (1.0 + gap0));
    }

    #[test]
    fn target_update_rejects_bad_tau() {
        let spec = tiny_spec();
        let mut nets = AgentNets::init(&spec, 11);
        assert_eq!(
            target_update(&mut nets, 0.0).unwrap_err(),
            MaddpgError::InvalidTau(0.0)
        );
        assert_eq!(
            target_update(&mut nets, 1.0).unwrap_err(),
            MaddpgError::InvalidTau(1.0)
        );
    }

    #[test]
    fn learner_selector_row_equals_direct_update() {
        let spec = tiny_spec();
        let theta = init_stacked(&spec, 12).unwrap();
        let batch = tiny_batch(&spec, 13);
        let hyper = Hyper {
            hidden: vec![4],
            ..Hyper::default()
        };
        let direct = update_agent(&theta, 1, &batch, &hyper, &spec).unwrap();
        let via_row = learner_update(&[0.0, 1.0], &theta, &batch, &hyper, &spec).unwrap();
        assert_eq!(direct, via_row);
    }

    #[test]
    fn replicated_learners_agree_bitwise() {
        let spec = tiny_spec();
        let theta = init_stacked(&spec, 14).unwrap();
        let batch = tiny_batch(&spec, 15);
        let hyper = Hyper {
            hidden: vec![4],
            ..Hyper::default()
        };
        let a = learner_update(&[1.0, 1.0], &theta, &batch, &hyper, &spec).unwrap();
        let b = learner_update(&[1.0, 1.0], &theta, &batch, &hyper, &spec).unwrap();
        assert_eq!(a, b);
        // Linearity: the combined response is the sum of the blocks.
        let t0 = update_agent(&theta, 0, &batch, &hyper, &spec).unwrap();
        let t1 = update_agent(&theta, 1, &batch, &hyper, &spec).unwrap();
        let sum: Vec<f64> = t0.iter().zip(&t1).map(|(x, y)| x + y).collect();
        assert_eq!(a, sum);
    }

    #[test]
    fn idle_row_yields_zero_vector() {
        let spec = tiny_spec();
        let theta = init_stacked(&spec, 16).unwrap();
        let batch = tiny_batch(&spec, 17);
        let hyper = Hyper {
            hidden: vec![4],
            ..Hyper::default()
        };
        let y = learner_update(&[0.0, 0.0], &theta, &batch, &hyper, &spec).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.len(), theta.dim());
    }

    #[test]
    fn abort_hook_cancels() {
        let spec = tiny_spec();
        let theta = init_stacked(&spec, 18).unwrap();
        let batch = tiny_batch(&spec, 19);
        let hyper = Hyper {
            hidden: vec![4],
            ..Hyper::default()
        };
        let got =
            learner_update_with_abort(&[1.0, 1.0], &theta, &batch, &hyper, &spec, || true).unwrap();
        assert_eq!(got, None);
    }

    #[test]
    fn central_update_matches_per_agent() {
        let spec = tiny_spec();
        let theta = init_stacked(&spec, 20).unwrap();
        let batch = tiny_batch(&spec, 21);
        let hyper = Hyper {
            hidden: vec![4],
            ..Hyper::default()
        };
        let central = central_update(&theta, &batch, &hyper, &spec).unwrap();
        for i in 0..2 {
            assert_eq!(
                central.block(i),
                update_agent(&theta, i, &batch, &hyper, &spec).unwrap()
            );
        }
    }
}
