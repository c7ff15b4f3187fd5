//! Shared helpers for the integration and acceptance suites: independent
//! loss evaluators (primal-only, used as finite-difference oracles), batch
//! generators, and comparison utilities.
//!
//! The loss evaluators deliberately re-implement the objective definitions
//! using only forward passes, so the backward paths under test never feed
//! their own oracle.

#![allow(dead_code)]

use coded_marl::maddpg::{Minibatch, Mlp, NetSpec, OutputActivation, Transition};
use coded_marl::rng::DetRng;

/// Joint critic input: all observations then all actions.
pub fn joint_input(obs: &[Vec<f64>], actions: &[[f64; 2]]) -> Vec<f64> {
    let mut x = Vec::new();
    for o in obs {
        x.extend_from_slice(o);
    }
    for a in actions {
        x.extend_from_slice(a);
    }
    x
}

/// Random batch of `b` transitions for a given net spec.
pub fn random_batch(spec: &NetSpec, b: usize, seed: u64) -> Minibatch {
    let mut rng = DetRng::new(seed);
    let obs_set = |rng: &mut DetRng| -> Vec<Vec<f64>> {
        (0..spec.n_agents)
            .map(|_| {
                (0..spec.obs_dim)
                    .map(|_| rng.range_f64(-1.0, 1.0))
                    .collect()
            })
            .collect()
    };
    let transitions = (0..b)
        .map(|_| Transition {
            obs: obs_set(&mut rng),
            actions: (0..spec.n_agents)
                .map(|_| [rng.range_f64(-1.0, 1.0), rng.range_f64(-1.0, 1.0)])
                .collect(),
            rewards: (0..spec.n_agents)
                .map(|_| rng.range_f64(-1.0, 1.0))
                .collect(),
            next_obs: obs_set(&mut rng),
        })
        .collect();
    Minibatch { transitions, seed }
}

/// Temporal-difference loss of agent `agent`'s critic given flat critic
/// parameters (targets held fixed).
pub fn critic_loss(
    critic_flat: &[f64],
    spec: &NetSpec,
    target_critic: &Mlp,
    target_policies: &[Mlp],
    agent: usize,
    batch: &Minibatch,
    gamma: f64,
) -> f64 {
    let mut critic = Mlp::zeros(&spec.critic_dims(), OutputActivation::Linear);
    critic.read_from(critic_flat).unwrap();
    let mut total = 0.0;
    for t in &batch.transitions {
        let next_actions: Vec<[f64; 2]> = target_policies
            .iter()
            .enumerate()
            .map(|(k, pi)| {
                let a = pi.forward(&t.next_obs[k]).unwrap();
                [a[0], a[1]]
            })
            .collect();
        let q_next = target_critic
            .forward(&joint_input(&t.next_obs, &next_actions))
            .unwrap()[0];
        let label = t.rewards[agent] + gamma * q_next;
        let q = critic.forward(&joint_input(&t.obs, &t.actions)).unwrap()[0];
        total += (label - q) * (label - q);
    }
    total / batch.len() as f64
}

/// Policy-ascent surrogate: mean critic value with agent `agent`'s batch
/// action replaced by its policy output, given flat policy parameters.
pub fn policy_surrogate(
    policy_flat: &[f64],
    spec: &NetSpec,
    critic: &Mlp,
    agent: usize,
    batch: &Minibatch,
) -> f64 {
    let mut policy = Mlp::zeros(&spec.policy_dims(), OutputActivation::Tanh);
    policy.read_from(policy_flat).unwrap();
    let mut total = 0.0;
    for t in &batch.transitions {
        let out = policy.forward(&t.obs[agent]).unwrap();
        let mut actions = t.actions.clone();
        actions[agent] = [out[0], out[1]];
        total += critic.forward(&joint_input(&t.obs, &actions)).unwrap()[0];
    }
    total / batch.len() as f64
}

pub fn flatten_net(net: &Mlp) -> Vec<f64> {
    let mut out = Vec::new();
    net.flatten_into(&mut out);
    out
}

/// Outcome of comparing an analytic gradient against central differences.
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central-difference comparison at `h = 1e-5`.
///
/// Coordinates where the `h` and `h/2` estimates disagree are skipped: the
/// rectifier makes the objective piecewise smooth, and a kink inside the
/// probe interval invalidates the finite-difference oracle at that
/// coordinate (not the gradient under test).
pub fn gradient_check(eval: &dyn Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> GradCheck {
    let h = 1e-5;
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut work = params.to_vec();
    for idx in 0..params.len() {
        let numeric = |step: f64, work: &mut Vec<f64>| -> f64 {
            work[idx] = params[idx] + step;
            let plus = eval(work);
            work[idx] = params[idx] - step;
            let minus = eval(work);
            work[idx] = params[idx];
            (plus - minus) / (2.0 * step)
        };
        let g_h = numeric(h, &mut work);
        let g_h2 = numeric(h / 2.0, &mut work);
        let scale = g_h.abs().max(g_h2.abs()).max(1.0);
        if (g_h - g_h2).abs() > 1e-5 * scale {
            skipped += 1;
            continue;
        }
        checked += 1;
        let denom = g_h2.abs().max(analytic[idx].abs()).max(1e-6);
        max_rel_err = max_rel_err.max((analytic[idx] - g_h2).abs() / denom);
    }
    GradCheck {
        max_rel_err,
        checked,
        skipped,
    }
}

/// Max absolute difference between two flat vectors.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
