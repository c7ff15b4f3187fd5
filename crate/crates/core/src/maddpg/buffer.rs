//! Replay buffer and minibatch sampling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::MaddpgError;
use crate::rng::DetRng;
use crate::util::hash_f64s;

/// One joint environment transition: per-agent observations, the joint
/// action taken, per-agent rewards, and the next observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
}

/// FIFO transition store with bounded capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends a transition, evicting the oldest one at capacity.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    /// Samples `batch_size` distinct transitions (indices chosen by a
    /// seeded draw without replacement, returned in index order).
    pub fn sample(&self, batch_size: usize, seed: u64) -> Result<Minibatch, MaddpgError> {
        if self.items.len() < batch_size {
            return Err(MaddpgError::BufferTooSmall {
                have: self.items.len(),
                need: batch_size,
            });
        }
        let pool: Vec<usize> = (0..self.items.len()).collect();
        let mut rng = DetRng::new(seed);
        let picked = rng.choose_k(&pool, batch_size);
        let transitions = picked.iter().map(|&i| self.items[i].clone()).collect();
        Ok(Minibatch { transitions, seed })
    }

    /// Order-sensitive content fingerprint, for determinism checks.
    pub fn fingerprint(&self) -> u64 {
        let mut flat = Vec::new();
        for t in &self.items {
            for o in &t.obs {
                flat.extend_from_slice(o);
            }
            for a in &t.actions {
                flat.extend_from_slice(a);
            }
            flat.extend_from_slice(&t.rewards);
            for o in &t.next_obs {
                flat.extend_from_slice(o);
            }
        }
        hash_f64s(&flat)
    }
}

/// A sampled batch plus the seed it was drawn with; the seed rides along so
/// the whole update input can be shipped to remote learners verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minibatch {
    pub transitions: Vec<Transition>,
    pub seed: u64,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}
