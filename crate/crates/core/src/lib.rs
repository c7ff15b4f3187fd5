//! Coded synchronous distributed learning for multi-agent reinforcement
//! learning.
//!
//! A central controller holds the parameters of `M` agents and farms the
//! per-iteration parameter updates out to `N >= M` learners. Instead of
//! assigning each agent to exactly one learner, the work is spread
//! redundantly according to an N x M assignment matrix `C`: learner `j`
//! updates every agent `i` with `c[j][i] != 0` and returns the linear
//! combination `y_j = sum_i c[j][i] * theta_i'`. The controller recovers all
//! updated parameters from any subset of responses whose rows of `C` have
//! rank `M`, so slow or failed learners (stragglers) no longer stall a
//! synchronous round.
//!
//! The crate is organized around that pipeline:
//!
//! - [`coding`] builds assignment matrices (uncoded, replication, MDS,
//!   random sparse, regular LDPC) and recovers parameters from partial
//!   response sets, including a linear-time peeling decoder for binary codes.
//! - [`mpe`] provides deterministic 2-D multi-agent particle environments
//!   (cooperative navigation, predator-prey, physical deception, keep away).
//! - [`maddpg`] implements a manual-gradient, bitwise-deterministic MADDPG
//!   learner: per-agent policy/critic networks with Polyak-averaged targets.
//! - [`orchestra`] runs the synchronous controller/learner protocol on a
//!   deterministic virtual-clock simulator or over loopback TCP, with
//!   seeded straggler injection.
//! - [`bench`] is the experiment harness: JSON configs, scheme x straggler
//!   grids, CSV metrics, and run comparison.
//!
//! Everything is driven by explicit seeds; repeated runs produce identical
//! results down to the byte.

pub mod bench;
pub mod coding;
pub mod linalg;
pub mod maddpg;
pub mod mpe;
pub mod orchestra;
pub mod rng;

pub(crate) mod util;
