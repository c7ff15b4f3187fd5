//! Virtual-clock round executor.
//!
//! The whole round happens on the simulated time axis of the
//! [`RoundPlan`]: responses "arrive" in (time, learner) order, the decode
//! is attempted after every arrival, and learner work scheduled after the
//! decode instant is cancelled - which here simply means it is never
//! computed. Only learners inside the decode set run [`learner_update`],
//! so a simulated round costs exactly the work the controller consumes.

use crate::coding::{AssignmentMatrix, ResponseSet, StackedParams};
use crate::maddpg::{learner_update, Hyper, Minibatch, NetSpec};

use super::{
    decode_round, ComputeCostModel, OrchestraError, RoundExecutor, RoundPlan, RoundTrace,
    StragglerModel,
};

/// In-process executor over the deterministic virtual clock.
pub struct SimExecutor {
    pub c: AssignmentMatrix,
    pub spec: NetSpec,
    pub hyper: Hyper,
    pub straggler: StragglerModel,
    pub cost: ComputeCostModel,
}

impl SimExecutor {
    pub fn new(
        c: AssignmentMatrix,
        spec: NetSpec,
        hyper: Hyper,
        straggler: StragglerModel,
        cost: ComputeCostModel,
    ) -> Self {
        Self {
            c,
            spec,
            hyper,
            straggler,
            cost,
        }
    }
}

impl RoundExecutor for SimExecutor {
    fn run_round(
        &mut self,
        iteration: u64,
        theta: &StackedParams,
        batch: &Minibatch,
        mean_reward: f64,
    ) -> Result<(StackedParams, RoundTrace), OrchestraError> {
        let plan = RoundPlan::new(&self.c, &self.straggler, &self.cost, iteration)?;
        let mut responses = ResponseSet::new();
        for &j in &plan.decode_set {
            let payload = learner_update(self.c.row(j), theta, batch, &self.hyper, &self.spec)?;
            responses.insert(j, payload);
        }
        let next_theta = decode_round(&self.c, &responses)?;
        let trace = RoundTrace {
            iteration,
            stragglers: plan.stragglers,
            arrival_times: plan.arrivals,
            decode_set: plan.decode_set,
            round_time: plan.round_time,
            decode_ok: true,
            mean_reward,
        };
        Ok((next_theta, trace))
    }
}
