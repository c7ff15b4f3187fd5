//! Loopback TCP transport: one controller, one socket per learner.
//!
//! The controller keeps the virtual-clock semantics of the simulator: it
//! computes the same [`RoundPlan`] (straggler draw, arrival order, earliest
//! decodable prefix) and waits until every member of that prefix has
//! actually responded, then decodes exactly that set. Responses outside the
//! prefix are ignored, so the decoded parameters are bitwise identical to
//! the simulator's for the same inputs. Learners that die mid-round are
//! treated as permanently missing and the prefix is re-planned around them;
//! if no decodable prefix survives, the round fails.
//!
//! Stragglers are realized on the learner side: the controller tells each
//! drawn straggler to sleep `t_s` seconds before computing. The sleep is
//! chunked so a round acknowledgement can cancel it early, and learners
//! poll for acknowledgements between per-agent updates as well.

use std::collections::{BTreeMap, BTreeSet};
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use crate::coding::{AssignmentMatrix, ResponseSet, StackedParams};
use crate::maddpg::{learner_update_with_abort, Hyper, Minibatch, NetSpec};
use crate::util::{log, LogLevel};

use super::wire::{self, Msg};
use super::{
    decode_round, ComputeCostModel, OrchestraError, RoundExecutor, RoundPlan, RoundTrace,
    StragglerModel,
};

/// Serves one learner: binds `addr`, accepts a single controller
/// connection, and answers Work messages until the controller disconnects.
pub fn serve_learner(
    addr: impl ToSocketAddrs,
    row: Vec<f64>,
    spec: NetSpec,
    hyper: Hyper,
) -> Result<(), OrchestraError> {
    let listener = TcpListener::bind(addr)?;
    serve_learner_on(listener, row, spec, hyper)
}

/// [`serve_learner`] over a pre-bound listener (useful for ephemeral
/// ports).
pub fn serve_learner_on(
    listener: TcpListener,
    row: Vec<f64>,
    spec: NetSpec,
    hyper: Hyper,
) -> Result<(), OrchestraError> {
    let (stream, peer) = listener.accept()?;
    log(
        LogLevel::Debug,
        &format!("learner serving controller at {peer}"),
    );
    serve_session(stream, &row, &spec, &hyper)
}

/// Keeps the listener alive across controller sessions: each grid cell
/// connects, runs its rounds, and disconnects.
pub fn serve_learner_forever(
    listener: TcpListener,
    row: Vec<f64>,
    spec: NetSpec,
    hyper: Hyper,
) -> Result<(), OrchestraError> {
    loop {
        let (stream, peer) = listener.accept()?;
        log(
            LogLevel::Debug,
            &format!("learner serving controller at {peer}"),
        );
        serve_session(stream, &row, &spec, &hyper)?;
    }
}

fn serve_session(
    mut stream: TcpStream,
    row: &[f64],
    spec: &NetSpec,
    hyper: &Hyper,
) -> Result<(), OrchestraError> {
    stream.set_nodelay(true).ok();
    loop {
        let msg = match wire::read_frame(&mut stream) {
            Ok(msg) => msg,
            // Controller hung up: clean shutdown.
            Err(OrchestraError::Io(e))
                if matches!(
                    e.kind(),
                    ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset
                ) =>
            {
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        match msg {
            Msg::Work {
                iteration,
                sleep_s,
                theta,
                batch,
            } => {
                let cancelled = sleep_with_cancel(&mut stream, iteration, sleep_s)?;
                if cancelled {
                    continue;
                }
                let result = learner_update_with_abort(row, &theta, &batch, hyper, spec, || {
                    ack_pending(&mut stream, iteration).unwrap_or(true)
                })?;
                if let Some(payload) = result {
                    let frame = wire::encode(&Msg::Response { iteration, payload });
                    wire::write_frame(&mut stream, &frame)?;
                }
            }
            // Stale acknowledgement of a round this learner already
            // finished.
            Msg::Ack { .. } => continue,
            Msg::Response { .. } => {
                return Err(OrchestraError::BadFrame(
                    "learner received a Response message".into(),
                ))
            }
        }
    }
}

/// Straggler sleep in short slices, cancelled early if the round closes.
fn sleep_with_cancel(
    stream: &mut TcpStream,
    iteration: u64,
    total_s: f64,
) -> Result<bool, OrchestraError> {
    if total_s <= 0.0 {
        return Ok(false);
    }
    let deadline = Instant::now() + Duration::from_secs_f64(total_s);
    loop {
        if ack_pending(stream, iteration)? {
            return Ok(true);
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(false);
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(50)));
    }
}

/// Non-blocking check for a round acknowledgement; consumes it when found.
/// Anything else stays queued for the main loop.
fn ack_pending(stream: &mut TcpStream, iteration: u64) -> Result<bool, OrchestraError> {
    stream.set_nonblocking(true)?;
    let mut header = [0u8; wire::PEEK_LEN];
    let peeked = match stream.peek(&mut header) {
        Ok(n) => n,
        Err(e) if e.kind() == ErrorKind::WouldBlock => 0,
        Err(e) => {
            stream.set_nonblocking(false)?;
            return Err(e.into());
        }
    };
    let mut found = false;
    if peeked == wire::PEEK_LEN {
        let (len, ty, it) = wire::parse_peek(&header);
        if wire::is_ack(ty) && it == iteration && len == wire::PEEK_LEN - 4 {
            let mut consume = [0u8; wire::PEEK_LEN];
            stream.set_nonblocking(false)?;
            std::io::Read::read_exact(stream, &mut consume)?;
            found = true;
        }
    }
    stream.set_nonblocking(false)?;
    Ok(found)
}

enum NetEvent {
    Message(usize, Msg),
    Lost(usize, String),
}

struct LearnerConn {
    stream: TcpStream,
    alive: bool,
}

/// Controller side of the TCP transport.
pub struct TcpController {
    c: AssignmentMatrix,
    straggler: StragglerModel,
    cost: ComputeCostModel,
    conns: Vec<LearnerConn>,
    events: mpsc::Receiver<NetEvent>,
    pub timeout: Duration,
}

impl TcpController {
    /// Connects to one endpoint per learner (index = learner id) and
    /// spawns a reader thread per connection.
    pub fn connect(
        addrs: &[String],
        c: AssignmentMatrix,
        straggler: StragglerModel,
        cost: ComputeCostModel,
        timeout: Duration,
    ) -> Result<Self, OrchestraError> {
        if addrs.len() != c.n_learners() {
            return Err(OrchestraError::BadFrame(format!(
                "{} endpoints for {} learners",
                addrs.len(),
                c.n_learners()
            )));
        }
        let (tx, events) = mpsc::channel();
        let mut conns = Vec::with_capacity(addrs.len());
        for (j, addr) in addrs.iter().enumerate() {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true).ok();
            let reader = stream.try_clone()?;
            let tx = tx.clone();
            std::thread::Builder::new()
                .name(format!("learner-reader-{j}"))
                .spawn(move || reader_loop(j, reader, tx))
                .expect("spawn reader thread");
            conns.push(LearnerConn {
                stream,
                alive: true,
            });
        }
        Ok(Self {
            c,
            straggler,
            cost,
            conns,
            events,
            timeout,
        })
    }

    fn send_to(&mut self, learner: usize, msg: &Msg) {
        if !self.conns[learner].alive {
            return;
        }
        let frame = wire::encode(msg);
        if let Err(e) = wire::write_frame(&mut self.conns[learner].stream, &frame) {
            log(
                LogLevel::Warn,
                &format!("learner {learner} send failed: {e}"),
            );
            self.conns[learner].alive = false;
        }
    }

    fn dead_set(&self) -> BTreeSet<usize> {
        self.conns
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.alive)
            .map(|(j, _)| j)
            .collect()
    }
}

fn reader_loop(learner: usize, mut stream: TcpStream, tx: mpsc::Sender<NetEvent>) {
    loop {
        match wire::read_frame(&mut stream) {
            Ok(msg) => {
                if tx.send(NetEvent::Message(learner, msg)).is_err() {
                    return;
                }
            }
            Err(e) => {
                tx.send(NetEvent::Lost(learner, e.to_string())).ok();
                return;
            }
        }
    }
}

impl RoundExecutor for TcpController {
    fn run_round(
        &mut self,
        iteration: u64,
        theta: &StackedParams,
        batch: &Minibatch,
        mean_reward: f64,
    ) -> Result<(StackedParams, RoundTrace), OrchestraError> {
        let plan = RoundPlan::new(&self.c, &self.straggler, &self.cost, iteration)?;
        let started = Instant::now();

        // Broadcast work; drawn stragglers are told to sleep t_s for real.
        for j in 0..self.c.n_learners() {
            let sleep_s = if plan.stragglers.contains(&j) {
                self.straggler.t_s
            } else {
                0.0
            };
            let msg = Msg::Work {
                iteration,
                sleep_s,
                theta: theta.clone(),
                batch: batch.clone(),
            };
            self.send_to(j, &msg);
        }

        let mut target = plan.replan_excluding(&self.c, &self.dead_set())?;
        let mut received: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        loop {
            if target.0.iter().all(|j| received.contains_key(j)) {
                break;
            }
            let waited = started.elapsed();
            if waited >= self.timeout {
                return Err(OrchestraError::Timeout {
                    waited_s: waited.as_secs_f64(),
                });
            }
            match self.events.recv_timeout(self.timeout - waited) {
                Ok(NetEvent::Message(
                    j,
                    Msg::Response {
                        iteration: it,
                        payload,
                    },
                )) if it == iteration => {
                    received.insert(j, payload);
                }
                // Stale response from an earlier round: the decode already
                // happened without it, drop it.
                Ok(NetEvent::Message(_, Msg::Response { .. })) => {}
                Ok(NetEvent::Message(j, other)) => {
                    return Err(OrchestraError::BadFrame(format!(
                        "unexpected message from learner {j}: {other:?}"
                    )));
                }
                Ok(NetEvent::Lost(j, detail)) => {
                    log(
                        LogLevel::Warn,
                        &format!("learner {j} lost mid-round: {detail}"),
                    );
                    self.conns[j].alive = false;
                    // Permanently missing: re-plan around the corpse. If no
                    // decodable prefix survives, surface the failure.
                    target = plan.replan_excluding(&self.c, &self.dead_set())?;
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(OrchestraError::Timeout {
                        waited_s: started.elapsed().as_secs_f64(),
                    });
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(OrchestraError::ConnectionLost {
                        learner: 0,
                        detail: "all reader threads gone".into(),
                    });
                }
            }
        }

        // Decode exactly the planned prefix; extra arrivals are ignored.
        let responses: ResponseSet = target
            .0
            .iter()
            .map(|j| (*j, received.remove(j).expect("prefix complete")))
            .collect();
        let next_theta = decode_round(&self.c, &responses)?;

        // Close the round: late workers cancel whatever is left.
        for j in 0..self.c.n_learners() {
            self.send_to(j, &Msg::Ack { iteration });
        }
        log(
            LogLevel::Debug,
            &format!(
                "round {iteration}: wall {:.3}s, virtual {:.3}s",
                started.elapsed().as_secs_f64(),
                target.1
            ),
        );

        let trace = RoundTrace {
            iteration,
            stragglers: plan.stragglers,
            arrival_times: plan.arrivals,
            decode_set: target.0,
            round_time: target.1,
            decode_ok: true,
            mean_reward,
        };
        Ok((next_theta, trace))
    }
}

impl Drop for TcpController {
    fn drop(&mut self) {
        for conn in &self.conns {
            conn.stream.shutdown(std::net::Shutdown::Both).ok();
        }
    }
}
