//! Length-prefixed binary framing for the controller/learner protocol.
//!
//! Frame: `u32 LE payload length | payload`. Payload starts with a one-byte
//! message type and the `u64 LE` iteration number; floats travel as raw
//! little-endian `f64` bits, so parameters and minibatches cross the wire
//! exactly and remote updates stay bitwise equal to local ones.

use std::io::{Read, Write};

use crate::coding::StackedParams;
use crate::maddpg::{Minibatch, Transition};

use super::OrchestraError;

const MSG_WORK: u8 = 1;
const MSG_RESPONSE: u8 = 2;
const MSG_ACK: u8 = 3;

/// Refuse frames past this size; a corrupted length prefix should fail
/// loudly instead of allocating gigabytes.
const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub enum Msg {
    /// Broadcast of one round's inputs. `sleep_s` realizes straggler
    /// injection on the learner side.
    Work {
        iteration: u64,
        sleep_s: f64,
        theta: StackedParams,
        batch: Minibatch,
    },
    /// Learner's coded combination for the round.
    Response { iteration: u64, payload: Vec<f64> },
    /// Round closed; learners drop any work still in flight for it.
    Ack { iteration: u64 },
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(ty: u8, iteration: u64) -> Self {
        let mut w = Self {
            buf: Vec::with_capacity(64),
        };
        w.buf.push(ty);
        w.u64(iteration);
        w
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for v in vs {
            self.f64(*v);
        }
    }

    fn finish(self) -> Vec<u8> {
        let mut frame = Vec::with_capacity(4 + self.buf.len());
        frame.extend_from_slice(&(self.buf.len() as u32).to_le_bytes());
        frame.extend_from_slice(&self.buf);
        frame
    }
}

struct Reader<'a> {
    data: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, off: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], OrchestraError> {
        if self.off + n > self.data.len() {
            return Err(OrchestraError::BadFrame(format!(
                "truncated frame: need {n} bytes at offset {}",
                self.off
            )));
        }
        let s = &self.data[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, OrchestraError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, OrchestraError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, OrchestraError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, OrchestraError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, OrchestraError> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn done(&self) -> Result<(), OrchestraError> {
        if self.off != self.data.len() {
            return Err(OrchestraError::BadFrame(format!(
                "{} trailing bytes",
                self.data.len() - self.off
            )));
        }
        Ok(())
    }
}

pub fn encode(msg: &Msg) -> Vec<u8> {
    match msg {
        Msg::Work {
            iteration,
            sleep_s,
            theta,
            batch,
        } => {
            let mut w = Writer::new(MSG_WORK, *iteration);
            w.f64(*sleep_s);
            w.u32(theta.n_blocks() as u32);
            w.u32(theta.dim() as u32);
            for block in theta.blocks() {
                for v in block {
                    w.f64(*v);
                }
            }
            w.u64(batch.seed);
            w.u32(batch.len() as u32);
            for t in &batch.transitions {
                w.u32(t.obs.len() as u32);
                for o in &t.obs {
                    w.f64s(o);
                }
                for a in &t.actions {
                    w.f64(a[0]);
                    w.f64(a[1]);
                }
                for r in &t.rewards {
                    w.f64(*r);
                }
                for o in &t.next_obs {
                    w.f64s(o);
                }
            }
            w.finish()
        }
        Msg::Response { iteration, payload } => {
            let mut w = Writer::new(MSG_RESPONSE, *iteration);
            w.f64s(payload);
            w.finish()
        }
        Msg::Ack { iteration } => Writer::new(MSG_ACK, *iteration).finish(),
    }
}

pub fn decode_payload(payload: &[u8]) -> Result<Msg, OrchestraError> {
    let mut r = Reader::new(payload);
    let ty = r.u8()?;
    let iteration = r.u64()?;
    let msg = match ty {
        MSG_WORK => {
            let sleep_s = r.f64()?;
            let n_blocks = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let mut blocks = Vec::with_capacity(n_blocks);
            for _ in 0..n_blocks {
                let mut block = Vec::with_capacity(dim);
                for _ in 0..dim {
                    block.push(r.f64()?);
                }
                blocks.push(block);
            }
            let theta =
                StackedParams::new(blocks).map_err(|e| OrchestraError::BadFrame(e.to_string()))?;
            let seed = r.u64()?;
            let b = r.u32()? as usize;
            let mut transitions = Vec::with_capacity(b);
            for _ in 0..b {
                let m = r.u32()? as usize;
                let mut obs = Vec::with_capacity(m);
                for _ in 0..m {
                    obs.push(r.f64s()?);
                }
                let mut actions = Vec::with_capacity(m);
                for _ in 0..m {
                    actions.push([r.f64()?, r.f64()?]);
                }
                let mut rewards = Vec::with_capacity(m);
                for _ in 0..m {
                    rewards.push(r.f64()?);
                }
                let mut next_obs = Vec::with_capacity(m);
                for _ in 0..m {
                    next_obs.push(r.f64s()?);
                }
                transitions.push(Transition {
                    obs,
                    actions,
                    rewards,
                    next_obs,
                });
            }
            Msg::Work {
                iteration,
                sleep_s,
                theta,
                batch: Minibatch { transitions, seed },
            }
        }
        MSG_RESPONSE => Msg::Response {
            iteration,
            payload: r.f64s()?,
        },
        MSG_ACK => Msg::Ack { iteration },
        other => {
            return Err(OrchestraError::BadFrame(format!(
                "unknown message type {other}"
            )))
        }
    };
    r.done()?;
    Ok(msg)
}

pub fn write_frame<W: Write>(stream: &mut W, frame: &[u8]) -> std::io::Result<()> {
    stream.write_all(frame)?;
    stream.flush()
}

/// Blocking read of one full frame.
pub fn read_frame<R: Read>(stream: &mut R) -> Result<Msg, OrchestraError> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_le_bytes(len_buf) as usize;
    if len > MAX_FRAME {
        return Err(OrchestraError::BadFrame(format!("frame of {len} bytes")));
    }
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    decode_payload(&payload)
}

/// Header bytes needed to classify a frame without consuming it:
/// length (4) + type (1) + iteration (8).
pub const PEEK_LEN: usize = 13;

/// Classifies a peeked header: `(payload_len, msg_type, iteration)`.
pub fn parse_peek(buf: &[u8; PEEK_LEN]) -> (usize, u8, u64) {
    let len = u32::from_le_bytes(buf[0..4].try_into().expect("4 bytes")) as usize;
    let ty = buf[4];
    let iteration = u64::from_le_bytes(buf[5..13].try_into().expect("8 bytes"));
    (len, ty, iteration)
}

pub fn is_ack(ty: u8) -> bool {
    ty == MSG_ACK
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_batch() -> Minibatch {
        Minibatch {
            transitions: vec![Transition {
                obs: vec![vec![0.25, -1.5], vec![3.5, 4.125]],
                actions: vec![[0.5, -0.5], [1.0, 0.0]],
                rewards: vec![-2.0, 7.75],
                next_obs: vec![vec![0.5, -3.0], vec![7.0, 8.25]],
            }],
            seed: 99,
        }
    }

    #[test]
    fn work_round_trip_exact() {
        let theta = StackedParams::new(vec![
            vec![1.0, f64::MIN_POSITIVE, -0.0],
            vec![std::f64::consts::PI, 1e300, -1e-300],
        ])
        .unwrap();
        let msg = Msg::Work {
            iteration: 5,
            sleep_s: 1.25,
            theta,
            batch: sample_batch(),
        };
        let frame = encode(&msg);
        let mut cursor = std::io::Cursor::new(frame);
        let back = read_frame(&mut cursor).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn response_and_ack_round_trip() {
        for msg in [
            Msg::Response {
                iteration: 3,
                payload: vec![1.5, -2.5, 0.0],
            },
            Msg::Ack { iteration: 9 },
        ] {
            let frame = encode(&msg);
            let mut cursor = std::io::Cursor::new(frame);
            assert_eq!(read_frame(&mut cursor).unwrap(), msg);
        }
    }

    #[test]
    fn peek_header_matches_frame() {
        let msg = Msg::Ack { iteration: 77 };
        let frame = encode(&msg);
        assert_eq!(frame.len(), PEEK_LEN);
        let (len, ty, it) = parse_peek(frame[..PEEK_LEN].try_into().unwrap());
        assert_eq!(len, 9);
        assert!(is_ack(ty));
        assert_eq!(it, 77);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut frame = encode(&Msg::Ack { iteration: 1 });
        // Lie about the length to include junk.
        frame.push(0xab);
        let len = (frame.len() - 4) as u32;
        frame[0..4].copy_from_slice(&len.to_le_bytes());
        let mut cursor = std::io::Cursor::new(frame);
        assert!(matches!(
            read_frame(&mut cursor).unwrap_err(),
            OrchestraError::BadFrame(_)
        ));
    }

    #[test]
    fn unknown_type_rejected() {
        let mut frame = encode(&Msg::Ack { iteration: 1 });
        frame[4] = 42;
        let mut cursor = std::io::Cursor::new(frame);
        assert!(matches!(
            read_frame(&mut cursor).unwrap_err(),
            OrchestraError::BadFrame(msg) if msg.contains("unknown")
        ));
    }
}
