//! Parameter checkpoints: a JSON header followed by the flat stacked
//! parameters as little-endian 64-bit floats. Float bits survive a
//! save/load round trip exactly, so a resumed run continues the original
//! byte for byte.
//!
//! Layout: `u64 LE header length | header JSON | n_agents * dim f64 LE`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hyper, MaddpgError, NetSpec};
use crate::coding::StackedParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n_agents: usize,
    /// Padded block dimension actually stored per agent.
    pub dim: usize,
    pub net: NetSpec,
    /// Zero padding appended to each agent's real parameters.
    pub padding: Vec<usize>,
    pub hyper: Hyper,
    pub iteration: u64,
}

pub fn save_checkpoint(
    path: &Path,
    theta: &StackedParams,
    spec: &NetSpec,
    hyper: &Hyper,
    iteration: u64,
) -> std::io::Result<()> {
    let header = CheckpointHeader {
        n_agents: theta.n_blocks(),
        dim: theta.dim(),
        net: spec.clone(),
        padding: vec![theta.dim() - spec.block_len(); theta.n_blocks()],
        hyper: hyper.clone(),
        iteration,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    for block in theta.blocks() {
        for v in block {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()
}

pub fn load_checkpoint(path: &Path) -> Result<(StackedParams, CheckpointHeader), MaddpgError> {
    let io_err = |e: std::io::Error| MaddpgError::DimMismatch(format!("checkpoint read: {e}"));
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);
    let mut len_buf = [0u8; 8];
    f.read_exact(&mut len_buf).map_err(io_err)?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    let mut header_buf = vec![0u8; header_len];
    f.read_exact(&mut header_buf).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_buf)
        .map_err(|e| MaddpgError::DimMismatch(format!("checkpoint header: {e}")))?;
    let mut blocks = Vec::with_capacity(header.n_agents);
    let mut buf = [0u8; 8];
    for _ in 0..header.n_agents {
        let mut block = Vec::with_capacity(header.dim);
        for _ in 0..header.dim {
            f.read_exact(&mut buf).map_err(io_err)?;
            block.push(f64::from_le_bytes(buf));
        }
        blocks.push(block);
    }
    let theta = StackedParams::new(blocks).map_err(|e| MaddpgError::DimMismatch(e.to_string()))?;
    Ok((theta, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maddpg::init_stacked;

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let spec = NetSpec::new(2, 3, 2, &[4]);
        let theta = init_stacked(&spec, 33).unwrap();
        let hyper = Hyper::default();
        let dir = std::env::temp_dir().join("coded_marl_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.ckpt");
        save_checkpoint(&path, &theta, &spec, &hyper, 7).unwrap();
        let (back, header) = load_checkpoint(&path).unwrap();
        assert_eq!(back, theta);
        assert_eq!(header.iteration, 7);
        assert_eq!(header.net, spec);
        assert_eq!(header.hyper, hyper);
        assert_eq!(header.padding, vec![0, 0]);
        std::fs::remove_file(&path).ok();
    }
}
