//! Crate-internal odds and ends: a tiny FNV hash for provenance records and
//! an env-var-gated logger (`CODED_MARL_LOG=off|error|warn|info|debug`).

use std::sync::OnceLock;

/// FNV-1a over bytes; used for config hashes and test fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// FNV-1a over the little-endian bit patterns of a float slice.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    static LEVEL: OnceLock<LogLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("CODED_MARL_LOG").as_deref() {
        Ok("off") => LogLevel::Off,
        Ok("error") => LogLevel::Error,
        Ok("info") => LogLevel::Info,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Warn,
    })
}

pub fn log(level: LogLevel, msg: &str) {
    if level <= log_level() && level != LogLevel::Off {
        eprintln!("[coded-marl] {msg}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_differs_on_input() {
        assert_ne!(fnv1a64(b"abc"), fnv1a64(b"abd"));
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn float_hash_sees_bit_patterns() {
        assert_ne!(hash_f64s(&[0.0]), hash_f64s(&[-0.0]));
        assert_eq!(hash_f64s(&[1.5, 2.5]), hash_f64s(&[1.5, 2.5]));
    }
}
