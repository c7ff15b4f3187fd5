//! Diffing two per-iteration metric CSVs, for CI-style regression gates.

use std::path::Path;

use super::{BenchError, ITERATION_CSV_HEADER};

/// Parsed row of an iteration CSV (only the numeric columns that get
/// compared).
#[derive(Debug, Clone, PartialEq)]
struct Row {
    iteration: u64,
    mean_reward: f64,
    round_time: f64,
    theta_linf: f64,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: usize,
    /// Max absolute reward delta within each comparison window.
    pub window_reward_deltas: Vec<f64>,
    pub max_reward_delta: f64,
    pub max_theta_linf_delta: f64,
    /// mean(candidate round time) / mean(baseline round time); 1.0 when
    /// the baseline mean is zero.
    pub round_time_ratio: f64,
    pub tolerance: f64,
    /// True when both reward and parameter-fingerprint deltas fit the
    /// tolerance.
    pub within_tolerance: bool,
}

impl CompareReport {
    /// Process exit code for CI use.
    pub fn exit_code(&self) -> i32 {
        if self.within_tolerance {
            0
        } else {
            1
        }
    }
}

fn parse_csv(path: &Path) -> Result<Vec<Row>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| BenchError::SchemaMismatch(format!("{}: empty file", path.display())))?;
    if header != ITERATION_CSV_HEADER {
        return Err(BenchError::SchemaMismatch(format!(
            "{}: header {header:?} != {ITERATION_CSV_HEADER:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(BenchError::SchemaMismatch(format!(
                "{}:{}: {} fields",
                path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            BenchError::SchemaMismatch(format!(
                "{}:{}: unparsable {what}",
                path.display(),
                lineno + 2
            ))
        };
        rows.push(Row {
            iteration: fields[0].parse().map_err(|_| bad("iteration"))?,
            mean_reward: fields[1].parse().map_err(|_| bad("mean_reward"))?,
            round_time: fields[2].parse().map_err(|_| bad("round_time"))?,
            theta_linf: fields[5].parse().map_err(|_| bad("theta_linf"))?,
        });
    }
    Ok(rows)
}

/// Compares two iteration CSVs row by row. Reward deltas are reported per
/// `window` iterations (max within each window) and overall; round times
/// as a mean ratio. Exceeding `tolerance` on the reward or the parameter
/// fingerprint flips the exit code.
pub fn compare(
    baseline: &Path,
    candidate: &Path,
    tolerance: f64,
    window: usize,
) -> Result<CompareReport, BenchError> {
    let base = parse_csv(baseline)?;
    let cand = parse_csv(candidate)?;
    if base.len() != cand.len() {
        return Err(BenchError::SchemaMismatch(format!(
            "row counts differ: {} vs {}",
            base.len(),
            cand.len()
        )));
    }
    for (b, c) in base.iter().zip(&cand) {
        if b.iteration != c.iteration {
            return Err(BenchError::SchemaMismatch(format!(
                "iteration column diverges: {} vs {}",
                b.iteration, c.iteration
            )));
        }
    }
    let window = window.max(1);
    let mut window_reward_deltas = Vec::new();
    for chunk in base.chunks(window).zip(cand.chunks(window)) {
        let delta = chunk
            .0
            .iter()
            .zip(chunk.1)
            .map(|(b, c)| (b.mean_reward - c.mean_reward).abs())
            .fold(0.0f64, f64::max);
        window_reward_deltas.push(delta);
    }
    let max_reward_delta = window_reward_deltas.iter().copied().fold(0.0f64, f64::max);
    let max_theta_linf_delta = base
        .iter()
        .zip(&cand)
        .map(|(b, c)| (b.theta_linf - c.theta_linf).abs())
        .fold(0.0f64, f64::max);
    let base_time: f64 = base.iter().map(|r| r.round_time).sum();
    let cand_time: f64 = cand.iter().map(|r| r.round_time).sum();
    let round_time_ratio = if base_time > 0.0 {
        cand_time / base_time
    } else {
        1.0
    };
    let within_tolerance = max_reward_delta <= tolerance && max_theta_linf_delta <= tolerance;
    Ok(CompareReport {
        rows: base.len(),
        window_reward_deltas,
        max_reward_delta,
        max_theta_linf_delta,
        round_time_ratio,
        tolerance,
        within_tolerance,
    })
}
