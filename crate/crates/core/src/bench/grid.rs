//! Grid execution and CSV emission.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use serde::Serialize;

use crate::coding::AssignmentMatrix;
use crate::maddpg::NetSpec;
use crate::orchestra::{
    run_training, serve_learner_on, Seeds, SimExecutor, StragglerModel, TcpController,
    TrainingConfig, TrainingRun,
};

use super::{BenchError, ExperimentConfig, SchemeSpec, StragglerCell, TransportKind};

/// Fixed column set of the per-iteration metric CSVs.
pub const ITERATION_CSV_HEADER: &str =
    "iteration,mean_reward,round_time,decode_ok,stragglers,theta_linf";

/// Fixed column set of the per-cell window summaries.
pub const WINDOW_CSV_HEADER: &str = "start_iteration,end_iteration,mean_reward,mean_round_time";

/// Fixed column set of the run-level summary.
pub const SUMMARY_CSV_HEADER: &str = "scheme,k,t_s,iterations,mean_round_time,mean_reward";

/// One finished (scheme, straggler-cell) run.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub scheme: String,
    pub k: usize,
    pub t_s: f64,
    pub csv: PathBuf,
    pub windows_csv: PathBuf,
    pub mean_round_time: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<CellResult>,
    pub summary_csv: PathBuf,
    pub sidecar: PathBuf,
}

fn cell_file_stem(scheme: &SchemeSpec, cell: &StragglerCell) -> String {
    format!("{}_k{}_ts{}", scheme.label(), cell.k, cell.t_s)
}

fn write_iteration_csv(path: &Path, run: &TrainingRun) -> Result<(), BenchError> {
    let mut out = String::new();
    out.push_str(ITERATION_CSV_HEADER);
    out.push('\n');
    for (trace, linf) in run.traces.iter().zip(&run.theta_linf) {
        let stragglers = trace
            .stragglers
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join("|");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            trace.iteration, trace.mean_reward, trace.round_time, trace.decode_ok, stragglers, linf
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_windows_csv(path: &Path, run: &TrainingRun) -> Result<(), BenchError> {
    let mut out = String::new();
    out.push_str(WINDOW_CSV_HEADER);
    out.push('\n');
    for w in &run.windows {
        writeln!(
            out,
            "{},{},{},{}",
            w.start_iteration, w.end_iteration, w.mean_reward, w.mean_round_time
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Runs every (scheme, straggler cell) combination of the config with
/// identical seeds and writes, under `out_dir`:
///
/// - `<scheme>_k<k>_ts<t_s>.csv` - per-iteration metrics,
/// - `<scheme>_k<k>_ts<t_s>_windows.csv` - windowed summaries,
/// - `summary.csv` - one row per cell,
/// - `run_meta.json` - config hash, full config, and the cell file map.
///
/// `stop` aborts between iterations (partial outputs are still written).
pub fn run_grid(
    config: &ExperimentConfig,
    out_dir: &Path,
    stop: Option<&AtomicBool>,
) -> Result<GridReport, BenchError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let env = config.env_spec()?;
    let spec = NetSpec::for_env(&env, &config.hyper.hidden);

    // TCP mode: bind the configured endpoints once up front. Each cell
    // spawns one-session learner threads on clones of these listeners (the
    // row differs per scheme) and tears the sessions down with its
    // controller.
    let listeners: Option<Vec<TcpListener>> = if config.transport == TransportKind::Tcp {
        let endpoints = config.tcp_endpoints.as_ref().expect("validated");
        let mut bound = Vec::with_capacity(endpoints.len());
        for addr in endpoints {
            bound.push(TcpListener::bind(addr.as_str())?);
        }
        Some(bound)
    } else {
        None
    };

    let mut cells = Vec::new();
    let mut summary = String::new();
    summary.push_str(SUMMARY_CSV_HEADER);
    summary.push('\n');
    let mut matrices = Vec::new();
    'grid: for scheme in &config.schemes {
        for cell in &config.stragglers {
            let c = scheme.build(config.learners, config.env.agents)?;
            // Exact matrix provenance for the sidecar (random draws and
            // default evaluation points included).
            matrices.push(serde_json::to_value(&c)?);
            let straggler = StragglerModel {
                k: cell.k,
                t_s: cell.t_s,
                seed: config.seeds.straggler,
            };
            let training = TrainingConfig {
                env: env.clone(),
                spec: spec.clone(),
                hyper: config.hyper.clone(),
                seeds: Seeds {
                    init: config.seeds.init,
                    env: config.seeds.env,
                    batch: config.seeds.batch,
                },
                max_iteration: config.max_iteration,
                episodes_per_iteration: config.episodes_per_iteration,
                reward_window: config.reward_window,
            };
            let run = match config.transport {
                TransportKind::Sim => {
                    let mut exec = SimExecutor::new(
                        c,
                        spec.clone(),
                        config.hyper.clone(),
                        straggler,
                        config.cost,
                    );
                    run_training(&training, &mut exec, stop, false)?
                }
                TransportKind::Tcp => {
                    let endpoints = config.tcp_endpoints.as_ref().expect("validated");
                    spawn_cell_learners(
                        listeners.as_ref().expect("tcp listeners"),
                        &c,
                        &spec,
                        config,
                    )?;
                    let mut exec = TcpController::connect(
                        endpoints,
                        c,
                        straggler,
                        config.cost,
                        Duration::from_secs_f64(config.timeout_s),
                    )?;
                    run_training(&training, &mut exec, stop, false)?
                }
            };

            let stem = cell_file_stem(scheme, cell);
            let csv = out_dir.join(format!("{stem}.csv"));
            let windows_csv = out_dir.join(format!("{stem}_windows.csv"));
            write_iteration_csv(&csv, &run)?;
            write_windows_csv(&windows_csv, &run)?;
            // Final parameters, also written on early shutdown: a stopped
            // run resumes from exactly these bytes.
            crate::maddpg::save_checkpoint(
                &out_dir.join(format!("{stem}.ckpt")),
                &run.theta,
                &spec,
                &config.hyper,
                run.traces.len() as u64,
            )?;
            let n = run.traces.len();
            let mean_round_time = if n == 0 {
                0.0
            } else {
                run.traces.iter().map(|t| t.round_time).sum::<f64>() / n as f64
            };
            let mean_reward = if n == 0 {
                0.0
            } else {
                run.traces.iter().map(|t| t.mean_reward).sum::<f64>() / n as f64
            };
            writeln!(
                summary,
                "{},{},{},{},{},{}",
                scheme.label(),
                cell.k,
                cell.t_s,
                n,
                mean_round_time,
                mean_reward
            )
            .expect("string write");
            cells.push(CellResult {
                scheme: scheme.label().to_string(),
                k: cell.k,
                t_s: cell.t_s,
                csv,
                windows_csv,
                mean_round_time,
                mean_reward,
            });
            if let Some(flag) = stop {
                if flag.load(std::sync::atomic::Ordering::Relaxed) {
                    break 'grid;
                }
            }
        }
    }

    let summary_csv = out_dir.join("summary.csv");
    std::fs::write(&summary_csv, summary)?;

    let sidecar = out_dir.join("run_meta.json");
    let meta = serde_json::json!({
        "config_hash": config.hash(),
        "config": config,
        "cells": cells.iter().zip(&matrices).map(|(c, matrix)| serde_json::json!({
            "scheme": c.scheme,
            "k": c.k,
            "t_s": c.t_s,
            "csv": c.csv.file_name().and_then(|s| s.to_str()),
            "windows_csv": c.windows_csv.file_name().and_then(|s| s.to_str()),
            "assignment_matrix": matrix,
        })).collect::<Vec<_>>(),
    });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;

    Ok(GridReport {
        cells,
        summary_csv,
        sidecar,
    })
}

/// Spawns one single-session learner thread per listener, each carrying
/// its row of the current cell's assignment matrix. The sessions end when
/// the cell's controller disconnects; the listeners stay bound for the
/// next cell.
fn spawn_cell_learners(
    listeners: &[TcpListener],
    c: &AssignmentMatrix,
    spec: &NetSpec,
    config: &ExperimentConfig,
) -> Result<(), BenchError> {
    for (j, listener) in listeners.iter().enumerate() {
        let listener = listener.try_clone()?;
        let row = c.row(j).to_vec();
        let spec = spec.clone();
        let hyper = config.hyper.clone();
        std::thread::Builder::new()
            .name(format!("learner-{j}"))
            .spawn(move || {
                serve_learner_on(listener, row, spec, hyper).ok();
            })
            .expect("spawn learner thread");
    }
    Ok(())
}
