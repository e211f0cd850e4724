//! Sweep execution: runs scenario cells in parallel, writes per-cell
//! exports and the sweep-level grid.json.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{export, ExportError};
use crate::simnet::{run, RunRecord, SimError};
use crate::tangle::NodeId;
use crate::theory;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cell {run_id} failed ({config}): {source}")]
    Cell {
        run_id: String,
        config: String,
        source: SimError,
    },
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub const RECORD_VERSION: u32 = 1;

/// Self-describing dump of one finished cell, for `sim walk`.
#[derive(Debug, Serialize, Deserialize)]
pub struct VersionedRecord {
    pub version: u32,
    pub record: RunRecord,
}

/// JSON value for a float that may be infinite.
fn jf(v: f64) -> Value {
    if v.is_infinite() {
        json!("inf")
    } else {
        json!(round6(v))
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Per-cell summary: config echo, per-phase aggregates, theory overlays.
pub fn build_summary(config: &ExperimentConfig, record: &RunRecord) -> Value {
    let p = &record.params;
    let honest = p.honest_nodes;
    let mean_pool = record.metrics.mean_honest_tip_pool(honest);
    let mut phases = Vec::new();
    for phase in &p.phases {
        let in_phase: Vec<f64> = mean_pool
            .iter()
            .filter(|(t, _)| *t >= phase.start && *t <= phase.end)
            .map(|(_, v)| *v)
            .collect();
        let mean = if in_phase.is_empty() {
            None
        } else {
            Some(in_phase.iter().sum::<f64>() / in_phase.len() as f64)
        };
        let max = in_phase.iter().cloned().fold(f64::NAN, f64::max);
        let fin = record
            .metrics
            .mean_finalization_time(NodeId(0), phase.start, phase.end);
        phases.push(json!({
            "start": jf(phase.start),
            "end": jf(phase.end),
            "q": jf(phase.q),
            "honest_rate": jf(phase.honest_rate),
            "adversary_rate": jf(phase.adversary_rate),
            "mean_honest_tip_pool": mean.map(jf),
            "max_honest_tip_pool": if max.is_nan() { Value::Null } else { jf(max) },
            "mean_finalization_time": fin.map(jf),
        }));
    }
    let q_crit = theory::critical_q(p.protocol.k).unwrap_or(f64::NAN);
    let slope = theory::tip_pool_slope(p.lambda_total, p.q, p.protocol.k);
    let tip_cap_crossing = mean_pool
        .iter()
        .find(|(_, v)| *v >= config.tip_cap_warn as f64)
        .map(|(t, _)| *t);
    let final_report = record.orphanage_reports.last();
    json!({
        "version": RECORD_VERSION,
        "run_id": p.run_id,
        "config": serde_json::to_value(config).expect("config serializes"),
        "cell": {
            "k": p.protocol.k,
            "q": jf(p.q),
            "zeta": jf(p.protocol.zeta),
            "seed": p.seed,
        },
        "phases": phases,
        "theory": {
            "q_crit": jf(q_crit),
            "predicted_slope_tips_per_s": jf(slope),
            "steady_state_tip_pool": jf(theory::steady_state_tip_pool(
                p.protocol.k,
                p.lambda_total * config.mean_delay(),
            )),
        },
        "tip_cap_warn": {
            "threshold": config.tip_cap_warn,
            "first_crossing_t": tip_cap_crossing.map(jf),
        },
        "orphanage": final_report.map(|r| json!({
            "evaluated_at": jf(r.evaluated_at),
            "total_eligible": r.total_eligible,
            "orphaned": r.orphaned,
            "rate": jf(r.rate),
            "confirmed_orphans": r.confirmed_orphans.len(),
        })),
        "counters": {
            "total_issued": record.total_issued,
            "adversary_discards": record.adversary_discards,
            "duplicate_deliveries": record.metrics.duplicate_deliveries,
        },
        "end_time": jf(record.end_time),
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), RunnerError> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs every cell of the scenario (in parallel), exports per-cell files
/// under `out_dir/<run_id>/` and a sweep-level grid.json. Returns the
/// per-cell directories.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>, RunnerError> {
    let cells = config.cells()?;
    let results: Vec<Result<RunRecord, RunnerError>> = cells
        .into_par_iter()
        .map(|cell| {
            let run_id = cell.run_id.clone();
            let echo = format!(
                "k={} q={} zeta={} seed={}",
                cell.protocol.k, cell.q, cell.protocol.zeta, cell.seed
            );
            run(cell).map_err(|source| RunnerError::Cell {
                run_id,
                config: echo,
                source,
            })
        })
        .collect();
    let mut dirs = Vec::new();
    let mut grid_cells = Vec::new();
    for result in results {
        let record = result?;
        let dir = config.out_dir.join(&record.params.run_id);
        let summary = build_summary(config, &record);
        export(&record, &summary, &dir)?;
        let versioned = VersionedRecord {
            version: RECORD_VERSION,
            record,
        };
        let record_path = dir.join("record.json");
        let text =
            serde_json::to_string(&versioned).expect("record serializes");
        std::fs::write(&record_path, text).map_err(|source| RunnerError::Io {
            path: record_path.display().to_string(),
            source,
        })?;
        let record = versioned.record;
        let final_rate = record.orphanage_reports.last().map(|r| r.rate);
        grid_cells.push(json!({
            "run_id": record.params.run_id,
            "k": record.params.protocol.k,
            "q": jf(record.params.q),
            "zeta": jf(record.params.protocol.zeta),
            "seed": record.params.seed,
            "final_orphanage_rate": final_rate.map(jf),
            "total_issued": record.total_issued,
        }));
        dirs.push(dir);
    }
    let q_crit = theory::critical_q(config.k).unwrap_or(f64::NAN);
    let grid = json!({
        "version": RECORD_VERSION,
        "config": serde_json::to_value(config).expect("config serializes"),
        "theory": {
            "q_crit": jf(q_crit),
            "slopes_tips_per_s": config
                .q_list
                .iter()
                .map(|q| json!({
                    "q": jf(*q),
                    "slope": jf(theory::tip_pool_slope(config.lambda_total, *q, config.k)),
                }))
                .collect::<Vec<_>>(),
        },
        "cells": grid_cells,
    });
    std::fs::create_dir_all(&config.out_dir).map_err(|source| RunnerError::Io {
        path: config.out_dir.display().to_string(),
        source,
    })?;
    write_json(&config.out_dir.join("grid.json"), &grid)?;
    Ok(dirs)
}

/// Loads a stored run record from a cell directory.
pub fn load_record(dir: &Path) -> Result<VersionedRecord, RunnerError> {
    let path = dir.join("record.json");
    let text = std::fs::read_to_string(&path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let versioned: VersionedRecord =
        serde_json::from_str(&text).map_err(|e| RunnerError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
    Ok(versioned)
}
