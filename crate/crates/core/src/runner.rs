//! Experiment orchestration: seeded replications, per-snapshot mean and
//! population standard deviation, and the CSV metrics format.

use std::path::Path;

use thiserror::Error;

use crate::agent::AlgorithmParams;
use crate::protocol::{run, EnvConfig, SimulationError};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("csv line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub params: AlgorithmParams,
    pub num_runs: usize,
    pub base_seed: u64,
    pub snapshot_interval: usize,
}

/// One metric value aggregated across replications at one snapshot round.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPoint {
    pub round: usize,
    pub mean: f64,
    pub stddev: f64,
}

/// Aggregated curves for the three reported metrics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateSeries {
    pub cum_regret: Vec<SnapshotPoint>,
    pub cum_comm: Vec<SnapshotPoint>,
    pub cluster_error: Vec<SnapshotPoint>,
}

impl AggregateSeries {
    pub fn is_empty(&self) -> bool {
        self.cum_regret.is_empty() && self.cum_comm.is_empty() && self.cluster_error.is_empty()
    }

    pub fn final_round(&self) -> Option<usize> {
        self.cum_regret.last().map(|p| p.round)
    }
}

/// Snapshot series of a single replication.
#[derive(Debug, Clone)]
pub struct RunSnapshots {
    pub rounds: Vec<usize>,
    pub cum_regret: Vec<f64>,
    pub cum_comm: Vec<f64>,
    pub cluster_error: Vec<f64>,
}

/// Snapshot rounds: every `interval` rounds plus the final round.
pub fn snapshot_rounds(horizon: usize, interval: usize) -> Vec<usize> {
    if horizon == 0 {
        return Vec::new();
    }
    let mut rounds: Vec<usize> = if interval > 0 {
        (1..=horizon / interval).map(|k| k * interval).collect()
    } else {
        Vec::new()
    };
    if rounds.last() != Some(&horizon) {
        rounds.push(horizon);
    }
    rounds
}

fn run_one(cfg: &ExperimentConfig, run_index: usize) -> Result<RunSnapshots, RunnerError> {
    let seed = cfg.base_seed.wrapping_add(run_index as u64);
    let result = run(&cfg.env, &cfg.params, seed, cfg.snapshot_interval)?;
    let rounds = snapshot_rounds(cfg.params.horizon, cfg.snapshot_interval);
    let mut out = RunSnapshots {
        rounds: rounds.clone(),
        cum_regret: Vec::with_capacity(rounds.len()),
        cum_comm: Vec::with_capacity(rounds.len()),
        cluster_error: Vec::with_capacity(rounds.len()),
    };
    for &t in &rounds {
        out.cum_regret.push(result.cumulative_regret[t - 1]);
        out.cum_comm.push(result.cumulative_comm[t - 1] as f64);
        let err = result.records[t - 1]
            .cluster_error_rate
            .expect("snapshot round carries a sampled cluster error");
        out.cluster_error.push(err);
    }
    Ok(out)
}

/// Replications executed one after another.
pub fn run_replications_sequential(
    cfg: &ExperimentConfig,
) -> Result<Vec<RunSnapshots>, RunnerError> {
    (0..cfg.num_runs).map(|i| run_one(cfg, i)).collect()
}

/// Replications fanned out over the rayon pool. Runs are independent and
/// collected in index order, so the output is identical to the sequential
/// path.
#[cfg(feature = "parallel")]
pub fn run_replications_parallel(
    cfg: &ExperimentConfig,
) -> Result<Vec<RunSnapshots>, RunnerError> {
    (0..cfg.num_runs).into_par_iter().map(|i| run_one(cfg, i)).collect()
}

/// Runs all replications (parallel when the feature is enabled) and
/// aggregates them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateSeries, RunnerError> {
    if cfg.num_runs == 0 {
        return Err(RunnerError::InvalidConfig("num_runs must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    let runs = run_replications_parallel(cfg)?;
    #[cfg(not(feature = "parallel"))]
    let runs = run_replications_sequential(cfg)?;
    aggregate(&runs)
}

/// Mean and population (divide-by-n) standard deviation per snapshot.
pub fn aggregate(runs: &[RunSnapshots]) -> Result<AggregateSeries, RunnerError> {
    let first = match runs.first() {
        Some(f) => f,
        None => return Ok(AggregateSeries::default()),
    };
    for r in runs {
        if r.rounds != first.rounds {
            return Err(RunnerError::InvalidConfig(
                "replications disagree on snapshot rounds".into(),
            ));
        }
    }
    let n = runs.len() as f64;
    let series = |pick: fn(&RunSnapshots) -> &Vec<f64>| -> Vec<SnapshotPoint> {
        first
            .rounds
            .iter()
            .enumerate()
            .map(|(i, &round)| {
                let mean = runs.iter().map(|r| pick(r)[i]).sum::<f64>() / n;
                let var = runs.iter().map(|r| (pick(r)[i] - mean).powi(2)).sum::<f64>() / n;
                SnapshotPoint { round, mean, stddev: var.sqrt() }
            })
            .collect()
    };
    Ok(AggregateSeries {
        cum_regret: series(|r| &r.cum_regret),
        cum_comm: series(|r| &r.cum_comm),
        cluster_error: series(|r| &r.cluster_error),
    })
}

const CSV_HEADER: &str = "metric,round,mean,stddev";
const CSV_COMMENT: &str = "# stddev is the population (divide-by-n) standard deviation across replications";
const METRICS: [&str; 3] = ["cum_regret", "cum_comm", "cluster_error"];

/// Serializes a series in the fixed metric order with shortest
/// round-tripping decimal floats, LF line endings, newline-terminated.
pub fn to_csv(series: &AggregateSeries) -> String {
    let mut out = String::new();
    out.push_str(CSV_COMMENT);
    out.push('\n');
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (name, points) in METRICS.iter().zip([
        &series.cum_regret,
        &series.cum_comm,
        &series.cluster_error,
    ]) {
        for p in points.iter() {
            out.push_str(&format!("{name},{},{},{}\n", p.round, p.mean, p.stddev));
        }
    }
    out
}

pub fn write_csv(series: &AggregateSeries, path: impl AsRef<Path>) -> Result<(), RunnerError> {
    std::fs::write(path, to_csv(series))?;
    Ok(())
}

/// Parses the CSV format back; `#` comment lines are skipped.
pub fn parse_csv(text: &str) -> Result<AggregateSeries, RunnerError> {
    let mut series = AggregateSeries::default();
    let mut saw_header = false;
    let mut metric_cursor = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(RunnerError::Format {
                    line: line_no,
                    message: format!("expected header '{CSV_HEADER}', got '{line}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(RunnerError::Format {
                line: line_no,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let metric_index = METRICS.iter().position(|m| *m == fields[0]).ok_or_else(|| {
            RunnerError::Format { line: line_no, message: format!("unknown metric '{}'", fields[0]) }
        })?;
        if metric_index < metric_cursor {
            return Err(RunnerError::Format {
                line: line_no,
                message: "metrics out of order".into(),
            });
        }
        metric_cursor = metric_index;
        let parse_f = |s: &str, what: &str| -> Result<f64, RunnerError> {
            s.parse().map_err(|_| RunnerError::Format {
                line: line_no,
                message: format!("bad {what} '{s}'"),
            })
        };
        let round: usize = fields[1].parse().map_err(|_| RunnerError::Format {
            line: line_no,
            message: format!("bad round '{}'", fields[1]),
        })?;
        let point = SnapshotPoint {
            round,
            mean: parse_f(fields[2], "mean")?,
            stddev: parse_f(fields[3], "stddev")?,
        };
        let target = match metric_index {
            0 => &mut series.cum_regret,
            1 => &mut series.cum_comm,
            _ => &mut series.cluster_error,
        };
        if let Some(last) = target.last() {
            if point.round <= last.round {
                return Err(RunnerError::Format {
                    line: line_no,
                    message: "rounds must be strictly increasing within a metric".into(),
                });
            }
        }
        target.push(point);
    }
    if !saw_header {
        return Err(RunnerError::Format { line: 1, message: "missing header".into() });
    }
    Ok(series)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<AggregateSeries, RunnerError> {
    parse_csv(&std::fs::read_to_string(path)?)
}
