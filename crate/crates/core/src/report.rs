//! CSV row types for every file the tools emit. Each writer has a matching
//! reader so outputs can be checked by parsing them back.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::search::{Algorithm, SearchResult};
use crate::sim::SimReport;
use crate::timeline::Millis;
use crate::train::LossTrajectory;

/// Label of the closing row in a superstep file.
pub const TOTAL_ROW: &str = "total";

/// One superstep, or the closing `total` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperstepRow {
    pub superstep: String,
    pub planned_wait_ms: Option<Millis>,
    pub realized_wait_ms: Millis,
    pub barrier_time_ms: Option<Millis>,
    pub total_wait_ms: Millis,
}

/// Superstep rows of `report` followed by a `total` row. For the total row
/// `planned_wait_ms` and `realized_wait_ms` sum over planned supersteps only,
/// `barrier_time_ms` is the simulated wall clock and `total_wait_ms` is the
/// run's total blocked time.
pub fn superstep_rows(report: &SimReport) -> Vec<SuperstepRow> {
    let mut rows: Vec<SuperstepRow> = report
        .supersteps
        .iter()
        .map(|s| SuperstepRow {
            superstep: s.index.to_string(),
            planned_wait_ms: s.planned_wait_ms,
            realized_wait_ms: s.realized_wait_ms,
            barrier_time_ms: Some(s.barrier_time_ms),
            total_wait_ms: s.realized_total_wait_ms,
        })
        .collect();
    let planned: Vec<_> = report.planned_supersteps().collect();
    rows.push(SuperstepRow {
        superstep: TOTAL_ROW.to_string(),
        planned_wait_ms: (!planned.is_empty())
            .then(|| planned.iter().filter_map(|s| s.planned_wait_ms).sum()),
        realized_wait_ms: planned.iter().map(|s| s.realized_wait_ms).sum(),
        barrier_time_ms: Some(report.wall_clock_ms),
        total_wait_ms: report.total_wait_ms,
    });
    rows
}

/// One model run in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub workers: usize,
    pub total_wait_ms: Millis,
    pub wall_clock_ms: Millis,
    pub iterations: u64,
    pub throughput_per_s: f64,
    pub supersteps: usize,
    pub max_observed_staleness: u64,
    pub max_superstep_gap: u64,
    pub staleness_violations: u64,
    pub plan_overruns: u64,
    pub planning_us: u128,
    pub final_loss_gap: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(report: &SimReport) -> Self {
        Self {
            model: report.model.to_string(),
            workers: report.workers.len(),
            total_wait_ms: report.total_wait_ms,
            wall_clock_ms: report.wall_clock_ms,
            iterations: report.total_iterations(),
            throughput_per_s: report.throughput(),
            supersteps: report.supersteps.len(),
            max_observed_staleness: report.max_observed_staleness,
            max_superstep_gap: report.max_superstep_gap,
            staleness_violations: report.staleness_violations,
            plan_overruns: report.plan_overruns,
            planning_us: report.planning_time.as_micros(),
            final_loss_gap: None,
        }
    }

    pub fn from_trajectory(trajectory: &LossTrajectory) -> Self {
        Self {
            final_loss_gap: Some(trajectory.final_loss_gap()),
            ..Self::from_report(&trajectory.sim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub wall_ms: Millis,
    pub epoch: u64,
    pub loss_gap: f64,
    pub model: String,
}

pub fn loss_rows(trajectory: &LossTrajectory) -> Vec<LossRow> {
    let model = trajectory.model.to_string();
    trajectory
        .samples
        .iter()
        .map(|s| LossRow {
            wall_ms: s.wall_ms,
            epoch: s.epoch,
            loss_gap: s.loss_gap,
            model: model.clone(),
        })
        .collect()
}

/// One algorithm applied to one trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRow {
    pub algorithm: String,
    pub spread_ms: Millis,
    pub anchor_ms: Millis,
    pub windows_examined: u64,
    pub elapsed_us: u128,
}

impl SearchRow {
    pub fn new(algorithm: Algorithm, result: &SearchResult) -> Self {
        Self {
            algorithm: algorithm.name().to_string(),
            spread_ms: result.spread_ms,
            anchor_ms: result.anchor_ms(),
            windows_examined: result.windows_examined,
            elapsed_us: result.elapsed.as_micros(),
        }
    }
}

/// One benchmark cell. Ratios compare against the same algorithm at the
/// smallest horizon (`r_ratio`) or smallest worker count (`n_ratio`) present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub n: usize,
    #[serde(rename = "R")]
    pub horizon: usize,
    pub mean_us: f64,
    pub stddev_us: f64,
    pub spread_ms: Millis,
    pub r_ratio: Option<f64>,
    pub n_ratio: Option<f64>,
}

pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> csv::Result<()> {
    write_csv(File::create(path)?, rows)
}

pub fn read_csv<R: Read, T: DeserializeOwned>(reader: R) -> csv::Result<Vec<T>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}
