//! Iteration timelines: predicted or observed iteration-end points per worker,
//! the merged timeline, candidate windows, synthetic trace generation and the
//! trace file format.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated wall-clock time in integer milliseconds.
pub type Millis = u64;

/// Header line of the trace file format.
pub const TRACE_HEADER: [&str; 3] = ["worker", "iter", "end_ms"];

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("no worker profiles given")]
    NoProfiles,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("invalid profile for worker {worker}: {reason}")]
    InvalidProfile { worker: usize, reason: String },
    #[error("worker ids must be contiguous 1..={expected}; worker {missing} is missing")]
    MissingWorker { missing: usize, expected: usize },
    #[error("worker {worker} has {found} points, expected {expected}")]
    RaggedRow {
        worker: usize,
        found: usize,
        expected: usize,
    },
    #[error("worker {worker}: iteration indices must be 1..={horizon}, got {iter}")]
    BadIteration {
        worker: usize,
        iter: usize,
        horizon: usize,
    },
    #[error("duplicate point for worker {worker}, iteration {iter}")]
    Duplicate { worker: usize, iter: usize },
    #[error("worker {worker}: end time of iteration {iter} is not after the previous iteration")]
    NonMonotone { worker: usize, iter: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One iteration-end event: worker `worker` finished iteration `iter` at `end_time`.
///
/// Ordering is by `(end_time, worker, iter)`, which is the tie rule of the
/// merged timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimestampPoint {
    pub worker: usize,
    pub iter: usize,
    pub end_time: Millis,
}

impl TimestampPoint {
    pub fn new(worker: usize, iter: usize, end_time: Millis) -> Self {
        Self {
            worker,
            iter,
            end_time,
        }
    }
}

impl Ord for TimestampPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.end_time, self.worker, self.iter).cmp(&(other.end_time, other.worker, other.iter))
    }
}

impl PartialOrd for TimestampPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `n x R` matrix of iteration-end times, one strictly increasing row per
/// worker. Row `p - 1` holds worker `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMatrix {
    horizon: usize,
    rows: Vec<Vec<TimestampPoint>>,
}

impl PredictionMatrix {
    /// Builds a matrix from raw end times; `rows[p]` belongs to worker `p + 1`.
    pub fn from_rows(rows: Vec<Vec<Millis>>) -> Result<Self, TimelineError> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(p, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(i, t)| TimestampPoint::new(p + 1, i + 1, t))
                    .collect()
            })
            .collect();
        Self::from_point_rows(rows)
    }

    fn from_point_rows(rows: Vec<Vec<TimestampPoint>>) -> Result<Self, TimelineError> {
        let first = rows.first().ok_or(TimelineError::EmptyMatrix)?;
        let horizon = first.len();
        if horizon == 0 {
            return Err(TimelineError::ZeroHorizon);
        }
        for (p, row) in rows.iter().enumerate() {
            let worker = p + 1;
            if row.len() != horizon {
                return Err(TimelineError::RaggedRow {
                    worker,
                    found: row.len(),
                    expected: horizon,
                });
            }
            for (i, pt) in row.iter().enumerate() {
                debug_assert!(pt.worker == worker && pt.iter == i + 1);
                if i > 0 && pt.end_time <= row[i - 1].end_time {
                    return Err(TimelineError::NonMonotone {
                        worker,
                        iter: i + 1,
                    });
                }
            }
        }
        Ok(Self { horizon, rows })
    }

    /// Builds a matrix from points in any order. Worker ids must be contiguous
    /// from 1, every worker must have iterations `1..=R` exactly once, and end
    /// times must increase with the iteration index.
    pub fn from_points(mut points: Vec<TimestampPoint>) -> Result<Self, TimelineError> {
        if points.is_empty() {
            return Err(TimelineError::EmptyMatrix);
        }
        points.sort_by_key(|p| (p.worker, p.iter));
        let n = points.iter().map(|p| p.worker).max().unwrap_or(0);
        let mut rows: Vec<Vec<TimestampPoint>> = vec![Vec::new(); n];
        for pt in points {
            if pt.worker == 0 {
                return Err(TimelineError::MissingWorker {
                    missing: 0,
                    expected: n,
                });
            }
            let row = &mut rows[pt.worker - 1];
            if let Some(last) = row.last() {
                if last.iter == pt.iter {
                    return Err(TimelineError::Duplicate {
                        worker: pt.worker,
                        iter: pt.iter,
                    });
                }
            }
            row.push(pt);
        }
        if let Some(p) = rows.iter().position(Vec::is_empty) {
            return Err(TimelineError::MissingWorker {
                missing: p + 1,
                expected: n,
            });
        }
        let horizon = rows[0].len();
        for row in &rows {
            for (i, pt) in row.iter().enumerate() {
                if pt.iter != i + 1 {
                    return Err(TimelineError::BadIteration {
                        worker: pt.worker,
                        iter: pt.iter,
                        horizon,
                    });
                }
            }
        }
        Self::from_point_rows(rows)
    }

    /// Number of workers.
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Points per worker (the lookahead R).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rows(&self) -> &[Vec<TimestampPoint>] {
        &self.rows
    }

    /// Row of worker `worker` (1-based).
    pub fn row(&self, worker: usize) -> &[TimestampPoint] {
        &self.rows[worker - 1]
    }

    pub fn points(&self) -> impl Iterator<Item = &TimestampPoint> {
        self.rows.iter().flatten()
    }

    /// End times only, row by row.
    pub fn end_times(&self) -> Vec<Vec<Millis>> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|p| p.end_time).collect())
            .collect()
    }
}

/// All points of a matrix sorted ascending by `(end_time, worker, iter)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedTimeline {
    points: Vec<TimestampPoint>,
}

impl MergedTimeline {
    /// Sorts arbitrary points into a timeline. Coverage of the workers is
    /// checked by the searches, not here.
    pub fn from_points(mut points: Vec<TimestampPoint>) -> Self {
        points.sort_unstable();
        Self { points }
    }

    pub fn points(&self) -> &[TimestampPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn merge(matrix: &PredictionMatrix) -> MergedTimeline {
    MergedTimeline::from_points(matrix.points().copied().collect())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("window is empty")]
    Empty,
    #[error("window members must cover workers 1..={n} exactly once")]
    BadCover { n: usize },
}

/// One point per worker. `spread` is the wait a barrier placed at `anchor`
/// would cost the earliest-finishing worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Window {
    members: Vec<TimestampPoint>,
    spread: Millis,
    anchor: Millis,
}

impl Window {
    /// `members` may come in any order; they are stored by worker id.
    pub fn new(mut members: Vec<TimestampPoint>) -> Result<Self, WindowError> {
        if members.is_empty() {
            return Err(WindowError::Empty);
        }
        members.sort_by_key(|p| p.worker);
        let n = members.len();
        if members.iter().enumerate().any(|(i, p)| p.worker != i + 1) {
            return Err(WindowError::BadCover { n });
        }
        let anchor = members.iter().map(|p| p.end_time).max().unwrap_or(0);
        let start = members.iter().map(|p| p.end_time).min().unwrap_or(0);
        Ok(Self {
            members,
            spread: anchor - start,
            anchor,
        })
    }

    /// Members ordered by worker id.
    pub fn members(&self) -> &[TimestampPoint] {
        &self.members
    }

    pub fn spread(&self) -> Millis {
        self.spread
    }

    /// Latest member end time: the barrier time if this window is chosen.
    pub fn anchor(&self) -> Millis {
        self.anchor
    }

    /// Earliest member end time.
    pub fn start(&self) -> Millis {
        self.anchor - self.spread
    }

    /// Iteration index chosen for each worker, in worker order.
    pub fn iterations(&self) -> Vec<usize> {
        self.members.iter().map(|p| p.iter).collect()
    }
}

/// Per-worker iteration cost model used by trace generation and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker: usize,
    /// Gradient compute time per iteration.
    pub compute_ms: Millis,
    /// Push plus pull transmission time per iteration.
    pub trans_ms: Millis,
    /// Relative standard deviation of each iteration's duration, in `[0, 1)`.
    pub jitter: f64,
}

impl WorkerProfile {
    pub fn new(worker: usize, compute_ms: Millis, trans_ms: Millis, jitter: f64) -> Self {
        Self {
            worker,
            compute_ms,
            trans_ms,
            jitter,
        }
    }

    pub fn validate(&self) -> Result<(), TimelineError> {
        let fail = |reason: &str| {
            Err(TimelineError::InvalidProfile {
                worker: self.worker,
                reason: reason.to_string(),
            })
        };
        if self.worker == 0 {
            return fail("worker ids start at 1");
        }
        if self.compute_ms == 0 {
            return fail("compute_ms must be positive");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return fail("jitter must be in [0, 1)");
        }
        Ok(())
    }

    pub fn iteration_ms(&self) -> Millis {
        self.compute_ms + self.trans_ms
    }
}

/// Validates a profile list and returns it ordered by worker id. Ids must be
/// exactly `1..=n`.
pub fn ordered_profiles(profiles: &[WorkerProfile]) -> Result<Vec<WorkerProfile>, TimelineError> {
    if profiles.is_empty() {
        return Err(TimelineError::NoProfiles);
    }
    let mut sorted = profiles.to_vec();
    sorted.sort_by_key(|p| p.worker);
    let n = sorted.len();
    for (i, p) in sorted.iter().enumerate() {
        p.validate()?;
        if p.worker != i + 1 {
            return Err(TimelineError::MissingWorker {
                missing: i + 1,
                expected: n,
            });
        }
    }
    Ok(sorted)
}

/// Zero-mean relative perturbation: normal with standard deviation `jitter`,
/// truncated to the open interval `(-jitter, jitter)` by rejection.
#[derive(Debug, Clone, Copy)]
pub struct Jitter {
    width: f64,
    normal: Option<Normal<f64>>,
}

impl Jitter {
    pub fn new(jitter: f64) -> Self {
        let normal = (jitter > 0.0).then(|| Normal::new(0.0, jitter).expect("finite sd"));
        Self {
            width: jitter,
            normal,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.normal {
            None => 0.0,
            Some(normal) => loop {
                let d = normal.sample(rng);
                if d.abs() < self.width {
                    break d;
                }
            },
        }
    }

    /// `base * (1 + delta)` rounded to whole milliseconds, never below 1 ms
    /// when `base` is positive.
    pub fn perturb<R: Rng + ?Sized>(&self, base: Millis, rng: &mut R) -> Millis {
        if base == 0 || self.normal.is_none() {
            return base;
        }
        let scaled = (base as f64 * (1.0 + self.sample(rng))).round();
        (scaled as Millis).max(1)
    }
}

/// Synthetic prediction matrix: row `p` holds the cumulative sums of
/// `(compute + trans) * (1 + delta)` over `horizon` iterations.
pub fn generate_trace(
    profiles: &[WorkerProfile],
    horizon: usize,
    seed: u64,
) -> Result<PredictionMatrix, TimelineError> {
    let profiles = ordered_profiles(profiles)?;
    if horizon == 0 {
        return Err(TimelineError::ZeroHorizon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = profiles
        .iter()
        .map(|profile| {
            let jitter = Jitter::new(profile.jitter);
            let step = profile.iteration_ms().max(1);
            let mut t = 0;
            (0..horizon)
                .map(|_| {
                    t += jitter.perturb(step, &mut rng);
                    t
                })
                .collect()
        })
        .collect();
    PredictionMatrix::from_rows(rows)
}

/// Heterogeneous profiles for benchmarks and the `gen` command: compute time
/// uniform in `[compute_min, compute_max]`, fixed transmission and jitter.
pub fn synthetic_profiles(
    n: usize,
    compute_min: Millis,
    compute_max: Millis,
    trans_ms: Millis,
    jitter: f64,
    seed: u64,
) -> Vec<WorkerProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_9a0f_11e5);
    let (lo, hi) = (compute_min.max(1), compute_max.max(compute_min.max(1)));
    (1..=n)
        .map(|worker| WorkerProfile::new(worker, rng.random_range(lo..=hi), trans_ms, jitter))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    worker: usize,
    iter: usize,
    end_ms: Millis,
}

pub fn write_trace_to<W: Write>(matrix: &PredictionMatrix, writer: W) -> Result<(), TimelineError> {
    let mut out = csv::Writer::from_writer(writer);
    for pt in matrix.points() {
        out.serialize(TraceRecord {
            worker: pt.worker,
            iter: pt.iter,
            end_ms: pt.end_time,
        })
        .map_err(csv_to_io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace(matrix: &PredictionMatrix, path: impl AsRef<Path>) -> Result<(), TimelineError> {
    write_trace_to(matrix, BufWriter::new(File::create(path)?))
}

pub fn read_trace_from<R: Read>(reader: R) -> Result<PredictionMatrix, TimelineError> {
    let mut input = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = input.headers().map_err(|e| parse_error(1, &e))?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(TimelineError::Parse {
            line: 1,
            message: format!("expected header `{}`", TRACE_HEADER.join(",")),
        });
    }
    let mut points = Vec::new();
    for record in input.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, &e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TraceRecord = record
            .deserialize(Some(&header))
            .map_err(|e| parse_error(line, &e))?;
        if row.worker == 0 || row.iter == 0 {
            return Err(TimelineError::Parse {
                line,
                message: "worker and iter are 1-based".into(),
            });
        }
        points.push(TimestampPoint::new(row.worker, row.iter, row.end_ms));
    }
    PredictionMatrix::from_points(points)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<PredictionMatrix, TimelineError> {
    read_trace_from(BufReader::new(File::open(path)?))
}

fn parse_error(line: u64, err: &csv::Error) -> TimelineError {
    let message = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => err.to_string(),
    };
    TimelineError::Parse { line, message }
}

fn csv_to_io(err: csv::Error) -> io::Error {
    io::Error::other(err)
}
