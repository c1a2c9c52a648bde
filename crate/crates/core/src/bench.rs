//! Scaling benchmark for the barrier search algorithms over an `n x R` grid.

use std::collections::HashMap;
use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::report::BenchRow;
use crate::search::{Algorithm, SearchError, SearchResult, DEFAULT_NAIVE_BUDGET};
use crate::timeline::{generate_trace, synthetic_profiles, PredictionMatrix, TimelineError};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub workers: Vec<usize>,
    pub horizons: Vec<usize>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    /// Naive cells above this many combinations are skipped.
    pub naive_budget: u128,
    /// Calls are repeated until one trial lasts at least this long.
    pub min_trial: Duration,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            workers: vec![10, 100, 1000],
            horizons: vec![15, 150],
            trials: 10,
            algorithms: vec![
                Algorithm::ZipLine,
                Algorithm::GridScan,
                Algorithm::FullGridScan,
            ],
            seed: 1,
            naive_budget: DEFAULT_NAIVE_BUDGET,
            min_trial: Duration::from_millis(2),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("benchmark grid needs at least one worker count, horizon and algorithm")]
    EmptyGrid,
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Mean and sample standard deviation of per-call time over the trials.
#[derive(Debug, Clone)]
pub struct Timing {
    pub mean_us: f64,
    pub stddev_us: f64,
    pub calls_per_trial: u32,
    pub result: SearchResult,
}

/// Heterogeneous jittered trace used for every benchmark cell.
pub fn bench_matrix(
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<PredictionMatrix, TimelineError> {
    let cell_seed = seed ^ ((n as u64) << 32) ^ horizon as u64;
    let profiles = synthetic_profiles(n, 80, 240, 20, 0.1, cell_seed);
    generate_trace(&profiles, horizon, cell_seed)
}

/// Times `algorithm` on `matrix`: one untimed warm-up call, then `trials`
/// timed trials of enough back-to-back calls to last `min_trial`.
pub fn time_algorithm(
    algorithm: Algorithm,
    matrix: &PredictionMatrix,
    trials: usize,
    min_trial: Duration,
    naive_budget: u128,
) -> Result<Timing, SearchError> {
    let run = || algorithm.run(black_box(matrix), naive_budget);
    let warm = Instant::now();
    let result = run()?;
    let one = warm.elapsed().max(Duration::from_nanos(1));
    let calls = (min_trial.as_nanos() / one.as_nanos()).clamp(1, 1_000_000) as u32;
    let per_call: Vec<f64> = (0..trials.max(1))
        .map(|_| {
            let started = Instant::now();
            for _ in 0..calls {
                black_box(run().expect("same input as warm-up"));
            }
            started.elapsed().as_secs_f64() * 1e6 / calls as f64
        })
        .collect();
    let mean = per_call.iter().sum::<f64>() / per_call.len() as f64;
    let var = if per_call.len() > 1 {
        per_call.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per_call.len() - 1) as f64
    } else {
        0.0
    };
    Ok(Timing {
        mean_us: mean,
        stddev_us: var.sqrt(),
        calls_per_trial: calls,
        result,
    })
}

fn naive_fits(n: usize, horizon: usize, budget: u128) -> bool {
    u32::try_from(n)
        .ok()
        .and_then(|n| (horizon as u128).checked_pow(n))
        .is_some_and(|c| c <= budget)
}

/// Runs every cell of the grid in order (algorithm, n, R). Cells are timed
/// one after another on the calling thread.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>, BenchError> {
    run_bench_with(spec, |_| {})
}

/// Like [`run_bench`], reporting each row as soon as it is measured.
pub fn run_bench_with(
    spec: &BenchSpec,
    mut progress: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>, BenchError> {
    if spec.workers.is_empty() || spec.horizons.is_empty() || spec.algorithms.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    if spec.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let mut matrices = HashMap::new();
    let mut rows = Vec::new();
    for &algorithm in &spec.algorithms {
        for &n in &spec.workers {
            for &horizon in &spec.horizons {
                if algorithm == Algorithm::Naive && !naive_fits(n, horizon, spec.naive_budget) {
                    continue;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = matrices.entry((n, horizon)) {
                    e.insert(bench_matrix(n, horizon, spec.seed)?);
                }
                let matrix = &matrices[&(n, horizon)];
                let t = time_algorithm(
                    algorithm,
                    matrix,
                    spec.trials,
                    spec.min_trial,
                    spec.naive_budget,
                )?;
                let row = BenchRow {
                    algorithm: algorithm.name().to_string(),
                    n,
                    horizon,
                    mean_us: t.mean_us,
                    stddev_us: t.stddev_us,
                    spread_ms: t.result.spread_ms,
                    r_ratio: None,
                    n_ratio: None,
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    fill_ratios(&mut rows);
    Ok(rows)
}

fn fill_ratios(rows: &mut [BenchRow]) {
    let lookup: HashMap<(String, usize, usize), f64> = rows
        .iter()
        .map(|r| ((r.algorithm.clone(), r.n, r.horizon), r.mean_us))
        .collect();
    let base_r = |alg: &str, n: usize| {
        rows.iter()
            .filter(|r| r.algorithm == alg && r.n == n)
            .map(|r| r.horizon)
            .min()
    };
    let base_n = |alg: &str, horizon: usize| {
        rows.iter()
            .filter(|r| r.algorithm == alg && r.horizon == horizon)
            .map(|r| r.n)
            .min()
    };
    let ratios: Vec<(Option<f64>, Option<f64>)> = rows
        .iter()
        .map(|r| {
            let by_r = base_r(&r.algorithm, r.n)
                .and_then(|h| lookup.get(&(r.algorithm.clone(), r.n, h)))
                .map(|base| r.mean_us / base);
            let by_n = base_n(&r.algorithm, r.horizon)
                .and_then(|n| lookup.get(&(r.algorithm.clone(), n, r.horizon)))
                .map(|base| r.mean_us / base);
            (by_r, by_n)
        })
        .collect();
    for (row, (r_ratio, n_ratio)) in rows.iter_mut().zip(ratios) {
        row.r_ratio = r_ratio;
        row.n_ratio = n_ratio;
    }
}
