//! Barrier selection: find a window holding one point per worker whose
//! spread (the synchronization wait) is minimal.
//!
//! [`zipline`] is the exact one-pass scan over the merged timeline.
//! [`gridscan`] and [`full_gridscan`] are the nearest-point heuristics, and
//! [`naive_search`] enumerates every combination and serves as the oracle.
//! Ties between equal spreads always go to the earliest anchor.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::timeline::{merge, MergedTimeline, Millis, PredictionMatrix, TimestampPoint, Window};

/// Default cap on `R^n` for [`naive_search`].
pub const DEFAULT_NAIVE_BUDGET: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("worker {0} has no point on the timeline")]
    MissingWorker(usize),
    #[error("point of worker {worker} is outside 1..={n}")]
    UnknownWorker { worker: usize, n: usize },
    #[error("naive search needs {combinations} combinations, budget is {budget}")]
    BudgetExceeded { combinations: String, budget: u128 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub window: Window,
    pub spread_ms: Millis,
    pub windows_examined: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SearchResult {
    fn new(window: Window, windows_examined: u64, started: Instant) -> Self {
        Self {
            spread_ms: window.spread(),
            window,
            windows_examined,
            elapsed: started.elapsed(),
        }
    }

    pub fn anchor_ms(&self) -> Millis {
        self.window.anchor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Algorithm {
    ZipLine,
    GridScan,
    FullGridScan,
    Naive,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ZipLine,
        Algorithm::GridScan,
        Algorithm::FullGridScan,
        Algorithm::Naive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ZipLine => "zipline",
            Algorithm::GridScan => "gridscan",
            Algorithm::FullGridScan => "full_gridscan",
            Algorithm::Naive => "naive",
        }
    }

    /// Runs this algorithm on a matrix. ZipLine includes the merge step.
    pub fn run(self, matrix: &PredictionMatrix, budget: u128) -> Result<SearchResult, SearchError> {
        match self {
            Algorithm::ZipLine => zipline_matrix(matrix),
            Algorithm::GridScan => Ok(gridscan(matrix)),
            Algorithm::FullGridScan => Ok(full_gridscan(matrix)),
            Algorithm::Naive => naive_search(matrix, budget),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "zipline" => Ok(Algorithm::ZipLine),
            "gridscan" => Ok(Algorithm::GridScan),
            "full_gridscan" | "fullgridscan" => Ok(Algorithm::FullGridScan),
            "naive" | "naive_search" | "oracle" => Ok(Algorithm::Naive),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

const NIL: usize = usize::MAX;

/// Workers ordered by the timeline position of their newest scanned point.
/// The head is the worker holding the window minimum.
struct RecencyList {
    prev: Vec<usize>,
    next: Vec<usize>,
    head: usize,
    tail: usize,
}

impl RecencyList {
    fn new(n: usize) -> Self {
        Self {
            prev: vec![NIL; n],
            next: vec![NIL; n],
            head: NIL,
            tail: NIL,
        }
    }

    fn unlink(&mut self, w: usize) {
        let (p, n) = (self.prev[w], self.next[w]);
        if p == NIL {
            self.head = n;
        } else {
            self.next[p] = n;
        }
        if n == NIL {
            self.tail = p;
        } else {
            self.prev[n] = p;
        }
    }

    fn push_back(&mut self, w: usize) {
        self.prev[w] = self.tail;
        self.next[w] = NIL;
        if self.tail == NIL {
            self.head = w;
        } else {
            self.next[self.tail] = w;
        }
        self.tail = w;
    }
}

/// Exact minimum-spread window in one left-to-right pass over `omega`.
///
/// Each scanned point replaces the window's point for the same worker; once
/// all `n` workers are present the window is evaluated at every position. The
/// newest point is always the window maximum and the head of the recency list
/// the minimum, so each step is O(1). The first minimum wins ties.
pub fn zipline(omega: &MergedTimeline, n: usize) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    if n == 0 {
        return Err(SearchError::NoWorkers);
    }
    let points = omega.points();
    let mut latest = vec![NIL; n];
    let mut order = RecencyList::new(n);
    let mut filled = 0;
    let mut examined = 0u64;
    let mut best: Option<(usize, Millis)> = None;

    for (pos, pt) in points.iter().enumerate() {
        let w = match pt.worker.checked_sub(1) {
            Some(w) if w < n => w,
            _ => {
                return Err(SearchError::UnknownWorker {
                    worker: pt.worker,
                    n,
                })
            }
        };
        if latest[w] == NIL {
            filled += 1;
        } else {
            order.unlink(w);
        }
        latest[w] = pos;
        order.push_back(w);
        if filled == n {
            examined += 1;
            let spread = pt.end_time - points[latest[order.head]].end_time;
            if best.is_none_or(|(_, d)| spread < d) {
                best = Some((pos, spread));
            }
        }
    }

    let Some((best_pos, _)) = best else {
        let missing = latest.iter().position(|&l| l == NIL).map_or(1, |w| w + 1);
        return Err(SearchError::MissingWorker(missing));
    };
    Ok(SearchResult::new(
        window_ending_at(points, best_pos, n),
        examined,
        started,
    ))
}

/// Merges the matrix and runs [`zipline`]; the reported time covers both.
pub fn zipline_matrix(matrix: &PredictionMatrix) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    let mut result = zipline(&merge(matrix), matrix.n())?;
    result.elapsed = started.elapsed();
    Ok(result)
}

/// The newest point of every worker at or before `pos`.
fn window_ending_at(points: &[TimestampPoint], pos: usize, n: usize) -> Window {
    let mut seen = vec![false; n];
    let mut members = Vec::with_capacity(n);
    for pt in points[..=pos].iter().rev() {
        if !seen[pt.worker - 1] {
            seen[pt.worker - 1] = true;
            members.push(*pt);
            if members.len() == n {
                break;
            }
        }
    }
    Window::new(members).expect("scan window covers every worker")
}

/// Nearest point of `row` to `target`; equidistant points resolve to the
/// earlier one. Scans the whole row.
fn nearest(row: &[TimestampPoint], target: Millis) -> TimestampPoint {
    let mut best = row[0];
    let mut best_dist = best.end_time.abs_diff(target);
    for pt in &row[1..] {
        let dist = pt.end_time.abs_diff(target);
        if dist < best_dist {
            best = *pt;
            best_dist = dist;
        }
    }
    best
}

/// Tracks the best candidate by `(spread, anchor)`; first seen wins exact ties.
struct Best {
    window: Option<Window>,
    examined: u64,
}

impl Best {
    fn new() -> Self {
        Self {
            window: None,
            examined: 0,
        }
    }

    fn offer(&mut self, candidate: Window) {
        self.examined += 1;
        let better = match &self.window {
            None => true,
            Some(w) => (candidate.spread(), candidate.anchor()) < (w.spread(), w.anchor()),
        };
        if better {
            self.window = Some(candidate);
        }
    }
}

/// One GridScan pass: every point of the designated row paired with the
/// nearest point of each other row.
fn scan_designated(matrix: &PredictionMatrix, designated: usize, best: &mut Best) {
    for &e in matrix.row(designated) {
        let members = matrix
            .rows()
            .iter()
            .map(|row| {
                if row[0].worker == designated {
                    e
                } else {
                    nearest(row, e.end_time)
                }
            })
            .collect();
        best.offer(Window::new(members).expect("one point per row"));
    }
}

/// Heuristic search designating the row with the earliest first point.
pub fn gridscan(matrix: &PredictionMatrix) -> SearchResult {
    let started = Instant::now();
    let designated = matrix
        .rows()
        .iter()
        .min_by_key(|row| (row[0].end_time, row[0].worker))
        .map(|row| row[0].worker)
        .expect("matrix has at least one row");
    let mut best = Best::new();
    scan_designated(matrix, designated, &mut best);
    SearchResult::new(best.window.expect("horizon >= 1"), best.examined, started)
}

/// GridScan repeated with every row as the designated row.
pub fn full_gridscan(matrix: &PredictionMatrix) -> SearchResult {
    let started = Instant::now();
    let mut best = Best::new();
    for designated in 1..=matrix.n() {
        scan_designated(matrix, designated, &mut best);
    }
    SearchResult::new(best.window.expect("horizon >= 1"), best.examined, started)
}

/// Exhaustive search over all `R^n` combinations, refused above `budget`.
pub fn naive_search(matrix: &PredictionMatrix, budget: u128) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    let (n, r) = (matrix.n(), matrix.horizon());
    let combinations = u32::try_from(n)
        .ok()
        .and_then(|n| (r as u128).checked_pow(n))
        .filter(|&c| c <= budget)
        .ok_or_else(|| SearchError::BudgetExceeded {
            combinations: format!("{r}^{n}"),
            budget,
        })?;

    let rows = matrix.rows();
    let mut idx = vec![0usize; n];
    let mut best: Option<(Millis, Millis, Vec<usize>)> = None;
    for _ in 0..combinations {
        let (mut lo, mut hi) = (Millis::MAX, Millis::MIN);
        for (row, &i) in rows.iter().zip(&idx) {
            let t = row[i].end_time;
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let spread = hi - lo;
        if best
            .as_ref()
            .is_none_or(|(d, a, _)| (spread, hi) < (*d, *a))
        {
            best = Some((spread, hi, idx.clone()));
        }
        // odometer, last worker fastest
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < r {
                break;
            }
            idx[k] = 0;
        }
    }
    let (_, _, chosen) = best.expect("at least one combination");
    let members = rows.iter().zip(&chosen).map(|(row, &i)| row[i]).collect();
    Ok(SearchResult::new(
        Window::new(members).expect("one point per row"),
        combinations as u64,
        started,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[&[Millis]]) -> PredictionMatrix {
        PredictionMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn times(w: &Window) -> Vec<Millis> {
        w.members().iter().map(|p| p.end_time).collect()
    }

    /// Independent brute force: recursive enumeration returning the minimal
    /// spread and the smallest anchor among minimal-spread windows.
    fn brute_force(rows: &[Vec<Millis>]) -> (Millis, Millis) {
        fn go(rows: &[Vec<Millis>], chosen: &mut Vec<Millis>, best: &mut (Millis, Millis)) {
            if chosen.len() == rows.len() {
                let hi = *chosen.iter().max().unwrap();
                let lo = *chosen.iter().min().unwrap();
                if (hi - lo, hi) < *best {
                    *best = (hi - lo, hi);
                }
                return;
            }
            for &t in &rows[chosen.len()] {
                chosen.push(t);
                go(rows, chosen, best);
                chosen.pop();
            }
        }
        let mut best = (Millis::MAX, Millis::MAX);
        go(rows, &mut Vec::new(), &mut best);
        best
    }

    const ABC: [&[Millis]; 3] = [&[10, 20, 30], &[12, 24, 36], &[15, 28, 41]];
    const GAP: [&[Millis]; 3] = [&[0, 20], &[10, 29], &[11, 30]];

    #[test]
    fn frozen_oracle_values() {
        let abc: Vec<Vec<Millis>> = ABC.iter().map(|r| r.to_vec()).collect();
        assert_eq!(brute_force(&abc), (5, 15));
        let gap: Vec<Vec<Millis>> = GAP.iter().map(|r| r.to_vec()).collect();
        assert_eq!(brute_force(&gap), (10, 20));
    }

    #[test]
    fn zipline_single_worker() {
        let r = zipline_matrix(&matrix(&[&[5, 9, 13]])).unwrap();
        assert_eq!((r.spread_ms, times(&r.window)), (0, vec![5]));
        assert_eq!(r.windows_examined, 3);
    }

    #[test]
    fn zipline_identical_rows() {
        let r = zipline_matrix(&matrix(&[&[100, 200], &[100, 200], &[100, 200]])).unwrap();
        assert_eq!((r.spread_ms, times(&r.window)), (0, vec![100, 100, 100]));
    }

    #[test]
    fn zipline_abc() {
        let r = zipline_matrix(&matrix(&ABC)).unwrap();
        assert_eq!((r.spread_ms, times(&r.window)), (5, vec![10, 12, 15]));
    }

    #[test]
    fn zipline_gap_picks_first_minimum() {
        // {B10, C11, A20} and {A20, B29, C30} both have spread 10
        let r = zipline_matrix(&matrix(&GAP)).unwrap();
        assert_eq!((r.spread_ms, times(&r.window)), (10, vec![20, 10, 11]));
        assert_eq!(r.window.iterations(), vec![2, 1, 1]);
        assert_eq!(r.windows_examined, 4);
    }

    #[test]
    fn zipline_missing_worker() {
        let omega = MergedTimeline::from_points(vec![
            TimestampPoint::new(1, 1, 5),
            TimestampPoint::new(3, 1, 6),
        ]);
        assert_eq!(
            zipline(&omega, 3).unwrap_err(),
            SearchError::MissingWorker(2)
        );
        assert_eq!(
            zipline(&omega, 2).unwrap_err(),
            SearchError::UnknownWorker { worker: 3, n: 2 }
        );
        assert_eq!(zipline(&omega, 0).unwrap_err(), SearchError::NoWorkers);
    }

    #[test]
    fn gridscan_examples() {
        let r = gridscan(&matrix(&ABC));
        assert_eq!((r.spread_ms, times(&r.window)), (5, vec![10, 12, 15]));
        let r = gridscan(&matrix(&GAP));
        assert_eq!((r.spread_ms, times(&r.window)), (11, vec![0, 10, 11]));
        assert_eq!(r.windows_examined, 2);
        let r = gridscan(&matrix(&[&[3, 8]]));
        assert_eq!((r.spread_ms, times(&r.window)), (0, vec![3]));
    }

    #[test]
    fn gridscan_nearest_tie_goes_earlier() {
        // 10 and 30 are both 10 away from 20
        let r = gridscan(&matrix(&[&[0, 20], &[10, 30]]));
        assert_eq!(times(&r.window), vec![0, 10]);
        let pt = nearest(matrix(&[&[10, 30]]).row(1), 20);
        assert_eq!(pt.end_time, 10);
    }

    #[test]
    fn full_gridscan_examples() {
        let r = full_gridscan(&matrix(&GAP));
        assert_eq!((r.spread_ms, times(&r.window)), (10, vec![20, 10, 11]));
        assert_eq!(r.windows_examined, 6);
        assert_eq!(full_gridscan(&matrix(&[&[4, 7, 9]])).spread_ms, 0);
        let r = full_gridscan(&matrix(&[&[100, 200], &[100, 200]]));
        assert_eq!((r.spread_ms, r.anchor_ms()), (0, 100));
    }

    #[test]
    fn naive_examples() {
        let r = naive_search(&matrix(&ABC), DEFAULT_NAIVE_BUDGET).unwrap();
        assert_eq!((r.spread_ms, times(&r.window)), (5, vec![10, 12, 15]));
        assert_eq!(r.windows_examined, 27);
        let r = naive_search(&matrix(&[&[7], &[9]]), DEFAULT_NAIVE_BUDGET).unwrap();
        assert_eq!((r.spread_ms, r.windows_examined), (2, 1));
        let rows: Vec<Vec<Millis>> = (0..6).map(|_| (1..=15).collect()).collect();
        let big = PredictionMatrix::from_rows(rows).unwrap();
        assert!(matches!(
            naive_search(&big, DEFAULT_NAIVE_BUDGET),
            Err(SearchError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("bogus".parse::<Algorithm>().is_err());
    }

    fn small_matrix() -> impl Strategy<Value = Vec<Vec<Millis>>> {
        (1usize..=5, 1usize..=6).prop_flat_map(|(n, r)| {
            prop::collection::vec(
                (0u64..30, prop::collection::vec(1u64..12, r)).prop_map(|(start, steps)| {
                    steps
                        .into_iter()
                        .scan(start, |t, d| {
                            *t += d;
                            Some(*t)
                        })
                        .collect::<Vec<_>>()
                }),
                n,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn zipline_matches_oracle(rows in small_matrix()) {
            let (spread, anchor) = brute_force(&rows);
            let m = PredictionMatrix::from_rows(rows).unwrap();
            let z = zipline_matrix(&m).unwrap();
            let naive = naive_search(&m, DEFAULT_NAIVE_BUDGET).unwrap();
            prop_assert_eq!((z.spread_ms, z.anchor_ms()), (spread, anchor));
            prop_assert_eq!((naive.spread_ms, naive.anchor_ms()), (spread, anchor));
            let n = m.n() as u64;
            prop_assert!(z.windows_examined >= 1);
            prop_assert!(z.windows_examined <= n * m.horizon() as u64 - n + 1);
        }

        #[test]
        fn heuristics_never_beat_zipline(rows in small_matrix()) {
            let m = PredictionMatrix::from_rows(rows).unwrap();
            let z = zipline_matrix(&m).unwrap().spread_ms;
            let full = full_gridscan(&m).spread_ms;
            let grid = gridscan(&m).spread_ms;
            prop_assert!(z <= full && full <= grid, "{} {} {}", z, full, grid);
        }

        #[test]
        fn deterministic(rows in small_matrix()) {
            let m = PredictionMatrix::from_rows(rows).unwrap();
            for algo in Algorithm::ALL {
                let a = algo.run(&m, DEFAULT_NAIVE_BUDGET).unwrap();
                let b = algo.run(&m, DEFAULT_NAIVE_BUDGET).unwrap();
                prop_assert_eq!(a.window, b.window);
            }
        }
    }
}
