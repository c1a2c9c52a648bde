//! Phase one of ElasticBSP: extrapolate each worker's next `R` iteration-end
//! times from its most recent observed intervals.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::{Millis, PredictionMatrix, TimelineError};

/// Default number of recent intervals averaged per worker.
pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("observation buffer needs at least one worker")]
    NoWorkers,
    #[error("interval window must be at least 1")]
    ZeroWindow,
    #[error("worker {worker} out of range 1..={n}")]
    UnknownWorker { worker: usize, n: usize },
    #[error("worker {worker}: observation {time} ms is not after {last} ms")]
    NotIncreasing {
        worker: usize,
        time: Millis,
        last: Millis,
    },
    #[error("worker {worker} has {count} observation(s); at least 2 are needed")]
    TooFewObservations { worker: usize, count: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

/// How the per-worker interval estimate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PredictorMode {
    /// Arithmetic mean of the retained intervals.
    #[default]
    MeanInterval,
    /// Most recent interval only.
    LastInterval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct WorkerObservations {
    ring: VecDeque<Millis>,
    last_push: Option<Millis>,
}

/// Recent iteration-end timestamps per worker. Each ring keeps `window + 1`
/// timestamps, i.e. the last `window` intervals. The anchor ("last push
/// time") follows the newest observation unless set explicitly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationBuffer {
    window: usize,
    mode: PredictorMode,
    workers: Vec<WorkerObservations>,
}

impl ObservationBuffer {
    pub fn new(n: usize, window: usize) -> Result<Self, PredictError> {
        Self::with_mode(n, window, PredictorMode::default())
    }

    pub fn with_mode(n: usize, window: usize, mode: PredictorMode) -> Result<Self, PredictError> {
        if n == 0 {
            return Err(PredictError::NoWorkers);
        }
        if window == 0 {
            return Err(PredictError::ZeroWindow);
        }
        let empty = WorkerObservations {
            ring: VecDeque::with_capacity(window + 1),
            last_push: None,
        };
        Ok(Self {
            window,
            mode,
            workers: vec![empty; n],
        })
    }

    pub fn n(&self) -> usize {
        self.workers.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mode(&self) -> PredictorMode {
        self.mode
    }

    fn slot(&mut self, worker: usize) -> Result<&mut WorkerObservations, PredictError> {
        let n = self.workers.len();
        worker
            .checked_sub(1)
            .and_then(|i| self.workers.get_mut(i))
            .ok_or(PredictError::UnknownWorker { worker, n })
    }

    /// Records an iteration end of `worker` (1-based) and moves its anchor there.
    pub fn observe(&mut self, worker: usize, time: Millis) -> Result<(), PredictError> {
        let cap = self.window + 1;
        let slot = self.slot(worker)?;
        if let Some(&last) = slot.ring.back() {
            if time <= last {
                return Err(PredictError::NotIncreasing { worker, time, last });
            }
        }
        if slot.ring.len() == cap {
            slot.ring.pop_front();
        }
        slot.ring.push_back(time);
        slot.last_push = Some(time);
        Ok(())
    }

    /// Overrides the time from which predictions for `worker` are extrapolated.
    pub fn set_anchor(&mut self, worker: usize, time: Millis) -> Result<(), PredictError> {
        self.slot(worker)?.last_push = Some(time);
        Ok(())
    }

    pub fn observations(&self, worker: usize) -> &VecDeque<Millis> {
        &self.workers[worker - 1].ring
    }

    pub fn anchor(&self, worker: usize) -> Option<Millis> {
        self.workers[worker - 1].last_push
    }
}

/// `e_i = anchor + round(i * interval)` for `i` in `1..=horizon`, per worker.
///
/// Rounding is half-up on the exact rational `i * sum / count`, so rows are
/// strictly increasing and shifting every observation by `c` shifts every
/// prediction by exactly `c`.
pub fn predict(
    buffer: &ObservationBuffer,
    horizon: usize,
) -> Result<PredictionMatrix, PredictError> {
    if horizon == 0 {
        return Err(PredictError::ZeroHorizon);
    }
    let rows = buffer
        .workers
        .iter()
        .enumerate()
        .map(|(p, obs)| {
            let count = obs.ring.len();
            let (first, last, anchor) = match (obs.ring.front(), obs.ring.back(), obs.last_push) {
                (Some(&f), Some(&l), Some(a)) if count >= 2 => (f, l, a),
                _ => {
                    return Err(PredictError::TooFewObservations {
                        worker: p + 1,
                        count,
                    })
                }
            };
            let (span, intervals) = match buffer.mode {
                PredictorMode::MeanInterval => (last - first, count as u64 - 1),
                PredictorMode::LastInterval => (last - obs.ring[count - 2], 1),
            };
            Ok((1..=horizon as u64)
                .map(|i| anchor + (2 * i * span + intervals) / (2 * intervals))
                .collect())
        })
        .collect::<Result<Vec<Vec<Millis>>, _>>()?;
    Ok(PredictionMatrix::from_rows(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buffer_from(rows: &[&[Millis]], window: usize) -> ObservationBuffer {
        let mut buf = ObservationBuffer::new(rows.len(), window).unwrap();
        for (p, row) in rows.iter().enumerate() {
            for &t in *row {
                buf.observe(p + 1, t).unwrap();
            }
        }
        buf
    }

    #[test]
    fn constant_intervals() {
        let buf = buffer_from(&[&[700, 800, 900, 1000]], 3);
        assert_eq!(
            predict(&buf, 3).unwrap().end_times(),
            vec![vec![1100, 1200, 1300]]
        );
    }

    #[test]
    fn mean_of_recent_intervals() {
        // intervals 90, 100, 110 -> mean 100
        let buf = buffer_from(&[&[700, 790, 890, 1000]], 3);
        assert_eq!(
            predict(&buf, 2).unwrap().end_times(),
            vec![vec![1100, 1200]]
        );
    }

    #[test]
    fn ring_keeps_only_the_window() {
        // the 500 -> 700 interval falls out of a 3-interval window
        let buf = buffer_from(&[&[500, 700, 790, 890, 1000]], 3);
        assert_eq!(buf.observations(1).len(), 4);
        assert_eq!(predict(&buf, 1).unwrap().end_times(), vec![vec![1100]]);
    }

    #[test]
    fn last_interval_mode() {
        let mut buf = ObservationBuffer::with_mode(1, 3, PredictorMode::LastInterval).unwrap();
        for t in [700, 790, 890, 1000] {
            buf.observe(1, t).unwrap();
        }
        assert_eq!(
            predict(&buf, 2).unwrap().end_times(),
            vec![vec![1110, 1220]]
        );
    }

    #[test]
    fn fractional_mean_rounds_half_up() {
        // intervals 10, 11 -> mean 10.5
        let buf = buffer_from(&[&[0, 10, 21]], 2);
        assert_eq!(
            predict(&buf, 3).unwrap().end_times(),
            vec![vec![32, 42, 53]]
        );
    }

    #[test]
    fn anchor_override() {
        let mut buf = buffer_from(&[&[0, 50, 100]], 3);
        buf.set_anchor(1, 400).unwrap();
        assert_eq!(predict(&buf, 2).unwrap().end_times(), vec![vec![450, 500]]);
    }

    #[test]
    fn errors() {
        let buf = buffer_from(&[&[0, 10], &[5]], 3);
        assert!(matches!(
            predict(&buf, 2),
            Err(PredictError::TooFewObservations {
                worker: 2,
                count: 1
            })
        ));
        let ok = buffer_from(&[&[0, 10]], 3);
        assert!(matches!(predict(&ok, 0), Err(PredictError::ZeroHorizon)));
        let mut b = ObservationBuffer::new(1, 3).unwrap();
        b.observe(1, 10).unwrap();
        assert!(matches!(
            b.observe(1, 10),
            Err(PredictError::NotIncreasing { .. })
        ));
        assert!(matches!(
            b.observe(2, 10),
            Err(PredictError::UnknownWorker { .. })
        ));
        assert!(ObservationBuffer::new(0, 3).is_err());
        assert!(ObservationBuffer::new(1, 0).is_err());
    }

    fn observations() -> impl Strategy<Value = Vec<Vec<Millis>>> {
        prop::collection::vec(prop::collection::vec(1u64..500, 2..6), 1..5).prop_map(|rows| {
            rows.into_iter()
                .map(|steps| {
                    steps
                        .into_iter()
                        .scan(0, |t, d| {
                            *t += d;
                            Some(*t)
                        })
                        .collect()
                })
                .collect()
        })
    }

    fn build(rows: &[Vec<Millis>], shift: Millis, scale: Millis) -> ObservationBuffer {
        let mut buf = ObservationBuffer::new(rows.len(), 3).unwrap();
        for (p, row) in rows.iter().enumerate() {
            for &t in row {
                buf.observe(p + 1, shift + scale * t).unwrap();
            }
        }
        buf
    }

    proptest! {
        #[test]
        fn rows_strictly_increase(rows in observations(), horizon in 1usize..20) {
            let m = predict(&build(&rows, 0, 1), horizon).unwrap();
            for row in m.end_times() {
                prop_assert!(row.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn shift_equivariant(rows in observations(), shift in 0u64..100_000, horizon in 1usize..10) {
            let base = predict(&build(&rows, 0, 1), horizon).unwrap().end_times();
            let moved = predict(&build(&rows, shift, 1), horizon).unwrap().end_times();
            for (a, b) in base.iter().zip(&moved) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert_eq!(x + shift, *y);
                }
            }
        }

        #[test]
        fn scale_equivariant_when_mean_is_exact(steps in prop::collection::vec(1u64..200, 1..4),
                                                scale in 1u64..10, horizon in 1usize..10) {
            // equal intervals keep the mean integral under any scale
            let step = steps[0];
            let row: Vec<Millis> = (0..=steps.len() as u64).map(|i| i * step).collect();
            let base = predict(&build(std::slice::from_ref(&row), 0, 1), horizon).unwrap().end_times();
            let scaled = predict(&build(&[row], 0, scale), horizon).unwrap().end_times();
            for (x, y) in base[0].iter().zip(&scaled[0]) {
                prop_assert_eq!(x * scale, *y);
            }
        }
    }
}
