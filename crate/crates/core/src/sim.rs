//! Discrete-event simulation of `n` workers and one parameter server.
//!
//! Worker cycle: pull weights, compute, push. A push reaches the server after
//! half the transmission time, waits in a FIFO queue, and is applied after
//! `server_update_ms`. What happens next depends on the [`SyncModel`]:
//!
//! - ASP: the pull is granted as soon as the push is applied.
//! - SSP: like ASP, but a worker may not start iteration `j` while
//!   `j - slowest_completed > s`.
//! - BSP(k) and ElasticBSP: each superstep assigns every worker a target
//!   iteration count. Pushes before the target are applied immediately; the
//!   target push is held and the worker blocks. When the last worker blocks
//!   the barrier completes, held gradients are applied together and everyone
//!   pulls. BSP uses `k` for every worker; ElasticBSP predicts the next `R`
//!   iteration ends from observed intervals and takes targets from the ZipLine
//!   window, after two BSP(1) warm-up supersteps.
//!
//! The clock is integer milliseconds and ties are broken by event kind then
//! worker id, so a run is a pure function of its inputs.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::{predict, ObservationBuffer, PredictError, PredictorMode, DEFAULT_WINDOW};
use crate::search::{zipline, SearchError};
use crate::timeline::{
    merge, ordered_profiles, Jitter, Millis, PredictionMatrix, TimelineError, WorkerProfile,
};

/// BSP(1) supersteps run before the first ElasticBSP plan.
pub const WARMUP_SUPERSTEPS: usize = 2;

pub const DEFAULT_SERVER_UPDATE_MS: Millis = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("simulation length must be positive")]
    EmptyRun,
    #[error(transparent)]
    Profiles(#[from] TimelineError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("observer stopped the simulation at {time} ms")]
    Aborted { time: Millis },
    #[error("event queue drained with workers {0:?} still blocked")]
    Deadlock(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncModel {
    Bsp {
        iters_per_superstep: u64,
    },
    Asp,
    Ssp {
        threshold: u64,
    },
    Elastic {
        lookahead: usize,
        window: usize,
        mode: PredictorMode,
    },
}

impl SyncModel {
    pub fn bsp() -> Self {
        SyncModel::Bsp {
            iters_per_superstep: 1,
        }
    }

    pub fn ssp(threshold: u64) -> Self {
        SyncModel::Ssp { threshold }
    }

    pub fn elastic(lookahead: usize) -> Self {
        SyncModel::Elastic {
            lookahead,
            window: DEFAULT_WINDOW,
            mode: PredictorMode::MeanInterval,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidModel(msg.to_string()));
        match *self {
            SyncModel::Bsp {
                iters_per_superstep: 0,
            } => bad("BSP needs k >= 1"),
            SyncModel::Ssp { threshold: 0 } => bad("SSP needs s >= 1"),
            SyncModel::Elastic { lookahead, .. } if lookahead < 2 => bad("ElasticBSP needs R >= 2"),
            SyncModel::Elastic { window: 0, .. } => bad("ElasticBSP needs a predictor window >= 1"),
            _ => Ok(()),
        }
    }

    /// Short lowercase name: `bsp`, `asp`, `ssp` or `elastic`.
    pub fn kind(&self) -> &'static str {
        match self {
            SyncModel::Bsp { .. } => "bsp",
            SyncModel::Asp => "asp",
            SyncModel::Ssp { .. } => "ssp",
            SyncModel::Elastic { .. } => "elastic",
        }
    }

    fn has_barriers(&self) -> bool {
        matches!(self, SyncModel::Bsp { .. } | SyncModel::Elastic { .. })
    }
}

impl fmt::Display for SyncModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyncModel::Bsp {
                iters_per_superstep,
            } => write!(f, "bsp_k{iters_per_superstep}"),
            SyncModel::Asp => write!(f, "asp"),
            SyncModel::Ssp { threshold } => write!(f, "ssp_s{threshold}"),
            SyncModel::Elastic { lookahead, .. } => write!(f, "elastic_R{lookahead}"),
        }
    }
}

/// When workers stop starting new iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopCondition {
    /// ASP/SSP workers retire at the first iteration start at or after this
    /// time; barrier models stop at the first barrier at or after it.
    Duration(Millis),
    /// ASP/SSP workers retire after this many own iterations; barrier models
    /// stop at the first barrier where every worker has done at least this many.
    Iterations(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: SyncModel,
    pub stop: StopCondition,
    pub server_update_ms: Millis,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(model: SyncModel, stop: StopCondition) -> Self {
        Self {
            model,
            stop,
            server_update_ms: DEFAULT_SERVER_UPDATE_MS,
            seed: 0,
        }
    }

    pub fn server_update_ms(mut self, ms: Millis) -> Self {
        self.server_update_ms = ms;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One ElasticBSP barrier decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BarrierPlan {
    pub superstep: usize,
    /// Iterations each worker runs this superstep, by worker id.
    pub targets: Vec<u64>,
    /// Predicted barrier time (anchor of the chosen window).
    pub barrier_estimate_ms: Millis,
    /// Predicted wait of the earliest worker (spread of the chosen window).
    pub planned_wait_ms: Millis,
    /// Earliest last-predicted point over all workers; a barrier after this
    /// time means some worker ran past its lookahead.
    pub horizon_end_ms: Millis,
}

/// Barrier plan from an already predicted matrix: the ZipLine window fixes
/// one target iteration per worker.
pub fn plan_from_predictions(
    matrix: &PredictionMatrix,
    superstep: usize,
) -> Result<BarrierPlan, SearchError> {
    let result = zipline(&merge(matrix), matrix.n())?;
    let horizon_end_ms = matrix
        .rows()
        .iter()
        .map(|row| row[row.len() - 1].end_time)
        .min()
        .unwrap_or(0);
    Ok(BarrierPlan {
        superstep,
        targets: result
            .window
            .iterations()
            .into_iter()
            .map(|i| i as u64)
            .collect(),
        barrier_estimate_ms: result.window.anchor(),
        planned_wait_ms: result.spread_ms,
        horizon_end_ms,
    })
}

/// Predicts `horizon` iteration ends per worker and plans the barrier.
pub fn plan_superstep(
    buffer: &ObservationBuffer,
    horizon: usize,
    superstep: usize,
) -> Result<BarrierPlan, SimError> {
    let matrix = predict(buffer, horizon)?;
    Ok(plan_from_predictions(&matrix, superstep)?)
}

/// Schedule hooks for code that replays the simulation (e.g. training).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleEvent {
    /// The worker receives the current global weights.
    Pull { worker: usize, time: Millis },
    /// The worker's gradient is applied to the global weights now.
    Apply { worker: usize, time: Millis },
    /// The worker's gradient is held until the next barrier.
    Hold { worker: usize, time: Millis },
    /// All held gradients are applied together, in worker-id order.
    Barrier { time: Millis },
}

pub trait SimObserver {
    fn on_event(&mut self, event: ScheduleEvent) -> ControlFlow<()>;
}

impl SimObserver for () {
    fn on_event(&mut self, _: ScheduleEvent) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl<F: FnMut(ScheduleEvent) -> ControlFlow<()>> SimObserver for F {
    fn on_event(&mut self, event: ScheduleEvent) -> ControlFlow<()> {
        self(event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuperstepRecord {
    pub index: usize,
    pub warmup: bool,
    pub planned_wait_ms: Option<Millis>,
    pub barrier_estimate_ms: Option<Millis>,
    /// Barrier time minus the earliest block start: the wait of the first
    /// worker to finish, comparable to `planned_wait_ms`.
    pub realized_wait_ms: Millis,
    /// Sum over workers of barrier time minus block start.
    pub realized_total_wait_ms: Millis,
    pub barrier_time_ms: Millis,
    pub targets: Vec<u64>,
}

/// Where each worker's time went. `finish_ms` always equals the sum of the
/// other four components.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WorkerAccount {
    pub compute_ms: Millis,
    pub trans_ms: Millis,
    pub queue_ms: Millis,
    pub wait_ms: Millis,
    pub finish_ms: Millis,
    pub iterations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub model: SyncModel,
    /// Sum over workers of time spent blocked on synchronization.
    pub total_wait_ms: Millis,
    pub wall_clock_ms: Millis,
    pub workers: Vec<WorkerAccount>,
    pub supersteps: Vec<SuperstepRecord>,
    /// Largest gap in completed iterations between two workers at any instant.
    pub max_observed_staleness: u64,
    /// Largest gap between workers' iteration positions within one superstep
    /// (barrier models); equals `max_observed_staleness` for ASP/SSP.
    pub max_superstep_gap: u64,
    /// Events at which the model's bound was exceeded (SSP gap > s, barrier
    /// model in-superstep gap > max target - 1 allowed by the model).
    pub staleness_violations: u64,
    /// `gradient_staleness[k]` = number of gradients computed on weights that
    /// lagged the pushing worker by `k` iterations of the slowest worker.
    pub gradient_staleness: Vec<u64>,
    pub plan_overruns: u64,
    /// Wall time spent planning barriers; excluded from equality.
    #[serde(skip)]
    pub planning_time: Duration,
}

impl PartialEq for SimReport {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model
            && self.total_wait_ms == other.total_wait_ms
            && self.wall_clock_ms == other.wall_clock_ms
            && self.workers == other.workers
            && self.supersteps == other.supersteps
            && self.max_observed_staleness == other.max_observed_staleness
            && self.max_superstep_gap == other.max_superstep_gap
            && self.staleness_violations == other.staleness_violations
            && self.gradient_staleness == other.gradient_staleness
            && self.plan_overruns == other.plan_overruns
    }
}

impl SimReport {
    pub fn iterations(&self) -> Vec<u64> {
        self.workers.iter().map(|w| w.iterations).collect()
    }

    pub fn total_iterations(&self) -> u64 {
        self.workers.iter().map(|w| w.iterations).sum()
    }

    /// Completed iterations per simulated second, over all workers.
    pub fn throughput(&self) -> f64 {
        if self.wall_clock_ms == 0 {
            return 0.0;
        }
        self.total_iterations() as f64 * 1000.0 / self.wall_clock_ms as f64
    }

    pub fn max_gradient_staleness(&self) -> u64 {
        self.gradient_staleness.len().saturating_sub(1) as u64
    }

    /// Supersteps that ran an ElasticBSP plan (warm-up excluded).
    pub fn planned_supersteps(&self) -> impl Iterator<Item = &SuperstepRecord> {
        self.supersteps
            .iter()
            .filter(|s| s.planned_wait_ms.is_some())
    }
}

pub fn simulate(profiles: &[WorkerProfile], config: &SimConfig) -> Result<SimReport, SimError> {
    simulate_with(profiles, config, &mut ())
}

/// Runs the simulation and reports every weight-affecting event to `observer`.
pub fn simulate_with<O: SimObserver + ?Sized>(
    profiles: &[WorkerProfile],
    config: &SimConfig,
    observer: &mut O,
) -> Result<SimReport, SimError> {
    config.model.validate()?;
    match config.stop {
        StopCondition::Duration(0) | StopCondition::Iterations(0) => {
            return Err(SimError::EmptyRun)
        }
        _ => {}
    }
    let profiles = ordered_profiles(profiles)?;
    Engine::new(&profiles, config, observer)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Applied,
    Arrival,
    PullDone,
}

struct WorkerState {
    profile: WorkerProfile,
    jitter: Jitter,
    rng: ChaCha8Rng,
    completed: u64,
    in_step: u64,
    iter_start: Millis,
    arrival: Millis,
    blocked_since: Option<Millis>,
    pull_lead: u64,
    retiring: bool,
    retired: bool,
    work_clock: Millis,
    account: WorkerAccount,
}

impl WorkerState {
    fn down_ms(&self) -> Millis {
        self.profile.trans_ms - self.profile.trans_ms / 2
    }

    fn up_ms(&self) -> Millis {
        self.profile.trans_ms / 2
    }
}

struct Engine<'a, O: ?Sized> {
    config: SimConfig,
    observer: &'a mut O,
    workers: Vec<WorkerState>,
    events: BinaryHeap<Reverse<(Millis, EventKind, usize, u64)>>,
    seq: u64,
    server_queue: VecDeque<usize>,
    server_busy: bool,
    // barrier models
    targets: Vec<u64>,
    plan: Option<BarrierPlan>,
    warmup_left: usize,
    buffer: Option<ObservationBuffer>,
    supersteps: Vec<SuperstepRecord>,
    // metrics
    max_gap: u64,
    max_step_gap: u64,
    violations: u64,
    staleness: Vec<u64>,
    overruns: u64,
    planning_time: Duration,
}

impl<'a, O: SimObserver + ?Sized> Engine<'a, O> {
    fn new(
        profiles: &[WorkerProfile],
        config: &SimConfig,
        observer: &'a mut O,
    ) -> Result<Self, SimError> {
        let n = profiles.len();
        let workers = profiles
            .iter()
            .map(|&profile| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(profile.worker as u64);
                WorkerState {
                    profile,
                    jitter: Jitter::new(profile.jitter),
                    rng,
                    completed: 0,
                    in_step: 0,
                    iter_start: 0,
                    arrival: 0,
                    blocked_since: None,
                    pull_lead: 0,
                    retiring: false,
                    retired: false,
                    work_clock: 0,
                    account: WorkerAccount::default(),
                }
            })
            .collect();
        let buffer = match config.model {
            SyncModel::Elastic { window, mode, .. } => {
                let mut buffer = ObservationBuffer::with_mode(n, window, mode)?;
                for p in 1..=n {
                    buffer.observe(p, 0)?;
                }
                Some(buffer)
            }
            _ => None,
        };
        Ok(Self {
            config: *config,
            observer,
            workers,
            events: BinaryHeap::new(),
            seq: 0,
            server_queue: VecDeque::new(),
            server_busy: false,
            targets: vec![0; n],
            plan: None,
            warmup_left: WARMUP_SUPERSTEPS,
            buffer,
            supersteps: Vec::new(),
            max_gap: 0,
            max_step_gap: 0,
            violations: 0,
            staleness: Vec::new(),
            overruns: 0,
            planning_time: Duration::ZERO,
        })
    }

    fn emit(&mut self, event: ScheduleEvent, time: Millis) -> Result<(), SimError> {
        match self.observer.on_event(event) {
            ControlFlow::Continue(()) => Ok(()),
            ControlFlow::Break(()) => Err(SimError::Aborted { time }),
        }
    }

    fn schedule(&mut self, time: Millis, kind: EventKind, worker: usize) {
        self.seq += 1;
        self.events.push(Reverse((time, kind, worker, self.seq)));
    }

    fn run(mut self) -> Result<SimReport, SimError> {
        if self.config.model.has_barriers() {
            self.start_superstep(0)?;
        }
        for w in 0..self.workers.len() {
            self.grant(w, 0)?;
        }
        while let Some(Reverse((time, kind, w, _))) = self.events.pop() {
            match kind {
                EventKind::PullDone => self.on_pull_done(w, time)?,
                EventKind::Arrival => self.on_arrival(w, time),
                EventKind::Applied => self.on_applied(w, time)?,
            }
        }
        let stuck: Vec<usize> = self
            .workers
            .iter()
            .filter(|w| !w.retired)
            .map(|w| w.profile.worker)
            .collect();
        if !stuck.is_empty() {
            return Err(SimError::Deadlock(stuck));
        }
        Ok(self.report())
    }

    fn report(self) -> SimReport {
        let workers: Vec<WorkerAccount> = self.workers.into_iter().map(|w| w.account).collect();
        SimReport {
            model: self.config.model,
            total_wait_ms: workers.iter().map(|w| w.wait_ms).sum(),
            wall_clock_ms: workers.iter().map(|w| w.finish_ms).max().unwrap_or(0),
            workers,
            supersteps: self.supersteps,
            max_observed_staleness: self.max_gap,
            max_superstep_gap: self.max_step_gap,
            staleness_violations: self.violations,
            gradient_staleness: self.staleness,
            plan_overruns: self.overruns,
            planning_time: self.planning_time,
        }
    }

    /// Gap of the pushing worker over the slowest one, in the counter the
    /// model bounds (per superstep for barrier models).
    fn lead(&self, w: usize) -> u64 {
        if self.config.model.has_barriers() {
            let min = self.workers.iter().map(|s| s.in_step).min().unwrap_or(0);
            self.workers[w].in_step - min
        } else {
            let min = self.workers.iter().map(|s| s.completed).min().unwrap_or(0);
            self.workers[w].completed - min
        }
    }

    fn grant(&mut self, w: usize, time: Millis) -> Result<(), SimError> {
        let lead = self.lead(w);
        let worker = &mut self.workers[w];
        if let Some(since) = worker.blocked_since.take() {
            worker.account.wait_ms += time - since;
        }
        worker.pull_lead = lead;
        worker.iter_start = time;
        let down = worker.down_ms();
        worker.account.trans_ms += down;
        self.schedule(time + down, EventKind::PullDone, w);
        self.emit(
            ScheduleEvent::Pull {
                worker: w + 1,
                time,
            },
            time,
        )
    }

    fn asp_should_stop(&self, w: usize, time: Millis) -> bool {
        match self.config.stop {
            StopCondition::Duration(limit) => time >= limit,
            StopCondition::Iterations(limit) => self.workers[w].completed >= limit,
        }
    }

    fn retire(&mut self, w: usize, time: Millis) -> Result<(), SimError> {
        let worker = &mut self.workers[w];
        worker.retired = true;
        worker.account.finish_ms = time;
        worker.account.iterations = worker.completed;
        if matches!(self.config.model, SyncModel::Ssp { .. }) {
            self.release_ssp(time)?;
        }
        Ok(())
    }

    fn on_pull_done(&mut self, w: usize, time: Millis) -> Result<(), SimError> {
        let retire = self.workers[w].retiring
            || (!self.config.model.has_barriers() && self.asp_should_stop(w, time));
        if retire {
            return self.retire(w, time);
        }
        let worker = &mut self.workers[w];
        let compute = worker
            .jitter
            .perturb(worker.profile.compute_ms, &mut worker.rng);
        let up = worker.up_ms();
        worker.account.compute_ms += compute;
        worker.account.trans_ms += up;
        self.schedule(time + compute + up, EventKind::Arrival, w);
        Ok(())
    }

    fn on_arrival(&mut self, w: usize, time: Millis) {
        self.workers[w].arrival = time;
        self.server_queue.push_back(w);
        if !self.server_busy {
            self.start_service(time);
        }
    }

    fn start_service(&mut self, time: Millis) {
        match self.server_queue.pop_front() {
            Some(next) => {
                self.server_busy = true;
                self.schedule(
                    time + self.config.server_update_ms,
                    EventKind::Applied,
                    next,
                );
            }
            None => self.server_busy = false,
        }
    }

    fn on_applied(&mut self, w: usize, time: Millis) -> Result<(), SimError> {
        self.start_service(time);
        let worker = &mut self.workers[w];
        worker.account.queue_ms += time - worker.arrival;
        worker.completed += 1;
        worker.in_step += 1;
        worker.work_clock += time - worker.iter_start;
        let (work_clock, lead) = (worker.work_clock, worker.pull_lead as usize);
        if let Some(buffer) = self.buffer.as_mut() {
            buffer.observe(w + 1, work_clock)?;
        }
        if self.staleness.len() <= lead {
            self.staleness.resize(lead + 1, 0);
        }
        self.staleness[lead] += 1;
        self.track_gaps();

        let worker = w + 1;
        match self.config.model {
            SyncModel::Asp => {
                self.emit(ScheduleEvent::Apply { worker, time }, time)?;
                self.grant(w, time)?;
            }
            SyncModel::Ssp { .. } => {
                self.emit(ScheduleEvent::Apply { worker, time }, time)?;
                if self.ssp_may_proceed(w, time) {
                    self.grant(w, time)?;
                } else {
                    self.workers[w].blocked_since = Some(time);
                }
                self.release_ssp(time)?;
            }
            SyncModel::Bsp { .. } | SyncModel::Elastic { .. } => {
                if self.workers[w].in_step < self.targets[w] {
                    self.emit(ScheduleEvent::Apply { worker, time }, time)?;
                    self.grant(w, time)?;
                } else {
                    self.emit(ScheduleEvent::Hold { worker, time }, time)?;
                    self.workers[w].blocked_since = Some(time);
                    if self.workers.iter().all(|s| s.blocked_since.is_some()) {
                        self.complete_barrier(time)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn track_gaps(&mut self) {
        let (lo, hi) = min_max(self.workers.iter().map(|s| s.completed));
        self.max_gap = self.max_gap.max(hi - lo);
        let step_gap = match self.config.model {
            SyncModel::Bsp { .. } | SyncModel::Elastic { .. } => {
                let positions = self
                    .workers
                    .iter()
                    .zip(&self.targets)
                    .map(|(s, &t)| (s.in_step + 1).min(t));
                let (lo, hi) = min_max(positions);
                hi - lo
            }
            _ => hi - lo,
        };
        self.max_step_gap = self.max_step_gap.max(step_gap);
        let bound = match self.config.model {
            SyncModel::Ssp { threshold } => Some(threshold),
            SyncModel::Bsp {
                iters_per_superstep,
            } => Some(iters_per_superstep - 1),
            SyncModel::Elastic { lookahead, .. } => Some(lookahead as u64 - 1),
            SyncModel::Asp => None,
        };
        if bound.is_some_and(|b| step_gap > b) {
            self.violations += 1;
        }
    }

    fn ssp_may_proceed(&self, w: usize, time: Millis) -> bool {
        let SyncModel::Ssp { threshold } = self.config.model else {
            return true;
        };
        if self.asp_should_stop(w, time) {
            // the worker retires after this pull instead of starting an iteration
            return true;
        }
        let slowest = self.workers.iter().map(|s| s.completed).min().unwrap_or(0);
        self.workers[w].completed + 1 - slowest <= threshold
    }

    fn release_ssp(&mut self, time: Millis) -> Result<(), SimError> {
        for w in 0..self.workers.len() {
            let state = &self.workers[w];
            if state.blocked_since.is_some() && !state.retired && self.ssp_may_proceed(w, time) {
                self.grant(w, time)?;
            }
        }
        Ok(())
    }

    fn complete_barrier(&mut self, time: Millis) -> Result<(), SimError> {
        self.emit(ScheduleEvent::Barrier { time }, time)?;
        let starts: Vec<Millis> = self
            .workers
            .iter()
            .filter_map(|s| s.blocked_since)
            .collect();
        let earliest = starts.iter().copied().min().unwrap_or(time);
        let plan = self.plan.take();
        if plan.as_ref().is_some_and(|p| time > p.horizon_end_ms) {
            self.overruns += 1;
        }
        let index = self.supersteps.len();
        self.supersteps.push(SuperstepRecord {
            index,
            warmup: self.buffer.is_some() && plan.is_none(),
            planned_wait_ms: plan.as_ref().map(|p| p.planned_wait_ms),
            barrier_estimate_ms: plan.as_ref().map(|p| p.barrier_estimate_ms),
            realized_wait_ms: time - earliest,
            realized_total_wait_ms: starts.iter().map(|s| time - s).sum(),
            barrier_time_ms: time,
            targets: self.targets.clone(),
        });

        let stop = match self.config.stop {
            StopCondition::Duration(limit) => time >= limit,
            StopCondition::Iterations(limit) => self.workers.iter().all(|s| s.completed >= limit),
        };
        for s in &mut self.workers {
            s.in_step = 0;
            s.retiring = stop;
        }
        if !stop {
            self.start_superstep(time)?;
        }
        for w in 0..self.workers.len() {
            self.grant(w, time)?;
        }
        Ok(())
    }

    fn start_superstep(&mut self, time: Millis) -> Result<(), SimError> {
        match self.config.model {
            SyncModel::Bsp {
                iters_per_superstep,
            } => self.targets.fill(iters_per_superstep),
            SyncModel::Elastic { lookahead, .. } => {
                if self.warmup_left > 0 {
                    self.warmup_left -= 1;
                    self.targets.fill(1);
                    return Ok(());
                }
                let buffer = self.buffer.as_mut().expect("elastic model keeps a buffer");
                for p in 1..=self.workers.len() {
                    buffer.set_anchor(p, time)?;
                }
                let started = Instant::now();
                let plan = plan_superstep(buffer, lookahead, self.supersteps.len())?;
                self.planning_time += started.elapsed();
                self.targets.clone_from(&plan.targets);
                self.plan = Some(plan);
            }
            SyncModel::Asp | SyncModel::Ssp { .. } => {}
        }
        Ok(())
    }
}

fn min_max(values: impl Iterator<Item = u64>) -> (u64, u64) {
    values.fold((u64::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
