//! Data-parallel gradient descent on a strongly convex quadratic, driven by
//! the simulator's event schedule so that each model's staleness shows up in
//! the loss curve.
//!
//! Worker `p` owns the shard `(A_p, b_p)` with gradient `g_p(w) = A_p w - b_p`.
//! The full problem is `A = sum A_p`, `b = sum b_p`, optimum `w* = A^-1 b`.
//! Gradient sums always run over shards in worker-id order starting from zero,
//! which makes every trajectory bitwise reproducible.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::sim::{
    simulate_with, ScheduleEvent, SimConfig, SimError, SimReport, StopCondition, SyncModel,
};
use crate::timeline::{Millis, WorkerProfile};

/// Runs abort once the loss gap exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("problem needs at least one shard")]
    NoShards,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("shard {shard}: expected a {d}x{d} matrix and length-{d} vector")]
    ShardShape { shard: usize, d: usize },
    #[error("shard {shard} matrix is not symmetric")]
    NotSymmetric { shard: usize },
    #[error("summed matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("learning rate {eta} outside (0, {limit})")]
    LearningRate { eta: f64, limit: f64 },
    #[error("noise scale must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error("problem has {shards} shards but {workers} worker profiles were given")]
    WorkerMismatch { shards: usize, workers: usize },
    #[error("diverged at {time} ms: loss gap {loss} exceeds {limit}")]
    Diverged { time: Millis, loss: f64, limit: f64 },
    #[error(transparent)]
    Sim(SimError),
}

/// One worker's slice of the objective. `a` is row-major `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    d: usize,
    shards: Vec<Shard>,
    a: Vec<f64>,
    optimum: Vec<f64>,
    lambda_max: f64,
}

impl QuadraticProblem {
    pub fn new(d: usize, shards: Vec<Shard>) -> Result<Self, TrainError> {
        if d == 0 {
            return Err(TrainError::ZeroDimension);
        }
        if shards.is_empty() {
            return Err(TrainError::NoShards);
        }
        for (i, shard) in shards.iter().enumerate() {
            if shard.a.len() != d * d || shard.b.len() != d {
                return Err(TrainError::ShardShape { shard: i + 1, d });
            }
            let symmetric =
                (0..d).all(|r| (0..r).all(|c| shard.a[r * d + c] == shard.a[c * d + r]));
            if !symmetric {
                return Err(TrainError::NotSymmetric { shard: i + 1 });
            }
        }
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for shard in &shards {
            add_assign(&mut a, &shard.a);
            add_assign(&mut b, &shard.b);
        }
        let full = DMatrix::from_row_slice(d, d, &a);
        let optimum = full
            .clone()
            .cholesky()
            .ok_or(TrainError::NotPositiveDefinite)?
            .solve(&DVector::from_column_slice(&b));
        let lambda_max = full.symmetric_eigenvalues().max();
        Ok(Self {
            d,
            shards,
            a,
            optimum: optimum.as_slice().to_vec(),
            lambda_max,
        })
    }

    /// Random well-conditioned problem split over `n` shards:
    /// `A_p = M_p^T M_p / d + (1/n) I` with standard normal `M_p` and `b_p`.
    pub fn random(d: usize, n: usize, seed: u64) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shards = (0..n)
            .map(|_| {
                let m: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
                let mut a = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..d {
                        let mut s = 0.0;
                        for k in 0..d {
                            s += m[k * d + r] * m[k * d + c];
                        }
                        a[r * d + c] = s / d as f64;
                    }
                    a[r * d + r] += 1.0 / n as f64;
                }
                let b = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                Shard { a, b }
            })
            .collect();
        Self::new(d, shards)
    }

    /// Random problem of the same form as [`QuadraticProblem::random`] split
    /// into `n` identical shards `(A / n, b / n)`, so no worker's data pulls
    /// the optimum towards itself.
    pub fn replicated(d: usize, n: usize, seed: u64) -> Result<Self, TrainError> {
        let whole = Self::random(d, 1, seed)?;
        let Shard { a, b } = &whole.shards[0];
        let scale = 1.0 / n as f64;
        let shard = Shard {
            a: a.iter().map(|x| x * scale).collect(),
            b: b.iter().map(|x| x * scale).collect(),
        };
        Self::new(d, vec![shard; n])
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn n(&self) -> usize {
        self.shards.len()
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `0.1 / lambda_max(A)`.
    pub fn default_learning_rate(&self) -> f64 {
        0.1 / self.lambda_max
    }

    /// Writes `A_p w - b_p` for shard `p` (0-based) into `out`.
    pub fn shard_gradient(&self, p: usize, w: &[f64], out: &mut [f64]) {
        let Shard { a, b } = &self.shards[p];
        let d = self.d;
        for r in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += a[r * d + c] * w[c];
            }
            out[r] = s - b[r];
        }
    }

    /// Sum of shard gradients in shard order.
    pub fn full_gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; self.d];
        let mut g = vec![0.0; self.d];
        for p in 0..self.n() {
            self.shard_gradient(p, w, &mut g);
            add_assign(&mut total, &g);
        }
        total
    }

    /// `f(w) - f(w*) = (w - w*)^T A (w - w*) / 2`.
    pub fn loss_gap(&self, w: &[f64]) -> f64 {
        let d = self.d;
        let e: Vec<f64> = w.iter().zip(&self.optimum).map(|(x, o)| x - o).collect();
        let mut s = 0.0;
        for (row, er) in self.a.chunks_exact(d).zip(&e) {
            let dot = row.iter().zip(&e).fold(0.0, |acc, (a, x)| acc + a * x);
            s += er * dot;
        }
        0.5 * s
    }
}

fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

fn step(w: &mut [f64], eta: f64, g: &[f64]) {
    for (wi, gi) in w.iter_mut().zip(g) {
        *wi -= eta * gi;
    }
}

/// Serial full-batch gradient descent from `w = 0`; returns the loss gap
/// after each of `steps` updates.
pub fn serial_descent(problem: &QuadraticProblem, eta: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0; problem.dimension()];
    let losses = (0..steps)
        .map(|_| {
            let g = problem.full_gradient(&w);
            step(&mut w, eta, &g);
            problem.loss_gap(&w)
        })
        .collect();
    (w, losses)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub model: SyncModel,
    pub stop: StopCondition,
    pub noise: f64,
    pub server_update_ms: Millis,
    pub seed: u64,
}

impl TrainConfig {
    /// Default step `0.1 / lambda_max`, no gradient noise.
    pub fn new(problem: &QuadraticProblem, model: SyncModel, stop: StopCondition) -> Self {
        Self {
            learning_rate: problem.default_learning_rate(),
            model,
            stop,
            noise: 0.0,
            server_update_ms: crate::sim::DEFAULT_SERVER_UPDATE_MS,
            seed: 0,
        }
    }

    pub fn learning_rate(mut self, eta: f64) -> Self {
        self.learning_rate = eta;
        self
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise = sigma;
        self
    }

    pub fn server_update_ms(mut self, ms: Millis) -> Self {
        self.server_update_ms = ms;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, problem: &QuadraticProblem) -> Result<(), TrainError> {
        let limit = 2.0 / problem.lambda_max();
        let eta = self.learning_rate;
        if !(eta > 0.0 && eta < limit) {
            return Err(TrainError::LearningRate { eta, limit });
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(TrainError::Noise(self.noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSample {
    pub wall_ms: Millis,
    pub epoch: u64,
    pub loss_gap: f64,
}

#[derive(Debug, Clone)]
pub struct LossTrajectory {
    pub model: SyncModel,
    /// Epoch 0 is the starting point; epoch `e` is taken once `e * n`
    /// gradients have reached the weights.
    pub samples: Vec<LossSample>,
    pub final_weights: Vec<f64>,
    /// `version_gaps[k]` = gradients applied `k` weight versions after the
    /// pull they were computed on.
    pub version_gaps: Vec<u64>,
    pub sim: SimReport,
}

impl LossTrajectory {
    pub fn final_loss_gap(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |s| s.loss_gap)
    }
}

struct Replay<'a> {
    problem: &'a QuadraticProblem,
    eta: f64,
    noise: f64,
    rng: ChaCha8Rng,
    w: Vec<f64>,
    local: Vec<Vec<f64>>,
    pulled_version: Vec<u64>,
    held: Vec<Option<(Vec<f64>, u64)>>,
    version: u64,
    version_gaps: Vec<u64>,
    gradients: u64,
    samples: Vec<LossSample>,
    limit: f64,
    diverged: Option<(Millis, f64)>,
    scratch: Vec<f64>,
}

impl Replay<'_> {
    fn gradient(&mut self, p: usize) -> Vec<f64> {
        let mut g = std::mem::take(&mut self.scratch);
        g.resize(self.problem.dimension(), 0.0);
        self.problem.shard_gradient(p, &self.local[p], &mut g);
        if self.noise > 0.0 {
            for gi in g.iter_mut() {
                let z: f64 = self.rng.sample(StandardNormal);
                *gi += self.noise * z;
            }
        }
        g
    }

    fn log_gap(&mut self, pulled: u64) {
        let gap = (self.version - pulled) as usize;
        if self.version_gaps.len() <= gap {
            self.version_gaps.resize(gap + 1, 0);
        }
        self.version_gaps[gap] += 1;
    }

    /// Counts `k` gradients as having reached the weights and samples the
    /// loss at each completed epoch.
    fn absorbed(&mut self, k: u64, time: Millis) -> ControlFlow<()> {
        let n = self.problem.n() as u64;
        let before = self.gradients / n;
        self.gradients += k;
        let after = self.gradients / n;
        if after == before {
            return ControlFlow::Continue(());
        }
        let loss = self.problem.loss_gap(&self.w);
        for epoch in before + 1..=after {
            self.samples.push(LossSample {
                wall_ms: time,
                epoch,
                loss_gap: loss,
            });
        }
        if !loss.is_finite() || loss > self.limit {
            self.diverged = Some((time, loss));
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }

    fn on_event(&mut self, event: ScheduleEvent) -> ControlFlow<()> {
        match event {
            ScheduleEvent::Pull { worker, .. } => {
                let p = worker - 1;
                self.local[p].clone_from(&self.w);
                self.pulled_version[p] = self.version;
                ControlFlow::Continue(())
            }
            ScheduleEvent::Apply { worker, time } => {
                let p = worker - 1;
                let g = self.gradient(p);
                step(&mut self.w, self.eta, &g);
                self.scratch = g;
                self.log_gap(self.pulled_version[p]);
                self.version += 1;
                self.absorbed(1, time)
            }
            ScheduleEvent::Hold { worker, .. } => {
                let p = worker - 1;
                let g = self.gradient(p);
                self.held[p] = Some((g, self.pulled_version[p]));
                ControlFlow::Continue(())
            }
            ScheduleEvent::Barrier { time } => {
                let mut total = vec![0.0; self.problem.dimension()];
                let mut count = 0;
                for p in 0..self.held.len() {
                    if let Some((g, pulled)) = self.held[p].take() {
                        add_assign(&mut total, &g);
                        self.log_gap(pulled);
                        count += 1;
                    }
                }
                step(&mut self.w, self.eta, &total);
                self.version += 1;
                self.absorbed(count, time)
            }
        }
    }
}

/// Replays the simulated schedule of `config.model` on `profiles`, applying
/// real gradients of `problem` from `w = 0`.
pub fn train(
    problem: &QuadraticProblem,
    config: &TrainConfig,
    profiles: &[WorkerProfile],
) -> Result<LossTrajectory, TrainError> {
    config.validate(problem)?;
    if profiles.len() != problem.n() {
        return Err(TrainError::WorkerMismatch {
            shards: problem.n(),
            workers: profiles.len(),
        });
    }
    let n = problem.n();
    let w = vec![0.0; problem.dimension()];
    let initial = problem.loss_gap(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let mut replay = Replay {
        problem,
        eta: config.learning_rate,
        noise: config.noise,
        rng,
        local: vec![w.clone(); n],
        pulled_version: vec![0; n],
        held: vec![None; n],
        version: 0,
        version_gaps: Vec::new(),
        gradients: 0,
        samples: vec![LossSample {
            wall_ms: 0,
            epoch: 0,
            loss_gap: initial,
        }],
        limit: if initial > 0.0 {
            DIVERGENCE_FACTOR * initial
        } else {
            f64::INFINITY
        },
        diverged: None,
        scratch: Vec::new(),
        w,
    };
    let sim_config = SimConfig::new(config.model, config.stop)
        .server_update_ms(config.server_update_ms)
        .seed(config.seed);
    let result = simulate_with(profiles, &sim_config, &mut |e| replay.on_event(e));
    let sim = match result {
        Ok(report) => report,
        Err(SimError::Aborted { .. }) => {
            let (time, loss) = replay.diverged.expect("only divergence aborts a replay");
            return Err(TrainError::Diverged {
                time,
                loss,
                limit: replay.limit,
            });
        }
        Err(e) => return Err(TrainError::Sim(e)),
    };
    Ok(LossTrajectory {
        model: config.model,
        samples: replay.samples,
        final_weights: replay.w,
        version_gaps: replay.version_gaps,
        sim,
    })
}
