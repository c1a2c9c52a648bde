//! Synchronization-model laboratory for parameter-server training.
//!
//! - [`timeline`]: iteration-end points, prediction matrices, trace files.
//! - [`predictor`]: extrapolates future iteration ends from recent pushes.
//! - [`search`]: ZipLine barrier selection and its baselines.
//! - [`sim`]: discrete-event simulation of BSP, ASP, SSP and ElasticBSP.
//! - [`train`]: stale-gradient SGD on a quadratic driven by the simulator.
//! - [`bench`]: scaling benchmark over worker counts and horizons.
//! - [`report`]: CSV row types for every emitted file.

pub mod bench;
pub mod predictor;
pub mod report;
pub mod search;
pub mod sim;
pub mod timeline;
pub mod train;

pub use bench::{bench_matrix, run_bench, time_algorithm, BenchError, BenchSpec, Timing};
pub use predictor::{predict, ObservationBuffer, PredictError, PredictorMode};
pub use search::{
    full_gridscan, gridscan, naive_search, zipline, zipline_matrix, Algorithm, SearchError,
    SearchResult,
};
pub use sim::{
    plan_from_predictions, plan_superstep, simulate, simulate_with, BarrierPlan, ScheduleEvent,
    SimConfig, SimError, SimObserver, SimReport, StopCondition, SuperstepRecord, SyncModel,
};
pub use timeline::{
    generate_trace, merge, read_trace, write_trace, MergedTimeline, Millis, PredictionMatrix,
    TimelineError, TimestampPoint, Window, WorkerProfile,
};
pub use train::{
    serial_descent, train, LossSample, LossTrajectory, QuadraticProblem, Shard, TrainConfig,
    TrainError,
};
