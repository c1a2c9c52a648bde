//! Python bindings: traces, barrier search, prediction, simulation and training.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ebsp_core::search::DEFAULT_NAIVE_BUDGET;
use ebsp_core::{predictor, search, sim, timeline, train as core_train};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(module = "ebsp", frozen, from_py_object)]
#[derive(Clone)]
struct WorkerProfile(timeline::WorkerProfile);

#[pymethods]
impl WorkerProfile {
    #[new]
    #[pyo3(signature = (worker, compute_ms, trans_ms = 0, jitter = 0.0))]
    fn new(worker: usize, compute_ms: u64, trans_ms: u64, jitter: f64) -> PyResult<Self> {
        let p = timeline::WorkerProfile::new(worker, compute_ms, trans_ms, jitter);
        p.validate().map_err(value_error)?;
        Ok(Self(p))
    }

    #[getter]
    fn worker(&self) -> usize {
        self.0.worker
    }

    #[getter]
    fn compute_ms(&self) -> u64 {
        self.0.compute_ms
    }

    #[getter]
    fn trans_ms(&self) -> u64 {
        self.0.trans_ms
    }

    #[getter]
    fn jitter(&self) -> f64 {
        self.0.jitter
    }

    fn __repr__(&self) -> String {
        format!(
            "WorkerProfile(worker={}, compute_ms={}, trans_ms={}, jitter={})",
            self.0.worker, self.0.compute_ms, self.0.trans_ms, self.0.jitter
        )
    }
}

fn profiles(list: Vec<WorkerProfile>) -> Vec<timeline::WorkerProfile> {
    list.into_iter().map(|p| p.0).collect()
}

/// Predicted (or observed) iteration-end times, one row per worker.
#[pyclass(module = "ebsp", frozen)]
struct PredictionMatrix(timeline::PredictionMatrix);

#[pymethods]
impl PredictionMatrix {
    #[new]
    fn new(rows: Vec<Vec<u64>>) -> PyResult<Self> {
        timeline::PredictionMatrix::from_rows(rows)
            .map(Self)
            .map_err(value_error)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        timeline::read_trace(path)
            .map(Self)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn write(&self, path: &str) -> PyResult<()> {
        timeline::write_trace(&self.0, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    fn rows(&self) -> Vec<Vec<u64>> {
        self.0.end_times()
    }

    fn __repr__(&self) -> String {
        format!(
            "PredictionMatrix(n={}, horizon={})",
            self.0.n(),
            self.0.horizon()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (profiles, horizon, seed = 0))]
fn generate_trace(
    profiles: Vec<WorkerProfile>,
    horizon: usize,
    seed: u64,
) -> PyResult<PredictionMatrix> {
    timeline::generate_trace(&self::profiles(profiles), horizon, seed)
        .map(PredictionMatrix)
        .map_err(value_error)
}

#[pyclass(module = "ebsp", frozen, get_all)]
struct SearchResult {
    spread_ms: u64,
    anchor_ms: u64,
    windows_examined: u64,
    elapsed_us: u128,
    /// `(worker, iter, end_ms)` per worker.
    members: Vec<(usize, usize, u64)>,
}

impl From<search::SearchResult> for SearchResult {
    fn from(r: search::SearchResult) -> Self {
        Self {
            spread_ms: r.spread_ms,
            anchor_ms: r.anchor_ms(),
            windows_examined: r.windows_examined,
            elapsed_us: r.elapsed.as_micros(),
            members: r
                .window
                .members()
                .iter()
                .map(|p| (p.worker, p.iter, p.end_time))
                .collect(),
        }
    }
}

#[pymethods]
impl SearchResult {
    fn __repr__(&self) -> String {
        format!(
            "SearchResult(spread_ms={}, anchor_ms={})",
            self.spread_ms, self.anchor_ms
        )
    }
}

/// Merged timeline as `(worker, iter, end_ms)` in scan order.
#[pyfunction]
fn merge(matrix: &PredictionMatrix) -> Vec<(usize, usize, u64)> {
    timeline::merge(&matrix.0)
        .points()
        .iter()
        .map(|p| (p.worker, p.iter, p.end_time))
        .collect()
}

#[pyfunction]
fn zipline(matrix: &PredictionMatrix) -> PyResult<SearchResult> {
    search::zipline_matrix(&matrix.0)
        .map(Into::into)
        .map_err(value_error)
}

#[pyfunction]
fn gridscan(matrix: &PredictionMatrix) -> SearchResult {
    search::gridscan(&matrix.0).into()
}

#[pyfunction]
fn full_gridscan(matrix: &PredictionMatrix) -> SearchResult {
    search::full_gridscan(&matrix.0).into()
}

#[pyfunction]
#[pyo3(signature = (matrix, budget = DEFAULT_NAIVE_BUDGET))]
fn naive_search(matrix: &PredictionMatrix, budget: u128) -> PyResult<SearchResult> {
    search::naive_search(&matrix.0, budget)
        .map(Into::into)
        .map_err(value_error)
}

fn predictor_mode(name: &str) -> PyResult<predictor::PredictorMode> {
    match name {
        "mean" => Ok(predictor::PredictorMode::MeanInterval),
        "last" => Ok(predictor::PredictorMode::LastInterval),
        other => Err(value_error(format!(
            "unknown predictor mode `{other}` (mean, last)"
        ))),
    }
}

#[pyclass(module = "ebsp")]
struct ObservationBuffer(predictor::ObservationBuffer);

#[pymethods]
impl ObservationBuffer {
    #[new]
    #[pyo3(signature = (n, window = predictor::DEFAULT_WINDOW, mode = "mean"))]
    fn new(n: usize, window: usize, mode: &str) -> PyResult<Self> {
        predictor::ObservationBuffer::with_mode(n, window, predictor_mode(mode)?)
            .map(Self)
            .map_err(value_error)
    }

    fn observe(&mut self, worker: usize, time_ms: u64) -> PyResult<()> {
        self.0.observe(worker, time_ms).map_err(value_error)
    }

    fn set_anchor(&mut self, worker: usize, time_ms: u64) -> PyResult<()> {
        self.0.set_anchor(worker, time_ms).map_err(value_error)
    }

    fn predict(&self, horizon: usize) -> PyResult<PredictionMatrix> {
        predictor::predict(&self.0, horizon)
            .map(PredictionMatrix)
            .map_err(value_error)
    }
}

#[pyclass(module = "ebsp", frozen, get_all)]
struct BarrierPlan {
    superstep: usize,
    targets: Vec<u64>,
    barrier_estimate_ms: u64,
    planned_wait_ms: u64,
    horizon_end_ms: u64,
}

#[pyfunction]
#[pyo3(signature = (buffer, horizon, superstep = 0))]
fn plan_superstep(
    buffer: &ObservationBuffer,
    horizon: usize,
    superstep: usize,
) -> PyResult<BarrierPlan> {
    let p = sim::plan_superstep(&buffer.0, horizon, superstep).map_err(value_error)?;
    Ok(BarrierPlan {
        superstep: p.superstep,
        targets: p.targets,
        barrier_estimate_ms: p.barrier_estimate_ms,
        planned_wait_ms: p.planned_wait_ms,
        horizon_end_ms: p.horizon_end_ms,
    })
}

fn sync_model(
    name: &str,
    k: u64,
    s: u64,
    lookahead: usize,
    window: usize,
    mode: &str,
) -> PyResult<sim::SyncModel> {
    Ok(match name {
        "bsp" => sim::SyncModel::Bsp {
            iters_per_superstep: k,
        },
        "asp" => sim::SyncModel::Asp,
        "ssp" => sim::SyncModel::Ssp { threshold: s },
        "elastic" => sim::SyncModel::Elastic {
            lookahead,
            window,
            mode: predictor_mode(mode)?,
        },
        other => {
            return Err(value_error(format!(
                "unknown model `{other}` (bsp, asp, ssp, elastic)"
            )))
        }
    })
}

fn stop_condition(
    duration_ms: Option<u64>,
    iterations: Option<u64>,
) -> PyResult<sim::StopCondition> {
    match (duration_ms, iterations) {
        (Some(d), None) => Ok(sim::StopCondition::Duration(d)),
        (None, Some(n)) => Ok(sim::StopCondition::Iterations(n)),
        (None, None) => Ok(sim::StopCondition::Duration(60_000)),
        (Some(_), Some(_)) => Err(value_error("give duration_ms or iterations, not both")),
    }
}

#[pyclass(module = "ebsp", frozen, get_all)]
struct SimReport {
    model: String,
    total_wait_ms: u64,
    wall_clock_ms: u64,
    iterations: Vec<u64>,
    max_observed_staleness: u64,
    max_superstep_gap: u64,
    staleness_violations: u64,
    plan_overruns: u64,
    throughput_per_s: f64,
    /// `(index, planned_wait_ms or None, realized_wait_ms, barrier_time_ms, targets)`.
    supersteps: Vec<SuperstepTuple>,
}

type SuperstepTuple = (usize, Option<u64>, u64, u64, Vec<u64>);

impl From<&sim::SimReport> for SimReport {
    fn from(r: &sim::SimReport) -> Self {
        Self {
            model: r.model.to_string(),
            total_wait_ms: r.total_wait_ms,
            wall_clock_ms: r.wall_clock_ms,
            iterations: r.iterations(),
            max_observed_staleness: r.max_observed_staleness,
            max_superstep_gap: r.max_superstep_gap,
            staleness_violations: r.staleness_violations,
            plan_overruns: r.plan_overruns,
            throughput_per_s: r.throughput(),
            supersteps: r
                .supersteps
                .iter()
                .map(|s| {
                    (
                        s.index,
                        s.planned_wait_ms,
                        s.realized_wait_ms,
                        s.barrier_time_ms,
                        s.targets.clone(),
                    )
                })
                .collect(),
        }
    }
}

#[pymethods]
impl SimReport {
    fn __repr__(&self) -> String {
        format!(
            "SimReport(model={}, total_wait_ms={}, wall_clock_ms={})",
            self.model, self.total_wait_ms, self.wall_clock_ms
        )
    }
}

#[pyfunction]
#[pyo3(signature = (
    profiles, model, *, duration_ms = None, iterations = None, server_update_ms = 1, seed = 0,
    k = 1, s = 3, lookahead = 15, window = predictor::DEFAULT_WINDOW, predictor = "mean",
))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    profiles: Vec<WorkerProfile>,
    model: &str,
    duration_ms: Option<u64>,
    iterations: Option<u64>,
    server_update_ms: u64,
    seed: u64,
    k: u64,
    s: u64,
    lookahead: usize,
    window: usize,
    predictor: &str,
) -> PyResult<SimReport> {
    let model = sync_model(model, k, s, lookahead, window, predictor)?;
    let config = sim::SimConfig::new(model, stop_condition(duration_ms, iterations)?)
        .server_update_ms(server_update_ms)
        .seed(seed);
    let report = sim::simulate(&self::profiles(profiles), &config).map_err(value_error)?;
    Ok((&report).into())
}

#[pyclass(module = "ebsp", frozen, get_all)]
struct LossTrajectory {
    model: String,
    /// `(wall_ms, epoch, loss_gap)` samples.
    samples: Vec<(u64, u64, f64)>,
    final_weights: Vec<f64>,
    final_loss_gap: f64,
    report: Py<SimReport>,
}

#[pyfunction]
#[pyo3(signature = (
    profiles, model, *, dim = 8, iterations = None, duration_ms = None, lr = None, noise = 0.0,
    replicated = false, server_update_ms = 1, seed = 0, k = 1, s = 3, lookahead = 15,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    profiles: Vec<WorkerProfile>,
    model: &str,
    dim: usize,
    iterations: Option<u64>,
    duration_ms: Option<u64>,
    lr: Option<f64>,
    noise: f64,
    replicated: bool,
    server_update_ms: u64,
    seed: u64,
    k: u64,
    s: u64,
    lookahead: usize,
) -> PyResult<LossTrajectory> {
    let profiles = self::profiles(profiles);
    let problem = if replicated {
        core_train::QuadraticProblem::replicated(dim, profiles.len(), seed)
    } else {
        core_train::QuadraticProblem::random(dim, profiles.len(), seed)
    }
    .map_err(value_error)?;
    let model = sync_model(model, k, s, lookahead, predictor::DEFAULT_WINDOW, "mean")?;
    let mut config =
        core_train::TrainConfig::new(&problem, model, stop_condition(duration_ms, iterations)?)
            .noise(noise)
            .server_update_ms(server_update_ms)
            .seed(seed);
    if let Some(lr) = lr {
        config = config.learning_rate(lr);
    }
    let t = core_train::train(&problem, &config, &profiles).map_err(value_error)?;
    Ok(LossTrajectory {
        model: t.model.to_string(),
        samples: t
            .samples
            .iter()
            .map(|s| (s.wall_ms, s.epoch, s.loss_gap))
            .collect(),
        final_loss_gap: t.final_loss_gap(),
        final_weights: t.final_weights.clone(),
        report: Py::new(py, SimReport::from(&t.sim))?,
    })
}

#[pymodule]
fn ebsp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<WorkerProfile>()?;
    m.add_class::<PredictionMatrix>()?;
    m.add_class::<SearchResult>()?;
    m.add_class::<ObservationBuffer>()?;
    m.add_class::<BarrierPlan>()?;
    m.add_class::<SimReport>()?;
    m.add_class::<LossTrajectory>()?;
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(zipline, m)?)?;
    m.add_function(wrap_pyfunction!(gridscan, m)?)?;
    m.add_function(wrap_pyfunction!(full_gridscan, m)?)?;
    m.add_function(wrap_pyfunction!(naive_search, m)?)?;
    m.add_function(wrap_pyfunction!(plan_superstep, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
