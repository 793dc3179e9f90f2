//! Centralized and partition-based distributed moving horizon estimation on
//! identified lifted models, plus the Taylor-linearized comparison model.
//!
//! Each instant runs in two phases. Every estimator first propagates its
//! prior `zbar_i(k-N)` from its own and its neighbors' previous window start;
//! the priors are exchanged, and then every local window QP is solved
//! independently. For `k <= N` the estimate is the open-loop prediction from
//! the lifted initial guess.

mod baseline;
mod covariance;
mod window;

pub use baseline::linearized_baseline;
pub use covariance::{
    distributed_covariance_update, filter_update, riccati_update, CovarianceRule,
};
pub use window::{CoordinateBound, WindowData, WindowProblem, WindowSolution};

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::EstimatorSettings;
use crate::error::{Error, Result};
use crate::identify::{KoopmanModel, KoopmanSubsystemModel, Scaler};
use crate::linalg::{block_diag, max_asymmetry, min_eigenvalue};
use crate::predict::{scaled_error_norms, scaled_rmse, GlobalModel, StackedMatrices};
use crate::qp::{QpOptions, QpSolver};
use crate::simulate::Trajectory;
use crate::topology::SubsystemTopology;

/// Tuning of the estimators of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub horizon: usize,
    /// `P_{i,0}` per subsystem.
    pub arrival: Vec<DMatrix<f64>>,
    /// `Q_i` per subsystem.
    pub process: Vec<DMatrix<f64>>,
    /// `R_i` per subsystem, sized to its sensors.
    pub measurement: Vec<DMatrix<f64>>,
    /// Bounds on the original (unscaled) states, `±inf` where absent.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Unscaled initial guess `xbar_0`.
    pub initial_guess: Vec<f64>,
    /// Local solves per estimator per instant.
    pub iterations: usize,
    /// Solve the local problems of one instant on the rayon pool.
    pub parallel: bool,
}

impl EstimatorConfig {
    /// Scalar-weighted configuration for `topology`.
    pub fn from_settings(
        settings: &EstimatorSettings,
        topology: &SubsystemTopology,
        initial_guess: Vec<f64>,
    ) -> Self {
        let eye = |n: usize, v: f64| DMatrix::identity(n, n) * v;
        let n = topology.n_states;
        let (lower, upper) = (0..n).map(|g| settings.bounds(g)).unzip();
        EstimatorConfig {
            horizon: settings.horizon,
            arrival: topology
                .subsystems
                .iter()
                .map(|s| eye(s.n_z(), settings.arrival_weight))
                .collect(),
            process: topology
                .subsystems
                .iter()
                .map(|s| eye(s.n_z(), settings.process_weight))
                .collect(),
            measurement: topology
                .subsystems
                .iter()
                .map(|s| eye(s.n_y(), settings.measurement_weight))
                .collect(),
            lower,
            upper,
            initial_guess,
            iterations: settings.iterations,
            parallel: true,
        }
    }

    pub fn validate(&self, topology: &SubsystemTopology) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("estimation window must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config(
                "at least one local solve per instant is required".into(),
            ));
        }
        let m = topology.m();
        if self.arrival.len() != m || self.process.len() != m || self.measurement.len() != m {
            return Err(Error::dim("estimator weights", m, self.arrival.len()));
        }
        for (i, s) in topology.subsystems.iter().enumerate() {
            let check = |name: &str, w: &DMatrix<f64>, n: usize| -> Result<()> {
                if w.shape() != (n, n) {
                    return Err(Error::dim(format!("{name}_{i}"), n, w.nrows()));
                }
                if n > 0
                    && (max_asymmetry(w) > 1e-12 * w.amax().max(1.0) || min_eigenvalue(w) <= 0.0)
                {
                    return Err(Error::Config(format!(
                        "{name}_{i} must be symmetric positive definite"
                    )));
                }
                Ok(())
            };
            check("P", &self.arrival[i], s.n_z())?;
            check("Q", &self.process[i], s.n_z())?;
            check("R", &self.measurement[i], s.n_y())?;
        }
        let n = topology.n_states;
        if self.lower.len() != n || self.upper.len() != n || self.initial_guess.len() != n {
            return Err(Error::dim("state bounds", n, self.lower.len()));
        }
        if let Some(g) = (0..n).find(|&g| {
            self.lower[g] > self.upper[g] || self.lower[g].is_nan() || self.upper[g].is_nan()
        }) {
            return Err(Error::Config(format!(
                "state {g}: lower bound exceeds upper bound"
            )));
        }
        Ok(())
    }

    /// Global `R = diag(R_1, ..., R_m)`.
    pub fn global_measurement(&self) -> DMatrix<f64> {
        block_diag(&self.measurement)
    }

    /// Global `Q = diag(Q_1, ..., Q_m)`.
    pub fn global_process(&self) -> DMatrix<f64> {
        block_diag(&self.process)
    }

    /// Scaled bounds on the state coordinates of subsystem `i`.
    pub fn scaled_bounds(&self, model: &KoopmanModel, i: usize) -> Vec<CoordinateBound> {
        let topo = &model.topology;
        let off = topo.lifted_range(i).start;
        topo.subsystem(i)
            .states
            .iter()
            .enumerate()
            .map(|(q, &g)| {
                let scale = |v: f64| {
                    if v.is_finite() {
                        model.scaler.scale_state(g, v)
                    } else {
                        v
                    }
                };
                let (a, b) = (scale(self.lower[g]), scale(self.upper[g]));
                CoordinateBound {
                    coordinate: off + q,
                    lower: a.min(b),
                    upper: a.max(b),
                }
            })
            .collect()
    }
}

/// Prior `zbar_i(k-N)` propagated from the previous window of estimator `i`.
///
/// `start` and `disturbance` are `zhat_i(k-N-1|k-1)` and `what_i(k-N-1|k-1)`,
/// `neighbors` the window starts exchanged by the neighbors, and `input` the
/// lifted local input `v_i(k-N-1)`.
pub fn propagate_prior(
    model: &KoopmanSubsystemModel,
    start: &DVector<f64>,
    disturbance: &DVector<f64>,
    neighbors: &[(usize, DVector<f64>)],
    input: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut z = &model.a_ii * start + &model.b * input + disturbance;
    for (j, a_ij) in &model.a_ij {
        let zj = neighbors
            .iter()
            .find(|(n, _)| n == j)
            .map(|(_, z)| z)
            .ok_or_else(|| Error::Config(format!("missing estimate of neighbor {j}")))?;
        z += a_ij * zj;
    }
    Ok(z)
}

/// Solves the local window problem of one estimator.
pub fn local_mhe_step(
    problem: &WindowProblem,
    data: &WindowData,
    priors: &DVector<f64>,
    arrival: &DMatrix<f64>,
    solver: &mut QpSolver,
) -> Result<WindowSolution> {
    problem.solve(data, priors, arrival, solver)
}

/// Solves the centralized window problem; `problem` must cover every coordinate.
pub fn centralized_mhe_step(
    problem: &WindowProblem,
    data: &WindowData,
    prior: &DVector<f64>,
    arrival: &DMatrix<f64>,
    solver: &mut QpSolver,
) -> Result<WindowSolution> {
    if problem.block.len() != prior.len() {
        return Err(Error::dim(
            "centralized block",
            prior.len(),
            problem.block.len(),
        ));
    }
    problem.solve(data, prior, arrival, solver)
}

/// Per-estimator state carried between instants.
#[derive(Debug, Clone)]
pub struct LocalEstimatorState {
    pub subsystem: usize,
    pub block: Range<usize>,
    /// `P_{i,k-N}, ..., P_{i,k}`.
    pub covariance: VecDeque<DMatrix<f64>>,
    /// `zhat_i(d|k)` for `d = k-N..k`.
    pub window_states: Vec<DVector<f64>>,
    /// `what_i(d|k)` for `d = k-N..k-1`.
    pub window_disturbances: Vec<DVector<f64>>,
    /// `zbar_i(k-N)`.
    pub prior: DVector<f64>,
    /// Priors `zbar_j(k-N)` received from every other estimator.
    pub neighbor_priors: Vec<(usize, DVector<f64>)>,
    solver: QpSolver,
}

/// Wall time and effort of one local solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveRecord {
    pub instant: usize,
    pub subsystem: usize,
    pub seconds: f64,
    pub iterations: usize,
    pub active: usize,
}

/// Extreme values of the arrival weights seen during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHealth {
    pub min_eigenvalue: f64,
    pub max_asymmetry: f64,
    pub updates: usize,
}

impl Default for CovarianceHealth {
    fn default() -> Self {
        CovarianceHealth {
            min_eigenvalue: f64::INFINITY,
            max_asymmetry: 0.0,
            updates: 0,
        }
    }
}

impl CovarianceHealth {
    fn record(&mut self, p: &DMatrix<f64>) {
        self.min_eigenvalue = self.min_eigenvalue.min(min_eigenvalue(p));
        self.max_asymmetry = self.max_asymmetry.max(max_asymmetry(p));
        self.updates += 1;
    }

    fn merge(&mut self, other: &CovarianceHealth) {
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.max_asymmetry = self.max_asymmetry.max(other.max_asymmetry);
        self.updates += other.updates;
    }

    pub fn is_healthy(&self) -> bool {
        self.min_eigenvalue >= -1e-10 && self.max_asymmetry <= 1e-10
    }
}

/// Estimate of one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantEstimate {
    pub instant: usize,
    /// `zhat(k|k)`.
    pub lifted: DVector<f64>,
    pub solves: Vec<SolveRecord>,
    /// Largest bound violation of the window QPs of this instant.
    pub max_violation: f64,
}

/// Estimates of a whole run, one row per instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEstimate {
    pub lifted: DMatrix<f64>,
    /// Scaled states `D zhat(k|k)`.
    pub scaled: DMatrix<f64>,
    /// Unscaled states.
    pub states: DMatrix<f64>,
    pub solves: Vec<SolveRecord>,
    pub covariance: CovarianceHealth,
    pub max_violation: f64,
}

impl GlobalEstimate {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// Scaled error norm per instant, using `scaler` for both signals.
    pub fn error_norms(&self, scaler: &Scaler, truth: &DMatrix<f64>) -> Vec<f64> {
        scaled_error_norms(scaler, truth, &self.states)
    }

    /// Root mean square of the scaled error over all instants and states.
    pub fn rmse(&self, scaler: &Scaler, truth: &DMatrix<f64>) -> f64 {
        scaled_rmse(scaler, truth, &self.states)
    }

    pub fn mean_solve_time(&self) -> f64 {
        if self.solves.is_empty() {
            return 0.0;
        }
        self.solves.iter().map(|s| s.seconds).sum::<f64>() / self.solves.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Partition {
    Distributed,
    Centralized(CovarianceRule),
}

/// Moving horizon estimator over a partition of the lifted state.
///
/// [`DistributedMhe::new`] builds one estimator per subsystem;
/// [`DistributedMhe::centralized`] a single estimator over the whole state.
#[derive(Debug, Clone)]
pub struct DistributedMhe {
    model: KoopmanModel,
    global: GlobalModel,
    stacks: Arc<StackedMatrices>,
    config: EstimatorConfig,
    partition: Partition,
    problems: Vec<WindowProblem>,
    process: Vec<DMatrix<f64>>,
    r: DMatrix<f64>,
    estimators: Vec<LocalEstimatorState>,
    health: Vec<CovarianceHealth>,
    /// `y(k-N..k)`, scaled.
    measurements: VecDeque<DVector<f64>>,
    /// `v(k-N-1..k-1)`, lifted.
    inputs: VecDeque<DVector<f64>>,
    /// Open-loop state used before the first solve.
    open_loop: DVector<f64>,
    clip_lower: DVector<f64>,
    clip_upper: DVector<f64>,
    next_instant: usize,
}

impl DistributedMhe {
    pub fn new(model: KoopmanModel, config: EstimatorConfig) -> Result<Self> {
        Self::build(model, config, Partition::Distributed)
    }

    pub fn centralized(
        model: KoopmanModel,
        config: EstimatorConfig,
        rule: CovarianceRule,
    ) -> Result<Self> {
        Self::build(model, config, Partition::Centralized(rule))
    }

    fn build(model: KoopmanModel, config: EstimatorConfig, partition: Partition) -> Result<Self> {
        model.validate()?;
        config.validate(&model.topology)?;
        let topo = model.topology.clone();
        let global = model.global()?;
        let stacks = global.stacked(config.horizon);
        let r = config.global_measurement();
        let n = topo.total_lifted();
        let mut bounds: Vec<Vec<CoordinateBound>> = (0..topo.m())
            .map(|i| config.scaled_bounds(&model, i))
            .collect();

        let (blocks, process, arrival): (Vec<Range<usize>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) =
            match partition {
                Partition::Distributed => (
                    (0..topo.m()).map(|i| topo.lifted_range(i)).collect(),
                    config.process.clone(),
                    config.arrival.clone(),
                ),
                Partition::Centralized(_) => {
                    bounds = vec![bounds.concat()];
                    (
                        vec![0..n],
                        vec![config.global_process()],
                        vec![block_diag(&config.arrival)],
                    )
                }
            };

        let mut clip_lower = DVector::from_element(n, f64::NEG_INFINITY);
        let mut clip_upper = DVector::from_element(n, f64::INFINITY);
        for b in bounds.iter().flatten() {
            clip_lower[b.coordinate] = b.lower;
            clip_upper[b.coordinate] = b.upper;
        }

        let problems = blocks
            .iter()
            .zip(&process)
            .zip(&bounds)
            .enumerate()
            .map(|(i, ((block, q), b))| {
                WindowProblem::new(&stacks, block.clone(), q, &r, b).map_err(|e| Error::Subsystem {
                    subsystem: i,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let z0 = model.lift_state_logged(&config.initial_guess, "initial guess")?;
        let z0 = clip(&z0, &clip_lower, &clip_upper);
        let horizon = config.horizon;
        let estimators = blocks
            .iter()
            .zip(arrival)
            .enumerate()
            .map(|(i, (block, p0))| {
                let zi = z0.rows(block.start, block.len()).into_owned();
                LocalEstimatorState {
                    subsystem: i,
                    block: block.clone(),
                    covariance: VecDeque::from(vec![p0]),
                    window_states: vec![zi.clone(); horizon + 1],
                    window_disturbances: vec![DVector::zeros(block.len()); horizon],
                    prior: zi,
                    neighbor_priors: Vec::new(),
                    solver: QpSolver::new(QpOptions::default()),
                }
            })
            .collect::<Vec<_>>();
        let health = vec![CovarianceHealth::default(); estimators.len()];
        Ok(DistributedMhe {
            model,
            global,
            stacks,
            config,
            partition,
            problems,
            process,
            r,
            estimators,
            health,
            measurements: VecDeque::new(),
            inputs: VecDeque::new(),
            open_loop: z0,
            clip_lower,
            clip_upper,
            next_instant: 0,
        })
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn estimators(&self) -> &[LocalEstimatorState] {
        &self.estimators
    }

    pub fn stacks(&self) -> &StackedMatrices {
        &self.stacks
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.config.parallel = parallel;
    }

    pub fn covariance_health(&self) -> CovarianceHealth {
        let mut h = CovarianceHealth::default();
        for e in &self.health {
            h.merge(e);
        }
        h
    }

    /// Advances the arrival weight of every estimator by one instant.
    fn update_covariances(&mut self) -> Result<()> {
        let (a, c) = (&self.global.a, &self.global.c);
        let keep = self.config.horizon + 1;
        for (idx, est) in self.estimators.iter_mut().enumerate() {
            let p = est
                .covariance
                .back()
                .expect("covariance buffer is never empty");
            let q = &self.process[idx];
            let next = match self.partition {
                Partition::Centralized(CovarianceRule::Riccati) => {
                    riccati_update(p, a, c, q, &self.r)?
                }
                _ => covariance::block_update(p, a, c, q, &self.r, est.block.clone())?.1,
            };
            self.health[idx].record(&next);
            est.covariance.push_back(next);
            while est.covariance.len() > keep {
                est.covariance.pop_front();
            }
        }
        Ok(())
    }

    /// Processes instant `k`: `y` is the scaled measurement stack `y(k)` and
    /// `v_prev` the lifted input `v(k-1)` (absent at `k = 0`).
    pub fn step(
        &mut self,
        y: DVector<f64>,
        v_prev: Option<DVector<f64>>,
    ) -> Result<InstantEstimate> {
        let k = self.next_instant;
        let horizon = self.config.horizon;
        if y.len() != self.global.c.nrows() {
            return Err(Error::dim(
                "measurement stack",
                self.global.c.nrows(),
                y.len(),
            ));
        }
        match (&v_prev, k) {
            (None, 0) => {}
            (Some(v), k) if k > 0 && v.len() == self.global.b.ncols() => {}
            _ => {
                return Err(Error::Config(format!(
                    "instant {k}: input v(k-1) must be given exactly when k > 0"
                )))
            }
        }
        self.measurements.push_back(y);
        while self.measurements.len() > horizon + 1 {
            self.measurements.pop_front();
        }
        if let Some(v) = v_prev {
            self.inputs.push_back(v);
            while self.inputs.len() > horizon + 1 {
                self.inputs.pop_front();
            }
        }
        if k >= 1 {
            self.update_covariances().map_err(|e| Error::Estimator {
                instant: k,
                subsystem: 0,
                source: Box::new(e),
            })?;
        }
        self.next_instant += 1;

        if k <= horizon {
            if k > 0 {
                let v = self.inputs.back().expect("input pushed");
                let z = &self.global.a * &self.open_loop + &self.global.b * v;
                self.open_loop = clip(&z, &self.clip_lower, &self.clip_upper);
            }
            for est in &mut self.estimators {
                let zi = self
                    .open_loop
                    .rows(est.block.start, est.block.len())
                    .into_owned();
                est.window_states.remove(0);
                est.window_states.push(zi);
            }
            return Ok(InstantEstimate {
                instant: k,
                lifted: self.open_loop.clone(),
                solves: Vec::new(),
                max_violation: 0.0,
            });
        }
        self.solve_instant(k)
    }

    fn solve_instant(&mut self, k: usize) -> Result<InstantEstimate> {
        let horizon = self.config.horizon;
        let n = self.global.n_z();
        // Phase 1: priors from the previous windows, exchanged by value.
        let starts: Vec<(usize, DVector<f64>)> = self
            .estimators
            .iter()
            .map(|e| (e.subsystem, e.window_states[0].clone()))
            .collect();
        let v_first = &self.inputs[0];
        let mut priors = DVector::zeros(n);
        for est in &self.estimators {
            let w0 = &est.window_disturbances[0];
            let zbar = match self.partition {
                Partition::Distributed => {
                    let i = est.subsystem;
                    let vr = self.model.topology.lifted_input_range(i);
                    let vi = v_first.rows(vr.start, vr.len()).into_owned();
                    let neighbors: Vec<(usize, DVector<f64>)> = self.model.subsystems[i]
                        .a_ij
                        .iter()
                        .map(|(j, _)| starts[*j].clone())
                        .collect();
                    propagate_prior(&self.model.subsystems[i], &starts[i].1, w0, &neighbors, &vi)
                        .map_err(|e| Error::Estimator {
                            instant: k,
                            subsystem: i,
                            source: Box::new(e),
                        })?
                }
                Partition::Centralized(_) => {
                    &self.global.a * &starts[0].1 + &self.global.b * v_first + w0
                }
            };
            priors
                .rows_mut(est.block.start, est.block.len())
                .copy_from(&zbar);
        }
        for est in &mut self.estimators {
            est.prior = priors.rows(est.block.start, est.block.len()).into_owned();
            est.neighbor_priors = starts
                .iter()
                .filter(|(j, _)| *j != est.subsystem)
                .map(|(j, _)| {
                    let r = self.model.topology.lifted_range(*j);
                    (*j, priors.rows(r.start, r.len()).into_owned())
                })
                .collect();
        }

        // Phase 2: independent local solves.
        let measurements: Vec<DVector<f64>> = self.measurements.iter().cloned().collect();
        let inputs: Vec<DVector<f64>> = self.inputs.iter().skip(1).cloned().collect();
        debug_assert_eq!(measurements.len(), horizon + 1);
        debug_assert_eq!(inputs.len(), horizon);
        let data = WindowData::stack(&measurements, &inputs);

        let mut anchors = priors.clone();
        let mut solutions: Vec<(WindowSolution, f64)> = Vec::new();
        for pass in 0..self.config.iterations {
            if pass > 0 {
                for (est, (sol, _)) in self.estimators.iter().zip(&solutions) {
                    anchors
                        .rows_mut(est.block.start, est.block.len())
                        .copy_from(&sol.start);
                }
            }
            let solve = |(est, problem): (&mut LocalEstimatorState, &WindowProblem)| -> Result<(WindowSolution, f64)> {
                let mut local = anchors.clone();
                local.rows_mut(est.block.start, est.block.len()).copy_from(&est.prior);
                let arrival = est.covariance.front().expect("covariance buffer is never empty");
                let t = Instant::now();
                let sol = problem
                    .solve(&data, &local, arrival, &mut est.solver)
                    .map_err(|e| Error::Estimator {
                        instant: k,
                        subsystem: est.subsystem,
                        source: Box::new(e),
                    })?;
                Ok((sol, t.elapsed().as_secs_f64()))
            };
            solutions = if self.config.parallel {
                self.estimators
                    .par_iter_mut()
                    .zip(self.problems.par_iter())
                    .map(solve)
                    .collect::<Result<Vec<_>>>()?
            } else {
                self.estimators
                    .iter_mut()
                    .zip(self.problems.iter())
                    .map(solve)
                    .collect::<Result<Vec<_>>>()?
            };
        }

        let mut lifted = DVector::zeros(n);
        let mut solves = Vec::with_capacity(solutions.len());
        let mut max_violation: f64 = 0.0;
        for (est, (sol, seconds)) in self.estimators.iter_mut().zip(solutions) {
            let b = est.block.clone();
            lifted
                .rows_mut(b.start, b.len())
                .copy_from(&sol.current(&b));
            est.window_states = sol
                .states
                .iter()
                .map(|z| z.rows(b.start, b.len()).into_owned())
                .collect();
            est.window_disturbances = sol.disturbances.clone();
            max_violation = max_violation.max(sol.max_violation);
            solves.push(SolveRecord {
                instant: k,
                subsystem: est.subsystem,
                seconds,
                iterations: sol.iterations,
                active: sol.active,
            });
        }
        if max_violation > 1e-8 {
            debug!("instant {k}: bound violation {max_violation:e}");
        }
        Ok(InstantEstimate {
            instant: k,
            lifted,
            solves,
            max_violation,
        })
    }

    /// Runs the estimator over every sample of `trajectory`.
    pub fn run(&mut self, trajectory: &Trajectory) -> Result<GlobalEstimate> {
        let len = trajectory.len();
        let n = self.global.n_z();
        let nx = self.model.topology.n_states;
        let mut lifted = DMatrix::zeros(len, n);
        let mut scaled = DMatrix::zeros(len, nx);
        let mut states = DMatrix::zeros(len, nx);
        let mut solves = Vec::new();
        let mut max_violation: f64 = 0.0;
        for k in 0..len {
            let y_raw: Vec<f64> = trajectory.measurements.row(k).iter().copied().collect();
            let y = self
                .model
                .scale_measurement(&y_raw, &trajectory.sensor_states)?;
            let v = if k > 0 {
                let u: Vec<f64> = trajectory.inputs.row(k - 1).iter().copied().collect();
                Some(self.model.lift_input(&u)?)
            } else {
                None
            };
            let est = self.step(y, v)?;
            if est.lifted.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: k,
                    detail: "state estimate".into(),
                });
            }
            let s = self.model.scaled_state(&est.lifted);
            lifted.row_mut(k).copy_from(&est.lifted.transpose());
            scaled.row_mut(k).copy_from_slice(&s);
            states
                .row_mut(k)
                .copy_from_slice(&self.model.scaler.unscale_states(&s));
            solves.extend(est.solves);
            max_violation = max_violation.max(est.max_violation);
        }
        Ok(GlobalEstimate {
            lifted,
            scaled,
            states,
            solves,
            covariance: self.covariance_health(),
            max_violation,
        })
    }
}

fn clip(z: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(z.len(), |r, _| z[r].clamp(lower[r], upper[r]))
}
