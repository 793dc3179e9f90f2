//! End-to-end steps driven by a [`RunConfig`]: simulate, identify, validate,
//! estimate and compare.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{ProcessConfig, RunConfig, ScalingMode};
use crate::dmhe::{linearized_baseline, DistributedMhe, EstimatorConfig, GlobalEstimate};
use crate::error::{Error, Result};
use crate::identify::{self, KoopmanModel, Scaler};
use crate::predict::{open_loop_predict, scaled_rmse, scaled_rmse_per_state, Prediction};
use crate::simulate::{
    add_noise, random_coupled_linear, simulate_cstr, simulate_linear, simulate_richards, Trajectory,
};

/// Ground truth of one run, split into contiguous segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Trajectory,
    pub validate: Trajectory,
    pub test: Trajectory,
}

impl Dataset {
    pub fn segments(&self) -> [(&'static str, &Trajectory); 3] {
        [
            ("train", &self.train),
            ("validate", &self.validate),
            ("test", &self.test),
        ]
    }
}

/// Simulates `config.split.total()` samples and splits them.
pub fn simulate(config: &RunConfig) -> Result<Dataset> {
    config.validate()?;
    let total = config.split.total();
    let seed = config.seed;
    let sensors = config.topology.measured_states();
    let clean = match &config.process {
        ProcessConfig::Cstr(c) => simulate_cstr(c, &config.noise, total, seed)?,
        ProcessConfig::Agro(s) => simulate_richards(s, &config.noise, total, sensors, seed)?,
        ProcessConfig::CustomLinear(spec) => {
            let mut process = random_coupled_linear(&config.topology, spec.model_seed);
            process.hold_samples = spec.hold_samples;
            simulate_linear(&process, &config.noise, total, sensors, seed)?
        }
    };
    let full = add_noise(clean, &config.noise, seed);
    let split = config.split;
    Ok(Dataset {
        train: full.slice(0, split.train),
        validate: full.slice(split.train, split.validate),
        test: full.slice(split.train + split.validate, split.test),
    })
}

/// Fits the lifted subsystem models on a training trajectory.
pub fn identify(config: &RunConfig, training: &Trajectory, parallel: bool) -> Result<KoopmanModel> {
    let topology = config.topology()?;
    let (states, inputs) = config.dictionaries()?;
    let scaler = match config.scaling {
        ScalingMode::Minmax => Scaler::fit(training)?,
        ScalingMode::None => Scaler::identity(topology.n_states, topology.n_inputs),
    };
    let t = Instant::now();
    let model = identify::identify(training, &topology, &states, &inputs, scaler, parallel)?;
    info!(
        "identified {} subsystem models in {:.3} s",
        model.subsystems.len(),
        t.elapsed().as_secs_f64()
    );
    Ok(model)
}

/// Open-loop rollout over a validation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub prediction: Prediction,
    /// Scaled RMSE per state.
    pub rmse_per_state: Vec<f64>,
    pub rmse: f64,
}

pub fn validate(model: &KoopmanModel, data: &Trajectory) -> Result<ValidationReport> {
    let x0: Vec<f64> = data.states.row(0).iter().copied().collect();
    let prediction = open_loop_predict(model, &x0, &data.inputs, data.len())?;
    Ok(ValidationReport {
        rmse_per_state: scaled_rmse_per_state(&model.scaler, &data.states, &prediction.states),
        rmse: scaled_rmse(&model.scaler, &data.states, &prediction.states),
        prediction,
    })
}

/// Estimation run with its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub estimate: GlobalEstimate,
    /// Scaled error norm per instant.
    pub error_norms: Vec<f64>,
    pub rmse: f64,
    pub mean_solve_time: f64,
}

/// Estimator configuration of `config` for `model`, with the initial guess
/// resolved against the first true state of `data`.
pub fn estimator_config(
    config: &RunConfig,
    model: &KoopmanModel,
    data: &Trajectory,
) -> Result<EstimatorConfig> {
    let x0: Vec<f64> = data.states.row(0).iter().copied().collect();
    let guess = config.estimator.initial_guess.resolve(&x0)?;
    Ok(EstimatorConfig::from_settings(
        &config.estimator,
        &model.topology,
        guess,
    ))
}

/// Runs the distributed estimator over `data`; errors are measured with `metric`.
pub fn estimate(
    config: &RunConfig,
    model: &KoopmanModel,
    data: &Trajectory,
    metric: &Scaler,
    parallel: bool,
) -> Result<EstimationReport> {
    let mut est_cfg = estimator_config(config, model, data)?;
    est_cfg.parallel = parallel;
    let mut mhe = DistributedMhe::new(model.clone(), est_cfg)?;
    let estimate = mhe.run(data)?;
    let error_norms = estimate.error_norms(metric, &data.states);
    let rmse = estimate.rmse(metric, &data.states);
    Ok(EstimationReport {
        mean_solve_time: estimate.mean_solve_time(),
        error_norms,
        rmse,
        estimate,
    })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub rmse: f64,
    pub mean_solve_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub koopman: EstimationReport,
    pub baseline: EstimationReport,
}

impl Comparison {
    /// Baseline RMSE over Koopman RMSE.
    pub fn ratio(&self) -> f64 {
        self.baseline.rmse / self.koopman.rmse
    }

    pub fn rows(&self) -> Vec<ComparisonRow> {
        vec![
            ComparisonRow {
                method: "koopman-dmhe".into(),
                rmse: self.koopman.rmse,
                mean_solve_time: self.koopman.mean_solve_time,
            },
            ComparisonRow {
                method: "linearized-dmhe".into(),
                rmse: self.baseline.rmse,
                mean_solve_time: self.baseline.mean_solve_time,
            },
        ]
    }
}

/// Taylor-linearized model of the configured reactor network.
pub fn baseline_model(config: &RunConfig, training: &Scaler) -> Result<KoopmanModel> {
    let cstr = config.process.cstr().ok_or_else(|| {
        Error::Config(format!(
            "no linearized model for process '{}'",
            config.process.name()
        ))
    })?;
    let base = config
        .baseline
        .as_ref()
        .ok_or_else(|| Error::Config("[baseline] section is required for comparison".into()))?;
    linearized_baseline(cstr, base, &config.topology()?, training)
}

/// Runs the Koopman and linearized estimators on the same test data.
///
/// Both are scored with the min-max scaler of the training data.
pub fn compare(
    config: &RunConfig,
    model: &KoopmanModel,
    dataset: &Dataset,
    parallel: bool,
) -> Result<Comparison> {
    let metric = Scaler::fit(&dataset.train)?;
    let baseline = baseline_model(config, &metric)?;
    Ok(Comparison {
        koopman: estimate(config, model, &dataset.test, &metric, parallel)?,
        baseline: estimate(config, &baseline, &dataset.test, &metric, parallel)?,
    })
}
