//! Declarative run configuration, read from TOML.
//!
//! A run configuration names the process to simulate, its decomposition into
//! subsystems, the lifting dictionaries, noise, the train/validate/test split
//! and the estimator tuning. The shipped presets live in `presets/` next to
//! this crate's manifest.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lifting::LiftingDictionary;
use crate::simulate::{CstrConfig, NoiseSpec, SoilConfig};
use crate::topology::SubsystemTopology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessConfig {
    Cstr(CstrConfig),
    Agro(SoilConfig),
    CustomLinear(LinearSpec),
}

impl ProcessConfig {
    pub fn cstr(&self) -> Option<&CstrConfig> {
        match self {
            ProcessConfig::Cstr(c) => Some(c),
            _ => None,
        }
    }

    pub fn soil(&self) -> Option<&SoilConfig> {
        match self {
            ProcessConfig::Agro(c) => Some(c),
            _ => None,
        }
    }

    pub fn linear(&self) -> Option<&LinearSpec> {
        match self {
            ProcessConfig::CustomLinear(c) => Some(c),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProcessConfig::Cstr(_) => "cstr",
            ProcessConfig::Agro(_) => "agro",
            ProcessConfig::CustomLinear(_) => "custom-linear",
        }
    }
}

/// Random stable coupled linear process generated from `model_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub model_seed: u64,
    #[serde(default = "one")]
    pub hold_samples: usize,
}

fn one() -> usize {
    1
}

/// How raw variables are mapped before lifting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    /// Min-max to [0, 1] over the training data.
    #[default]
    Minmax,
    /// Raw variables are used unchanged.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingOverride {
    pub subsystem: usize,
    #[serde(default)]
    pub state: Option<Vec<String>>,
    #[serde(default)]
    pub input: Option<Vec<String>>,
}

/// Basis families applied elementwise; per-subsystem overrides are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingConfig {
    pub state: Vec<String>,
    #[serde(default)]
    pub input: Vec<String>,
    #[serde(default)]
    pub overrides: Vec<LiftingOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: usize,
    pub validate: usize,
    pub test: usize,
}

impl DataSplit {
    pub fn total(&self) -> usize {
        self.train + self.validate + self.test
    }
}

/// Initial guess handed to the estimators at the first test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialGuess {
    /// True initial state plus `guess - reference`.
    Offset {
        reference: Vec<f64>,
        guess: Vec<f64>,
    },
    /// True initial state plus a constant added to every component.
    Uniform {
        offset: f64,
    },
    Absolute {
        values: Vec<f64>,
    },
}

impl InitialGuess {
    pub fn resolve(&self, truth: &[f64]) -> Result<Vec<f64>> {
        let n = truth.len();
        match self {
            InitialGuess::Offset { reference, guess } => {
                if reference.len() != n || guess.len() != n {
                    return Err(Error::Config(format!(
                        "initial guess offset needs {n} reference and guess values"
                    )));
                }
                Ok((0..n).map(|i| truth[i] + guess[i] - reference[i]).collect())
            }
            InitialGuess::Uniform { offset } => Ok(truth.iter().map(|x| x + offset).collect()),
            InitialGuess::Absolute { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!("initial guess needs {n} values")));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Scalar estimator tuning, expanded to diagonal matrices per subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub horizon: usize,
    pub arrival_weight: f64,
    pub process_weight: f64,
    /// Weight per measurement channel.
    pub measurement_weight: f64,
    /// Bounds on original states, one per global state; empty means unbounded.
    #[serde(default)]
    pub lower: Vec<f64>,
    #[serde(default)]
    pub upper: Vec<f64>,
    pub initial_guess: InitialGuess,
    /// Local solves per estimator per instant.
    #[serde(default = "one")]
    pub iterations: usize,
}

impl EstimatorSettings {
    /// Lower and upper bounds for global state `g` (±inf when unset).
    pub fn bounds(&self, g: usize) -> (f64, f64) {
        (
            self.lower.get(g).copied().unwrap_or(f64::NEG_INFINITY),
            self.upper.get(g).copied().unwrap_or(f64::INFINITY),
        )
    }
}

/// Operating point for the Taylor-linearized comparison model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub steady_state: Vec<f64>,
    pub steady_input: Vec<f64>,
    #[serde(default = "default_jacobian_step")]
    pub jacobian_step: f64,
}

fn default_jacobian_step() -> f64 {
    1e-6
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::none()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub process: ProcessConfig,
    pub topology: SubsystemTopology,
    pub lifting: LiftingConfig,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub scaling: ScalingMode,
    pub split: DataSplit,
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let text = self.to_toml().unwrap_or_else(|_| format!("{self:?}"));
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let topo = self.topology()?;
        let n = topo.n_states;
        match &self.process {
            ProcessConfig::Cstr(c) => {
                c.validate()?;
                if n != crate::simulate::CSTR_STATES || topo.n_inputs != c.heat_lower.len() {
                    return Err(Error::Config(
                        "cstr topology must cover 8 states and 4 inputs".into(),
                    ));
                }
            }
            ProcessConfig::Agro(s) => {
                s.validate()?;
                if n != s.compartments || topo.n_inputs != 1 {
                    return Err(Error::Config(
                        "agro topology must cover every compartment and one input".into(),
                    ));
                }
            }
            ProcessConfig::CustomLinear(_) => {}
        }
        self.noise.validate()?;
        for (name, v, len) in [
            ("process_std", &self.noise.process_std, n),
            (
                "measurement_std",
                &self.noise.measurement_std,
                topo.total_measurements(),
            ),
        ] {
            if v.len() > 1 && v.len() != len {
                return Err(Error::Config(format!(
                    "noise.{name} needs 0, 1 or {len} values"
                )));
            }
        }
        let e = &self.estimator;
        if e.horizon == 0 {
            return Err(Error::Config("estimator horizon must be >= 1".into()));
        }
        if e.iterations == 0 {
            return Err(Error::Config("estimator iterations must be >= 1".into()));
        }
        for (name, w) in [
            ("arrival_weight", e.arrival_weight),
            ("process_weight", e.process_weight),
            ("measurement_weight", e.measurement_weight),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("estimator.{name} must be positive")));
            }
        }
        for (name, b) in [("lower", &e.lower), ("upper", &e.upper)] {
            if !b.is_empty() && b.len() != n {
                return Err(Error::Config(format!("estimator.{name} needs {n} values")));
            }
        }
        for g in 0..n {
            let (lo, hi) = e.bounds(g);
            if lo > hi || lo.is_nan() || hi.is_nan() {
                return Err(Error::Config(format!(
                    "estimator bounds for state {g} are inconsistent"
                )));
            }
        }
        if self.split.train < 2 || self.split.test <= e.horizon {
            return Err(Error::Config(
                "split needs >= 2 training samples and a test window longer than the horizon"
                    .into(),
            ));
        }
        if let Some(b) = &self.baseline {
            if b.steady_state.len() != n || b.steady_input.len() != topo.n_inputs {
                return Err(Error::Config(
                    "baseline operating point has wrong dimensions".into(),
                ));
            }
        }
        Ok(())
    }

    /// State and input dictionaries per subsystem.
    pub fn dictionaries(&self) -> Result<(Vec<LiftingDictionary>, Vec<LiftingDictionary>)> {
        let m = self.topology.subsystems.len();
        for o in &self.lifting.overrides {
            if o.subsystem >= m {
                return Err(Error::Config(format!(
                    "lifting override for subsystem {} outside 0..{m}",
                    o.subsystem
                )));
            }
        }
        let mut states = Vec::with_capacity(m);
        let mut inputs = Vec::with_capacity(m);
        for (i, s) in self.topology.subsystems.iter().enumerate() {
            let o = self.lifting.overrides.iter().find(|o| o.subsystem == i);
            let state_names = o
                .and_then(|o| o.state.as_ref())
                .unwrap_or(&self.lifting.state);
            let input_names = o
                .and_then(|o| o.input.as_ref())
                .unwrap_or(&self.lifting.input);
            let families = state_names
                .iter()
                .map(|n| n.parse())
                .collect::<Result<Vec<_>>>()?;
            states.push(LiftingDictionary::for_state(&families, s.n_x())?);
            inputs.push(LiftingDictionary::parse(input_names, s.n_u())?);
        }
        Ok((states, inputs))
    }

    /// Topology with lifted dimensions filled in from the dictionaries.
    pub fn topology(&self) -> Result<SubsystemTopology> {
        let (states, inputs) = self.dictionaries()?;
        let mut subsystems = self.topology.subsystems.clone();
        for (i, s) in subsystems.iter_mut().enumerate() {
            s.lifted_dim = states[i].output_dim();
            s.lifted_input_dim = inputs[i].output_dim();
        }
        SubsystemTopology::new(self.topology.n_states, self.topology.n_inputs, subsystems)
    }

    /// Diagonal weight matrices `(P0, Q, R)` for subsystem `i`.
    pub fn weights(
        &self,
        topology: &SubsystemTopology,
        i: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let s = topology.subsystem(i);
        let e = &self.estimator;
        (
            DMatrix::identity(s.n_z(), s.n_z()) * e.arrival_weight,
            DMatrix::identity(s.n_z(), s.n_z()) * e.process_weight,
            DMatrix::identity(s.n_y(), s.n_y()) * e.measurement_weight,
        )
    }
}

/// The configurations shipped with the crate.
pub mod presets {
    use super::RunConfig;

    pub const CSTR: &str = include_str!("../presets/cstr.toml");
    pub const AGRO: &str = include_str!("../presets/agro.toml");
    pub const LINEAR: &str = include_str!("../presets/linear.toml");

    pub fn cstr() -> RunConfig {
        RunConfig::from_toml(CSTR).expect("cstr preset parses")
    }

    pub fn agro() -> RunConfig {
        RunConfig::from_toml(AGRO).expect("agro preset parses")
    }

    pub fn linear() -> RunConfig {
        RunConfig::from_toml(LINEAR).expect("linear preset parses")
    }

    pub fn by_name(name: &str) -> Option<RunConfig> {
        match name {
            "cstr" | "paper-cstr" => Some(cstr()),
            "agro" | "loam" => Some(agro()),
            "linear" | "custom-linear" => Some(linear()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for cfg in [presets::cstr(), presets::agro(), presets::linear()] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn cstr_preset_dimensions() {
        let cfg = presets::cstr();
        let topo = cfg.topology().unwrap();
        assert_eq!(topo.m(), 4);
        assert!(topo.subsystems.iter().all(|s| s.n_z() == 6 && s.n_v() == 2));
        assert_eq!(topo.subsystem(0).neighbors, vec![1, 3]);
        assert_eq!(cfg.split.total(), 2000);
        assert_eq!(cfg.estimator.horizon, 3);
    }

    #[test]
    fn agro_preset_dimensions() {
        let cfg = presets::agro();
        let topo = cfg.topology().unwrap();
        assert_eq!(topo.m(), 8);
        assert!(topo.subsystems.iter().all(|s| s.n_z() == 36));
        assert_eq!(topo.subsystem(0).n_v(), 3);
        assert!(topo.subsystems[1..].iter().all(|s| s.n_v() == 0));
        // sensors at compartments 12i-10 and 12i (one-based)
        let measured: Vec<usize> = topo.measured_states().iter().map(|g| g + 1).collect();
        let expected: Vec<usize> = (1..=8).flat_map(|i| [12 * i - 10, 12 * i]).collect();
        assert_eq!(measured, expected);
    }

    #[test]
    fn toml_round_trip_preserves_config_and_hash() {
        let cfg = presets::cstr();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn unknown_basis_is_config_error() {
        let mut cfg = presets::linear();
        cfg.lifting.state = vec!["identity".into(), "sine".into()];
        assert!(cfg.validate().unwrap_err().is_config_error());
    }

    #[test]
    fn offset_guess_adds_difference() {
        let g = InitialGuess::Offset {
            reference: vec![1.0, 2.0],
            guess: vec![1.5, 1.0],
        };
        assert_eq!(g.resolve(&[10.0, 10.0]).unwrap(), vec![10.5, 9.0]);
    }
}
