use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Scaler;
use crate::error::{Error, Result};
use crate::lifting::LiftingDictionary;
use crate::topology::SubsystemTopology;

/// Fit quality of one least-squares problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Regressor dimension.
    pub regressors: usize,
    /// Numerical rank of the regressor Gram matrix.
    pub rank: usize,
    /// Snapshot pairs used.
    pub samples: usize,
    /// Normal-equation residual relative to the data term.
    pub normal_residual: f64,
    /// Root-mean-square one-step residual of the lifted state.
    pub rms_residual: f64,
}

/// Linear model of one subsystem in lifted coordinates:
/// `z_i(k+1) = A_ii z_i(k) + sum_j A_ij z_j(k) + B_i u_i(k)`, `y_i = C_i z_i`, `x_i = D_i z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanSubsystemModel {
    pub a_ii: DMatrix<f64>,
    /// Coupling blocks in ascending neighbor order.
    pub a_ij: Vec<(usize, DMatrix<f64>)>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_dictionary: LiftingDictionary,
    pub input_dictionary: LiftingDictionary,
    pub diagnostics: Option<FitDiagnostics>,
}

impl KoopmanSubsystemModel {
    pub fn n_z(&self) -> usize {
        self.a_ii.nrows()
    }

    /// `[I 0]` selecting the original coordinates.
    pub fn reconstruction(n_x: usize, n_z: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n_x, n_z, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn coupling(&self, j: usize) -> Option<&DMatrix<f64>> {
        self.a_ij.iter().find(|(n, _)| *n == j).map(|(_, m)| m)
    }
}

/// Identified subsystem models together with the topology and scaling they assume.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub topology: SubsystemTopology,
    pub scaler: Scaler,
    pub subsystems: Vec<KoopmanSubsystemModel>,
}

impl KoopmanModel {
    pub fn new(
        topology: SubsystemTopology,
        scaler: Scaler,
        subsystems: Vec<KoopmanSubsystemModel>,
    ) -> Result<Self> {
        let model = KoopmanModel {
            topology,
            scaler,
            subsystems,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks every block shape against the topology.
    pub fn validate(&self) -> Result<()> {
        let topo = &self.topology;
        topo.validate()?;
        self.scaler.validate()?;
        if self.scaler.n_x() != topo.n_states || self.scaler.n_u() != topo.n_inputs {
            return Err(Error::dim(
                "scaler states",
                topo.n_states,
                self.scaler.n_x(),
            ));
        }
        if self.subsystems.len() != topo.m() {
            return Err(Error::dim(
                "subsystem models",
                topo.m(),
                self.subsystems.len(),
            ));
        }
        for (i, (s, m)) in topo.subsystems.iter().zip(&self.subsystems).enumerate() {
            let check = |what: &str, mat: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
                if mat.shape() != (r, c) {
                    return Err(Error::Subsystem {
                        subsystem: i,
                        source: Box::new(Error::Dimension {
                            context: format!("{what} {:?}", mat.shape()),
                            expected: r * c,
                            actual: mat.len(),
                        }),
                    });
                }
                Ok(())
            };
            check("A_ii", &m.a_ii, s.n_z(), s.n_z())?;
            check("B_i", &m.b, s.n_z(), s.n_v())?;
            check("C_i", &m.c, s.n_y(), s.n_z())?;
            check("D_i", &m.d, s.n_x(), s.n_z())?;
            if m.d != KoopmanSubsystemModel::reconstruction(s.n_x(), s.n_z()) {
                return Err(Error::Config(format!("subsystem {i}: D_i must be [I 0]")));
            }
            let neighbors: Vec<usize> = m.a_ij.iter().map(|(j, _)| *j).collect();
            if neighbors != s.neighbors {
                return Err(Error::Config(format!(
                    "subsystem {i}: coupling blocks do not match neighbors"
                )));
            }
            for (j, a) in &m.a_ij {
                check("A_ij", a, s.n_z(), topo.subsystem(*j).n_z())?;
            }
            if m.state_dictionary.output_dim() != s.n_z()
                || m.input_dictionary.output_dim() != s.n_v()
            {
                return Err(Error::Config(format!(
                    "subsystem {i}: dictionary size differs from topology"
                )));
            }
        }
        Ok(())
    }

    /// Lifted global state `z = [phi^1(x_1); ...; phi^m(x_m)]` of an unscaled state.
    ///
    /// Scaled values outside [0, 1] are clipped when the scaler was fitted to
    /// data; the number of clipped coordinates is returned.
    pub fn lift_state(&self, x: &[f64]) -> Result<(DVector<f64>, usize)> {
        if x.len() != self.topology.n_states {
            return Err(Error::dim("global state", self.topology.n_states, x.len()));
        }
        let mut z = DVector::zeros(self.topology.total_lifted());
        let mut clipped = 0;
        for (i, s) in self.topology.subsystems.iter().enumerate() {
            let local: Vec<f64> = s
                .states
                .iter()
                .map(|&g| {
                    let v = self.scaler.scale_state(g, x[g]);
                    if self.scaler.clips() && !(0.0..=1.0).contains(&v) {
                        clipped += 1;
                        v.clamp(0.0, 1.0)
                    } else {
                        v
                    }
                })
                .collect();
            let r = self.topology.lifted_range(i);
            self.subsystems[i]
                .state_dictionary
                .lift_into(&local, &mut z.as_mut_slice()[r]);
        }
        Ok((z, clipped))
    }

    /// Lifted global input `[delta^1(u_1); ...]` of an unscaled input.
    pub fn lift_input(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.topology.n_inputs {
            return Err(Error::dim("global input", self.topology.n_inputs, u.len()));
        }
        let mut v = DVector::zeros(self.topology.total_lifted_inputs());
        for (i, s) in self.topology.subsystems.iter().enumerate() {
            let local: Vec<f64> = s
                .inputs
                .iter()
                .map(|&g| self.scaler.scale_input(g, u[g]))
                .collect();
            let r = self.topology.lifted_input_range(i);
            self.subsystems[i]
                .input_dictionary
                .lift_into(&local, &mut v.as_mut_slice()[r]);
        }
        Ok(v)
    }

    /// Scaled global state `D z`, in global state order.
    pub fn scaled_state(&self, z: &DVector<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.topology.n_states];
        for (i, s) in self.topology.subsystems.iter().enumerate() {
            let off = self.topology.lifted_range(i).start;
            for (r, &g) in s.states.iter().enumerate() {
                x[g] = z[off + r];
            }
        }
        x
    }

    /// Unscaled global state reconstructed from a lifted state.
    pub fn reconstruct(&self, z: &DVector<f64>) -> Vec<f64> {
        self.scaler.unscale_states(&self.scaled_state(z))
    }

    /// Scaled stacked measurement vector in subsystem order.
    pub fn scale_measurement(&self, y: &[f64], sensor_states: &[usize]) -> Result<DVector<f64>> {
        let order = self.topology.measured_states();
        let mut out = DVector::zeros(order.len());
        for (r, &g) in order.iter().enumerate() {
            let c = sensor_states
                .iter()
                .position(|&s| s == g)
                .ok_or_else(|| Error::Config(format!("state {g} is not measured in the data")))?;
            out[r] = self.scaler.scale_state(g, y[c]);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile::from_model(self);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.into_model()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_model(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    /// Warns once if lifting this state required clipping.
    pub(crate) fn lift_state_logged(&self, x: &[f64], context: &str) -> Result<DVector<f64>> {
        let (z, clipped) = self.lift_state(x)?;
        if clipped > 0 {
            warn!(
                "{context}: {clipped} scaled coordinate(s) outside [0, 1] clipped before lifting"
            );
        }
        Ok(z)
    }
}

/// A matrix stored by name with its shape and row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedMatrix {
    pub fn new(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        NamedMatrix {
            name: name.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dim(
                format!("matrix {}", self.name),
                self.rows * self.cols,
                self.data.len(),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubsystemRecord {
    index: usize,
    state_dictionary: Vec<String>,
    input_dictionary: Vec<String>,
    matrices: Vec<NamedMatrix>,
    #[serde(default)]
    diagnostics: Option<FitDiagnostics>,
}

/// On-disk layout of a [`KoopmanModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    topology: SubsystemTopology,
    scaler: Scaler,
    subsystems: Vec<SubsystemRecord>,
}

const MODEL_FORMAT: &str = "kdmhe-koopman-model";
const MODEL_VERSION: u32 = 1;

impl ModelFile {
    fn from_model(model: &KoopmanModel) -> Self {
        let subsystems = model
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut matrices = vec![NamedMatrix::new("A_ii", &m.a_ii)];
                for (j, a) in &m.a_ij {
                    matrices.push(NamedMatrix::new(format!("A_{j}"), a));
                }
                matrices.push(NamedMatrix::new("B", &m.b));
                matrices.push(NamedMatrix::new("C", &m.c));
                matrices.push(NamedMatrix::new("D", &m.d));
                SubsystemRecord {
                    index: i,
                    state_dictionary: m.state_dictionary.names(),
                    input_dictionary: m.input_dictionary.names(),
                    matrices,
                    diagnostics: m.diagnostics,
                }
            })
            .collect();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            topology: model.topology.clone(),
            scaler: model.scaler.clone(),
            subsystems,
        }
    }

    fn into_model(self) -> Result<KoopmanModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file {} v{}",
                self.format, self.version
            )));
        }
        let topo = self.topology;
        let mut subsystems = Vec::with_capacity(self.subsystems.len());
        for (i, rec) in self.subsystems.into_iter().enumerate() {
            if rec.index != i {
                return Err(Error::Config(format!(
                    "model record {i} has index {}",
                    rec.index
                )));
            }
            let s = topo
                .subsystems
                .get(i)
                .ok_or_else(|| Error::Config(format!("model record {i} has no subsystem")))?;
            let get = |name: &str| -> Result<DMatrix<f64>> {
                rec.matrices
                    .iter()
                    .find(|m| m.name == name)
                    .ok_or_else(|| Error::Config(format!("subsystem {i}: missing matrix {name}")))?
                    .to_matrix()
            };
            let a_ij = s
                .neighbors
                .iter()
                .map(|&j| Ok((j, get(&format!("A_{j}"))?)))
                .collect::<Result<Vec<_>>>()?;
            subsystems.push(KoopmanSubsystemModel {
                a_ii: get("A_ii")?,
                a_ij,
                b: get("B")?,
                c: get("C")?,
                d: get("D")?,
                state_dictionary: LiftingDictionary::parse(&rec.state_dictionary, s.n_x())?,
                input_dictionary: LiftingDictionary::parse(&rec.input_dictionary, s.n_u())?,
                diagnostics: rec.diagnostics,
            });
        }
        KoopmanModel::new(topo, self.scaler, subsystems)
    }
}
