use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_inputs, stream, NoiseSpec, Trajectory, PROCESS_NOISE_STREAM};
use crate::error::{Error, Result};
use crate::identify::{KoopmanModel, KoopmanSubsystemModel, Scaler};
use crate::lifting::LiftingDictionary;
use crate::topology::SubsystemTopology;

/// Coupled linear process `x(k+1) = A x(k) + B u(k)`, used as an exact-recovery benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProcess {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub initial_state: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    /// Samples each random input level is held for.
    #[serde(default = "one")]
    pub hold_samples: usize,
}

fn one() -> usize {
    1
}

/// Random stable process whose coupling pattern follows `topology`.
///
/// Diagonal blocks have spectral norm 0.7 and coupling blocks 0.1, which keeps
/// the global matrix stable for sparse neighbor sets.
pub fn random_coupled_linear(topology: &SubsystemTopology, seed: u64) -> LinearProcess {
    let mut rng = stream(seed, 0);
    let n = topology.n_states;
    let nu = topology.n_inputs;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, nu);
    for s in &topology.subsystems {
        let aii = random_block(s.n_x(), s.n_x(), 0.7, &mut rng);
        for (r, &gr) in s.states.iter().enumerate() {
            for (c, &gc) in s.states.iter().enumerate() {
                a[(gr, gc)] = aii[(r, c)];
            }
        }
        for &j in &s.neighbors {
            let sj = topology.subsystem(j);
            let aij = random_block(s.n_x(), sj.n_x(), 0.1, &mut rng);
            for (r, &gr) in s.states.iter().enumerate() {
                for (c, &gc) in sj.states.iter().enumerate() {
                    a[(gr, gc)] = aij[(r, c)];
                }
            }
        }
        if !s.inputs.is_empty() {
            let bi = random_block(s.n_x(), s.n_u(), 1.0, &mut rng);
            for (r, &gr) in s.states.iter().enumerate() {
                for (c, &gc) in s.inputs.iter().enumerate() {
                    b[(gr, gc)] = bi[(r, c)];
                }
            }
        }
    }
    let initial_state = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    LinearProcess {
        a,
        b,
        initial_state,
        input_lower: vec![-1.0; nu],
        input_upper: vec![1.0; nu],
        hold_samples: 1,
    }
}

/// Random `r x c` matrix rescaled to the given spectral norm.
fn random_block(r: usize, c: usize, norm: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m: DMatrix<f64> = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let s = m.clone().svd(false, false).singular_values.max().max(1e-12);
    m * (norm / s)
}

impl LinearProcess {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::Config("linear process A must be square".into()));
        }
        if self.b.nrows() != n || self.initial_state.len() != n {
            return Err(Error::Config(
                "linear process B rows / initial state must match A".into(),
            ));
        }
        if self.input_lower.len() != self.b.ncols() || self.input_upper.len() != self.b.ncols() {
            return Err(Error::Config(
                "linear process input bounds must match B columns".into(),
            ));
        }
        Ok(())
    }

    /// The process itself as a lifted model with identity dictionaries and
    /// an identity scaler, partitioned by `topology`.
    pub fn exact_model(&self, topology: &SubsystemTopology) -> Result<KoopmanModel> {
        self.validate()?;
        let mut specs = topology.subsystems.clone();
        for s in &mut specs {
            s.lifted_dim = s.n_x();
            s.lifted_input_dim = s.n_u();
        }
        let topo = SubsystemTopology::new(topology.n_states, topology.n_inputs, specs)?;
        let pick = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
        };
        let subsystems = topo
            .subsystems
            .iter()
            .map(|s| KoopmanSubsystemModel {
                a_ii: pick(&self.a, &s.states, &s.states),
                a_ij: s
                    .neighbors
                    .iter()
                    .map(|&j| (j, pick(&self.a, &s.states, &topo.subsystem(j).states)))
                    .collect(),
                b: pick(&self.b, &s.states, &s.inputs),
                c: s.sensor_matrix(),
                d: DMatrix::identity(s.n_x(), s.n_x()),
                state_dictionary: LiftingDictionary::identity(s.n_x()),
                input_dictionary: LiftingDictionary::identity(s.n_u()),
                diagnostics: None,
            })
            .collect();
        let scaler = Scaler::identity(topo.n_states, topo.n_inputs);
        KoopmanModel::new(topo, scaler, subsystems)
    }
}

pub fn simulate_linear(
    process: &LinearProcess,
    noise: &NoiseSpec,
    horizon: usize,
    sensors: Vec<usize>,
    seed: u64,
) -> Result<Trajectory> {
    process.validate()?;
    let n = process.a.nrows();
    let inputs = generate_inputs(
        &process.input_lower,
        &process.input_upper,
        process.hold_samples,
        horizon,
        seed,
    );
    let sampler = noise.process_sampler(n);
    let mut rng = stream(seed, PROCESS_NOISE_STREAM);
    let mut states = DMatrix::zeros(horizon, n);
    let mut w_hist = DMatrix::zeros(horizon, n);
    let mut x = DVector::from_column_slice(&process.initial_state);
    let mut w = vec![0.0; n];
    for k in 0..horizon {
        states.row_mut(k).copy_from(&x.transpose());
        if k + 1 == horizon {
            break;
        }
        let u = inputs.row(k).transpose();
        let mut next = &process.a * &x + &process.b * u;
        sampler.sample_into(&mut rng, &mut w);
        for i in 0..n {
            next[i] += w[i];
            w_hist[(k, i)] = w[i];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                detail: "linear process diverged".into(),
            });
        }
        x = next;
    }
    let time = (0..horizon).map(|k| k as f64).collect();
    let mut traj = Trajectory::new(time, states, inputs, sensors, seed);
    traj.process_noise = w_hist;
    Ok(traj)
}
