use nalgebra::{DMatrix, DVector};

use crate::topology::SubsystemTopology;

/// Time-indexed record of one simulated run. Row `k` of each matrix is sample `k`.
///
/// `inputs` row `k` is applied over `[t_k, t_{k+1})`; `process_noise` row `k`
/// is the disturbance that was added to produce `x(k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub measurements: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
    /// Global state index read by each measurement channel.
    pub sensor_states: Vec<usize>,
    pub seed: u64,
}

impl Trajectory {
    /// Noise-free trajectory; measurements are the selected states.
    pub fn new(
        time: Vec<f64>,
        states: DMatrix<f64>,
        inputs: DMatrix<f64>,
        sensor_states: Vec<usize>,
        seed: u64,
    ) -> Self {
        let k = states.nrows();
        assert_eq!(time.len(), k);
        assert_eq!(inputs.nrows(), k);
        let measurements =
            DMatrix::from_fn(k, sensor_states.len(), |r, c| states[(r, sensor_states[c])]);
        Trajectory {
            time,
            process_noise: DMatrix::zeros(k, states.ncols()),
            measurement_noise: DMatrix::zeros(k, sensor_states.len()),
            states,
            inputs,
            measurements,
            sensor_states,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.states.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.inputs.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.measurements.ncols()
    }

    /// Rows `start..start+len` as a new trajectory.
    pub fn slice(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            time: self.time[start..start + len].to_vec(),
            states: self.states.rows(start, len).into_owned(),
            inputs: self.inputs.rows(start, len).into_owned(),
            measurements: self.measurements.rows(start, len).into_owned(),
            process_noise: self.process_noise.rows(start, len).into_owned(),
            measurement_noise: self.measurement_noise.rows(start, len).into_owned(),
            sensor_states: self.sensor_states.clone(),
            seed: self.seed,
        }
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }
    pub fn input(&self, k: usize) -> DVector<f64> {
        self.inputs.row(k).transpose()
    }
    pub fn measurement(&self, k: usize) -> DVector<f64> {
        self.measurements.row(k).transpose()
    }

    /// Checks equal lengths and `y = H x + v` to round-off.
    pub fn check_consistency(&self) -> bool {
        let k = self.len();
        let lengths = [
            self.states.nrows(),
            self.inputs.nrows(),
            self.measurements.nrows(),
            self.process_noise.nrows(),
            self.measurement_noise.nrows(),
        ];
        if lengths.iter().any(|&l| l != k) {
            return false;
        }
        (0..k).all(|r| {
            self.sensor_states.iter().enumerate().all(|(c, &s)| {
                (self.measurements[(r, c)] - (self.states[(r, s)] + self.measurement_noise[(r, c)]))
                    .abs()
                    <= 1e-12 * self.measurements[(r, c)].abs().max(1.0)
            })
        })
    }
}

/// Stacked measurement `y = H x` for a global state, per the topology's sensor map.
pub fn measure(state: &[f64], topology: &SubsystemTopology) -> DVector<f64> {
    let idx = topology.measured_states();
    DVector::from_iterator(idx.len(), idx.iter().map(|&g| state[g]))
}
