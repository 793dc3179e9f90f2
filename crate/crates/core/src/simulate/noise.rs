use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream, Trajectory, MEASUREMENT_NOISE_STREAM};

fn default_truncation() -> f64 {
    5.0
}

/// Standard deviations of process and measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-state process noise standard deviation.
    #[serde(default)]
    pub process_std: Vec<f64>,
    /// Per-measurement noise standard deviation.
    #[serde(default)]
    pub measurement_std: Vec<f64>,
    /// Samples are truncated to `[-t*sigma, t*sigma]`.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            process_std: Vec::new(),
            measurement_std: Vec::new(),
            truncation: default_truncation(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self
            .process_std
            .iter()
            .chain(&self.measurement_std)
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(crate::Error::Config(
                "noise standard deviations must be >= 0".into(),
            ));
        }
        if !(self.truncation > 0.0) {
            return Err(crate::Error::Config(
                "noise truncation multiple must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn process_sampler(&self, n: usize) -> TruncatedGaussian {
        TruncatedGaussian::new(pad(&self.process_std, n), self.truncation)
    }

    pub fn measurement_sampler(&self, n: usize) -> TruncatedGaussian {
        TruncatedGaussian::new(pad(&self.measurement_std, n), self.truncation)
    }
}

fn pad(std: &[f64], n: usize) -> Vec<f64> {
    match std.len() {
        0 => vec![0.0; n],
        1 => vec![std[0]; n],
        _ => {
            assert_eq!(std.len(), n, "noise vector length");
            std.to_vec()
        }
    }
}

/// Zero-mean Gaussian per channel, rejection-truncated at a multiple of sigma.
#[derive(Debug, Clone)]
pub struct TruncatedGaussian {
    std: Vec<f64>,
    truncation: f64,
}

impl TruncatedGaussian {
    pub fn new(std: Vec<f64>, truncation: f64) -> Self {
        TruncatedGaussian { std, truncation }
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, &s) in out.iter_mut().zip(&self.std) {
            *o = if s == 0.0 {
                0.0
            } else {
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z.abs() <= self.truncation {
                        break z * s;
                    }
                }
            };
        }
    }
}

/// Draws measurement noise and rewrites `y(k) = H x(k) + v(k)`.
///
/// Process noise is drawn inside the simulators, after each integration
/// step, so that it propagates through the dynamics.
pub fn add_noise(mut trajectory: Trajectory, spec: &NoiseSpec, seed: u64) -> Trajectory {
    let n_y = trajectory.measurements.ncols();
    let sampler = spec.measurement_sampler(n_y);
    let mut rng: ChaCha8Rng = stream(seed, MEASUREMENT_NOISE_STREAM);
    let mut v = vec![0.0; n_y];
    for k in 0..trajectory.len() {
        sampler.sample_into(&mut rng, &mut v);
        for c in 0..n_y {
            let clean = trajectory.states[(k, trajectory.sensor_states[c])];
            trajectory.measurement_noise[(k, c)] = v[c];
            trajectory.measurements[(k, c)] = clean + v[c];
        }
    }
    trajectory.seed = seed;
    trajectory
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn traj() -> Trajectory {
        let states = DMatrix::from_fn(50, 2, |r, c| r as f64 + c as f64);
        Trajectory::new(
            (0..50).map(|k| k as f64).collect(),
            states,
            DMatrix::zeros(50, 0),
            vec![1],
            0,
        )
    }

    #[test]
    fn zero_sigma_leaves_trajectory_unchanged() {
        let t = traj();
        let noisy = add_noise(t.clone(), &NoiseSpec::none(), 3);
        assert_eq!(noisy.measurements, t.measurements);
        assert_eq!(noisy.states, t.states);
    }

    #[test]
    fn samples_are_within_truncation() {
        let g = TruncatedGaussian::new(vec![0.3108, 1.0], 5.0);
        let mut rng = stream(9, 0);
        let mut out = [0.0; 2];
        for _ in 0..20_000 {
            g.sample_into(&mut rng, &mut out);
            assert!(out[0].abs() <= 5.0 * 0.3108);
            assert!(out[1].abs() <= 5.0);
        }
    }

    #[test]
    fn measurement_noise_is_recorded() {
        let spec = NoiseSpec {
            process_std: vec![],
            measurement_std: vec![0.5],
            truncation: 5.0,
        };
        let noisy = add_noise(traj(), &spec, 4);
        for k in 0..noisy.len() {
            let y = noisy.states[(k, 1)] + noisy.measurement_noise[(k, 0)];
            assert_eq!(noisy.measurements[(k, 0)], y);
        }
        assert!(noisy.measurement_noise.iter().any(|&v| v != 0.0));
    }
}
