//! Ground-truth data generation for the case-study processes.

mod cstr;
mod linear;
mod noise;
mod richards;
mod trajectory;

pub use cstr::{simulate_cstr, step_cstr, CstrConfig, CSTR_REACTORS, CSTR_STATES};
pub use linear::{random_coupled_linear, simulate_linear, LinearProcess};
pub use noise::{add_noise, NoiseSpec, TruncatedGaussian};
pub use richards::{
    irrigation_schedule, simulate_richards, step_richards, step_richards_with_balance,
    BottomBoundary, SoilConfig, WaterBalance,
};
pub use trajectory::{measure, Trajectory};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one seed.
pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const INPUT_STREAM: u64 = 1;
pub(crate) const PROCESS_NOISE_STREAM: u64 = 2;
pub(crate) const MEASUREMENT_NOISE_STREAM: u64 = 3;

/// Piecewise-constant input sequence, `horizon` rows by `lower.len()` columns.
///
/// Each level is drawn uniformly in `[lower, upper]` per channel and held for
/// `hold_samples` samples.
pub fn generate_inputs(
    lower: &[f64],
    upper: &[f64],
    hold_samples: usize,
    horizon: usize,
    seed: u64,
) -> DMatrix<f64> {
    assert_eq!(lower.len(), upper.len());
    let hold = hold_samples.max(1);
    let mut rng = stream(seed, INPUT_STREAM);
    let mut out = DMatrix::zeros(horizon, lower.len());
    let mut level = vec![0.0; lower.len()];
    for k in 0..horizon {
        if k % hold == 0 {
            for (c, l) in level.iter_mut().enumerate() {
                *l = if upper[c] > lower[c] {
                    rng.random_range(lower[c]..=upper[c])
                } else {
                    lower[c]
                };
            }
        }
        for (c, &l) in level.iter().enumerate() {
            out[(k, c)] = l;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_bounds_give_constant_sequence() {
        let u = generate_inputs(&[3.0], &[3.0], 5, 20, 1);
        assert!(u.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn cstr_levels_change_every_sixty_samples() {
        let lo = [0.8e4, 1.8e4, 2.3e4, 0.8e4];
        let hi = [1.2e4, 2.2e4, 2.7e4, 1.2e4];
        let hold = (1.5f64 / 0.025).round() as usize;
        assert_eq!(hold, 60);
        let u = generate_inputs(&lo, &hi, hold, 240, 11);
        for k in 0..240 {
            for c in 0..4 {
                assert!(u[(k, c)] >= lo[c] && u[(k, c)] <= hi[c]);
                if k % 60 != 0 {
                    assert_eq!(u[(k, c)], u[(k - 1, c)]);
                }
            }
        }
        assert_ne!(u[(0, 0)], u[(60, 0)]);
    }

    #[test]
    fn same_seed_same_sequence() {
        let a = generate_inputs(&[0.0, 1.0], &[1.0, 2.0], 3, 50, 42);
        let b = generate_inputs(&[0.0, 1.0], &[1.0, 2.0], 3, 50, 42);
        assert_eq!(a, b);
        let c = generate_inputs(&[0.0, 1.0], &[1.0, 2.0], 3, 50, 43);
        assert_ne!(a, c);
    }
}
