use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalerKind {
    /// Fitted to the training range; scaled training data lies in [0, 1].
    MinMax,
    /// A fixed affine map, not tied to a data range.
    Affine,
}

/// Per-variable affine map `s = (v - min) / (max - min)`.
///
/// Measurements reuse the bounds of the state each sensor reads, so the
/// measured coordinates of a lifted state are exactly the scaled measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
}

fn column_range(m: &DMatrix<f64>, c: usize) -> (f64, f64) {
    m.column(c)
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

impl Scaler {
    /// Min-max bounds over every sample of `trajectory`.
    pub fn fit(trajectory: &Trajectory) -> Result<Self> {
        if trajectory.is_empty() {
            return Err(Error::Config(
                "cannot fit a scaler to an empty trajectory".into(),
            ));
        }
        let mut s = Scaler {
            kind: ScalerKind::MinMax,
            state_min: Vec::new(),
            state_max: Vec::new(),
            input_min: Vec::new(),
            input_max: Vec::new(),
        };
        for c in 0..trajectory.n_x() {
            let (lo, hi) = column_range(&trajectory.states, c);
            if hi <= lo {
                return Err(Error::DegenerateVariable {
                    name: format!("state {c}"),
                    value: lo,
                });
            }
            s.state_min.push(lo);
            s.state_max.push(hi);
        }
        for c in 0..trajectory.n_u() {
            let (lo, hi) = column_range(&trajectory.inputs, c);
            if hi <= lo {
                return Err(Error::DegenerateVariable {
                    name: format!("input {c}"),
                    value: lo,
                });
            }
            s.input_min.push(lo);
            s.input_max.push(hi);
        }
        Ok(s)
    }

    /// Leaves every variable unchanged.
    pub fn identity(n_x: usize, n_u: usize) -> Self {
        Scaler {
            kind: ScalerKind::Affine,
            state_min: vec![0.0; n_x],
            state_max: vec![1.0; n_x],
            input_min: vec![0.0; n_u],
            input_max: vec![1.0; n_u],
        }
    }

    pub fn affine(
        state_min: Vec<f64>,
        state_max: Vec<f64>,
        input_min: Vec<f64>,
        input_max: Vec<f64>,
    ) -> Result<Self> {
        let s = Scaler {
            kind: ScalerKind::Affine,
            state_min,
            state_max,
            input_min,
            input_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_min.len() != self.state_max.len()
            || self.input_min.len() != self.input_max.len()
        {
            return Err(Error::Config("scaler bound lengths differ".into()));
        }
        for (name, lo, hi) in [
            ("state", &self.state_min, &self.state_max),
            ("input", &self.input_min, &self.input_max),
        ] {
            for (c, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                if !(h > l) || !l.is_finite() || !h.is_finite() {
                    return Err(Error::DegenerateVariable {
                        name: format!("{name} {c}"),
                        value: l,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.state_min.len()
    }
    pub fn n_u(&self) -> usize {
        self.input_min.len()
    }

    #[inline]
    pub fn scale_state(&self, g: usize, v: f64) -> f64 {
        (v - self.state_min[g]) / (self.state_max[g] - self.state_min[g])
    }
    #[inline]
    pub fn unscale_state(&self, g: usize, s: f64) -> f64 {
        self.state_min[g] + s * (self.state_max[g] - self.state_min[g])
    }
    #[inline]
    pub fn scale_input(&self, g: usize, v: f64) -> f64 {
        (v - self.input_min[g]) / (self.input_max[g] - self.input_min[g])
    }
    #[inline]
    pub fn unscale_input(&self, g: usize, s: f64) -> f64 {
        self.input_min[g] + s * (self.input_max[g] - self.input_min[g])
    }

    pub fn scale_states(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(g, &v)| self.scale_state(g, v))
            .collect()
    }
    pub fn unscale_states(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(g, &v)| self.unscale_state(g, v))
            .collect()
    }
    pub fn scale_inputs(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(g, &v)| self.scale_input(g, v))
            .collect()
    }

    /// Scales measurement channel values read from the given global states.
    pub fn scale_measurements(&self, y: &[f64], sensor_states: &[usize]) -> Vec<f64> {
        y.iter()
            .zip(sensor_states)
            .map(|(&v, &g)| self.scale_state(g, v))
            .collect()
    }

    /// Scaled copy of a sample-major matrix of states.
    pub fn scale_state_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| self.scale_state(c, m[(r, c)]))
    }

    /// Whether values outside [0, 1] are extrapolation (only for fitted ranges).
    pub fn clips(&self) -> bool {
        self.kind == ScalerKind::MinMax
    }
}
