use nalgebra::DMatrix;

use super::Scaler;
use crate::error::{Error, Result};
use crate::lifting::LiftingDictionary;
use crate::simulate::Trajectory;
use crate::topology::SubsystemTopology;

/// Scaled snapshot matrices of one subsystem; column `k` is one sample pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemSnapshots {
    /// `x_i(k)`, n_x x N.
    pub x: DMatrix<f64>,
    /// `x_i(k+1)`, n_x x N.
    pub x_next: DMatrix<f64>,
    /// `u_i(k)`, n_u x N.
    pub u: DMatrix<f64>,
    /// `y_i(k)`, n_y x N.
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub subsystems: Vec<SubsystemSnapshots>,
    pub samples: usize,
}

/// Scaled snapshot pairs from one contiguous trajectory.
pub fn build_snapshots(
    trajectory: &Trajectory,
    topology: &SubsystemTopology,
    scaler: &Scaler,
) -> Result<SnapshotSet> {
    let len = trajectory.len();
    if len < 2 {
        return Err(Error::dim("snapshot trajectory length (minimum)", 2, len));
    }
    if trajectory.n_x() != topology.n_states || trajectory.n_u() != topology.n_inputs {
        return Err(Error::dim(
            "trajectory states",
            topology.n_states,
            trajectory.n_x(),
        ));
    }
    let n = len - 1;
    let subsystems = topology
        .subsystems
        .iter()
        .map(|s| {
            let x = DMatrix::from_fn(s.n_x(), n, |r, k| {
                let g = s.states[r];
                scaler.scale_state(g, trajectory.states[(k, g)])
            });
            let x_next = DMatrix::from_fn(s.n_x(), n, |r, k| {
                let g = s.states[r];
                scaler.scale_state(g, trajectory.states[(k + 1, g)])
            });
            let u = DMatrix::from_fn(s.n_u(), n, |r, k| {
                let g = s.inputs[r];
                scaler.scale_input(g, trajectory.inputs[(k, g)])
            });
            // Measurements of sample k, taken from the state each sensor reads.
            let y = DMatrix::from_fn(s.n_y(), n, |r, k| {
                let g = s.states[s.sensors[r]];
                let c = trajectory
                    .sensor_states
                    .iter()
                    .position(|&t| t == g)
                    .expect("sensor recorded in trajectory");
                scaler.scale_state(g, trajectory.measurements[(k, c)])
            });
            SubsystemSnapshots { x, x_next, u, y }
        })
        .collect();
    Ok(SnapshotSet {
        subsystems,
        samples: n,
    })
}

impl SnapshotSet {
    /// Joins snapshot sets column-wise; pairs never straddle the joins.
    pub fn concat(sets: &[SnapshotSet]) -> Result<SnapshotSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Config("no snapshot sets to join".into()))?;
        let m = first.subsystems.len();
        if sets.iter().any(|s| s.subsystems.len() != m) {
            return Err(Error::Config(
                "snapshot sets have different subsystem counts".into(),
            ));
        }
        let samples: usize = sets.iter().map(|s| s.samples).sum();
        let join = |pick: &dyn Fn(&SubsystemSnapshots) -> &DMatrix<f64>, i: usize| {
            let rows = pick(&first.subsystems[i]).nrows();
            let mut out = DMatrix::zeros(rows, samples);
            let mut c = 0;
            for s in sets {
                let part = pick(&s.subsystems[i]);
                out.columns_mut(c, part.ncols()).copy_from(part);
                c += part.ncols();
            }
            out
        };
        let subsystems = (0..m)
            .map(|i| SubsystemSnapshots {
                x: join(&|s| &s.x, i),
                x_next: join(&|s| &s.x_next, i),
                u: join(&|s| &s.u, i),
                y: join(&|s| &s.y, i),
            })
            .collect();
        Ok(SnapshotSet {
            subsystems,
            samples,
        })
    }
}

/// Applies a dictionary to every column of `m`.
pub fn lift_columns(dictionary: &LiftingDictionary, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dictionary.output_dim(), m.ncols());
    let mut buf = vec![0.0; dictionary.output_dim()];
    for k in 0..m.ncols() {
        let col: Vec<f64> = m.column(k).iter().copied().collect();
        dictionary.lift_into(&col, &mut buf);
        out.column_mut(k).copy_from_slice(&buf);
    }
    out
}
