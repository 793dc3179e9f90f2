//! Least-squares identification of one lifted linear model per subsystem.
//!
//! Each subsystem regresses its lifted next state on its own lifted state,
//! the lifted states of its neighbors and its lifted inputs. The fits share
//! only read-only snapshot data, so they run in parallel.

mod model;
mod scaler;
mod snapshots;

pub use model::{FitDiagnostics, KoopmanModel, KoopmanSubsystemModel, NamedMatrix};
pub use scaler::{Scaler, ScalerKind};
pub use snapshots::{build_snapshots, lift_columns, SnapshotSet, SubsystemSnapshots};

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lifting::LiftingDictionary;
use crate::linalg::{pinv, PINV_RTOL};
use crate::simulate::Trajectory;
use crate::topology::SubsystemTopology;

/// `(A_ii, [A_ij], B_i)` of one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemFit {
    pub a_ii: DMatrix<f64>,
    pub a_ij: Vec<(usize, DMatrix<f64>)>,
    pub b: DMatrix<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Regressor `[phi^i(X_i); phi^j(X_j) for j in I_i; delta^i(U_i)]`.
pub fn regressor(
    snapshots: &SnapshotSet,
    topology: &SubsystemTopology,
    state_dictionaries: &[LiftingDictionary],
    input_dictionaries: &[LiftingDictionary],
    i: usize,
) -> DMatrix<f64> {
    let spec = topology.subsystem(i);
    let mut blocks = vec![lift_columns(
        &state_dictionaries[i],
        &snapshots.subsystems[i].x,
    )];
    for &j in &spec.neighbors {
        blocks.push(lift_columns(
            &state_dictionaries[j],
            &snapshots.subsystems[j].x,
        ));
    }
    blocks.push(lift_columns(
        &input_dictionaries[i],
        &snapshots.subsystems[i].u,
    ));
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut psi = DMatrix::zeros(rows, snapshots.samples);
    let mut r = 0;
    for b in blocks {
        psi.rows_mut(r, b.nrows()).copy_from(&b);
        r += b.nrows();
    }
    psi
}

/// Minimizes `sum_k |z_i(k+1) - A_ii z_i(k) - sum_j A_ij z_j(k) - B_i u_i(k)|^2`
/// as `K = phi(X_next) psi^T (psi psi^T)^+`.
///
/// Truncated singular values of the Gram matrix are logged as a warning.
pub fn identify_subsystem(
    snapshots: &SnapshotSet,
    topology: &SubsystemTopology,
    state_dictionaries: &[LiftingDictionary],
    input_dictionaries: &[LiftingDictionary],
    i: usize,
) -> Result<SubsystemFit> {
    if snapshots.subsystems.len() != topology.m() {
        return Err(Error::dim(
            "snapshot subsystems",
            topology.m(),
            snapshots.subsystems.len(),
        ));
    }
    let spec = topology.subsystem(i);
    let n_z = state_dictionaries[i].output_dim();
    let n_v = input_dictionaries[i].output_dim();
    if n_z != spec.n_z() || n_v != spec.n_v() {
        return Err(Error::dim("lifted dimension", spec.n_z(), n_z));
    }
    let psi = regressor(
        snapshots,
        topology,
        state_dictionaries,
        input_dictionaries,
        i,
    );
    let target = lift_columns(&state_dictionaries[i], &snapshots.subsystems[i].x_next);
    let gram = &psi * psi.transpose();
    let cross = &target * psi.transpose();
    let inv = pinv(&gram, PINV_RTOL);
    if inv.truncated > 0 {
        warn!(
            "subsystem {i}: regressor rank {} of {} (truncated {} singular values)",
            inv.rank,
            psi.nrows(),
            inv.truncated
        );
    }
    let k = &cross * &inv.matrix;

    let residual = &target - &k * &psi;
    let normal = (&residual * psi.transpose()).norm();
    let scale = cross.norm();
    let diagnostics = FitDiagnostics {
        regressors: psi.nrows(),
        rank: inv.rank,
        samples: snapshots.samples,
        normal_residual: if scale > 0.0 { normal / scale } else { normal },
        rms_residual: (residual.norm_squared() / residual.len().max(1) as f64).sqrt(),
    };

    let mut col = 0;
    let a_ii = k.columns(col, n_z).into_owned();
    col += n_z;
    let mut a_ij = Vec::with_capacity(spec.neighbors.len());
    for &j in &spec.neighbors {
        let nj = state_dictionaries[j].output_dim();
        a_ij.push((j, k.columns(col, nj).into_owned()));
        col += nj;
    }
    let b = k.columns(col, n_v).into_owned();
    Ok(SubsystemFit {
        a_ii,
        a_ij,
        b,
        diagnostics,
    })
}

/// `C_i = [H_i 0]` for measurements that are a selection of local states.
pub fn output_matrix_analytic(topology: &SubsystemTopology, i: usize) -> DMatrix<f64> {
    let s = topology.subsystem(i);
    let mut c = DMatrix::zeros(s.n_y(), s.n_z());
    for (r, &p) in s.sensors.iter().enumerate() {
        c[(r, p)] = 1.0;
    }
    c
}

/// Least-squares `C_i = Y_i phi^T (phi phi^T)^+` from lifted states to measurements.
pub fn identify_output_matrix(
    dictionary: &LiftingDictionary,
    snapshots: &SubsystemSnapshots,
) -> DMatrix<f64> {
    let phi = lift_columns(dictionary, &snapshots.x);
    let gram = &phi * phi.transpose();
    &snapshots.y * phi.transpose() * pinv(&gram, PINV_RTOL).matrix
}

/// How `C_i` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMatrix {
    /// `[H_i 0]`, valid when measurements select local states.
    Analytic,
    Regression,
}

/// Fits every subsystem, in parallel when `parallel` is set.
///
/// Each fit is a pure function of the shared snapshots, so both modes give
/// bitwise-identical matrices.
pub fn identify_all(
    snapshots: &SnapshotSet,
    topology: &SubsystemTopology,
    state_dictionaries: &[LiftingDictionary],
    input_dictionaries: &[LiftingDictionary],
    output: OutputMatrix,
    parallel: bool,
) -> Result<Vec<KoopmanSubsystemModel>> {
    if state_dictionaries.len() != topology.m() || input_dictionaries.len() != topology.m() {
        return Err(Error::dim(
            "dictionaries",
            topology.m(),
            state_dictionaries.len(),
        ));
    }
    let fit_one = |i: usize| -> Result<KoopmanSubsystemModel> {
        let fit = identify_subsystem(
            snapshots,
            topology,
            state_dictionaries,
            input_dictionaries,
            i,
        )
        .map_err(|e| Error::Subsystem {
            subsystem: i,
            source: Box::new(e),
        })?;
        let spec = topology.subsystem(i);
        let c = match output {
            OutputMatrix::Analytic => output_matrix_analytic(topology, i),
            OutputMatrix::Regression => {
                identify_output_matrix(&state_dictionaries[i], &snapshots.subsystems[i])
            }
        };
        Ok(KoopmanSubsystemModel {
            a_ii: fit.a_ii,
            a_ij: fit.a_ij,
            b: fit.b,
            c,
            d: KoopmanSubsystemModel::reconstruction(spec.n_x(), spec.n_z()),
            state_dictionary: state_dictionaries[i].clone(),
            input_dictionary: input_dictionaries[i].clone(),
            diagnostics: Some(fit.diagnostics),
        })
    };
    if parallel {
        (0..topology.m()).into_par_iter().map(fit_one).collect()
    } else {
        (0..topology.m()).map(fit_one).collect()
    }
}

/// Scales, builds snapshots and fits every subsystem of one training trajectory.
pub fn identify(
    training: &Trajectory,
    topology: &SubsystemTopology,
    state_dictionaries: &[LiftingDictionary],
    input_dictionaries: &[LiftingDictionary],
    scaler: Scaler,
    parallel: bool,
) -> Result<KoopmanModel> {
    let snapshots = build_snapshots(training, topology, &scaler)?;
    let models = identify_all(
        &snapshots,
        topology,
        state_dictionaries,
        input_dictionaries,
        OutputMatrix::Analytic,
        parallel,
    )?;
    KoopmanModel::new(topology.clone(), scaler, models)
}
