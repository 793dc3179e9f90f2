//! Taylor-linearized reactor model in the same container as the Koopman models.

use log::warn;
use nalgebra::DMatrix;

use crate::config::BaselineConfig;
use crate::error::{Error, Result};
use crate::identify::{output_matrix_analytic, KoopmanModel, KoopmanSubsystemModel, Scaler};
use crate::lifting::LiftingDictionary;
use crate::linalg::zoh_discretize;
use crate::simulate::CstrConfig;
use crate::topology::SubsystemTopology;

fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Linearizes the reactor network at `(x_s, Q_s)` and discretizes it with a
/// zero-order hold over one sampling period.
///
/// The model works on deviations from the operating point divided by the
/// ranges of `training`, so its lifted state is the scaled deviation and
/// dictionaries are identities. Jacobian entries that fall outside the
/// coupling pattern of `topology` are dropped with a warning.
pub fn linearized_baseline(
    cstr: &CstrConfig,
    baseline: &BaselineConfig,
    topology: &SubsystemTopology,
    training: &Scaler,
) -> Result<KoopmanModel> {
    let nx = topology.n_states;
    let nu = topology.n_inputs;
    if baseline.steady_state.len() != nx || baseline.steady_input.len() != nu {
        return Err(Error::dim(
            "operating point",
            nx,
            baseline.steady_state.len(),
        ));
    }
    if training.n_x() != nx || training.n_u() != nu {
        return Err(Error::dim("training scaler", nx, training.n_x()));
    }
    cstr.validate()?;
    let (a, b) = cstr.jacobians(
        &baseline.steady_state,
        &baseline.steady_input,
        baseline.jacobian_step,
    );
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            detail: "Jacobian at the operating point".into(),
        });
    }
    let (ad, bd) = zoh_discretize(&a, &b, cstr.sampling_period);

    let span_x: Vec<f64> = (0..nx)
        .map(|g| training.state_max[g] - training.state_min[g])
        .collect();
    let span_u: Vec<f64> = (0..nu)
        .map(|g| training.input_max[g] - training.input_min[g])
        .collect();
    let scaler = Scaler::affine(
        baseline.steady_state.clone(),
        baseline
            .steady_state
            .iter()
            .zip(&span_x)
            .map(|(s, d)| s + d)
            .collect(),
        baseline.steady_input.clone(),
        baseline
            .steady_input
            .iter()
            .zip(&span_u)
            .map(|(s, d)| s + d)
            .collect(),
    )?;
    let a_s = DMatrix::from_fn(nx, nx, |r, c| ad[(r, c)] * span_x[c] / span_x[r]);
    let b_s = DMatrix::from_fn(nx, nu, |r, c| bd[(r, c)] * span_u[c] / span_x[r]);

    let mut subsystems_spec = topology.subsystems.clone();
    for s in &mut subsystems_spec {
        s.lifted_dim = s.n_x();
        s.lifted_input_dim = s.n_u();
    }
    let topo = SubsystemTopology::new(nx, nu, subsystems_spec)?;

    let mut kept_a = DMatrix::<f64>::zeros(nx, nx);
    let mut kept_b = DMatrix::<f64>::zeros(nx, nu);
    let mut subsystems = Vec::with_capacity(topo.m());
    for (i, s) in topo.subsystems.iter().enumerate() {
        let a_ii = block(&a_s, &s.states, &s.states);
        let a_ij: Vec<(usize, DMatrix<f64>)> = s
            .neighbors
            .iter()
            .map(|&j| (j, block(&a_s, &s.states, &topo.subsystem(j).states)))
            .collect();
        let b_i = block(&b_s, &s.states, &s.inputs);
        for &r in &s.states {
            for &c in s.states.iter().chain(
                s.neighbors
                    .iter()
                    .flat_map(|&j| topo.subsystem(j).states.iter()),
            ) {
                kept_a[(r, c)] = a_s[(r, c)];
            }
            for &c in &s.inputs {
                kept_b[(r, c)] = b_s[(r, c)];
            }
        }
        subsystems.push(KoopmanSubsystemModel {
            a_ii,
            a_ij,
            b: b_i,
            c: output_matrix_analytic(&topo, i),
            d: DMatrix::identity(s.n_x(), s.n_x()),
            state_dictionary: LiftingDictionary::identity(s.n_x()),
            input_dictionary: LiftingDictionary::identity(s.n_u()),
            diagnostics: None,
        });
    }
    let dropped = (&a_s - kept_a).amax().max((&b_s - kept_b).amax());
    if dropped > 1e-9 * a_s.amax().max(b_s.amax()) {
        warn!("linearized model: couplings up to {dropped:e} fall outside the topology and were dropped");
    }
    KoopmanModel::new(topo, scaler, subsystems)
}
