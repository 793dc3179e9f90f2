//! Aggregated lifted model, open-loop rollout and stacked window matrices.
//!
//! For a window of `N` steps starting at `z(0)`, with inputs `u(0..N-1)` and
//! disturbances `w(0..N-1)`:
//!
//! ```text
//! [z(0); ...; z(N)] = G z(0) + H [u] + J [w]
//! [y(0); ...; y(N)] = O z(0) + Lambda [u] + Gamma [w]
//! ```
//!
//! Input and disturbance columns are ordered by time step, then subsystem.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::identify::{KoopmanModel, KoopmanSubsystemModel, Scaler};
use crate::linalg::block_diag;
use crate::topology::SubsystemTopology;

/// Global `(A, B, C)` with a per-window cache of stacked matrices.
#[derive(Debug)]
pub struct GlobalModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    cache: Mutex<HashMap<usize, Arc<StackedMatrices>>>,
}

impl Clone for GlobalModel {
    fn clone(&self) -> Self {
        GlobalModel::new(self.a.clone(), self.b.clone(), self.c.clone())
    }
}

impl PartialEq for GlobalModel {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b && self.c == other.c
    }
}

impl GlobalModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Self {
        GlobalModel {
            a,
            b,
            c,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn n_z(&self) -> usize {
        self.a.nrows()
    }

    /// Stacked matrices for a window of `horizon`, built on first use.
    pub fn stacked(&self, horizon: usize) -> Arc<StackedMatrices> {
        let mut cache = self.cache.lock().expect("stack cache poisoned");
        cache
            .entry(horizon)
            .or_insert_with(|| Arc::new(build_stacked(&self.a, &self.b, &self.c, horizon)))
            .clone()
    }
}

/// Places `A_ii`, `A_ij`, `B_i` and `C_i` into the global matrices.
pub fn assemble_global(
    models: &[KoopmanSubsystemModel],
    topology: &SubsystemTopology,
) -> Result<GlobalModel> {
    if models.len() != topology.m() {
        return Err(Error::dim("subsystem models", topology.m(), models.len()));
    }
    let nz = topology.total_lifted();
    let mut a = DMatrix::zeros(nz, nz);
    for (i, m) in models.iter().enumerate() {
        let ri = topology.lifted_range(i);
        if m.a_ii.shape() != (ri.len(), ri.len()) {
            return Err(Error::dim(
                format!("A_{i}{i} rows"),
                ri.len(),
                m.a_ii.nrows(),
            ));
        }
        a.view_mut((ri.start, ri.start), m.a_ii.shape())
            .copy_from(&m.a_ii);
        for (j, aij) in &m.a_ij {
            let rj = topology.lifted_range(*j);
            if aij.shape() != (ri.len(), rj.len()) {
                return Err(Error::dim(
                    format!("A_{i}{j} columns"),
                    rj.len(),
                    aij.ncols(),
                ));
            }
            a.view_mut((ri.start, rj.start), aij.shape()).copy_from(aij);
        }
    }
    let b = block_diag(&models.iter().map(|m| m.b.clone()).collect::<Vec<_>>());
    let c = block_diag(&models.iter().map(|m| m.c.clone()).collect::<Vec<_>>());
    if b.ncols() != topology.total_lifted_inputs() || c.nrows() != topology.total_measurements() {
        return Err(Error::dim(
            "B columns",
            topology.total_lifted_inputs(),
            b.ncols(),
        ));
    }
    Ok(GlobalModel::new(a, b, c))
}

impl KoopmanModel {
    pub fn global(&self) -> Result<GlobalModel> {
        assemble_global(&self.subsystems, &self.topology)
    }
}

/// Batch matrices of one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMatrices {
    pub horizon: usize,
    /// `[C; CA; ...; CA^N]`.
    pub observability: DMatrix<f64>,
    /// Inputs to outputs.
    pub lambda: DMatrix<f64>,
    /// Disturbances to outputs.
    pub gamma: DMatrix<f64>,
    /// `[I; A; ...; A^N]`.
    pub transition: DMatrix<f64>,
    /// Inputs to states.
    pub input_to_state: DMatrix<f64>,
    /// Disturbances to states.
    pub disturbance_to_state: DMatrix<f64>,
}

pub fn build_stacked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    horizon: usize,
) -> StackedMatrices {
    assert!(horizon >= 1, "window length must be at least 1");
    let n = a.nrows();
    let nv = b.ncols();
    let ny = c.nrows();
    let steps = horizon + 1;
    let mut powers = Vec::with_capacity(steps);
    powers.push(DMatrix::identity(n, n));
    for r in 1..steps {
        powers.push(a * &powers[r - 1]);
    }
    let power_b: Vec<DMatrix<f64>> = powers.iter().map(|p| p * b).collect();

    let mut transition = DMatrix::zeros(steps * n, n);
    let mut input_to_state = DMatrix::zeros(steps * n, horizon * nv);
    let mut disturbance_to_state = DMatrix::zeros(steps * n, horizon * n);
    for r in 0..steps {
        transition
            .view_mut((r * n, 0), (n, n))
            .copy_from(&powers[r]);
        for s in 0..r {
            let p = r - 1 - s;
            input_to_state
                .view_mut((r * n, s * nv), (n, nv))
                .copy_from(&power_b[p]);
            disturbance_to_state
                .view_mut((r * n, s * n), (n, n))
                .copy_from(&powers[p]);
        }
    }
    let cs = block_diag(&vec![c.clone(); steps]);
    debug_assert_eq!(cs.nrows(), steps * ny);
    StackedMatrices {
        horizon,
        observability: &cs * &transition,
        lambda: &cs * &input_to_state,
        gamma: &cs * &disturbance_to_state,
        transition,
        input_to_state,
        disturbance_to_state,
    }
}

/// Open-loop rollout, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lifted: DMatrix<f64>,
    /// Scaled original states `D z`.
    pub scaled: DMatrix<f64>,
    /// Unscaled original states.
    pub states: DMatrix<f64>,
}

/// Rolls the aggregated model forward from `x0` without measurement feedback.
///
/// `inputs` holds one unscaled input per row; `horizon` samples are returned,
/// the first being the lifted `x0`.
pub fn open_loop_predict(
    model: &KoopmanModel,
    x0: &[f64],
    inputs: &DMatrix<f64>,
    horizon: usize,
) -> Result<Prediction> {
    let global = model.global()?;
    if horizon > 1 && inputs.nrows() < horizon - 1 {
        return Err(Error::dim("prediction inputs", horizon - 1, inputs.nrows()));
    }
    let nx = model.topology.n_states;
    let mut z = model.lift_state_logged(x0, "open-loop prediction")?;
    let mut lifted = DMatrix::zeros(horizon, z.len());
    let mut scaled = DMatrix::zeros(horizon, nx);
    let mut states = DMatrix::zeros(horizon, nx);
    for k in 0..horizon {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                detail: "open-loop prediction diverged".into(),
            });
        }
        lifted.row_mut(k).copy_from(&z.transpose());
        let s = model.scaled_state(&z);
        scaled.row_mut(k).copy_from_slice(&s);
        states
            .row_mut(k)
            .copy_from_slice(&model.scaler.unscale_states(&s));
        if k + 1 < horizon {
            let u: Vec<f64> = inputs.row(k).iter().copied().collect();
            let v = model.lift_input(&u)?;
            z = &global.a * &z + &global.b * v;
        }
    }
    Ok(Prediction {
        lifted,
        scaled,
        states,
    })
}

/// Root-mean-square error per state column, computed on scaled values.
pub fn scaled_rmse_per_state(
    scaler: &Scaler,
    truth: &DMatrix<f64>,
    estimate: &DMatrix<f64>,
) -> Vec<f64> {
    assert_eq!(truth.shape(), estimate.shape());
    let k = truth.nrows().max(1) as f64;
    (0..truth.ncols())
        .map(|c| {
            let sum: f64 = (0..truth.nrows())
                .map(|r| {
                    (scaler.scale_state(c, estimate[(r, c)]) - scaler.scale_state(c, truth[(r, c)]))
                        .powi(2)
                })
                .sum();
            (sum / k).sqrt()
        })
        .collect()
}

/// Norm of the scaled estimation error at each sample.
pub fn scaled_error_norms(
    scaler: &Scaler,
    truth: &DMatrix<f64>,
    estimate: &DMatrix<f64>,
) -> Vec<f64> {
    assert_eq!(truth.shape(), estimate.shape());
    (0..truth.nrows())
        .map(|r| {
            (0..truth.ncols())
                .map(|c| {
                    (scaler.scale_state(c, estimate[(r, c)]) - scaler.scale_state(c, truth[(r, c)]))
                        .powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Root mean square of the scaled error over all samples and states.
pub fn scaled_rmse(scaler: &Scaler, truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> f64 {
    let norms = scaled_error_norms(scaler, truth, estimate);
    let entries = (truth.nrows() * truth.ncols()).max(1) as f64;
    (norms.iter().map(|e| e * e).sum::<f64>() / entries).sqrt()
}

/// Step-by-step evaluation of the window recursion, used to check the stacks.
pub fn recursive_window(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
    disturbances: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut z = z0.clone();
    let mut zs = vec![z.clone()];
    let mut ys = vec![c * &z];
    for (u, w) in inputs.iter().zip(disturbances) {
        z = a * &z + b * u + w;
        ys.push(c * &z);
        zs.push(z.clone());
    }
    (zs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::LiftingDictionary;
    use crate::topology::SubsystemSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn stack(vs: &[DVector<f64>]) -> DVector<f64> {
        let n: usize = vs.iter().map(|v| v.len()).sum();
        DVector::from_iterator(n, vs.iter().flat_map(|v| v.iter().copied()))
    }

    #[test]
    fn window_of_one() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let s = build_stacked(&a, &b, &c, 1);
        let mut o = DMatrix::zeros(2, 2);
        o.row_mut(0).copy_from(&c.row(0));
        o.row_mut(1).copy_from(&(&c * &a).row(0));
        assert_eq!(s.observability, o);
        assert_eq!(
            s.gamma,
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
        );
        assert_eq!(
            s.disturbance_to_state,
            DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        );
    }

    #[test]
    fn zero_dynamics_observe_only_first_block() {
        let s = build_stacked(
            &DMatrix::zeros(2, 2),
            &DMatrix::zeros(2, 1),
            &DMatrix::identity(2, 2),
            3,
        );
        assert_eq!(s.observability.rows(0, 2), DMatrix::identity(2, 2));
        assert!(s.observability.rows(2, 6).iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn batch_matches_recursion(seed in any::<u64>(), horizon in 1usize..=6, n in 1usize..5, nv in 0usize..3, ny in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(n, n, &mut rng) * 0.6;
            let b = random(n, nv, &mut rng);
            let c = random(ny, n, &mut rng);
            let z0 = random(n, 1, &mut rng).column(0).into_owned();
            let us: Vec<_> = (0..horizon).map(|_| random(nv, 1, &mut rng).column(0).into_owned()).collect();
            let ws: Vec<_> = (0..horizon).map(|_| random(n, 1, &mut rng).column(0).into_owned()).collect();
            let s = build_stacked(&a, &b, &c, horizon);
            let (zs, ys) = recursive_window(&a, &b, &c, &z0, &us, &ws);
            let zb = &s.transition * &z0 + &s.input_to_state * stack(&us) + &s.disturbance_to_state * stack(&ws);
            let yb = &s.observability * &z0 + &s.lambda * stack(&us) + &s.gamma * stack(&ws);
            prop_assert!((zb - stack(&zs)).amax() <= 1e-12);
            prop_assert!((yb - stack(&ys)).amax() <= 1e-12);
        }
    }

    fn two_subsystems() -> SubsystemTopology {
        let spec = |states: Vec<usize>, neighbors: Vec<usize>| SubsystemSpec {
            states,
            inputs: vec![],
            sensors: vec![0],
            neighbors,
            lifted_dim: 2,
            lifted_input_dim: 0,
        };
        SubsystemTopology::new(
            4,
            0,
            vec![spec(vec![0, 1], vec![]), spec(vec![2, 3], vec![0])],
        )
        .unwrap()
    }

    fn sub(a_ii: DMatrix<f64>, a_ij: Vec<(usize, DMatrix<f64>)>) -> KoopmanSubsystemModel {
        KoopmanSubsystemModel {
            a_ii,
            a_ij,
            b: DMatrix::zeros(2, 0),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            d: KoopmanSubsystemModel::reconstruction(2, 2),
            state_dictionary: LiftingDictionary::identity(2),
            input_dictionary: LiftingDictionary::identity(0),
            diagnostics: None,
        }
    }

    #[test]
    fn chain_places_coupling_below_diagonal() {
        let topo = two_subsystems();
        let a11 = DMatrix::from_element(2, 2, 1.0);
        let a21 = DMatrix::from_element(2, 2, 2.0);
        let a22 = DMatrix::from_element(2, 2, 3.0);
        let g = assemble_global(&[sub(a11, vec![]), sub(a22, vec![(0, a21)])], &topo).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 3.0, 3.0, 2.0, 2.0, 3.0, 3.0,
            ],
        );
        assert_eq!(g.a, expected);
        assert_eq!(g.c.shape(), (2, 4));
    }

    #[test]
    fn column_selected_stacks_sum_to_full_product() {
        let topo = two_subsystems();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 4, &mut rng);
        let c = random(2, 4, &mut rng);
        let s = build_stacked(&a, &DMatrix::zeros(4, 0), &c, 3);
        let z = random(4, 1, &mut rng).column(0).into_owned();
        let mut sum = DVector::zeros(s.observability.nrows());
        for i in 0..2 {
            let oi = crate::topology::select_columns(&s.observability, i, &topo).unwrap();
            sum += oi * z.rows(topo.lifted_range(i).start, 2);
        }
        assert!((sum - &s.observability * &z).amax() < 1e-14);
    }

    #[test]
    fn identity_dynamics_hold_the_initial_state() {
        let topo = two_subsystems();
        let model = KoopmanModel::new(
            topo,
            Scaler::identity(4, 0),
            vec![
                sub(DMatrix::identity(2, 2), vec![]),
                sub(DMatrix::identity(2, 2), vec![(0, DMatrix::zeros(2, 2))]),
            ],
        )
        .unwrap();
        let p =
            open_loop_predict(&model, &[0.1, 0.2, 0.3, 0.4], &DMatrix::zeros(10, 0), 10).unwrap();
        for k in 0..10 {
            assert_eq!(
                p.states.row(k).iter().copied().collect::<Vec<_>>(),
                vec![0.1, 0.2, 0.3, 0.4]
            );
        }
    }

    #[test]
    fn cache_returns_same_stack() {
        let g = GlobalModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 0),
            DMatrix::identity(2, 2),
        );
        let a = g.stacked(3);
        let b = g.stacked(3);
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(g.stacked(2).horizon, 2);
    }

    #[test]
    fn rmse_of_identical_series_is_zero() {
        let s = Scaler::identity(2, 0);
        let m = DMatrix::from_element(5, 2, 0.3);
        assert_eq!(scaled_rmse(&s, &m, &m), 0.0);
        let e = m.map(|v| v + 0.1);
        assert!((scaled_rmse(&s, &m, &e) - 0.1).abs() < 1e-12);
    }
}
