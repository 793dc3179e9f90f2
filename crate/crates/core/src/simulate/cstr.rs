//! Four interconnected CSTRs with three parallel first-order reactions.
//!
//! State order: `(T1, CA1, T2, CA2, T3, CA3, T4, CA4)`. Reactor 1 receives the
//! recycle from reactors 2 and 4, reactor 2 the effluent of 1, reactor 3 part
//! of the effluent of 2, reactor 4 the effluent of 3.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{generate_inputs, stream, NoiseSpec, Trajectory, PROCESS_NOISE_STREAM};
use crate::error::{Error, Result};

pub const CSTR_STATES: usize = 8;
pub const CSTR_REACTORS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CstrConfig {
    /// Reactor volumes V_i (m^3).
    pub volumes: Vec<f64>,
    /// Fresh feed flows F_0i (m^3/h).
    pub feed_flows: Vec<f64>,
    /// Inter-reactor flows F_1, F_2, F_3 (m^3/h).
    pub flows: Vec<f64>,
    /// Recycle flows F_r1, F_r2 (m^3/h).
    pub recycle_flows: Vec<f64>,
    /// Feed temperatures T_0i (K).
    pub feed_temperatures: Vec<f64>,
    /// Feed concentrations C_A0i (kmol/m^3).
    pub feed_concentrations: Vec<f64>,
    /// Pre-exponential factors k_j0 (1/h).
    pub pre_exponential: Vec<f64>,
    /// Activation temperatures E_j/R (K).
    pub activation_temperatures: Vec<f64>,
    /// Reaction enthalpies dH_j (kJ/kmol).
    pub reaction_enthalpies: Vec<f64>,
    /// Density times heat capacity (kJ/(m^3 K)).
    pub rho_cp: f64,
    /// Heat input bounds per reactor (kJ/h).
    pub heat_lower: Vec<f64>,
    pub heat_upper: Vec<f64>,
    /// Input hold time (h).
    pub hold_time: f64,
    /// Sampling period (h).
    pub sampling_period: f64,
    /// RK4 substeps per sampling period.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Initial state of the simulation.
    pub initial_state: Vec<f64>,
}

fn default_substeps() -> usize {
    20
}

impl CstrConfig {
    pub fn validate(&self) -> Result<()> {
        let check_len = |name: &str, v: &[f64], n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "cstr.{name} must have {n} entries, got {}",
                    v.len()
                )))
            }
        };
        check_len("volumes", &self.volumes, 4)?;
        check_len("feed_flows", &self.feed_flows, 4)?;
        check_len("flows", &self.flows, 3)?;
        check_len("recycle_flows", &self.recycle_flows, 2)?;
        check_len("feed_temperatures", &self.feed_temperatures, 4)?;
        check_len("feed_concentrations", &self.feed_concentrations, 4)?;
        check_len("pre_exponential", &self.pre_exponential, 3)?;
        check_len("activation_temperatures", &self.activation_temperatures, 3)?;
        check_len("reaction_enthalpies", &self.reaction_enthalpies, 3)?;
        check_len("heat_lower", &self.heat_lower, 4)?;
        check_len("heat_upper", &self.heat_upper, 4)?;
        check_len("initial_state", &self.initial_state, 8)?;
        if self.volumes.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("cstr volumes must be positive".into()));
        }
        if self
            .feed_flows
            .iter()
            .chain(&self.flows)
            .chain(&self.recycle_flows)
            .any(|&f| f < 0.0)
        {
            return Err(Error::Config("cstr flows must be non-negative".into()));
        }
        if self
            .heat_lower
            .iter()
            .zip(&self.heat_upper)
            .any(|(l, u)| l > u)
        {
            return Err(Error::Config(
                "cstr heat_lower must not exceed heat_upper".into(),
            ));
        }
        if !(self.sampling_period > 0.0) || !(self.hold_time > 0.0) {
            return Err(Error::Config(
                "cstr sampling_period and hold_time must be positive".into(),
            ));
        }
        if self.substeps < 10 {
            return Err(Error::Config("cstr substeps must be at least 10".into()));
        }
        Ok(())
    }

    pub fn hold_samples(&self) -> usize {
        (self.hold_time / self.sampling_period).round().max(1.0) as usize
    }

    /// Right-hand side of the eight mass and energy balances.
    pub fn rhs(&self, x: &[f64], heat: &[f64], dx: &mut [f64]) {
        let v = &self.volumes;
        let f0 = &self.feed_flows;
        let (f1, f2, f3) = (self.flows[0], self.flows[1], self.flows[2]);
        let (fr1, fr2) = (self.recycle_flows[0], self.recycle_flows[1]);
        let t0 = &self.feed_temperatures;
        let c0 = &self.feed_concentrations;
        let t = [x[0], x[2], x[4], x[6]];
        let c = [x[1], x[3], x[5], x[7]];

        let mut consumption = [0.0; 4];
        let mut heat_release = [0.0; 4];
        for r in 0..4 {
            for j in 0..3 {
                let rate = self.pre_exponential[j]
                    * (-self.activation_temperatures[j] / t[r]).exp()
                    * c[r];
                consumption[r] += rate;
                heat_release[r] += self.reaction_enthalpies[j] / self.rho_cp * rate;
            }
        }

        dx[0] =
            f0[0] / v[0] * (t0[0] - t[0]) + fr1 / v[0] * (t[1] - t[0]) + fr2 / v[0] * (t[3] - t[0])
                - heat_release[0]
                + heat[0] / (self.rho_cp * v[0]);
        dx[1] =
            f0[0] / v[0] * (c0[0] - c[0]) + fr1 / v[0] * (c[1] - c[0]) + fr2 / v[0] * (c[3] - c[0])
                - consumption[0];

        dx[2] = f1 / v[1] * (t[0] - t[1]) + f0[1] / v[1] * (t0[1] - t[1]) - heat_release[1]
            + heat[1] / (self.rho_cp * v[1]);
        dx[3] = f1 / v[1] * (c[0] - c[1]) + f0[1] / v[1] * (c0[1] - c[1]) - consumption[1];

        let f23 = f2 - fr1;
        dx[4] = f23 / v[2] * (t[1] - t[2]) + f0[2] / v[2] * (t0[2] - t[2]) - heat_release[2]
            + heat[2] / (self.rho_cp * v[2]);
        dx[5] = f23 / v[2] * (c[1] - c[2]) + f0[2] / v[2] * (c0[2] - c[2]) - consumption[2];

        dx[6] = f3 / v[3] * (t[2] - t[3]) + f0[3] / v[3] * (t0[3] - t[3]) - heat_release[3]
            + heat[3] / (self.rho_cp * v[3]);
        dx[7] = f3 / v[3] * (c[2] - c[3]) + f0[3] / v[3] * (c0[3] - c[3]) - consumption[3];
    }

    /// Central-difference Jacobians `(df/dx, df/dQ)` at `(x, heat)`.
    pub fn jacobians(
        &self,
        x: &[f64],
        heat: &[f64],
        rel_step: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut a = DMatrix::zeros(8, 8);
        let mut b = DMatrix::zeros(8, 4);
        let mut fp = [0.0; 8];
        let mut fm = [0.0; 8];
        for c in 0..8 {
            let h = rel_step * x[c].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            self.rhs(&xp, heat, &mut fp);
            self.rhs(&xm, heat, &mut fm);
            for r in 0..8 {
                a[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        for c in 0..4 {
            let h = rel_step * heat[c].abs().max(1.0);
            let mut qp = heat.to_vec();
            let mut qm = heat.to_vec();
            qp[c] += h;
            qm[c] -= h;
            self.rhs(x, &qp, &mut fp);
            self.rhs(x, &qm, &mut fm);
            for r in 0..8 {
                b[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        (a, b)
    }
}

/// Advances the state by one sampling period with fixed-step RK4.
pub fn step_cstr(state: &[f64], heat: &[f64], config: &CstrConfig) -> Result<[f64; 8]> {
    rk4(state, heat, config, config.sampling_period, config.substeps)
}

pub(crate) fn rk4(
    state: &[f64],
    heat: &[f64],
    config: &CstrConfig,
    span: f64,
    substeps: usize,
) -> Result<[f64; 8]> {
    let h = span / substeps as f64;
    let mut x = [0.0; 8];
    x.copy_from_slice(state);
    let (mut k1, mut k2, mut k3, mut k4) = ([0.0; 8], [0.0; 8], [0.0; 8], [0.0; 8]);
    let mut tmp = [0.0; 8];
    for _ in 0..substeps {
        config.rhs(&x, heat, &mut k1);
        for i in 0..8 {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        config.rhs(&tmp, heat, &mut k2);
        for i in 0..8 {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        config.rhs(&tmp, heat, &mut k3);
        for i in 0..8 {
            tmp[i] = x[i] + h * k3[i];
        }
        config.rhs(&tmp, heat, &mut k4);
        for i in 0..8 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            detail: "cstr integration produced a non-finite state".into(),
        });
    }
    Ok(x)
}

/// Simulates `horizon` samples with random piecewise-constant heat inputs.
///
/// Process noise is added after each integration step; measurements are the
/// four reactor temperatures (noise-free here, see [`super::add_noise`]).
pub fn simulate_cstr(
    config: &CstrConfig,
    noise: &NoiseSpec,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    let inputs = generate_inputs(
        &config.heat_lower,
        &config.heat_upper,
        config.hold_samples(),
        horizon,
        seed,
    );
    let sampler = noise.process_sampler(CSTR_STATES);
    let mut rng = stream(seed, PROCESS_NOISE_STREAM);
    let mut states = DMatrix::zeros(horizon, CSTR_STATES);
    let mut w_hist = DMatrix::zeros(horizon, CSTR_STATES);
    let mut x = [0.0; 8];
    x.copy_from_slice(&config.initial_state);
    let mut w = [0.0; 8];
    for k in 0..horizon {
        states.row_mut(k).copy_from_slice(&x);
        if k + 1 == horizon {
            break;
        }
        let u: Vec<f64> = inputs.row(k).iter().cloned().collect();
        let mut next = step_cstr(&x, &u, config).map_err(|e| match e {
            Error::NonFinite { detail, .. } => Error::NonFinite { step: k, detail },
            other => other,
        })?;
        sampler.sample_into(&mut rng, &mut w);
        for i in 0..8 {
            next[i] += w[i];
            w_hist[(k, i)] = w[i];
        }
        x = next;
    }
    let time = (0..horizon)
        .map(|k| k as f64 * config.sampling_period)
        .collect();
    let mut traj = Trajectory::new(time, states, inputs, vec![0, 2, 4, 6], seed);
    traj.process_noise = w_hist;
    Ok(traj)
}
