//! One-dimensional Richards equation on a uniform column of compartments.
//!
//! Compartment 0 is at the surface. The update is explicit in time with
//! central spatial differences and is written in water-content form, so the
//! discrete water balance closes to round-off: the change of stored water
//! equals surface inflow minus bottom outflow over every substep. Heads are
//! recovered from water content through the inverse retention curve.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{stream, NoiseSpec, Trajectory, PROCESS_NOISE_STREAM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomBoundary {
    /// Unit hydraulic gradient: outflow equals the bottom conductivity.
    FreeDrainage,
    NoFlux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilConfig {
    /// Profile depth L (m).
    pub depth: f64,
    pub compartments: usize,
    /// van Genuchten alpha (1/m).
    pub alpha: f64,
    /// van Genuchten n (> 1).
    pub n: f64,
    /// Mualem pore-connectivity exponent.
    pub lambda: f64,
    pub theta_s: f64,
    pub theta_r: f64,
    /// Saturated conductivity (m/s).
    pub k_sat: f64,
    /// Irrigation flux while irrigating (m/h).
    pub irrigation_rate: f64,
    /// Irrigation hours at the start of each day.
    pub irrigation_hours: f64,
    /// Sampling period (min).
    pub sampling_minutes: f64,
    /// Initial uniform pressure head (m).
    pub initial_head: f64,
    #[serde(default = "default_bottom")]
    pub bottom: BottomBoundary,
    /// Fraction of the explicit diffusive stability limit used per substep.
    #[serde(default = "default_stability")]
    pub stability_factor: f64,
}

fn default_bottom() -> BottomBoundary {
    BottomBoundary::FreeDrainage
}
fn default_stability() -> f64 {
    0.4
}

impl SoilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_r < self.theta_s) {
            return Err(Error::Config("soil theta_r must be below theta_s".into()));
        }
        if !(self.n > 1.0) {
            return Err(Error::Config("soil van Genuchten n must exceed 1".into()));
        }
        if self.compartments == 0 || !(self.depth > 0.0) {
            return Err(Error::Config(
                "soil depth and compartment count must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.k_sat > 0.0 && self.sampling_minutes > 0.0) {
            return Err(Error::Config(
                "soil alpha, k_sat and sampling period must be positive".into(),
            ));
        }
        if !(self.stability_factor > 0.0 && self.stability_factor <= 1.0) {
            return Err(Error::Config(
                "soil stability_factor must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Compartment size (m).
    pub fn dz(&self) -> f64 {
        self.depth / self.compartments as f64
    }

    fn m(&self) -> f64 {
        1.0 - 1.0 / self.n
    }

    /// Saturated conductivity in m/h.
    pub fn k_sat_per_hour(&self) -> f64 {
        self.k_sat * 3600.0
    }

    pub fn sampling_hours(&self) -> f64 {
        self.sampling_minutes / 60.0
    }

    /// Relative saturation from head.
    pub fn effective_saturation(&self, h: f64) -> f64 {
        if h >= 0.0 {
            return 1.0;
        }
        (1.0 + (-self.alpha * h).powf(self.n)).powf(-self.m())
    }

    /// Water content from head (retention curve).
    pub fn water_content(&self, h: f64) -> f64 {
        (self.theta_s - self.theta_r) * self.effective_saturation(h) + self.theta_r
    }

    /// Head from water content (inverse retention curve); requires theta_r < theta < theta_s.
    pub fn head_from_content(&self, theta: f64) -> f64 {
        let se = (theta - self.theta_r) / (self.theta_s - self.theta_r);
        -((se.powf(-1.0 / self.m()) - 1.0).powf(1.0 / self.n)) / self.alpha
    }

    /// Mualem conductivity (m/h).
    pub fn conductivity(&self, h: f64) -> f64 {
        let se = self.effective_saturation(h);
        let m = self.m();
        let inner = 1.0 - (1.0 - se.powf(1.0 / m)).powf(m);
        self.k_sat_per_hour() * se.powf(self.lambda) * inner * inner
    }

    /// Capillary capacity dtheta/dh (1/m).
    pub fn capacity(&self, h: f64) -> f64 {
        if h >= 0.0 {
            return 0.0;
        }
        let ah = -self.alpha * h;
        self.n
            * self.alpha
            * (self.theta_s - self.theta_r)
            * (1.0 - 1.0 / self.n)
            * ah.powf(self.n - 1.0)
            * (1.0 + ah.powf(self.n)).powf(-(2.0 - 1.0 / self.n))
    }

    /// Surface flux (m/h, positive into the soil) at time `t` hours.
    pub fn irrigation_at(&self, t: f64) -> f64 {
        if t.rem_euclid(24.0) < self.irrigation_hours - 1e-9 {
            self.irrigation_rate
        } else {
            0.0
        }
    }
}

/// Cumulative water fluxes over one call (m of water).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WaterBalance {
    pub inflow: f64,
    pub outflow: f64,
    pub storage_before: f64,
    pub storage_after: f64,
}

/// Advances the head profile by one sampling period under a constant surface flux.
pub fn step_richards(heads: &[f64], surface_flux: f64, config: &SoilConfig) -> Result<Vec<f64>> {
    step_richards_with_balance(heads, surface_flux, config).map(|(h, _)| h)
}

pub fn step_richards_with_balance(
    heads: &[f64],
    surface_flux: f64,
    config: &SoilConfig,
) -> Result<(Vec<f64>, WaterBalance)> {
    let nc = config.compartments;
    if heads.len() != nc {
        return Err(Error::dim("head profile", nc, heads.len()));
    }
    check_unsaturated(heads, 0)?;
    let dz = config.dz();
    let mut h = heads.to_vec();
    let mut theta: Vec<f64> = h.iter().map(|&v| config.water_content(v)).collect();
    let mut balance = WaterBalance {
        storage_before: theta.iter().sum::<f64>() * dz,
        ..Default::default()
    };
    let mut k = vec![0.0; nc];
    // downward flux through the top of each compartment, plus the bottom face
    let mut flux = vec![0.0; nc + 1];
    let mut remaining = config.sampling_hours();
    while remaining > 0.0 {
        let mut max_diffusivity: f64 = 0.0;
        for i in 0..nc {
            k[i] = config.conductivity(h[i]);
            let c = config.capacity(h[i]).max(1e-12);
            max_diffusivity = max_diffusivity.max(k[i] / c);
        }
        let limit = config.stability_factor * dz * dz / (2.0 * max_diffusivity.max(1e-300));
        let dt = remaining.min(limit);

        flux[0] = surface_flux;
        for i in 0..nc - 1 {
            let k_face = 0.5 * (k[i] + k[i + 1]);
            flux[i + 1] = k_face * ((h[i] - h[i + 1]) / dz + 1.0);
        }
        flux[nc] = match config.bottom {
            BottomBoundary::FreeDrainage => k[nc - 1],
            BottomBoundary::NoFlux => 0.0,
        };
        for i in 0..nc {
            let d_theta = dt * (flux[i] - flux[i + 1]) / dz;
            if d_theta != 0.0 {
                theta[i] += d_theta;
                if theta[i] >= config.theta_s {
                    return Err(Error::Saturated {
                        step: 0,
                        compartment: i,
                        head: 0.0,
                    });
                }
                h[i] = config.head_from_content(theta[i]);
            }
        }
        balance.inflow += dt * flux[0];
        balance.outflow += dt * flux[nc];
        remaining -= dt;
        if remaining < 1e-15 {
            break;
        }
    }
    balance.storage_after = theta.iter().sum::<f64>() * dz;
    check_unsaturated(&h, 0)?;
    Ok((h, balance))
}

fn check_unsaturated(h: &[f64], step: usize) -> Result<()> {
    for (i, &v) in h.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("head in compartment {i} is {v}"),
            });
        }
        if v >= 0.0 {
            return Err(Error::Saturated {
                step,
                compartment: i,
                head: v,
            });
        }
    }
    Ok(())
}

/// Irrigation flux per sample (m/h) for `horizon` samples.
pub fn irrigation_schedule(config: &SoilConfig, horizon: usize) -> DMatrix<f64> {
    let dt = config.sampling_hours();
    DMatrix::from_fn(horizon, 1, |k, _| config.irrigation_at(k as f64 * dt))
}

/// Simulates `horizon` samples; measured compartments are given per channel.
pub fn simulate_richards(
    config: &SoilConfig,
    noise: &NoiseSpec,
    horizon: usize,
    sensors: Vec<usize>,
    seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    let nc = config.compartments;
    let inputs = irrigation_schedule(config, horizon);
    let sampler = noise.process_sampler(nc);
    let mut rng = stream(seed, PROCESS_NOISE_STREAM);
    let mut states = DMatrix::zeros(horizon, nc);
    let mut w_hist = DMatrix::zeros(horizon, nc);
    let mut h = vec![config.initial_head; nc];
    let mut w = vec![0.0; nc];
    for k in 0..horizon {
        states.row_mut(k).copy_from_slice(&h);
        if k + 1 == horizon {
            break;
        }
        let mut next = step_richards(&h, inputs[(k, 0)], config).map_err(|e| with_step(e, k))?;
        sampler.sample_into(&mut rng, &mut w);
        for i in 0..nc {
            next[i] += w[i];
            w_hist[(k, i)] = w[i];
        }
        check_unsaturated(&next, k + 1)?;
        h = next;
    }
    let time = (0..horizon)
        .map(|k| k as f64 * config.sampling_hours())
        .collect();
    let mut traj = Trajectory::new(time, states, inputs, sensors, seed);
    traj.process_noise = w_hist;
    Ok(traj)
}

fn with_step(e: Error, k: usize) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { step: k, detail },
        Error::Saturated {
            compartment, head, ..
        } => Error::Saturated {
            step: k,
            compartment,
            head,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loam() -> SoilConfig {
        crate::config::presets::agro()
            .process
            .soil()
            .unwrap()
            .clone()
    }

    #[test]
    fn retention_inverse_round_trips() {
        let s = loam();
        for &h in &[-0.01, -0.3, -1.0, -3.0] {
            let back = s.head_from_content(s.water_content(h));
            assert!((back - h).abs() < 1e-10 * h.abs(), "{h} -> {back}");
        }
    }

    #[test]
    fn capacity_matches_finite_difference_of_retention() {
        let s = loam();
        for &h in &[-0.05, -0.4, -2.0] {
            let eps = 1e-6;
            let fd = (s.water_content(h + eps) - s.water_content(h - eps)) / (2.0 * eps);
            assert!(
                (fd - s.capacity(h)).abs() < 1e-6 * fd.abs().max(1e-3),
                "{h}: {fd} vs {}",
                s.capacity(h)
            );
        }
    }

    #[test]
    fn hydrostatic_profile_is_stationary_without_boundary_flux() {
        let mut s = loam();
        s.bottom = BottomBoundary::NoFlux;
        let dz = s.dz();
        let h: Vec<f64> = (0..s.compartments).map(|i| -1.5 + i as f64 * dz).collect();
        let next = step_richards(&h, 0.0, &s).unwrap();
        for (a, b) in h.iter().zip(&next) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn irrigation_wets_the_top_compartment() {
        let s = loam();
        let h = vec![s.initial_head; s.compartments];
        let wet = step_richards(&h, s.irrigation_rate, &s).unwrap();
        let dry = step_richards(&h, 0.0, &s).unwrap();
        assert!(wet[0] > h[0]);
        assert!(wet[0] > dry[0]);
    }

    #[test]
    fn discrete_water_balance_closes() {
        let s = loam();
        let mut h: Vec<f64> = (0..s.compartments)
            .map(|i| -0.3 - 0.004 * i as f64)
            .collect();
        for k in 0..120 {
            let q = s.irrigation_at(k as f64 * s.sampling_hours());
            let (next, b) = step_richards_with_balance(&h, q, &s).unwrap();
            let stored = b.storage_after - b.storage_before;
            let net = b.inflow - b.outflow;
            let scale = b.inflow.abs() + b.outflow.abs();
            assert!(
                (stored - net).abs() <= 1e-8 * scale,
                "step {k}: {stored} vs {net}"
            );
            h = next;
        }
    }

    #[test]
    fn irrigation_schedule_is_eight_hours_per_day() {
        let s = loam();
        let u = irrigation_schedule(&s, 24 * 60);
        let on = u.iter().filter(|&&v| v > 0.0).count();
        assert_eq!(on, 8 * 60);
        assert_eq!(u[(0, 0)], 1.944e-3);
    }

    #[test]
    fn saturated_input_is_rejected() {
        let s = loam();
        let mut h = vec![-0.5; s.compartments];
        h[3] = 0.0;
        assert!(matches!(
            step_richards(&h, 0.0, &s),
            Err(Error::Saturated { compartment: 3, .. })
        ));
    }
}
