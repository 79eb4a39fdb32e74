//! Per-DG physical layer: power flow, droop laws and the linearised
//! converter state-space model.

mod waveform;

pub use waveform::{
    clipped_sine, fundamental_amplitude, synthesize_waveform, thd, ThdWindow,
    DEFAULT_WAVEFORM_RATE_HZ,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 11;
pub const INPUT_DIM: usize = 2;

// Positions in the state vector.
pub const BETA: usize = 0;
pub const V_OD: usize = 1;
pub const V_OQ: usize = 2;
pub const I_OD: usize = 3;
pub const I_OQ: usize = 4;
pub const I_D: usize = 5;
pub const I_Q: usize = 6;
pub const P_G: usize = 7;
pub const Q_G: usize = 8;
pub const OMEGA: usize = 9;
pub const V: usize = 10;

pub const STATE_NAMES: [&str; STATE_DIM] = [
    "beta", "v_od", "v_oq", "i_od", "i_oq", "i_d", "i_q", "p_g", "q_g", "omega", "v",
];

/// Rows of the default output matrix: measured `[P_G, Q_G, omega, V]`.
pub const OUTPUT_STATES: [usize; 4] = [P_G, Q_G, OMEGA, V];

#[derive(Debug, Error, PartialEq)]
pub enum ConverterError {
    #[error("line impedance must be positive, got {0}")]
    InvalidImpedance(f64),
    #[error("timestep must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("numerical divergence in state `{name}` (index {index})", name = STATE_NAMES[*index])]
    Divergence { index: usize },
    #[error("invalid droop parameter {0}: must be positive")]
    InvalidDroop(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroopParams {
    /// No-load angular frequency, rad/s.
    pub omega0: f64,
    /// No-load voltage, pu.
    pub v0: f64,
    /// (rad/s) per W.
    pub k_p: f64,
    /// pu per Var.
    pub k_q: f64,
}

impl DroopParams {
    pub fn validate(&self) -> Result<(), ConverterError> {
        for (name, value) in [
            ("omega0", self.omega0),
            ("v0", self.v0),
            ("k_p", self.k_p),
            ("k_q", self.k_q),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConverterError::InvalidDroop(name));
            }
        }
        Ok(())
    }
}

/// The converter state `[beta, v_od, v_oq, i_od, i_oq, i_d, i_q, P_G, Q_G, omega, V]`.
///
/// `beta` is the output angle against the nominal rotating frame, `P_G`/`Q_G`
/// are in W/Var, `omega` in rad/s and the rest per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterState {
    pub x: [f64; STATE_DIM],
    /// Set when `omega` leaves the model's hard bounds.
    pub out_of_envelope: bool,
}

impl ConverterState {
    pub fn new(x: [f64; STATE_DIM]) -> Self {
        Self {
            x,
            out_of_envelope: false,
        }
    }

    pub fn omega(&self) -> f64 {
        self.x[OMEGA]
    }

    pub fn voltage(&self) -> f64 {
        self.x[V]
    }

    pub fn beta(&self) -> f64 {
        self.x[BETA]
    }

    pub fn p_g(&self) -> f64 {
        self.x[P_G]
    }

    pub fn q_g(&self) -> f64 {
        self.x[Q_G]
    }
}

/// Secondary set-point delivered to the modulation controller: the no-load
/// references with the secondary corrections folded in,
/// `omega_s = omega0 + d_omega` and `v_s = v0 + d_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondarySignal {
    pub omega_s: f64,
    pub v_s: f64,
}

impl SecondarySignal {
    pub fn from_corrections(params: &DroopParams, delta_omega: f64, delta_v: f64) -> Self {
        Self {
            omega_s: params.omega0 + delta_omega,
            v_s: params.v0 + delta_v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega_s.is_finite() && self.v_s.is_finite()
    }
}

/// Time constants of the first-order channel models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConstants {
    /// Voltage and current channels.
    pub tau_filter: f64,
    /// Power measurement low-pass.
    pub tau_pq: f64,
    /// Lag of the droop loops on `omega` and `V`.
    pub tau_droop: f64,
}

impl Default for FilterConstants {
    fn default() -> Self {
        Self {
            tau_filter: 1e-3,
            tau_pq: 5e-3,
            tau_droop: 1e-3,
        }
    }
}

impl FilterConstants {
    pub fn longest(&self) -> f64 {
        self.tau_filter.max(self.tau_pq).max(self.tau_droop)
    }
}

/// Source of independent standard-normal draws, one stream per output channel.
pub trait NoiseSource {
    fn standard_normal(&mut self, channel: usize) -> f64;
}

/// Noise source for deterministic use: always returns zero.
pub struct Silent;

impl NoiseSource for Silent {
    fn standard_normal(&mut self, _channel: usize) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: [[f64; STATE_DIM]; STATE_DIM],
    pub b: [[f64; INPUT_DIM]; STATE_DIM],
    pub c: Vec<[f64; STATE_DIM]>,
    pub noise_sigma: Vec<f64>,
    /// Hard bounds on `omega`, rad/s.
    pub omega_bounds: (f64, f64),
}

impl StateSpaceModel {
    pub fn zeros(outputs: usize) -> Self {
        Self {
            a: [[0.0; STATE_DIM]; STATE_DIM],
            b: [[0.0; INPUT_DIM]; STATE_DIM],
            c: vec![[0.0; STATE_DIM]; outputs],
            noise_sigma: vec![0.0; outputs],
            omega_bounds: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Assembles the droop converter model.
    ///
    /// Droop rows: `tau_droop * omega' = omega_s - k_p P_G - omega` and
    /// `tau_droop * V' = v_s - k_q Q_G - V`, so the fixed point is exactly the
    /// droop characteristic. `beta' = omega` (less the nominal rotation, which
    /// the caller supplies as a drive term). The dq voltage states follow `V`,
    /// the inverter-side currents follow the output currents, and `P_G`, `Q_G`
    /// and the output currents relax toward network-determined values that
    /// also enter through the drive vector.
    ///
    /// `noise_sigma` is given per unit and scaled by `[s_base, s_base, omega_nom, 1]`.
    pub fn droop_converter(
        params: &DroopParams,
        tau: &FilterConstants,
        s_base_va: f64,
        omega_nom: f64,
        noise_sigma_pu: f64,
        omega_bounds_pu: (f64, f64),
    ) -> Self {
        let mut m = Self::zeros(OUTPUT_STATES.len());
        let tf = 1.0 / tau.tau_filter;
        let tp = 1.0 / tau.tau_pq;
        let td = 1.0 / tau.tau_droop;

        m.a[BETA][OMEGA] = 1.0;

        m.a[V_OD][V_OD] = -tf;
        m.a[V_OD][V] = tf;
        m.a[V_OQ][V_OQ] = -tf;

        m.a[I_OD][I_OD] = -tf;
        m.a[I_OQ][I_OQ] = -tf;

        m.a[I_D][I_D] = -tf;
        m.a[I_D][I_OD] = tf;
        m.a[I_Q][I_Q] = -tf;
        m.a[I_Q][I_OQ] = tf;

        m.a[P_G][P_G] = -tp;
        m.a[Q_G][Q_G] = -tp;

        m.a[OMEGA][OMEGA] = -td;
        m.a[OMEGA][P_G] = -params.k_p * td;
        m.b[OMEGA][0] = td;

        m.a[V][V] = -td;
        m.a[V][Q_G] = -params.k_q * td;
        m.b[V][1] = td;

        let scale = [s_base_va, s_base_va, omega_nom, 1.0];
        for (row, (&state, s)) in OUTPUT_STATES.iter().zip(scale).enumerate() {
            m.c[row][state] = 1.0;
            m.noise_sigma[row] = noise_sigma_pu * s;
        }
        m.omega_bounds = (omega_bounds_pu.0 * omega_nom, omega_bounds_pu.1 * omega_nom);
        m
    }

    pub fn output_dim(&self) -> usize {
        self.c.len()
    }

    /// Noiseless `C x`.
    pub fn output(&self, x: &ConverterState) -> Vec<f64> {
        self.c
            .iter()
            .map(|row| row.iter().zip(&x.x).map(|(c, v)| c * v).sum())
            .collect()
    }

    pub fn measure(&self, x: &ConverterState, noise: &mut impl NoiseSource) -> Vec<f64> {
        let mut y = self.output(x);
        for (k, yk) in y.iter_mut().enumerate() {
            let sigma = self.noise_sigma[k];
            if sigma > 0.0 {
                *yk += sigma * noise.standard_normal(k);
            }
        }
        y
    }
}

/// Active and reactive power delivered through impedance `z∠theta` by a
/// source `v_i∠beta` into a bus at `v_g∠0`.
pub fn power_flow(
    v_g: f64,
    v_i: f64,
    beta: f64,
    z: f64,
    theta: f64,
) -> Result<(f64, f64), ConverterError> {
    if !(z > 0.0) {
        return Err(ConverterError::InvalidImpedance(z));
    }
    let p = v_g * v_i / z * (theta - beta).cos() - v_g * v_g / z * theta.cos();
    let q = v_g * v_i / z * (theta - beta).sin() - v_g * v_g / z * theta.sin();
    Ok((p, q))
}

pub fn droop_primary(params: &DroopParams, p_g: f64, q_g: f64) -> (f64, f64) {
    (params.omega0 - params.k_p * p_g, params.v0 - params.k_q * q_g)
}

pub fn droop_with_secondary(
    params: &DroopParams,
    p_g: f64,
    q_g: f64,
    delta_omega: f64,
    delta_v: f64,
) -> (f64, f64) {
    let (omega, v) = droop_primary(params, p_g, q_g);
    (omega + delta_omega, v + delta_v)
}

/// One explicit Euler step of `x' = A x + B u`, then `y = C x + e`.
pub fn step_state(
    model: &StateSpaceModel,
    x: &ConverterState,
    u: &SecondarySignal,
    dt: f64,
    noise: &mut impl NoiseSource,
) -> Result<(ConverterState, Vec<f64>), ConverterError> {
    step_state_driven(model, x, u, &[0.0; STATE_DIM], dt, noise)
}

/// As [`step_state`] with an exogenous drive `w` added to the derivative:
/// `x' = A x + B u + w`. The engine uses `w` for network injections and for
/// the deltas of corrupted control signals.
pub fn step_state_driven(
    model: &StateSpaceModel,
    x: &ConverterState,
    u: &SecondarySignal,
    drive: &[f64; STATE_DIM],
    dt: f64,
    noise: &mut impl NoiseSource,
) -> Result<(ConverterState, Vec<f64>), ConverterError> {
    if !(dt > 0.0) {
        return Err(ConverterError::InvalidTimestep(dt));
    }
    let y = model.measure(x, noise);
    let input = [u.omega_s, u.v_s];
    let mut next = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        let mut deriv = drive[i];
        for (a, xj) in model.a[i].iter().zip(&x.x) {
            deriv += a * xj;
        }
        for (b, uj) in model.b[i].iter().zip(&input) {
            deriv += b * uj;
        }
        next[i] = x.x[i] + dt * deriv;
        if !next[i].is_finite() {
            return Err(ConverterError::Divergence { index: i });
        }
    }
    let omega = next[OMEGA];
    let out_of_envelope =
        x.out_of_envelope || omega < model.omega_bounds.0 || omega > model.omega_bounds.1;
    Ok((
        ConverterState {
            x: next,
            out_of_envelope,
        },
        y,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn params() -> DroopParams {
        DroopParams {
            omega0: 377.0,
            v0: 1.0,
            k_p: 1e-6,
            k_q: 2.5e-8,
        }
    }

    #[test]
    fn power_flow_cases() {
        let (p, q) = power_flow(1.0, 1.0, 0.0, 0.1, FRAC_PI_2).unwrap();
        assert!(p.abs() < 1e-12 && q.abs() < 1e-12);

        let (p, q) = power_flow(1.0, 1.0, 0.1, 0.1, FRAC_PI_2).unwrap();
        // sin(0.1)/0.1 and (cos(0.1) - 1)/0.1
        assert!((p - 0.998_334_166_468_281_5).abs() < 1e-12);
        assert!((q + 0.049_958_347_219_741_8).abs() < 1e-12);

        let (p, q) = power_flow(1.0, 1.05, 0.0, 0.1, FRAC_PI_2).unwrap();
        assert!(p.abs() < 1e-12);
        assert!((q - 0.5).abs() < 1e-12);

        assert_eq!(
            power_flow(1.0, 1.0, 0.0, 0.0, FRAC_PI_2),
            Err(ConverterError::InvalidImpedance(0.0))
        );
    }

    #[test]
    fn power_flow_odd_in_beta_for_inductive_line() {
        for k in 1..50 {
            let beta = k as f64 * 0.01;
            let (p1, _) = power_flow(1.0, 1.0, beta, 0.1, FRAC_PI_2).unwrap();
            let (p2, _) = power_flow(1.0, 1.0, -beta, 0.1, FRAC_PI_2).unwrap();
            assert!((p1 + p2).abs() < 1e-12);
        }
    }

    #[test]
    fn droop_cases() {
        let p = params();
        assert_eq!(droop_primary(&p, 0.0, 0.0), (377.0, 1.0));
        let (omega, _) = droop_primary(&p, 2e6, 0.0);
        assert!((omega - 375.0).abs() < 1e-12);
        let (w1, _) = droop_primary(&p, 1e6, 0.0);
        let (w2, _) = droop_primary(&p, 2e6, 0.0);
        assert!(((377.0 - w2) - 2.0 * (377.0 - w1)).abs() < 1e-12);

        assert_eq!(
            droop_with_secondary(&p, 1.5e6, 3e5, 0.0, 0.0),
            droop_primary(&p, 1.5e6, 3e5)
        );
        let (omega, _) = droop_with_secondary(&p, 2e6, 0.0, p.k_p * 2e6, 0.0);
        assert!((omega - p.omega0).abs() < 1e-12);
        let (omega, _) = droop_with_secondary(&p, 0.5e6, 0.0, 0.5, 0.0);
        assert!((omega - 377.0).abs() < 1e-12);
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let m = StateSpaceModel::zeros(1);
        let x = ConverterState::new([0.3; STATE_DIM]);
        let u = SecondarySignal { omega_s: 1.0, v_s: 2.0 };
        for dt in [1e-6, 1e-3, 1.0] {
            let (x2, _) = step_state(&m, &x, &u, dt, &mut Silent).unwrap();
            assert_eq!(x2, x);
        }
    }

    #[test]
    fn noiseless_output_is_cx() {
        let m = StateSpaceModel::droop_converter(
            &params(),
            &FilterConstants::default(),
            2e6,
            377.0,
            0.0,
            (0.5, 1.5),
        );
        let mut x = ConverterState::new([0.0; STATE_DIM]);
        x.x[P_G] = 1e6;
        x.x[OMEGA] = 376.0;
        x.x[V] = 0.99;
        let u = SecondarySignal { omega_s: 377.0, v_s: 1.0 };
        let (_, y) = step_state(&m, &x, &u, 1e-4, &mut Silent).unwrap();
        assert_eq!(y, vec![1e6, 0.0, 376.0, 0.99]);
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let mut m = StateSpaceModel::zeros(1);
        m.a[0][0] = -1.0;
        let mut x = ConverterState::new([0.0; STATE_DIM]);
        x.x[0] = 1.0;
        let u = SecondarySignal { omega_s: 0.0, v_s: 0.0 };
        let (x1, _) = step_state(&m, &x, &u, 0.001, &mut Silent).unwrap();
        assert!((x1.x[0] - 0.999).abs() < 1e-15);
        let mut s = x;
        for _ in 0..1000 {
            s = step_state(&m, &s, &u, 0.001, &mut Silent).unwrap().0;
        }
        assert!((s.x[0] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn fixed_point_matches_droop() {
        let p = params();
        let mut m = StateSpaceModel::droop_converter(
            &p,
            &FilterConstants::default(),
            2e6,
            377.0,
            0.0,
            (0.5, 1.5),
        );
        // Hold the power states constant.
        m.a[P_G] = [0.0; STATE_DIM];
        m.a[Q_G] = [0.0; STATE_DIM];
        let mut x = ConverterState::new([0.0; STATE_DIM]);
        x.x[P_G] = 1.3e6;
        x.x[Q_G] = 2e5;
        x.x[OMEGA] = 370.0;
        x.x[V] = 0.9;
        let u = SecondarySignal { omega_s: p.omega0, v_s: p.v0 };
        let mut drive = [0.0; STATE_DIM];
        for _ in 0..2000 {
            drive[BETA] = -x.x[OMEGA];
            x = step_state_driven(&m, &x, &u, &drive, 1e-4, &mut Silent).unwrap().0;
        }
        let (omega, v) = droop_primary(&p, 1.3e6, 2e5);
        assert!((x.omega() - omega).abs() < 1e-9);
        assert!((x.voltage() - v).abs() < 1e-9);
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = StateSpaceModel::zeros(1);
        m.a[OMEGA][OMEGA] = f64::INFINITY;
        let mut x = ConverterState::new([0.0; STATE_DIM]);
        x.x[OMEGA] = 1.0;
        let u = SecondarySignal { omega_s: 0.0, v_s: 0.0 };
        let err = step_state(&m, &x, &u, 1e-3, &mut Silent).unwrap_err();
        assert_eq!(err, ConverterError::Divergence { index: OMEGA });
        assert!(step_state(&m, &x, &u, 0.0, &mut Silent).is_err());
    }

    #[test]
    fn envelope_violation_is_flagged() {
        let m = StateSpaceModel::droop_converter(
            &params(),
            &FilterConstants::default(),
            2e6,
            377.0,
            0.0,
            (0.5, 1.5),
        );
        let mut x = ConverterState::new([0.0; STATE_DIM]);
        x.x[OMEGA] = 377.0 * 1.6;
        let u = SecondarySignal { omega_s: 377.0 * 1.6, v_s: 1.0 };
        let (x2, _) = step_state(&m, &x, &u, 1e-4, &mut Silent).unwrap();
        assert!(x2.out_of_envelope);
    }
}
