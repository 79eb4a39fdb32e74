//! Battery energy storage at the PCC: power and SOC limits, SOC dynamics and
//! frequency regulation of the supported bus.

use serde::{Deserialize, Serialize};

const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FrequencyMode {
    Idle,
    Regulating {
        omega_ref: f64,
        t_lim: f64,
        /// Frequency of the supported bus at pickup, rad/s.
        omega_start: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BessState {
    /// W
    pub p_min: f64,
    /// W
    pub p_max: f64,
    pub soc: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Wh
    pub capacity: f64,
    /// W
    pub current_output: f64,
    pub frequency_mode: FrequencyMode,
    /// Raised when an output had to be curtailed at a limit.
    pub limit_reached: bool,
}

impl BessState {
    pub fn new(p_min: f64, p_max: f64, soc: f64, soc_min: f64, soc_max: f64, capacity_wh: f64) -> Self {
        Self {
            p_min,
            p_max,
            soc,
            soc_min,
            soc_max,
            capacity: capacity_wh,
            current_output: 0.0,
            frequency_mode: FrequencyMode::Idle,
            limit_reached: false,
        }
    }

    /// Returns the first violated invariant.
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.soc_min) || !(0.0..=1.0).contains(&self.soc_max) {
            return Err("soc limits must lie in [0, 1]".into());
        }
        if !(self.soc_min < self.soc_max) {
            return Err("soc_min must be below soc_max".into());
        }
        if !(self.soc_min..=self.soc_max).contains(&self.soc) {
            return Err(format!(
                "initial soc {} outside [{}, {}]",
                self.soc, self.soc_min, self.soc_max
            ));
        }
        if !(self.p_min >= 0.0 && self.p_min <= self.p_max) {
            return Err("power limits must satisfy 0 <= p_min <= p_max".into());
        }
        if !(self.capacity > 0.0) {
            return Err("capacity must be positive".into());
        }
        Ok(())
    }

    /// Stored energy above `soc_min`, J.
    pub fn usable_energy_j(&self) -> f64 {
        ((self.soc - self.soc_min) * self.capacity * SECONDS_PER_HOUR).max(0.0)
    }

    /// SOC drop from delivering `energy_j`.
    pub fn soc_drop(&self, energy_j: f64) -> f64 {
        energy_j / (self.capacity * SECONDS_PER_HOUR)
    }

    /// Largest constant demand the battery can hold for `horizon` seconds.
    pub fn max_sustainable(&self, horizon: f64) -> f64 {
        if horizon <= 0.0 {
            return self.p_max;
        }
        self.p_max.min(self.usable_energy_j() / horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Infeasibility {
    BelowMinimum,
    AboveMaximum,
    InsufficientCharge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub projected_soc: f64,
    pub reason: Option<Infeasibility>,
}

pub fn check_bess_feasible(bess: &BessState, demand: f64, horizon: f64) -> Feasibility {
    let projected_soc = bess.soc - bess.soc_drop(demand * horizon);
    let reason = if demand > bess.p_max {
        Some(Infeasibility::AboveMaximum)
    } else if demand < bess.p_min && demand > 0.0 {
        Some(Infeasibility::BelowMinimum)
    } else if projected_soc < bess.soc_min {
        Some(Infeasibility::InsufficientCharge)
    } else {
        None
    };
    Feasibility {
        feasible: reason.is_none(),
        projected_soc,
        reason,
    }
}

/// Discharges at `demand` for `dt`, curtailing at the power and SOC limits.
pub fn bess_step(bess: &BessState, demand: f64, dt: f64) -> BessState {
    let mut next = *bess;
    let mut output = demand.max(0.0);
    if output > bess.p_max {
        output = bess.p_max;
        next.limit_reached = true;
    }
    let drop = bess.soc_drop(output * dt);
    if bess.soc - drop < bess.soc_min {
        output = bess.usable_energy_j() / dt;
        next.soc = bess.soc_min;
        next.limit_reached = true;
    } else {
        next.soc = bess.soc - drop;
    }
    next.current_output = output;
    debug_assert!(next.current_output <= next.p_max + 1e-9);
    debug_assert!(next.soc >= next.soc_min && next.soc <= next.soc_max.max(bess.soc));
    next
}

/// First-order frequency command from the pickup frequency toward `omega_ref`
/// with time constant `t_lim / 5`, and whether the bus meets the settling
/// constraint: still inside `t_lim`, or within `band_pct` of the pickup
/// deviation.
pub fn regulate_frequency(
    bess: &BessState,
    omega_now: f64,
    omega_ref: f64,
    t_since_pickup: f64,
    t_lim: f64,
    band_pct: f64,
) -> (f64, bool) {
    let omega_start = match bess.frequency_mode {
        FrequencyMode::Regulating { omega_start, .. } => omega_start,
        FrequencyMode::Idle => omega_now,
    };
    let tau = t_lim / 5.0;
    let omega_cmd = omega_ref + (omega_start - omega_ref) * (-t_since_pickup.max(0.0) / tau).exp();
    let compliant = t_since_pickup < t_lim || within_band(omega_now, omega_ref, omega_start, band_pct);
    (omega_cmd, compliant)
}

pub fn within_band(omega_now: f64, omega_ref: f64, omega_start: f64, band_pct: f64) -> bool {
    (omega_now - omega_ref).abs() <= band_pct * (omega_start - omega_ref).abs() + 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bess(soc: f64) -> BessState {
        BessState::new(0.0, 2.5e6, soc, 0.2, 0.95, 1e6)
    }

    #[test]
    fn feasibility_cases() {
        let b = BessState { soc_max: 1.0, ..bess(0.9) };
        let f = check_bess_feasible(&b, 2e6, 0.2);
        assert!(f.feasible);
        assert!((0.9 - f.projected_soc - 2e6 * 0.2 / 3600.0 / 1e6).abs() < 1e-15);
        assert_eq!(
            check_bess_feasible(&b, 3e6, 0.2).reason,
            Some(Infeasibility::AboveMaximum)
        );
        for soc in [0.2, 0.5, 0.95] {
            assert!(check_bess_feasible(&bess(soc), 0.0, 10.0).feasible);
        }
    }

    #[test]
    fn step_cases() {
        let b = bess(0.9);
        assert_eq!(bess_step(&b, 0.0, 1.0).soc, 0.9);
        let s = bess_step(&b, 2e6, 1.0);
        assert!((s.soc - (0.9 - 2e6 / 3.6e9)).abs() < 1e-15);
        assert!((s.soc - 0.899_444_4).abs() < 1e-7);
        assert_eq!(s.current_output, 2e6);
    }

    #[test]
    fn limit_reached_after_24_minutes() {
        let mut b = BessState { soc_max: 1.0, ..bess(1.0) };
        let dt = 1.0;
        let mut t = 0.0;
        while !b.limit_reached {
            b = bess_step(&b, 2e6, dt);
            t += dt;
        }
        // 0.8 MWh at 2 MW; the final step is curtailed.
        assert!((t - 1440.0).abs() <= dt, "{t}");
        assert_eq!(b.soc, 0.2);
    }

    #[test]
    fn frequency_regulation_cases() {
        let omega_ref = 377.0;
        let mut b = bess(0.9);
        b.frequency_mode = FrequencyMode::Regulating {
            omega_ref,
            t_lim: 0.1,
            omega_start: omega_ref,
        };
        let (cmd, ok) = regulate_frequency(&b, omega_ref, omega_ref, 0.5, 0.1, 0.02);
        assert_eq!(cmd, omega_ref);
        assert!(ok);

        let start = omega_ref * 1.01;
        b.frequency_mode = FrequencyMode::Regulating {
            omega_ref,
            t_lim: 0.1,
            omega_start: start,
        };
        let (at_lim, _) = regulate_frequency(&b, start, omega_ref, 0.1, 0.1, 0.02);
        let rel = (at_lim - omega_ref) / (start - omega_ref);
        assert!((rel - (-5.0f64).exp()).abs() < 1e-12);
        // The 2% band is crossed at ln(50) tau, well inside t_lim.
        let settle = 0.1 / 5.0 * 50f64.ln();
        assert!(settle < 0.1);
        let (late, _) = regulate_frequency(&b, start, omega_ref, settle * 1.001, 0.1, 0.02);
        assert!(within_band(late, omega_ref, start, 0.02));

        let (_, ok) = regulate_frequency(&b, start, omega_ref, 0.15, 0.1, 0.02);
        assert!(!ok);
    }

    proptest! {
        #[test]
        fn step_matches_arithmetic_oracle(soc in 0.2f64..0.95, demand in 0.0f64..2.5e6, dt in 1e-5f64..10.0) {
            let b = bess(soc);
            let s = bess_step(&b, demand, dt);
            let oracle = soc - demand * dt / 3600.0 / 1e6;
            if oracle >= 0.2 {
                prop_assert!((s.soc - oracle).abs() <= 1e-9 * oracle.abs());
                prop_assert_eq!(s.current_output, demand);
            } else {
                prop_assert_eq!(s.soc, 0.2);
                prop_assert!(s.limit_reached);
            }
        }

        #[test]
        fn limits_hold_and_soc_audits(soc in 0.2f64..0.95, demands in proptest::collection::vec(0.0f64..4e6, 1..400)) {
            let mut b = bess(soc);
            let dt = 0.5;
            let mut energy = 0.0;
            for d in demands {
                b = bess_step(&b, d, dt);
                prop_assert!(b.current_output >= b.p_min && b.current_output <= b.p_max);
                prop_assert!(b.soc >= b.soc_min && b.soc <= b.soc_max);
                energy += b.current_output * dt;
            }
            let audit = energy / (1e6 * 3600.0);
            let spent = soc - b.soc;
            prop_assert!((spent - audit).abs() <= 1e-9 * spent.abs().max(1e-12) + 1e-15);
        }
    }
}
