//! Isolation and restoration of compromised agents.

mod bess;
mod shedding;
mod supervisor;

pub use bess::{
    bess_step, check_bess_feasible, regulate_frequency, within_band, BessState, Feasibility,
    FrequencyMode, Infeasibility,
};
pub use shedding::{shed_load, ShedCommand, SheddableLoad, SheddingPlan, UnservableDeficit};
pub use supervisor::{AgentObservation, Command, MscSupervisor, SupervisorConfig};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    On,
    Off,
    Restoring,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::On => "ON",
            Status::Off => "OFF",
            Status::Restoring => "RESTORING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Breaker {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inverter {
    Connected,
    Disconnected,
    Rebooting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStatus {
    pub status: Status,
    pub breaker: Breaker,
    pub inverter: Inverter,
    pub bess_supported: bool,
}

impl Default for AgentStatus {
    fn default() -> Self {
        Self {
            status: Status::On,
            breaker: Breaker::Closed,
            inverter: Inverter::Connected,
            bess_supported: false,
        }
    }
}

/// `x(t+1) = x(t) + u(t)` for an agent driven by an attacked input.
pub fn compromised_state_step(x: f64, u_attacked: f64) -> f64 {
    x + u_attacked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compromised_update() {
        assert_eq!(compromised_state_step(0.4, 0.0), 0.4);
        assert!((compromised_state_step(1.0, -0.2) - 0.8).abs() < 1e-15);
        let mut x = 0.5;
        for _ in 0..10 {
            x = compromised_state_step(x, 0.125);
        }
        assert_eq!(x, 0.5 + 10.0 * 0.125);
    }
}
