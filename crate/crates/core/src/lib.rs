//! Cyber-physical microgrid simulator: droop-controlled inverters under
//! leader-follower secondary control, false-data injection on control and
//! measurement channels, residual-based detection, and BESS-assisted
//! isolation and recovery.

pub mod attack;
pub mod cli;
pub mod consensus;
pub mod converter;
pub mod detection;
pub mod engine;
pub mod mitigation;
pub mod scenario;
pub mod topology;

pub use engine::{run, run_with, RunOptions, RunOutput};
pub use scenario::{load_scenario, ScenarioConfig};
