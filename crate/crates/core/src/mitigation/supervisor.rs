//! The MSC self-healing state machine: isolate, BESS support, reboot and
//! reconnect.

use serde::{Deserialize, Serialize};

use super::bess::{check_bess_feasible, BessState};
use super::shedding::{shed_load, SheddableLoad, SheddingPlan};
use super::{AgentStatus, Breaker, Inverter, Status};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisorConfig {
    pub enabled: bool,
    /// s
    pub scan_interval: f64,
    /// Consecutive flagged scans required before isolation.
    pub confirm_scans: u32,
    /// Breaker-open to BESS pickup, s.
    pub pickup_delay: f64,
    /// Inverter black-start dead time, s.
    pub reboot_dead_time: f64,
    /// Voltage step applied to the restored converter at handover, pu.
    pub handover_perturbation: f64,
    pub shed_fraction: f64,
    /// Criticality at or above which a load is never shed.
    pub critical_weight: f64,
    /// Horizon over which a dispatch must stay within SOC limits, s.
    pub bess_horizon: f64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scan_interval: 0.01,
            confirm_scans: 4,
            pickup_delay: 0.02,
            reboot_dead_time: 0.08,
            handover_perturbation: 0.02,
            shed_fraction: 0.1,
            critical_weight: 1.0,
            bess_horizon: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    BreakerOpen { agent: usize },
    SetStatus { agent: usize, status: Status },
    ConsensusRemove { agent: usize },
    InverterDisconnect { agent: usize },
    BessDispatch { agent: usize, demand: f64 },
    BreakerClose { agent: usize },
    InverterReboot { agent: usize },
    RebootComplete { agent: usize },
    InverterConnect { agent: usize },
    BessRelease { agent: usize },
    ConsensusRestore { agent: usize },
    ShedLoad { agent: usize, load_id: usize, amount: f64 },
    UnservableDeficit { agent: usize, deficit: f64 },
}

impl Command {
    pub fn agent(&self) -> usize {
        match *self {
            Command::BreakerOpen { agent }
            | Command::SetStatus { agent, .. }
            | Command::ConsensusRemove { agent }
            | Command::InverterDisconnect { agent }
            | Command::BessDispatch { agent, .. }
            | Command::BreakerClose { agent }
            | Command::InverterReboot { agent }
            | Command::RebootComplete { agent }
            | Command::InverterConnect { agent }
            | Command::BessRelease { agent }
            | Command::ConsensusRestore { agent }
            | Command::ShedLoad { agent, .. }
            | Command::UnservableDeficit { agent, .. } => agent,
        }
    }
}

/// What the supervisor sees of an agent at a scan.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentObservation {
    pub flagged: bool,
    pub currently_nominal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Phase {
    Normal,
    Confirming { scans: u32 },
    Isolated { since: f64 },
    /// Isolated with no BESS support available.
    Stranded,
    Rebooting { since: f64 },
    Standby,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgentRecord {
    status: AgentStatus,
    phase: Phase,
    criticality: f64,
    /// W
    load: f64,
    /// W covered by the BESS.
    supported: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MscSupervisor {
    cfg: SupervisorConfig,
    agents: Vec<AgentRecord>,
    next_scan: f64,
}

impl MscSupervisor {
    /// `loads` are the per-agent bus demands in W.
    pub fn new(cfg: SupervisorConfig, criticality: &[f64], loads: &[f64]) -> Self {
        let agents = criticality
            .iter()
            .zip(loads)
            .map(|(&criticality, &load)| AgentRecord {
                status: AgentStatus::default(),
                phase: Phase::Normal,
                criticality,
                load,
                supported: 0.0,
            })
            .collect();
        Self {
            cfg,
            agents,
            next_scan: 0.0,
        }
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.cfg
    }

    pub fn status(&self, agent: usize) -> AgentStatus {
        self.agents[agent].status
    }

    pub fn statuses(&self) -> Vec<AgentStatus> {
        self.agents.iter().map(|a| a.status).collect()
    }

    /// Whether the agent has been rebooted and is waiting to reconnect.
    pub fn reboot_done(&self, agent: usize) -> bool {
        self.agents[agent].phase == Phase::Standby
    }

    /// Total W the supervisor has committed from the BESS.
    pub fn committed_support(&self) -> f64 {
        self.agents.iter().map(|a| a.supported).sum()
    }

    pub fn supported_demand(&self, agent: usize) -> f64 {
        self.agents[agent].supported
    }

    pub fn reduce_load(&mut self, agent: usize, amount: f64) {
        let a = &mut self.agents[agent];
        a.load = (a.load - amount).max(0.0);
    }

    /// Runs one supervisory scan when `t` has reached the next scan instant.
    /// Returns the commands to apply, in order.
    pub fn supervise_step(&mut self, obs: &[AgentObservation], bess: &BessState, t: f64) -> Vec<Command> {
        if !self.cfg.enabled || t + 1e-9 < self.next_scan {
            return Vec::new();
        }
        while self.next_scan <= t + 1e-9 {
            self.next_scan += self.cfg.scan_interval;
        }
        let mut out = Vec::new();
        let mut pickups = Vec::new();
        for (i, o) in obs.iter().enumerate() {
            let rec = &mut self.agents[i];
            match rec.phase {
                Phase::Normal | Phase::Confirming { .. } if o.flagged => {
                    let scans = match rec.phase {
                        Phase::Confirming { scans } => scans + 1,
                        _ => 1,
                    };
                    if scans >= self.cfg.confirm_scans {
                        rec.phase = Phase::Isolated { since: t };
                        rec.status.breaker = Breaker::Open;
                        rec.status.status = Status::Off;
                        out.push(Command::BreakerOpen { agent: i });
                        out.push(Command::SetStatus {
                            agent: i,
                            status: Status::Off,
                        });
                        out.push(Command::ConsensusRemove { agent: i });
                    } else {
                        rec.phase = Phase::Confirming { scans };
                    }
                }
                Phase::Confirming { .. } => rec.phase = Phase::Normal,
                Phase::Isolated { since } if t + 1e-9 >= since + self.cfg.pickup_delay => {
                    pickups.push(i);
                }
                Phase::Rebooting { since } if t + 1e-9 >= since + self.cfg.reboot_dead_time => {
                    rec.phase = Phase::Standby;
                    out.push(Command::RebootComplete { agent: i });
                }
                Phase::Standby if o.currently_nominal => {
                    rec.phase = Phase::Normal;
                    rec.status = AgentStatus::default();
                    out.push(Command::SetStatus {
                        agent: i,
                        status: Status::On,
                    });
                    out.push(Command::InverterConnect { agent: i });
                    if rec.supported > 0.0 {
                        out.push(Command::BessRelease { agent: i });
                    }
                    rec.supported = 0.0;
                    out.push(Command::ConsensusRestore { agent: i });
                }
                Phase::Stranded if o.currently_nominal => {
                    rec.phase = Phase::Normal;
                    rec.status = AgentStatus::default();
                    out.push(Command::BreakerClose { agent: i });
                    out.push(Command::SetStatus {
                        agent: i,
                        status: Status::On,
                    });
                    out.push(Command::ConsensusRestore { agent: i });
                }
                _ => {}
            }
        }
        if !pickups.is_empty() {
            self.pick_up(&mut pickups, bess, t, &mut out);
        }
        out
    }

    /// Greedy BESS allocation: criticality descending, then id ascending.
    fn pick_up(&mut self, pickups: &mut [usize], bess: &BessState, t: f64, out: &mut Vec<Command>) {
        pickups.sort_by(|&a, &b| {
            self.agents[b]
                .criticality
                .total_cmp(&self.agents[a].criticality)
                .then(a.cmp(&b))
        });
        let horizon = self.cfg.bess_horizon;
        let mut committed = bess.current_output.max(self.committed_support());
        for &i in pickups.iter() {
            let demand = self.agents[i].load;
            let feasible = check_bess_feasible(bess, committed + demand, horizon).feasible;
            let served = if feasible {
                Some(demand)
            } else {
                let capacity = (bess.max_sustainable(horizon) - committed).max(0.0);
                let deficit = demand - capacity;
                let plan = SheddingPlan::new(
                    vec![SheddableLoad {
                        id: i,
                        power: demand,
                        criticality: self.agents[i].criticality,
                        shed: 0.0,
                    }],
                    self.cfg.shed_fraction,
                    self.cfg.critical_weight,
                );
                match shed_load(&plan, deficit) {
                    Ok((plan, cmds)) => {
                        for c in cmds {
                            out.push(Command::ShedLoad {
                                agent: i,
                                load_id: c.load_id,
                                amount: c.amount,
                            });
                        }
                        Some(demand - plan.total_shed())
                    }
                    Err(e) => {
                        out.push(Command::UnservableDeficit {
                            agent: i,
                            deficit: e.remaining,
                        });
                        None
                    }
                }
            };
            let rec = &mut self.agents[i];
            match served {
                Some(d) => {
                    committed += d;
                    rec.load = d;
                    rec.supported = d;
                    rec.phase = Phase::Rebooting { since: t };
                    rec.status.inverter = Inverter::Rebooting;
                    rec.status.breaker = Breaker::Closed;
                    rec.status.bess_supported = true;
                    rec.status.status = Status::Restoring;
                    out.push(Command::InverterDisconnect { agent: i });
                    out.push(Command::BessDispatch { agent: i, demand: d });
                    out.push(Command::BreakerClose { agent: i });
                    out.push(Command::InverterReboot { agent: i });
                    out.push(Command::SetStatus {
                        agent: i,
                        status: Status::Restoring,
                    });
                }
                None => rec.phase = Phase::Stranded,
            }
        }
    }
}
