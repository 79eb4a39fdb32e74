//! Fixed-step simulation loop. Each step runs, in order: attack evaluation,
//! consensus inputs, converter update, detection, supervision, BESS update and
//! recording.

mod network;
mod noise;
mod record;
mod sweep;

pub use network::{flat_start, injection, solve_pcc, Demand, NetworkError, Source};
pub use noise::AgentNoise;
pub use record::{
    first_event, write_events, AgentSample, Event, EventKind, RecordRow, TimeSeriesRecord, CSV_HEADER_TAG,
};
pub use sweep::{
    grid, run_cells, run_sweep, steady_state_impact, sweep_cell_config, SweepCell, SweepError, SweepResult,
};

use std::f64::consts::TAU;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::attack::{apply_all, is_active, AttackTarget, Channel};
use crate::consensus::{consensus_error, ConsensusController, ConsensusError};
use crate::converter::{
    fundamental_amplitude, step_state_driven, ConverterState, SecondarySignal, StateSpaceModel,
    ThdWindow, BETA, I_D, I_OD, I_OQ, I_Q, OMEGA, OUTPUT_STATES, P_G, Q_G, STATE_DIM, V, V_OD,
};
use crate::detection::{Detector, FeatureSample};
use crate::mitigation::{
    bess_step, compromised_state_step, regulate_frequency, within_band, AgentObservation, AgentStatus, BessState,
    Breaker, Command, FrequencyMode, Inverter, MscSupervisor, Status,
};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no equilibrium for the initial operating point: {0}")]
    Equilibrium(String),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub t: f64,
    pub agent: Option<usize>,
    pub message: String,
}

/// Full simulation state between steps.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub converters: Vec<ConverterState>,
    pub status: Vec<AgentStatus>,
    pub bess: BessState,
    pub consensus: ConsensusController,
    /// Secondary frequency-restoration state per agent, pu.
    pub x: Vec<f64>,
    pub x0: f64,
    /// Constant voltage restoration term per agent, pu.
    pub delta_v: Vec<f64>,
    pub v_g: f64,
    pub delta_g: f64,
    /// Current bus demands after shedding, W / Var.
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub compromised: Vec<bool>,
    /// Agents whose compromise was cleared by a reboot.
    pub cleared: Vec<bool>,
    pub thd: Vec<f64>,
    /// Energy delivered by the BESS so far, J.
    pub bess_energy: f64,
    pub bess_soc_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Keep every detector input sample.
    pub collect_features: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: TimeSeriesRecord,
    pub events: Vec<Event>,
    pub final_state: SimState,
    pub divergence: Option<Divergence>,
    pub out_of_envelope: bool,
    pub unservable: bool,
    pub frequency_violation: bool,
    pub features: Option<Vec<Vec<FeatureSample>>>,
}

pub fn run(config: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    run_with(config, RunOptions::default())
}

pub fn run_with(config: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput, EngineError> {
    let mut sim = Simulation::new(config, opts)?;
    while !sim.finished() {
        sim.step();
    }
    Ok(sim.into_output())
}

#[derive(Debug, Clone, Copy)]
struct Observer {
    omega: f64,
    v: f64,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Network,
    Island,
    Frozen,
}

pub struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    omega_nom: f64,
    s_base: f64,
    n_steps: usize,
    models: Vec<StateSpaceModel>,
    baseline_states: Vec<ConverterState>,
    observers: Vec<Observer>,
    detectors: Vec<Detector>,
    supervisor: MscSupervisor,
    thd_windows: Vec<ThdWindow>,
    noise: Vec<AgentNoise>,
    state: SimState,
    last_open: Vec<Option<f64>>,
    pickup_t: f64,
    omega_bus: f64,
    settled_logged: bool,
    violation_logged: bool,
    limit_logged: bool,
    envelope_logged: Vec<bool>,
    record: TimeSeriesRecord,
    events: Vec<Event>,
    divergence: Option<Divergence>,
    unservable: bool,
    frequency_violation: bool,
    features: Option<Vec<Vec<FeatureSample>>>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ScenarioConfig, opts: RunOptions) -> Result<Self, EngineError> {
        let n = cfg.agent_count();
        let omega_nom = cfg.sim.omega_nom();
        let s_base = cfg.topology.s_base_va();

        let models: Vec<_> = cfg
            .agents
            .iter()
            .map(|a| {
                StateSpaceModel::droop_converter(
                    &a.droop,
                    &cfg.sim.filters,
                    s_base,
                    omega_nom,
                    cfg.sim.noise_sigma_pu,
                    cfg.sim.omega_bounds_pu,
                )
            })
            .collect();

        // Leader reference restoring the nominal frequency with droop sharing.
        let inv_k: f64 = cfg.agents.iter().map(|a| 1.0 / a.droop.k_p).sum();
        let offset: f64 = cfg.agents.iter().map(|a| (a.droop.omega0 - omega_nom) / a.droop.k_p).sum();
        let load_p: Vec<f64> = cfg.agents.iter().map(|a| a.load_p).collect();
        let load_q: Vec<f64> = cfg.agents.iter().map(|a| a.load_q).collect();
        let total_p: f64 = load_p.iter().sum();
        let x0 = (total_p - offset) / (omega_nom * inv_k);
        let p_share: Vec<f64> = cfg
            .agents
            .iter()
            .map(|a| (a.droop.omega0 + x0 * omega_nom - omega_nom) / a.droop.k_p)
            .collect();
        if cfg.sim.clip_pu < 1.0 {
            return Err(EngineError::Equilibrium("clip_pu must be at least 1 pu".into()));
        }
        let lines: Vec<(f64, f64)> = cfg.topology.line_impedances.iter().map(|l| (l.z_pu, l.theta)).collect();
        let q_cap = cap_pu(cfg);
        let q_total: f64 = load_q.iter().sum::<f64>() / s_base;
        let p_pu: Vec<f64> = p_share.iter().map(|p| p / s_base).collect();
        let (v_g, beta, q_pu) =
            flat_start(&p_pu, &lines, q_total, q_cap).map_err(|e| EngineError::Equilibrium(e.to_string()))?;

        let mut converters = Vec::with_capacity(n);
        let mut delta_v = Vec::with_capacity(n);
        for i in 0..n {
            let d = &cfg.agents[i].droop;
            let q_w = q_pu[i] * s_base;
            let mut x = [0.0; STATE_DIM];
            x[BETA] = beta[i];
            x[V_OD] = 1.0;
            x[I_OD] = p_pu[i];
            x[I_OQ] = -q_pu[i];
            x[I_D] = p_pu[i];
            x[I_Q] = -q_pu[i];
            x[P_G] = p_share[i];
            x[Q_G] = q_w;
            x[OMEGA] = omega_nom;
            x[V] = 1.0;
            converters.push(ConverterState::new(x));
            delta_v.push(1.0 - d.v0 + d.k_q * q_w);
        }

        let mut consensus = ConsensusController::new(
            &cfg.graph,
            vec![cfg.consensus_gain; n],
            cfg.leader_links.clone(),
            vec![x0],
        )?;
        consensus.set_leader_state(vec![x0]);

        let bess = BessState::new(
            cfg.bess.p_min,
            cfg.bess.p_max,
            cfg.bess.soc_init,
            cfg.bess.soc_min,
            cfg.bess.soc_max,
            cfg.topology.bess_capacity_mwh * 1e6,
        );

        let detectors = (0..n)
            .map(|i| {
                Detector::new(
                    i,
                    cfg.detection,
                    cfg.baselines.as_ref().map(|b| b[i].clone()),
                )
            })
            .collect();
        let criticality: Vec<f64> = cfg.agents.iter().map(|a| a.criticality).collect();
        let supervisor = MscSupervisor::new(cfg.mitigation, &criticality, &load_p);
        let max_period = TAU / (cfg.sim.omega_bounds_pu.0 * omega_nom);
        let thd_windows = (0..n)
            .map(|_| ThdWindow::new(cfg.sim.waveform_rate_hz, cfg.sim.clip_pu, max_period.min(0.1)))
            .collect();
        let noise = (0..n)
            .map(|i| AgentNoise::new(cfg.sim.seed, i, OUTPUT_STATES.len()))
            .collect();
        let observers = converters
            .iter()
            .map(|c| Observer {
                omega: c.omega(),
                v: c.voltage(),
            })
            .collect();

        let state = SimState {
            t: 0.0,
            step: 0,
            converters: converters.clone(),
            status: vec![AgentStatus::default(); n],
            bess,
            consensus,
            x: vec![x0; n],
            x0,
            delta_v,
            v_g,
            delta_g: 0.0,
            load_p,
            load_q,
            compromised: vec![false; n],
            cleared: vec![false; n],
            thd: vec![0.0; n],
            bess_energy: 0.0,
            bess_soc_start: cfg.bess.soc_init,
        };

        Ok(Self {
            cfg,
            omega_nom,
            s_base,
            n_steps: cfg.sim.steps(),
            models,
            baseline_states: converters,
            observers,
            detectors,
            supervisor,
            thd_windows,
            noise,
            state,
            last_open: vec![None; cfg.attacks.len()],
            pickup_t: 0.0,
            omega_bus: omega_nom,
            settled_logged: false,
            violation_logged: false,
            limit_logged: false,
            envelope_logged: vec![false; n],
            record: TimeSeriesRecord::new(n),
            events: Vec::new(),
            divergence: None,
            unservable: false,
            frequency_violation: false,
            features: opts.collect_features.then(|| vec![Vec::new(); n]),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn finished(&self) -> bool {
        self.divergence.is_some() || self.state.step >= self.n_steps
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            record: self.record,
            events: self.events,
            final_state: self.state,
            divergence: self.divergence,
            out_of_envelope: self.envelope_logged.iter().any(|&b| b),
            unservable: self.unservable,
            frequency_violation: self.frequency_violation,
            features: self.features,
        }
    }

    fn log(&mut self, t: f64, agent: Option<usize>, kind: EventKind, payload: serde_json::Value) {
        self.events.push(Event { t, agent, kind, payload });
    }

    fn deliver(&self, agent: usize, channel: Channel, y: f64, t: f64) -> f64 {
        if self.state.cleared[agent] {
            return y;
        }
        apply_all(&self.cfg.attacks, AttackTarget { agent, channel }, y, t)
    }

    fn mode(&self, i: usize) -> Mode {
        let st = &self.state.status[i];
        match (st.inverter, st.breaker) {
            (Inverter::Connected, Breaker::Closed) => Mode::Network,
            (Inverter::Connected, Breaker::Open) => Mode::Island,
            _ => Mode::Frozen,
        }
    }

    fn secondary(&self, i: usize, x_shared: f64) -> SecondarySignal {
        let d = &self.cfg.agents[i].droop;
        SecondarySignal::from_corrections(d, x_shared * self.omega_nom, self.state.delta_v[i])
    }

    /// Advances one step of length `dt`.
    pub fn step(&mut self) {
        if self.finished() {
            return;
        }
        let cfg = self.cfg;
        let n = cfg.agent_count();
        let dt = cfg.sim.dt;
        let k = self.state.step;
        let t = k as f64 * dt;
        let omega_nom = self.omega_nom;
        let s_base = self.s_base;
        let taus = cfg.sim.filters;

        // (1) Attack evaluation.
        for (s, spec) in cfg.attacks.iter().enumerate() {
            let open = spec.window_open(t);
            if open.is_some() && open != self.last_open[s] && !self.state.cleared[spec.target.agent] {
                self.state.compromised[spec.target.agent] = true;
                self.log(
                    t,
                    Some(spec.target.agent),
                    EventKind::AttackOnset,
                    json!({
                        "kind": spec.kind,
                        "channel": spec.target.channel.name(),
                        "magnitude": spec.magnitude,
                    }),
                );
            }
            self.last_open[s] = open;
        }
        let shared: Vec<f64> = (0..n)
            .map(|i| self.deliver(i, Channel::Consensus, self.state.x[i], t))
            .collect();

        // (2) Consensus inputs from delivered states.
        let states: Vec<Option<[f64; 1]>> = shared.iter().map(|&v| Some([v])).collect();
        let mut u = vec![0.0; n];
        for (i, ui) in u.iter_mut().enumerate() {
            match self.state.consensus.consensus_input(&states, i) {
                Ok(v) => *ui = v[0],
                Err(e) => {
                    self.diverge(t, Some(i), e.to_string());
                    return;
                }
            }
        }

        // (3) Converter update against the quasi-static network.
        let modes: Vec<Mode> = (0..n).map(|i| self.mode(i)).collect();
        let network: Vec<usize> = (0..n).filter(|&i| matches!(modes[i], Mode::Network)).collect();
        let mut flows = vec![(0.0, 0.0); n];
        if !network.is_empty() {
            let sources: Vec<Source> = network
                .iter()
                .map(|&i| {
                    let line = cfg.topology.line_impedances[i];
                    Source {
                        v: fundamental_amplitude(self.state.converters[i].voltage(), cfg.sim.clip_pu),
                        beta: self.state.converters[i].beta(),
                        z: line.z_pu,
                        theta: line.theta,
                    }
                })
                .collect();
            let demand = self.network_demand();
            match solve_pcc(&sources, &demand, (self.state.v_g, self.state.delta_g)) {
                Ok((v_g, delta)) => {
                    self.state.v_g = v_g;
                    self.state.delta_g = delta;
                }
                Err(e) => {
                    self.diverge(t, None, e.to_string());
                    return;
                }
            }
            for (src, &i) in sources.iter().zip(&network) {
                let (p, q) = injection(src, self.state.v_g, self.state.delta_g);
                flows[i] = (p * s_base, q * s_base);
            }
        }
        let mut measurements = vec![[0.0; 4]; n];
        for i in 0..n {
            let x = self.state.converters[i];
            let sec = self.secondary(i, shared[i]);
            if let Mode::Frozen = modes[i] {
                let y = self.models[i].measure(&x, &mut self.noise[i]);
                measurements[i].copy_from_slice(&y);
                continue;
            }
            if let Mode::Island = modes[i] {
                flows[i] = (self.state.load_p[i], self.state.load_q[i]);
            }
            let d = &cfg.agents[i].droop;
            let (p_net, q_net) = flows[i];
            let v_out = fundamental_amplitude(x.voltage(), cfg.sim.clip_pu).max(1e-6);
            let mut w = [0.0; STATE_DIM];
            w[BETA] = -omega_nom;
            w[P_G] = p_net / taus.tau_pq;
            w[Q_G] = q_net / taus.tau_pq;
            w[I_OD] = p_net / s_base / v_out / taus.tau_filter;
            w[I_OQ] = -q_net / s_base / v_out / taus.tau_filter;

            // Corrupted command and measurement channels enter as deltas.
            let v_cmd = sec.v_s - d.k_q * x.q_g();
            let omega_cmd_pu = (sec.omega_s - d.k_p * x.p_g()) / omega_nom;
            let v_att = self.deliver(i, Channel::VMod, v_cmd, t);
            let w_att = self.deliver(i, Channel::OmegaMod, omega_cmd_pu, t);
            let p_pu = x.p_g() / s_base;
            let q_pu = x.q_g() / s_base;
            let p_att = self.deliver(i, Channel::P, p_pu, t);
            let q_att = self.deliver(i, Channel::Q, q_pu, t);
            w[V] += (v_att - v_cmd) / taus.tau_droop - d.k_q * (q_att - q_pu) * s_base / taus.tau_droop;
            w[OMEGA] += (w_att - omega_cmd_pu) * omega_nom / taus.tau_droop
                - d.k_p * (p_att - p_pu) * s_base / taus.tau_droop;

            match step_state_driven(&self.models[i], &x, &sec, &w, dt, &mut self.noise[i]) {
                Ok((next, y)) => {
                    measurements[i].copy_from_slice(&y);
                    if next.out_of_envelope && !self.envelope_logged[i] {
                        self.envelope_logged[i] = true;
                        self.log(t, Some(i), EventKind::OutOfEnvelope, json!({ "omega": next.omega() }));
                    }
                    self.state.converters[i] = next;
                }
                Err(e) => {
                    self.diverge(t, Some(i), e.to_string());
                    return;
                }
            }
            let c = &self.state.converters[i];
            let phase = omega_nom * (t + dt) + c.beta();
            self.thd_windows[i].push(t + dt, c.voltage(), phase, c.omega());
            if (k + 1) % cfg.sim.thd_interval == 0 {
                self.state.thd[i] = self.thd_windows[i].evaluate();
            }
        }
        for i in 0..n {
            let step_u = dt * u[i];
            self.state.x[i] = if self.state.compromised[i] {
                compromised_state_step(self.state.x[i], step_u)
            } else {
                self.state.x[i] + step_u
            };
        }

        // (4) Detection on measurements of the pre-step state.
        for i in 0..n {
            let frozen = matches!(modes[i], Mode::Frozen);
            if frozen && !self.supervisor.reboot_done(i) {
                continue;
            }
            let d = &cfg.agents[i].droop;
            let y = measurements[i];
            let sec = self.secondary(i, shared[i]);
            let obs = self.observers[i];
            let sample = FeatureSample {
                t,
                residuals: [
                    (y[2] - obs.omega) / omega_nom,
                    y[3] - obs.v,
                    shared[i] - self.state.x0,
                ],
                thd: self.state.thd[i],
                v: fundamental_amplitude(y[3], cfg.sim.clip_pu),
                df_hz: (y[2] - omega_nom) / TAU,
            };
            if !frozen {
                let a = dt / taus.tau_droop;
                self.observers[i] = Observer {
                    omega: obs.omega + a * (sec.omega_s - d.k_p * y[0] - obs.omega),
                    v: obs.v + a * (sec.v_s - d.k_q * y[1] - obs.v),
                };
            }
            if let Some(f) = self.features.as_mut() {
                f[i].push(sample);
            }
            if let Some(v) = self.detectors[i].observe(sample) {
                let features: Vec<&str> = v.triggered_features.iter().map(|f| f.name()).collect();
                self.log(
                    t,
                    Some(i),
                    EventKind::DetectionFlag,
                    json!({ "features": features, "trigger_time": v.trigger_time }),
                );
            }
        }

        // (5) Supervision.
        let obs: Vec<AgentObservation> = self
            .detectors
            .iter()
            .map(|d| AgentObservation {
                flagged: d.is_flagged(),
                currently_nominal: d.currently_nominal(),
            })
            .collect();
        let commands = self.supervisor.supervise_step(&obs, &self.state.bess, t);
        for c in commands {
            self.apply(c, t);
        }

        // (6) BESS.
        let demand = self.supervisor.committed_support();
        self.state.bess = bess_step(&self.state.bess, demand, dt);
        self.state.bess_energy += self.state.bess.current_output * dt;
        if self.state.bess.limit_reached && !self.limit_logged {
            self.limit_logged = true;
            self.log(t, None, EventKind::BessLimit, json!({ "soc": self.state.bess.soc }));
        }
        if let FrequencyMode::Regulating {
            omega_ref,
            t_lim,
            omega_start,
        } = self.state.bess.frequency_mode
        {
            let since = t - self.pickup_t;
            let band = cfg.detection.settle_band_pct;
            let (cmd, ok) = regulate_frequency(&self.state.bess, self.omega_bus, omega_ref, since, t_lim, band);
            if !self.settled_logged && within_band(self.omega_bus, omega_ref, omega_start, band) {
                self.settled_logged = true;
                self.log(t, None, EventKind::BessFrequencySettled, json!({ "since_pickup": since }));
            }
            if !ok && !self.violation_logged {
                self.violation_logged = true;
                self.frequency_violation = true;
                self.log(
                    t,
                    None,
                    EventKind::FrequencyViolation,
                    json!({ "omega": self.omega_bus, "since_pickup": since }),
                );
            }
            // A curtailed battery cannot pull the bus toward the command.
            if self.state.bess.current_output + 1e-9 >= demand {
                self.omega_bus = cmd;
            }
        }

        // (7) Record.
        self.state.step = k + 1;
        self.state.t = (k + 1) as f64 * dt;
        if (k + 1) % cfg.sim.decimation == 0 || k + 1 == self.n_steps {
            self.push_row();
        }
    }

    fn network_demand(&self) -> Demand {
        let cfg = self.cfg;
        let mut p = 0.0;
        let mut q = 0.0;
        for i in 0..cfg.agent_count() {
            if self.state.status[i].breaker == Breaker::Closed {
                p += self.state.load_p[i];
                q += self.state.load_q[i];
            }
        }
        Demand {
            p: (p - self.state.bess.current_output) / self.s_base,
            q: q / self.s_base,
            q_cap: cap_pu(cfg),
        }
    }

    fn diverge(&mut self, t: f64, agent: Option<usize>, message: String) {
        log::warn!("run aborted at t={t}: {message}");
        self.log(t, agent, EventKind::Divergence, json!({ "message": message }));
        self.divergence = Some(Divergence { t, agent, message });
    }

    fn apply(&mut self, c: Command, t: f64) {
        let i = c.agent();
        let status = self.supervisor.status(i);
        match c {
            Command::BreakerOpen { .. } => {
                self.state.status[i].breaker = Breaker::Open;
                self.log(t, Some(i), EventKind::BreakerOpen, json!({}));
            }
            Command::SetStatus { status: s, .. } => {
                self.state.status[i].status = s;
                if s == Status::On {
                    self.log(t, Some(i), EventKind::StatusOn, json!({}));
                }
            }
            Command::ConsensusRemove { .. } => {
                let _ = self.state.consensus.remove_agent(i);
                self.log(t, Some(i), EventKind::ConsensusRemove, json!({}));
            }
            Command::InverterDisconnect { .. } => {
                self.state.status[i].inverter = Inverter::Disconnected;
                self.thd_windows[i].clear();
                self.state.thd[i] = 0.0;
                self.log(t, Some(i), EventKind::InverterDisconnect, json!({}));
            }
            Command::BessDispatch { demand, .. } => {
                self.state.status[i].bess_supported = true;
                self.state.bess.current_output = self.supervisor.committed_support();
                self.pickup_t = t;
                let omega_start = self.state.converters[i].omega();
                self.omega_bus = omega_start;
                self.settled_logged = false;
                self.state.bess.frequency_mode = FrequencyMode::Regulating {
                    omega_ref: self.omega_nom,
                    t_lim: self.cfg.bess.t_lim,
                    omega_start,
                };
                self.log(t, Some(i), EventKind::BessDispatch, json!({ "demand_w": demand }));
            }
            Command::BreakerClose { .. } => {
                self.state.status[i].breaker = Breaker::Closed;
                self.log(t, Some(i), EventKind::BreakerClose, json!({}));
            }
            Command::InverterReboot { .. } => {
                self.state.status[i].inverter = Inverter::Rebooting;
                self.log(t, Some(i), EventKind::InverterReboot, json!({}));
            }
            Command::RebootComplete { .. } => {
                let mut fresh = self.baseline_states[i];
                fresh.x[BETA] += self.state.delta_g;
                self.state.converters[i] = fresh;
                self.observers[i] = Observer {
                    omega: fresh.omega(),
                    v: fresh.voltage(),
                };
                self.state.x[i] = self.state.x0;
                self.state.compromised[i] = false;
                self.state.cleared[i] = true;
                self.detectors[i].reset();
                self.thd_windows[i].clear();
                self.state.thd[i] = 0.0;
                self.log(t, Some(i), EventKind::RebootComplete, json!({}));
            }
            Command::InverterConnect { .. } => {
                // Re-synchronise the load angle to the present PCC angle.
                self.state.converters[i].x[BETA] = self.baseline_states[i].beta() + self.state.delta_g;
                self.state.status[i].inverter = Inverter::Connected;
                self.log(t, Some(i), EventKind::InverterConnect, json!({}));
            }
            Command::BessRelease { .. } => {
                self.state.status[i] = status;
                self.state.bess.current_output = self.supervisor.committed_support();
                if self.state.bess.current_output <= 0.0 {
                    self.state.bess.frequency_mode = FrequencyMode::Idle;
                }
                self.state.converters[i].x[V] += self.cfg.mitigation.handover_perturbation;
                self.detectors[i].hold_off(t + self.cfg.detection.holdoff);
                self.log(t, Some(i), EventKind::Handover, json!({}));
            }
            Command::ConsensusRestore { .. } => {
                let _ = self.state.consensus.restore_agent(i);
                self.state.status[i] = status;
                self.log(t, Some(i), EventKind::ConsensusRestore, json!({}));
            }
            Command::ShedLoad { amount, load_id, .. } => {
                self.state.load_p[i] = (self.state.load_p[i] - amount).max(0.0);
                self.log(t, Some(i), EventKind::LoadShed, json!({ "load": load_id, "amount_w": amount }));
            }
            Command::UnservableDeficit { deficit, .. } => {
                self.unservable = true;
                self.log(t, Some(i), EventKind::UnservableDeficit, json!({ "deficit_w": deficit }));
            }
        }
    }

    fn push_row(&mut self) {
        let cfg = self.cfg;
        let n = cfg.agent_count();
        let agents = (0..n)
            .map(|i| {
                let c = &self.state.converters[i];
                let on = self.state.status[i].inverter == Inverter::Connected;
                AgentSample {
                    v: if on { fundamental_amplitude(c.voltage(), cfg.sim.clip_pu) } else { 0.0 },
                    f: if on { c.omega() / TAU } else { 0.0 },
                    p: if on { c.p_g() / 1e6 } else { 0.0 },
                    q: if on { c.q_g() / 1e6 } else { 0.0 },
                    thd: self.state.thd[i],
                    status: self.state.status[i].status,
                    flag: self.detectors[i].is_flagged(),
                }
            })
            .collect();
        let states: Vec<[f64; 1]> = self.state.x.iter().map(|&v| [v]).collect();
        let consensus_err =
            consensus_error(&states, &[self.state.x0], self.state.consensus.members()).unwrap_or(f64::NAN);
        self.record.rows.push(RecordRow {
            t: self.state.t,
            agents,
            bess_soc: self.state.bess.soc,
            bess_p: self.state.bess.current_output / 1e6,
            consensus_err,
        });
    }
}

fn cap_pu(cfg: &ScenarioConfig) -> f64 {
    if cfg.topology.capacitor_bank_connected {
        cfg.topology.capacitor_bank_mvar * 1e6 / cfg.topology.s_base_va()
    } else {
        0.0
    }
}

/// Whether any attack on `agent` is active at `t`.
pub fn under_attack(cfg: &ScenarioConfig, agent: usize, t: f64) -> bool {
    cfg.attacks
        .iter()
        .any(|s| s.target.agent == agent && is_active(s, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{bundled, parse_scenario};

    fn scenario(name: &str, overrides: &[&str]) -> ScenarioConfig {
        let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        parse_scenario(bundled(name).unwrap(), name, None, &ov).unwrap()
    }

    #[test]
    fn equilibrium_is_stationary_without_noise() {
        let cfg = scenario("canadian_urban", &["sim.noise_sigma_pu=0.0", "sim.duration=0.05"]).attack_free();
        let out = run(&cfg).unwrap();
        let x0 = out.final_state.x0;
        assert!((x0 - 0.01).abs() < 1e-12);
        for c in &out.final_state.converters {
            assert!((c.omega() - TAU * 60.0).abs() < 1e-9);
            assert!((c.voltage() - 1.0).abs() < 1e-9);
            assert!((c.p_g() - 2e6).abs() < 1e-3);
        }
    }

    #[test]
    fn single_step_run_records_one_row() {
        let cfg = scenario("canadian_urban", &["sim.duration=1e-4"]);
        let out = run(&cfg).unwrap();
        assert_eq!(out.record.rows.len(), 1);
        assert!((out.record.rows[0].t - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn sub_millisecond_override_runs_ten_steps() {
        let cfg = scenario("canadian_urban", &["sim.duration=0.001"]);
        let sim = Simulation::new(&cfg, RunOptions::default()).unwrap();
        assert_eq!(sim.n_steps, 10);
    }
}
