//! Scenario files: a TOML document with `[topology]`, `[graph]`, `[agents]`,
//! `[[attacks]]`, `[detection]`, `[bess]`, `[mitigation]`, `[sim]` and
//! `[sweep]` sections. Units are SI except where a key name says otherwise
//! (`_kv`, `_mw`, `_mvar`, `_mwh`, `_pct`, `_deg`, `_hz`, `_pu`).

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::attack::{AttackKind, AttackSpec, AttackTarget, Channel, Schedule};
use crate::converter::{DroopParams, FilterConstants};
use crate::detection::{AgentBaseline, DetectionConfig};
use crate::mitigation::SupervisorConfig;
use crate::topology::{build_graph, BenchmarkTopology, CyberGraph, LineImpedance};

pub const DEFAULT_SEED: u64 = 0;

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("canadian_urban", include_str!("../scenarios/canadian_urban.scn")),
    (
        "canadian_urban_additive",
        include_str!("../scenarios/canadian_urban_additive.scn"),
    ),
    (
        "canadian_urban_ramping",
        include_str!("../scenarios/canadian_urban_ramping.scn"),
    ),
    ("two_dg", include_str!("../scenarios/two_dg.scn")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".scn").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Semantic { path: String, message: String },
    #[error("bad override `{0}`: expected KEY=VALUE")]
    Override(String),
}

fn semantic(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub droop: DroopParams,
    pub criticality: f64,
    /// Bus demand, W.
    pub load_p: f64,
    /// Bus demand, Var.
    pub load_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BessConfig {
    /// W
    pub p_min: f64,
    /// W
    pub p_max: f64,
    pub soc_init: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Settling limit for frequency regulation, s.
    pub t_lim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub decimation: usize,
    pub noise_sigma_pu: f64,
    pub clip_pu: f64,
    pub waveform_rate_hz: f64,
    /// Steps between THD evaluations.
    pub thd_interval: usize,
    pub omega_bounds_pu: (f64, f64),
    pub filters: FilterConstants,
    pub f_nom_hz: f64,
}

impl SimConfig {
    pub fn omega_nom(&self) -> f64 {
        TAU * self.f_nom_hz
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub agent: usize,
    pub channels: Vec<Channel>,
    pub attack_start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub topology: BenchmarkTopology,
    pub graph: CyberGraph,
    pub leader_id: usize,
    pub leader_links: Vec<bool>,
    pub consensus_gain: f64,
    pub agents: Vec<AgentConfig>,
    pub attacks: Vec<AttackSpec>,
    pub detection: DetectionConfig,
    pub baselines: Option<Vec<AgentBaseline>>,
    pub bess: BessConfig,
    pub mitigation: SupervisorConfig,
    pub sim: SimConfig,
    pub sweep: SweepConfig,
}

impl ScenarioConfig {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Same scenario with every attack removed.
    pub fn attack_free(&self) -> Self {
        Self {
            attacks: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn expand(&self, n: usize, path: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            OneOrMany::One(v) => Ok(vec![*v; n]),
            OneOrMany::Many(v) if v.len() == n => Ok(v.clone()),
            OneOrMany::Many(v) => Err(semantic(path, format!("expected {n} values, got {}", v.len()))),
        }
    }
}

fn one(v: f64) -> OneOrMany {
    OneOrMany::One(v)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    #[serde(default)]
    topology: RawTopology,
    #[serde(default)]
    graph: RawGraph,
    #[serde(default)]
    agents: RawAgents,
    #[serde(default)]
    attacks: Vec<RawAttack>,
    #[serde(default)]
    detection: RawDetection,
    #[serde(default)]
    bess: RawBess,
    #[serde(default)]
    mitigation: RawMitigation,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTopology {
    dg_count: usize,
    substation_primary_kv: f64,
    feeder_kv: f64,
    dg_lv_kv: f64,
    capacitor_bank_mvar: f64,
    capacitor_bank_connected: bool,
    per_bus_load_mw: f64,
    per_bus_load_mvar: f64,
    bess_capacity_mwh: f64,
    s_base_mva: f64,
    line_z_pu: OneOrMany,
    line_theta_deg: OneOrMany,
    pcc_bus: usize,
}

impl Default for RawTopology {
    fn default() -> Self {
        let t = BenchmarkTopology::canadian_urban(4);
        Self {
            dg_count: 4,
            substation_primary_kv: t.substation_primary_kv,
            feeder_kv: t.feeder_kv,
            dg_lv_kv: t.dg_lv_kv,
            capacitor_bank_mvar: t.capacitor_bank_mvar,
            capacitor_bank_connected: t.capacitor_bank_connected,
            per_bus_load_mw: t.per_bus_load_mw,
            per_bus_load_mvar: t.per_bus_load_mvar,
            bess_capacity_mwh: t.bess_capacity_mwh,
            s_base_mva: t.s_base_mva,
            line_z_pu: one(0.1),
            line_theta_deg: one(90.0),
            pcc_bus: t.pcc_bus_id,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawGraph {
    /// Defaults to a path through the agents.
    edges: Option<Vec<(usize, usize)>>,
    leader_id: Option<usize>,
    /// Agents with a direct MSC link; defaults to all.
    leader_links: Option<Vec<usize>>,
    gain: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAgents {
    /// No-load frequency, Hz; defaults to the nominal frequency.
    f0_hz: Option<OneOrMany>,
    v0_pu: OneOrMany,
    /// Frequency drop at rated power, percent of nominal.
    droop_p_pct: OneOrMany,
    /// Voltage drop at rated reactive power, percent of nominal.
    droop_q_pct: OneOrMany,
    criticality: OneOrMany,
    load_mw: Option<OneOrMany>,
    load_mvar: Option<OneOrMany>,
}

impl Default for RawAgents {
    fn default() -> Self {
        Self {
            f0_hz: None,
            v0_pu: one(1.0),
            droop_p_pct: one(1.0),
            droop_q_pct: one(5.0),
            criticality: one(0.5),
            load_mw: None,
            load_mvar: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    kind: AttackKind,
    magnitude: f64,
    agent: usize,
    channel: String,
    start: f64,
    end: Option<f64>,
    period: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDetection {
    margin_factor: f64,
    floor: f64,
    persistence: usize,
    thd_ceiling: f64,
    settle_band_pct: f64,
    v_min_pu: f64,
    v_max_pu: f64,
    f_dev_hz: f64,
    warmup: f64,
    min_calibration: f64,
    holdoff: f64,
    baseline: Option<String>,
}

impl Default for RawDetection {
    fn default() -> Self {
        let d = DetectionConfig::default();
        Self {
            margin_factor: d.margin_factor,
            floor: d.floor,
            persistence: d.persistence,
            thd_ceiling: d.thd_ceiling,
            // Percent in the file.
            settle_band_pct: d.settle_band_pct * 100.0,
            v_min_pu: d.v_min,
            v_max_pu: d.v_max,
            f_dev_hz: d.f_dev_hz,
            warmup: d.warmup,
            min_calibration: d.min_calibration,
            holdoff: d.holdoff,
            baseline: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBess {
    p_min_mw: f64,
    p_max_mw: f64,
    soc_init: f64,
    soc_min: f64,
    soc_max: f64,
    horizon: f64,
    t_lim: f64,
}

impl Default for RawBess {
    fn default() -> Self {
        Self {
            p_min_mw: 0.0,
            p_max_mw: 2.5,
            soc_init: 0.9,
            soc_min: 0.2,
            soc_max: 0.95,
            horizon: 10.0,
            t_lim: 0.1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMitigation {
    enabled: bool,
    scan_interval: f64,
    confirm_scans: u32,
    pickup_delay: f64,
    reboot_dead_time: f64,
    handover_perturbation_pu: f64,
    shed_fraction: f64,
    critical_weight: f64,
}

impl Default for RawMitigation {
    fn default() -> Self {
        let s = SupervisorConfig::default();
        Self {
            enabled: s.enabled,
            scan_interval: s.scan_interval,
            confirm_scans: s.confirm_scans,
            pickup_delay: s.pickup_delay,
            reboot_dead_time: s.reboot_dead_time,
            handover_perturbation_pu: s.handover_perturbation,
            shed_fraction: s.shed_fraction,
            critical_weight: s.critical_weight,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSim {
    duration: f64,
    timestep: f64,
    seed: u64,
    decimation: usize,
    noise_sigma_pu: f64,
    clip_pu: f64,
    waveform_rate_hz: f64,
    thd_interval: usize,
    omega_min_pu: f64,
    omega_max_pu: f64,
    tau_filter: f64,
    tau_pq: f64,
    tau_droop: f64,
    f_nom_hz: f64,
}

impl Default for RawSim {
    fn default() -> Self {
        let f = FilterConstants::default();
        Self {
            duration: 0.5,
            timestep: 1e-4,
            seed: DEFAULT_SEED,
            decimation: 10,
            noise_sigma_pu: 1e-3,
            clip_pu: 1.2,
            waveform_rate_hz: crate::converter::DEFAULT_WAVEFORM_RATE_HZ,
            thd_interval: 10,
            omega_min_pu: 0.5,
            omega_max_pu: 1.5,
            tau_filter: f.tau_filter,
            tau_pq: f.tau_pq,
            tau_droop: f.tau_droop,
            f_nom_hz: 60.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    agent: usize,
    channels: Vec<String>,
    attack_start: f64,
    duration: f64,
}

impl Default for RawSweep {
    fn default() -> Self {
        Self {
            agent: 0,
            channels: vec!["v_mod".into(), "omega_mod".into()],
            attack_start: 0.1,
            duration: 0.5,
        }
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    load_scenario_with(path, &[])
}

/// As [`load_scenario`], applying `KEY=VALUE` overrides (dotted keys, e.g.
/// `sim.duration=0.2` or `attacks[0].magnitude=3`) before validation.
pub fn load_scenario_with(path: impl AsRef<Path>, overrides: &[String]) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_scenario(&text, &stem, path.parent(), overrides)
}

/// Parses scenario text. `base_dir` resolves a relative baseline path.
pub fn parse_scenario(
    text: &str,
    default_name: &str,
    base_dir: Option<&Path>,
    overrides: &[String],
) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?
    } else {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let merged = toml::to_string(&table).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        toml::from_str(&merged).map_err(|e| ScenarioError::Parse(e.to_string()))?
    };
    build(raw, default_name, base_dir)
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.into())),
        Err(_) => toml::Value::String(text.into()),
    }
}

enum Segment<'a> {
    Key(&'a str),
    Index(&'a str, usize),
}

fn segments(key: &str) -> Option<Vec<Segment<'_>>> {
    key.split('.')
        .map(|s| match s.find('[') {
            Some(open) if s.ends_with(']') => {
                let idx = s[open + 1..s.len() - 1].parse().ok()?;
                Some(Segment::Index(&s[..open], idx))
            }
            Some(_) => None,
            None if !s.is_empty() => Some(Segment::Key(s)),
            None => None,
        })
        .collect()
}

pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ScenarioError> {
    let bad = || ScenarioError::Override(spec.to_string());
    let (key, value) = spec.split_once('=').ok_or_else(bad)?;
    let segs = segments(key.trim()).ok_or_else(bad)?;
    let value = parse_value(value.trim());
    let mut cur = table;
    for (k, seg) in segs.iter().enumerate() {
        let last = k + 1 == segs.len();
        match *seg {
            Segment::Key(name) => {
                if last {
                    cur.insert(name.to_string(), value);
                    return Ok(());
                }
                let entry = cur
                    .entry(name.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cur = entry.as_table_mut().ok_or_else(bad)?;
            }
            Segment::Index(name, idx) => {
                let arr = cur
                    .get_mut(name)
                    .and_then(|v| v.as_array_mut())
                    .ok_or_else(bad)?;
                let slot = arr.get_mut(idx).ok_or_else(bad)?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                cur = slot.as_table_mut().ok_or_else(bad)?;
            }
        }
    }
    Err(bad())
}

fn positive(path: &str, v: f64) -> Result<f64, ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(semantic(path, format!("must be strictly positive, got {v}")))
    }
}

fn build(raw: RawScenario, default_name: &str, base_dir: Option<&Path>) -> Result<ScenarioConfig, ScenarioError> {
    let rt = &raw.topology;
    let n = rt.dg_count;
    if n == 0 {
        return Err(semantic("topology.dg_count", "at least one DG agent is required"));
    }
    let z = rt.line_z_pu.expand(n, "topology.line_z_pu")?;
    let theta = rt.line_theta_deg.expand(n, "topology.line_theta_deg")?;
    let topology = BenchmarkTopology {
        substation_primary_kv: rt.substation_primary_kv,
        feeder_kv: rt.feeder_kv,
        dg_lv_kv: rt.dg_lv_kv,
        capacitor_bank_mvar: rt.capacitor_bank_mvar,
        capacitor_bank_connected: rt.capacitor_bank_connected,
        per_bus_load_mw: rt.per_bus_load_mw,
        per_bus_load_mvar: rt.per_bus_load_mvar,
        bess_capacity_mwh: rt.bess_capacity_mwh,
        s_base_mva: rt.s_base_mva,
        line_impedances: z
            .iter()
            .zip(&theta)
            .map(|(&z_pu, &deg)| LineImpedance {
                z_pu,
                theta: deg.to_radians(),
            })
            .collect(),
        pcc_bus_id: rt.pcc_bus,
        dg_buses: (0..n).map(|i| i + 2).collect(),
    };
    topology
        .validate()
        .map_err(|(field, msg)| semantic(format!("topology.{field}"), msg))?;

    let rs = &raw.sim;
    let dt = positive("sim.timestep", rs.timestep)?;
    let duration = positive("sim.duration", rs.duration)?;
    if duration + 1e-12 < dt {
        return Err(semantic("sim.duration", "duration must be at least one timestep"));
    }
    if rs.decimation == 0 {
        return Err(semantic("sim.decimation", "must be at least 1"));
    }
    if !(rs.noise_sigma_pu >= 0.0) {
        return Err(semantic("sim.noise_sigma_pu", "must be non-negative"));
    }
    if !(rs.omega_min_pu < rs.omega_max_pu) {
        return Err(semantic("sim.omega_min_pu", "must be below omega_max_pu"));
    }
    let sim = SimConfig {
        duration,
        dt,
        seed: rs.seed,
        decimation: rs.decimation,
        noise_sigma_pu: rs.noise_sigma_pu,
        clip_pu: positive("sim.clip_pu", rs.clip_pu)?,
        waveform_rate_hz: positive("sim.waveform_rate_hz", rs.waveform_rate_hz)?,
        thd_interval: rs.thd_interval.max(1),
        omega_bounds_pu: (rs.omega_min_pu, rs.omega_max_pu),
        filters: FilterConstants {
            tau_filter: positive("sim.tau_filter", rs.tau_filter)?,
            tau_pq: positive("sim.tau_pq", rs.tau_pq)?,
            tau_droop: positive("sim.tau_droop", rs.tau_droop)?,
        },
        f_nom_hz: positive("sim.f_nom_hz", rs.f_nom_hz)?,
    };
    let omega_nom = sim.omega_nom();
    let s_base = topology.s_base_va();

    let edges = raw
        .graph
        .edges
        .clone()
        .unwrap_or_else(|| (1..n).map(|i| (i - 1, i)).collect());
    let graph = build_graph(&edges, n).map_err(|e| semantic("graph.edges", e.to_string()))?;
    let leader_id = raw.graph.leader_id.unwrap_or(n);
    if leader_id < n {
        return Err(semantic(
            "graph.leader_id",
            format!("leader id {leader_id} collides with a DG agent id"),
        ));
    }
    let mut leader_links = vec![raw.graph.leader_links.is_none(); n];
    for (k, &a) in raw.graph.leader_links.iter().flatten().enumerate() {
        if a >= n {
            return Err(semantic(format!("graph.leader_links[{k}]"), format!("agent {a} does not exist")));
        }
        leader_links[a] = true;
    }
    let consensus_gain = positive("graph.gain", raw.graph.gain.unwrap_or(5.0))?;

    let ra = &raw.agents;
    let f0 = match &ra.f0_hz {
        Some(v) => v.expand(n, "agents.f0_hz")?,
        None => vec![sim.f_nom_hz; n],
    };
    let v0 = ra.v0_pu.expand(n, "agents.v0_pu")?;
    let dp = ra.droop_p_pct.expand(n, "agents.droop_p_pct")?;
    let dq = ra.droop_q_pct.expand(n, "agents.droop_q_pct")?;
    let crit = ra.criticality.expand(n, "agents.criticality")?;
    let load_p = match &ra.load_mw {
        Some(v) => v.expand(n, "agents.load_mw")?,
        None => vec![topology.per_bus_load_mw; n],
    };
    let load_q = match &ra.load_mvar {
        Some(v) => v.expand(n, "agents.load_mvar")?,
        None => vec![topology.per_bus_load_mvar; n],
    };
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let droop = DroopParams {
            omega0: TAU * f0[i],
            v0: v0[i],
            k_p: dp[i] / 100.0 * omega_nom / s_base,
            k_q: dq[i] / 100.0 / s_base,
        };
        droop
            .validate()
            .map_err(|e| semantic(format!("agents[{i}]"), e.to_string()))?;
        if !(load_p[i] >= 0.0) {
            return Err(semantic(format!("agents.load_mw[{i}]"), "must be non-negative"));
        }
        agents.push(AgentConfig {
            droop,
            criticality: crit[i],
            load_p: load_p[i] * 1e6,
            load_q: load_q[i] * 1e6,
        });
    }

    let mut attacks = Vec::with_capacity(raw.attacks.len());
    for (k, a) in raw.attacks.iter().enumerate() {
        let path = |f: &str| format!("attacks[{k}].{f}");
        if a.agent >= n {
            return Err(semantic(path("agent"), format!("agent {} does not exist", a.agent)));
        }
        let channel = Channel::parse(&a.channel)
            .ok_or_else(|| semantic(path("channel"), format!("unknown channel `{}`", a.channel)))?;
        let spec = AttackSpec {
            kind: a.kind,
            magnitude: a.magnitude,
            target: AttackTarget { agent: a.agent, channel },
            start: a.start,
            end: a.end.unwrap_or(duration.max(a.start) + 1.0),
            schedule: match a.period {
                Some(period) => Schedule::Periodic { period },
                None => Schedule::OneShot,
            },
        };
        spec.validate().map_err(|e| semantic(path("window"), e.to_string()))?;
        attacks.push(spec);
    }

    let rd = &raw.detection;
    if rd.persistence == 0 {
        return Err(semantic("detection.persistence", "must be at least 1"));
    }
    let detection = DetectionConfig {
        margin_factor: positive("detection.margin_factor", rd.margin_factor)?,
        floor: positive("detection.floor", rd.floor)?,
        persistence: rd.persistence,
        thd_ceiling: positive("detection.thd_ceiling", rd.thd_ceiling)?,
        settle_band_pct: positive("detection.settle_band_pct", rd.settle_band_pct)? / 100.0,
        v_min: rd.v_min_pu,
        v_max: rd.v_max_pu,
        f_dev_hz: positive("detection.f_dev_hz", rd.f_dev_hz)?,
        warmup: positive("detection.warmup", rd.warmup)?,
        min_calibration: positive("detection.min_calibration", rd.min_calibration)?,
        holdoff: rd.holdoff.max(0.0),
    };
    if !(detection.v_min < detection.v_max) {
        return Err(semantic("detection.v_min_pu", "must be below v_max_pu"));
    }
    let baselines = match &rd.baseline {
        None => None,
        Some(p) => {
            let p = base_dir.map(|d| d.join(p)).unwrap_or_else(|| PathBuf::from(p));
            let text = fs::read_to_string(&p).map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
            let b: Vec<AgentBaseline> = serde_json::from_str(&text)
                .map_err(|e| semantic("detection.baseline", format!("{}: {e}", p.display())))?;
            if b.len() != n {
                return Err(semantic(
                    "detection.baseline",
                    format!("baseline covers {} agents, scenario has {n}", b.len()),
                ));
            }
            Some(b)
        }
    };

    let rb = &raw.bess;
    let bess = BessConfig {
        p_min: rb.p_min_mw * 1e6,
        p_max: positive("bess.p_max_mw", rb.p_max_mw)? * 1e6,
        soc_init: rb.soc_init,
        soc_min: rb.soc_min,
        soc_max: rb.soc_max,
        t_lim: positive("bess.t_lim", rb.t_lim)?,
    };
    crate::mitigation::BessState::new(
        bess.p_min,
        bess.p_max,
        bess.soc_init,
        bess.soc_min,
        bess.soc_max,
        topology.bess_capacity_mwh * 1e6,
    )
    .validate()
    .map_err(|m| semantic("bess", m))?;

    let rm = &raw.mitigation;
    if !(rm.shed_fraction > 0.0 && rm.shed_fraction <= 1.0) {
        return Err(semantic("mitigation.shed_fraction", "must lie in (0, 1]"));
    }
    let mitigation = SupervisorConfig {
        enabled: rm.enabled,
        scan_interval: positive("mitigation.scan_interval", rm.scan_interval)?,
        confirm_scans: rm.confirm_scans.max(1),
        pickup_delay: rm.pickup_delay.max(0.0),
        reboot_dead_time: rm.reboot_dead_time.max(0.0),
        handover_perturbation: rm.handover_perturbation_pu,
        shed_fraction: rm.shed_fraction,
        critical_weight: rm.critical_weight,
        bess_horizon: rb.horizon.max(0.0),
    };

    let rsw = &raw.sweep;
    if rsw.agent >= n {
        return Err(semantic("sweep.agent", format!("agent {} does not exist", rsw.agent)));
    }
    let mut channels = Vec::new();
    for (k, c) in rsw.channels.iter().enumerate() {
        channels.push(
            Channel::parse(c).ok_or_else(|| semantic(format!("sweep.channels[{k}]"), format!("unknown channel `{c}`")))?,
        );
    }
    let sweep = SweepConfig {
        agent: rsw.agent,
        channels,
        attack_start: rsw.attack_start,
        duration: positive("sweep.duration", rsw.duration)?,
    };

    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_else(|| default_name.to_string()),
        topology,
        graph,
        leader_id,
        leader_links,
        consensus_gain,
        agents,
        attacks,
        detection,
        baselines,
        bess,
        mitigation,
        sim,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        parse_scenario(text, "test", None, &[])
    }

    #[test]
    fn bundled_benchmark() {
        let c = parse_scenario(bundled("canadian_urban").unwrap(), "x", None, &[]).unwrap();
        assert_eq!(c.name, "canadian_urban");
        assert_eq!(c.agent_count(), 4);
        assert!(c.graph.is_connected());
        assert!(c.leader_links.iter().all(|&b| b));
        assert!(c.agents.iter().all(|a| a.load_p == 2e6));
        assert_eq!(c.topology.bess_capacity_mwh, 1.0);
        assert!(c.leader_id >= c.agent_count());
        for (name, text) in BUNDLED {
            assert!(parse_scenario(text, name, None, &[]).is_ok(), "{name}");
        }
    }

    #[test]
    fn zero_timestep_is_rejected() {
        let err = parse("[sim]\ntimestep = 0.0\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Semantic { ref path, .. } if path == "sim.timestep"));
    }

    #[test]
    fn seed_defaults_to_zero() {
        assert_eq!(parse("").unwrap().sim.seed, DEFAULT_SEED);
    }

    #[test]
    fn unknown_agent_carries_field_path() {
        let text = "[[attacks]]\nkind = \"additive\"\nmagnitude = 0.1\nagent = 9\nchannel = \"v_mod\"\nstart = 0.1\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.to_string(), "attacks[0].agent: agent 9 does not exist");
    }

    #[test]
    fn parse_errors_report_location() {
        let err = parse("[sim]\nduration = \n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let err = parse("[sim]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn overrides_apply() {
        let text = bundled("canadian_urban").unwrap();
        let c = parse_scenario(
            text,
            "x",
            None,
            &["sim.duration=0.001".into(), "attacks[0].magnitude=2.5".into(), "name=\"renamed\"".into()],
        )
        .unwrap();
        assert_eq!(c.sim.duration, 0.001);
        assert_eq!(c.attacks[0].magnitude, 2.5);
        assert_eq!(c.name, "renamed");
        assert!(matches!(
            parse_scenario(text, "x", None, &["nokey".into()]),
            Err(ScenarioError::Override(_))
        ));
    }

    #[test]
    fn leader_must_not_collide() {
        let err = parse("[graph]\nleader_id = 2\n").unwrap_err();
        assert!(err.to_string().starts_with("graph.leader_id"));
    }
}
