//! Command implementations behind the `gridshield` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::detection::{calibrate_over, AgentBaseline};
use crate::engine::{
    first_event, grid, run_sweep, run_with, steady_state_impact, write_events, EventKind, RunOptions, RunOutput,
    SweepResult,
};
use crate::scenario::{bundled, load_scenario_with, parse_scenario, ScenarioConfig, ScenarioError};

pub const SEED_ENV: &str = "GRIDSHIELD_SEED";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExitStatus {
    Clean = 0,
    Failure = 1,
    Usage = 2,
    Divergence = 3,
    UnservableDeficit = 4,
    FrequencyViolation = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Usage(_) | CliError::Scenario(_) => ExitStatus::Usage,
            CliError::Io { .. } | CliError::Failed(_) => ExitStatus::Failure,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// `MIN:MAX:N`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RangeSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("malformed range `{s}`: expected MIN:MAX:N"));
        let parts: Vec<&str> = s.split(':').collect();
        let [min, max, count] = parts.as_slice() else {
            return Err(bad());
        };
        let min: f64 = min.trim().parse().map_err(|_| bad())?;
        let max: f64 = max.trim().parse().map_err(|_| bad())?;
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        if !min.is_finite() || !max.is_finite() || min > max || count == 0 || (count == 1 && min != max) {
            return Err(bad());
        }
        Ok(Self { min, max, count })
    }

    pub fn points(&self) -> Vec<f64> {
        grid(self.min, self.max, self.count)
    }
}

/// Overrides from the environment followed by the explicit ones.
pub fn effective_overrides(overrides: &[String], env_seed: Option<&str>) -> Result<Vec<String>, CliError> {
    let mut out = Vec::with_capacity(overrides.len() + 1);
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={seed} is not an unsigned integer")))?;
        out.push(format!("sim.seed={seed}"));
    }
    out.extend(overrides.iter().cloned());
    Ok(out)
}

/// Loads a scenario from a path, or by bundled name when no such file exists.
pub fn resolve_scenario(spec: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let env = std::env::var(SEED_ENV).ok();
    let overrides = effective_overrides(overrides, env.as_deref())?;
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(load_scenario_with(path, &overrides)?);
    }
    match bundled(spec) {
        Some(text) => {
            let name = spec.strip_suffix(".scn").unwrap_or(spec);
            Ok(parse_scenario(text, name, None, &overrides)?)
        }
        None => Err(CliError::Usage(format!("scenario `{spec}` not found"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Milestones {
    pub attack_onset: Option<f64>,
    pub isolation: Option<f64>,
    pub bess_pickup: Option<f64>,
    pub handover: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagRecord {
    pub agent: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub flag_count: usize,
    pub flags: Vec<FlagRecord>,
    pub milestones: Milestones,
    pub final_consensus_error: f64,
    /// Largest per-agent steady-state deviations, when the run is long enough.
    pub steady_state: Option<(f64, f64)>,
    pub bess_soc_start: f64,
    pub bess_soc_end: f64,
    pub divergence: Option<String>,
    pub unservable_deficit: bool,
    pub frequency_violation: bool,
    pub exit_status: ExitStatus,
}

impl RunSummary {
    pub fn from_run(cfg: &ScenarioConfig, out: &RunOutput) -> Self {
        let ev = &out.events;
        let flags: Vec<FlagRecord> = ev
            .iter()
            .filter(|e| e.kind == EventKind::DetectionFlag)
            .map(|e| FlagRecord {
                agent: e.agent.unwrap_or(0),
                t: e.t,
            })
            .collect();
        let min_span = 5.0 * cfg.sim.filters.longest();
        let steady_state = (0..cfg.agent_count())
            .map(|i| steady_state_impact(&out.record, i, cfg.sim.f_nom_hz, min_span).ok())
            .try_fold((0.0f64, 0.0f64), |acc, r| r.map(|(v, f)| (acc.0.max(v), acc.1.max(f))));
        let exit_status = if out.divergence.is_some() {
            ExitStatus::Divergence
        } else if out.unservable {
            ExitStatus::UnservableDeficit
        } else if out.frequency_violation {
            ExitStatus::FrequencyViolation
        } else {
            ExitStatus::Clean
        };
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.sim.seed,
            steps: out.final_state.step,
            flag_count: flags.len(),
            flags,
            milestones: Milestones {
                attack_onset: first_event(ev, EventKind::AttackOnset, None),
                isolation: first_event(ev, EventKind::BreakerOpen, None),
                bess_pickup: first_event(ev, EventKind::BessDispatch, None),
                handover: first_event(ev, EventKind::Handover, None),
            },
            final_consensus_error: out.record.rows.last().map_or(f64::NAN, |r| r.consensus_err),
            steady_state,
            bess_soc_start: out.final_state.bess_soc_start,
            bess_soc_end: out.final_state.bess.soc,
            divergence: out.divergence.as_ref().map(|d| format!("t={} s: {}", d.t, d.message)),
            unservable_deficit: out.unservable,
            frequency_violation: out.frequency_violation,
            exit_status,
        }
    }

    pub fn to_text(&self) -> String {
        let fmt = |t: Option<f64>| t.map_or("-".to_string(), |t| format!("{t:.4} s"));
        let mut s = String::new();
        let _ = writeln!(s, "scenario          {}", self.scenario);
        let _ = writeln!(s, "seed              {}", self.seed);
        let _ = writeln!(s, "steps             {}", self.steps);
        let _ = writeln!(s, "attack onset      {}", fmt(self.milestones.attack_onset));
        let _ = writeln!(s, "isolation         {}", fmt(self.milestones.isolation));
        let _ = writeln!(s, "bess pickup       {}", fmt(self.milestones.bess_pickup));
        let _ = writeln!(s, "handover          {}", fmt(self.milestones.handover));
        let _ = writeln!(s, "flags             {}", self.flag_count);
        for f in &self.flags {
            let _ = writeln!(s, "  agent {} at {:.4} s", f.agent, f.t);
        }
        let _ = writeln!(s, "consensus error   {:.3e}", self.final_consensus_error);
        match self.steady_state {
            Some((dv, df)) => {
                let _ = writeln!(s, "steady state      dV {dv:.3e} pu, df {df:.3e} Hz");
            }
            None => {
                let _ = writeln!(s, "steady state      -");
            }
        }
        let _ = writeln!(s, "bess soc          {:.6} -> {:.6}", self.bess_soc_start, self.bess_soc_end);
        if let Some(d) = &self.divergence {
            let _ = writeln!(s, "divergence        {d}");
        }
        if self.unservable_deficit {
            let _ = writeln!(s, "unservable deficit");
        }
        if self.frequency_violation {
            let _ = writeln!(s, "frequency violation");
        }
        let _ = writeln!(s, "exit              {}", self.exit_status.code());
        s
    }
}

/// Runs a scenario and writes `timeseries.csv`, `events.log`, `summary.txt`
/// and `summary.json` into `out_dir`.
pub fn cmd_run(scenario: &str, out_dir: &Path, overrides: &[String]) -> Result<RunSummary, CliError> {
    let cfg = resolve_scenario(scenario, overrides)?;
    let out = run_with(&cfg, RunOptions::default()).map_err(|e| CliError::Failed(e.to_string()))?;
    let summary = RunSummary::from_run(&cfg, &out);
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_file(&out_dir.join("timeseries.csv"), out.record.to_csv_string())?;
    let mut log = Vec::new();
    write_events(&out.events, &mut log).map_err(io_err(out_dir))?;
    write_file(&out_dir.join("events.log"), log)?;
    write_file(&out_dir.join("summary.txt"), summary.to_text())?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Failed(e.to_string()))?;
    write_file(&out_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

/// Runs the sensitivity grid and writes `heatmap.csv` into `out_dir`.
pub fn cmd_sweep(
    scenario: &str,
    additive: RangeSpec,
    scaling: RangeSpec,
    out_dir: &Path,
    jobs: usize,
    overrides: &[String],
) -> Result<SweepResult, CliError> {
    let cfg = resolve_scenario(scenario, overrides)?;
    let result = run_sweep(&cfg, &additive.points(), &scaling.points(), jobs)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_file(&out_dir.join("heatmap.csv"), result.to_csv_string())?;
    Ok(result)
}

/// Attack-free, unmitigated run of at least the minimum calibration span;
/// writes the per-agent baselines as JSON to `out`.
pub fn cmd_calibrate(scenario: &str, out: &Path, overrides: &[String]) -> Result<Vec<AgentBaseline>, CliError> {
    let mut cfg = resolve_scenario(scenario, overrides)?.attack_free();
    cfg.mitigation.enabled = false;
    cfg.baselines = None;
    cfg.sim.duration = cfg.sim.duration.max(cfg.detection.min_calibration);
    let run = run_with(&cfg, RunOptions { collect_features: true }).map_err(|e| CliError::Failed(e.to_string()))?;
    if let Some(d) = &run.divergence {
        return Err(CliError::Failed(format!("calibration run diverged: {}", d.message)));
    }
    let features = run.features.unwrap_or_default();
    let baselines = features
        .iter()
        .enumerate()
        .map(|(i, f)| calibrate_over(i, f, &cfg.detection, cfg.detection.min_calibration))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let json = serde_json::to_string_pretty(&baselines).map_err(|e| CliError::Failed(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_file(out, json + "\n")?;
    Ok(baselines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(
            RangeSpec::parse("0:1:3").unwrap().points(),
            vec![0.0, 0.5, 1.0]
        );
        for bad in ["0:1", "1:0:3", "a:1:2", "0:1:0", "0:1:1"] {
            assert!(matches!(RangeSpec::parse(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn env_seed_precedes_explicit_overrides() {
        let ov = effective_overrides(&["sim.seed=3".into()], Some("7")).unwrap();
        assert_eq!(ov, vec!["sim.seed=7".to_string(), "sim.seed=3".to_string()]);
        assert!(effective_overrides(&[], Some("x")).is_err());
    }

    #[test]
    fn missing_scenario_is_a_usage_error() {
        let err = resolve_scenario("/no/such/file.scn", &[]).unwrap_err();
        assert_eq!(err.exit_status(), ExitStatus::Usage);
    }
}
