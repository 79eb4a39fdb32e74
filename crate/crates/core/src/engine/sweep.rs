//! Sensitivity sweep over additive magnitude and scaling factor.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attack::{AttackKind, AttackSpec, AttackTarget, Schedule};
use crate::scenario::ScenarioConfig;

use super::{run, EngineError, TimeSeriesRecord};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("record spans {span} s, need at least {needed} s")]
    InsufficientData { span: f64, needed: f64 },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub additive: f64,
    pub factor: f64,
    /// Mean relative voltage deviation over the tail, pu.
    pub dv_pu: f64,
    /// Mean frequency deviation over the tail, Hz.
    pub df_hz: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub additive: Vec<f64>,
    pub scaling: Vec<f64>,
    /// Row-major: additive outer, scaling inner.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, additive: f64, factor: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.additive == additive && c.factor == factor)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("a_a,scale_factor,dV_pu,df_hz,diverged\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.additive,
                c.factor,
                c.dv_pu,
                c.df_hz,
                u8::from(c.diverged)
            ));
        }
        s
    }
}

/// `n` evenly spaced points from `min` to `max` inclusive.
pub fn grid(min: f64, max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..n)
            .map(|k| if k == n - 1 { max } else { min + (max - min) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

fn with_point(mut g: Vec<f64>, p: f64) -> Vec<f64> {
    if !g.contains(&p) {
        g.push(p);
    }
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Scenario for one cell: every configured channel of the sweep agent gets a
/// scaling term `factor - 1` followed by an additive term, mitigation is off.
pub fn sweep_cell_config(base: &ScenarioConfig, additive: f64, factor: f64) -> ScenarioConfig {
    let sw = &base.sweep;
    let mut cfg = base.clone();
    cfg.sim.duration = sw.duration;
    cfg.mitigation.enabled = false;
    let end = sw.duration + 1.0;
    cfg.attacks = sw
        .channels
        .iter()
        .flat_map(|&channel| {
            let target = AttackTarget {
                agent: sw.agent,
                channel,
            };
            [(AttackKind::Scaling, factor - 1.0), (AttackKind::Additive, additive)].map(|(kind, magnitude)| {
                AttackSpec {
                    kind,
                    magnitude,
                    target,
                    start: sw.attack_start,
                    end,
                    schedule: Schedule::OneShot,
                }
            })
        })
        .collect();
    cfg
}

/// Mean `|V - 1|` and `|f - f_nom|` of `agent` over the last 20% of the record.
pub fn steady_state_impact(
    record: &TimeSeriesRecord,
    agent: usize,
    f_nom: f64,
    min_span: f64,
) -> Result<(f64, f64), SweepError> {
    let (Some(first), Some(last)) = (record.rows.first(), record.rows.last()) else {
        return Err(SweepError::InsufficientData {
            span: 0.0,
            needed: min_span,
        });
    };
    // Rows are stamped at the end of their step.
    let span = last.t;
    if span < min_span || first.t > last.t {
        return Err(SweepError::InsufficientData { span, needed: min_span });
    }
    let from = 0.8 * span;
    let (mut dv, mut df, mut n) = (0.0, 0.0, 0usize);
    for r in record.rows.iter().filter(|r| r.t >= from) {
        let a = &r.agents[agent];
        dv += (a.v - 1.0).abs();
        df += (a.f - f_nom).abs();
        n += 1;
    }
    Ok((dv / n as f64, df / n as f64))
}

fn run_cell(base: &ScenarioConfig, additive: f64, factor: f64) -> Result<SweepCell, SweepError> {
    let cfg = sweep_cell_config(base, additive, factor);
    let out = run(&cfg)?;
    let diverged = out.divergence.is_some() || out.out_of_envelope;
    let (dv_pu, df_hz) = if diverged {
        (f64::NAN, f64::NAN)
    } else {
        let min_span = 5.0 * cfg.sim.filters.longest();
        steady_state_impact(&out.record, cfg.sweep.agent, cfg.sim.f_nom_hz, min_span)?
    };
    Ok(SweepCell {
        additive,
        factor,
        dv_pu,
        df_hz,
        diverged,
    })
}

/// Evaluates `cells` as `(additive, factor)` pairs on a pool of `jobs`
/// threads. Output order follows input order.
pub fn run_cells(base: &ScenarioConfig, cells: &[(f64, f64)], jobs: usize) -> Result<Vec<SweepCell>, SweepError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    pool.install(|| cells.par_iter().map(|&(a, f)| run_cell(base, a, f)).collect())
}

/// Full grid sweep. The attack-free point `(0, 1)` is always included.
pub fn run_sweep(
    base: &ScenarioConfig,
    additive: &[f64],
    scaling: &[f64],
    jobs: usize,
) -> Result<SweepResult, SweepError> {
    if additive.is_empty() || scaling.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    let additive = with_point(additive.to_vec(), 0.0);
    let scaling = with_point(scaling.to_vec(), 1.0);
    let pairs: Vec<(f64, f64)> = additive
        .iter()
        .flat_map(|&a| scaling.iter().map(move |&f| (a, f)))
        .collect();
    let cells = run_cells(base, &pairs, jobs)?;
    Ok(SweepResult {
        additive,
        scaling,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{AgentSample, RecordRow};
    use crate::mitigation::Status;

    fn record(v: f64, f: f64) -> TimeSeriesRecord {
        let mut r = TimeSeriesRecord::new(1);
        for k in 1..=100 {
            r.rows.push(RecordRow {
                t: k as f64 * 1e-3,
                agents: vec![AgentSample {
                    v,
                    f,
                    p: 0.0,
                    q: 0.0,
                    thd: 0.0,
                    status: Status::On,
                    flag: false,
                }],
                bess_soc: 0.5,
                bess_p: 0.0,
                consensus_err: 0.0,
            });
        }
        r
    }

    #[test]
    fn forced_tails() {
        let (dv, _) = steady_state_impact(&record(1.1, 60.0), 0, 60.0, 0.025).unwrap();
        assert!((dv - 0.1).abs() < 1e-12);
        let (_, df) = steady_state_impact(&record(1.0, 59.5), 0, 60.0, 0.025).unwrap();
        assert!((df - 0.5).abs() < 1e-12);
    }

    #[test]
    fn short_record_is_rejected() {
        let r = record(1.0, 60.0);
        assert!(matches!(
            steady_state_impact(&r, 0, 60.0, 1.0),
            Err(SweepError::InsufficientData { .. })
        ));
    }

    #[test]
    fn grid_points() {
        assert_eq!(grid(0.0, 1.0, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(grid(2.0, 2.0, 1), vec![2.0]);
        assert_eq!(with_point(vec![0.5, 2.0], 1.0), vec![0.5, 1.0, 2.0]);
    }
}
