//! Time-series rows and the structured event log.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mitigation::Status;

pub const CSV_HEADER_TAG: &str = "# gridshield-csv v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    /// Fundamental terminal voltage, pu.
    pub v: f64,
    /// Hz
    pub f: f64,
    /// MW
    pub p: f64,
    /// MVar
    pub q: f64,
    pub thd: f64,
    pub status: Status,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub t: f64,
    pub agents: Vec<AgentSample>,
    pub bess_soc: f64,
    /// MW
    pub bess_p: f64,
    pub consensus_err: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub agent_count: usize,
    pub rows: Vec<RecordRow>,
}

impl TimeSeriesRecord {
    pub fn new(agent_count: usize) -> Self {
        Self {
            agent_count,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for i in 0..self.agent_count {
            for name in ["v", "f", "p", "q", "thd", "status", "flag"] {
                cols.push(format!("{name}{i}"));
            }
        }
        cols.extend(["bess_soc", "bess_p", "consensus_err"].map(String::from));
        cols
    }

    /// `(t, value)` pairs of one agent signal.
    pub fn series(&self, agent: usize, pick: impl Fn(&AgentSample) -> f64) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t, pick(&r.agents[agent]))).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER_TAG}")?;
        writeln!(w, "{}", self.columns().join(","))?;
        for r in &self.rows {
            write!(w, "{}", r.t)?;
            for a in &r.agents {
                write!(
                    w,
                    ",{},{},{},{},{},{},{}",
                    a.v,
                    a.f,
                    a.p,
                    a.q,
                    a.thd,
                    a.status.name(),
                    u8::from(a.flag)
                )?;
            }
            writeln!(w, ",{},{},{}", r.bess_soc, r.bess_p, r.consensus_err)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    AttackOnset,
    DetectionFlag,
    BreakerOpen,
    ConsensusRemove,
    InverterDisconnect,
    BessDispatch,
    BreakerClose,
    InverterReboot,
    RebootComplete,
    StatusOn,
    InverterConnect,
    Handover,
    ConsensusRestore,
    LoadShed,
    UnservableDeficit,
    BessLimit,
    BessFrequencySettled,
    FrequencyViolation,
    OutOfEnvelope,
    Divergence,
}

impl EventKind {
    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub agent: Option<usize>,
    pub kind: EventKind,
    pub payload: Value,
}

pub fn write_events(events: &[Event], mut w: impl Write) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Time of the first event of `kind`, optionally for one agent.
pub fn first_event(events: &[Event], kind: EventKind, agent: Option<usize>) -> Option<f64> {
    events
        .iter()
        .find(|e| e.kind == kind && (agent.is_none() || e.agent == agent))
        .map(|e| e.t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut r = TimeSeriesRecord::new(1);
        r.rows.push(RecordRow {
            t: 0.001,
            agents: vec![AgentSample {
                v: 1.0,
                f: 60.0,
                p: 2.0,
                q: 0.0,
                thd: 0.0,
                status: Status::On,
                flag: false,
            }],
            bess_soc: 0.9,
            bess_p: 0.0,
            consensus_err: 0.0,
        });
        let csv = r.to_csv_string();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER_TAG);
        assert_eq!(lines[1], "t,v0,f0,p0,q0,thd0,status0,flag0,bess_soc,bess_p,consensus_err");
        assert_eq!(lines[2], "0.001,1,60,2,0,0,ON,0,0.9,0,0");
    }

    #[test]
    fn event_json_line() {
        let e = Event {
            t: 0.14,
            agent: Some(0),
            kind: EventKind::BreakerOpen,
            payload: serde_json::json!({}),
        };
        let mut buf = Vec::new();
        write_events(&[e], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"t\":0.14,\"agent\":0,\"kind\":\"breaker-open\",\"payload\":{}}\n"
        );
        assert_eq!(EventKind::BessFrequencySettled.name(), "bess-frequency-settled");
    }
}
