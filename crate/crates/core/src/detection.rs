//! Threshold-based anomaly detection over per-agent cyber-physical features.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Monitored per-sample features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Measured frequency less the droop model's prediction, pu.
    ResidualOmega,
    /// Measured voltage state less the droop model's prediction, pu.
    ResidualV,
    /// Secondary-control state less the leader reference, pu.
    ResidualConsensus,
    Thd,
    Overvoltage,
    Undervoltage,
    Frequency,
}

impl Feature {
    pub const BANDED: [Feature; 3] = [
        Feature::ResidualOmega,
        Feature::ResidualV,
        Feature::ResidualConsensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::ResidualOmega => "residual_omega",
            Feature::ResidualV => "residual_v",
            Feature::ResidualConsensus => "residual_consensus",
            Feature::Thd => "thd",
            Feature::Overvoltage => "overvoltage",
            Feature::Undervoltage => "undervoltage",
            Feature::Frequency => "frequency",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One detector input sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub t: f64,
    /// `[residual_omega, residual_v, residual_consensus]`, pu.
    pub residuals: [f64; 3],
    pub thd: f64,
    /// Terminal voltage magnitude, pu.
    pub v: f64,
    /// Frequency deviation from nominal, Hz.
    pub df_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub margin_factor: f64,
    /// pu
    pub floor: f64,
    pub persistence: usize,
    pub thd_ceiling: f64,
    pub settle_band_pct: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub f_dev_hz: f64,
    /// In-run calibration window used when no baseline is supplied, s.
    pub warmup: f64,
    /// Minimum span of a stand-alone calibration run, s.
    pub min_calibration: f64,
    /// Samples ignored after a handover, s.
    pub holdoff: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            margin_factor: 6.0,
            floor: 1e-3,
            persistence: 20,
            thd_ceiling: 0.05,
            settle_band_pct: 0.02,
            v_min: 0.85,
            v_max: 1.15,
            f_dev_hz: 2.0,
            warmup: 0.05,
            min_calibration: 1.0,
            holdoff: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub half_width: f64,
}

impl Band {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width
    }
}

/// Attack-free reference for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBaseline {
    pub agent: usize,
    pub bands: [Band; 3],
    pub thd_ceiling: f64,
    /// Settling time of the voltage over the calibration run, s.
    pub settle_ceiling: f64,
    pub v_limits: (f64, f64),
    pub f_dev_hz: f64,
}

impl AgentBaseline {
    /// Features of `s` outside the baseline.
    pub fn violations(&self, s: &FeatureSample) -> Vec<Feature> {
        let mut out = Vec::new();
        for (k, feature) in Feature::BANDED.into_iter().enumerate() {
            if !self.bands[k].contains(s.residuals[k]) {
                out.push(feature);
            }
        }
        if s.thd > self.thd_ceiling {
            out.push(Feature::Thd);
        }
        if s.v > self.v_limits.1 {
            out.push(Feature::Overvoltage);
        }
        if s.v < self.v_limits.0 {
            out.push(Feature::Undervoltage);
        }
        if s.df_hz.abs() > self.f_dev_hz {
            out.push(Feature::Frequency);
        }
        out
    }

    pub fn in_band(&self, s: &FeatureSample) -> bool {
        self.violations(s).is_empty()
    }

    /// Same baseline with every tolerance widened by `factor >= 1`.
    pub fn widened(&self, factor: f64) -> Self {
        let mut b = self.clone();
        for band in &mut b.bands {
            band.half_width *= factor;
        }
        b.thd_ceiling *= factor;
        let (lo, hi) = b.v_limits;
        b.v_limits = (lo / factor, hi * factor);
        b.f_dev_hz *= factor;
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub agent: usize,
    pub flagged: bool,
    pub triggered_features: Vec<Feature>,
    /// First sample of the exceedance run that raised the flag.
    pub trigger_time: f64,
    pub feature_values: Option<FeatureSample>,
}

impl DetectionVerdict {
    pub fn clear(agent: usize) -> Self {
        Self {
            agent,
            flagged: false,
            triggered_features: Vec::new(),
            trigger_time: f64::NAN,
            feature_values: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("calibration run spans {got} s, need at least {need} s")]
    InsufficientData { got: f64, need: f64 },
}

/// Learns an agent baseline from attack-free samples spanning at least
/// `cfg.min_calibration` seconds.
pub fn calibrate(
    agent: usize,
    samples: &[FeatureSample],
    cfg: &DetectionConfig,
) -> Result<AgentBaseline, DetectionError> {
    calibrate_over(agent, samples, cfg, cfg.min_calibration)
}

/// As [`calibrate`] with an explicit minimum span.
pub fn calibrate_over(
    agent: usize,
    samples: &[FeatureSample],
    cfg: &DetectionConfig,
    min_span: f64,
) -> Result<AgentBaseline, DetectionError> {
    let span = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) if samples.len() > 1 => {
            // Each sample stands for one step, so n samples cover n steps.
            let step = (b.t - a.t) / (samples.len() - 1) as f64;
            b.t - a.t + step
        }
        _ => 0.0,
    };
    if samples.is_empty() || span + 1e-9 < min_span {
        return Err(DetectionError::InsufficientData {
            got: span,
            need: min_span,
        });
    }
    let n = samples.len() as f64;
    let mut bands = [Band {
        mean: 0.0,
        half_width: 0.0,
    }; 3];
    for (k, band) in bands.iter_mut().enumerate() {
        let mean = samples.iter().map(|s| s.residuals[k]).sum::<f64>() / n;
        let var = samples
            .iter()
            .map(|s| (s.residuals[k] - mean).powi(2))
            .sum::<f64>()
            / n;
        let max_dev = samples
            .iter()
            .map(|s| (s.residuals[k] - mean).abs())
            .fold(0.0, f64::max);
        band.mean = mean;
        band.half_width = (cfg.margin_factor * var.sqrt()).max(cfg.floor).max(1.01 * max_dev);
    }
    let max_thd = samples.iter().map(|s| s.thd).fold(0.0, f64::max);
    let v_lo = samples.iter().map(|s| s.v).fold(f64::INFINITY, f64::min);
    let v_hi = samples.iter().map(|s| s.v).fold(f64::NEG_INFINITY, f64::max);
    let f_hi = samples.iter().map(|s| s.df_hz.abs()).fold(0.0, f64::max);
    let v_series: Vec<(f64, f64)> = samples.iter().map(|s| (s.t, s.v)).collect();
    let v_mean = v_series.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(AgentBaseline {
        agent,
        bands,
        thd_ceiling: cfg.thd_ceiling.max(1.01 * max_thd),
        settle_ceiling: settling_time(&v_series, v_mean, cfg.settle_band_pct),
        v_limits: (cfg.v_min.min(v_lo - 1e-9), cfg.v_max.max(v_hi + 1e-9)),
        f_dev_hz: cfg.f_dev_hz.max(1.01 * f_hi),
    })
}

/// Flags when some run of at least `persistence` consecutive samples is out
/// of band; the verdict carries the first such run.
pub fn detect(baseline: &AgentBaseline, window: &[FeatureSample], persistence: usize) -> DetectionVerdict {
    let need = persistence.max(1);
    let mut run = 0;
    let mut start = 0;
    let mut features: Vec<Feature> = Vec::new();
    for (k, s) in window.iter().enumerate() {
        let v = baseline.violations(s);
        if v.is_empty() {
            run = 0;
            features.clear();
            continue;
        }
        if run == 0 {
            start = k;
        }
        run += 1;
        for f in v {
            if !features.contains(&f) {
                features.push(f);
            }
        }
        if run >= need {
            features.sort();
            return DetectionVerdict {
                agent: baseline.agent,
                flagged: true,
                triggered_features: features,
                trigger_time: window[start].t,
                feature_values: Some(*s),
            };
        }
    }
    DetectionVerdict::clear(baseline.agent)
}

/// Last time `signal` is outside `target ± band_pct·|target|` (absolute
/// `band_pct` when the target is zero), measured from the series start.
/// Returns the series duration when the final sample is still outside.
pub fn settling_time(signal: &[(f64, f64)], target: f64, band_pct: f64) -> f64 {
    let Some(&(t0, _)) = signal.first() else {
        return 0.0;
    };
    let t_end = signal.last().map(|p| p.0).unwrap_or(t0);
    let band = if target == 0.0 {
        band_pct
    } else {
        band_pct * target.abs()
    };
    let outside = |v: f64| (v - target).abs() > band;
    let Some(last_out) = signal.iter().rposition(|&(_, v)| outside(v)) else {
        return 0.0;
    };
    if last_out + 1 == signal.len() {
        return t_end - t0;
    }
    // Interpolate the crossing between the last outside and first inside sample.
    let (ta, va) = signal[last_out];
    let (tb, vb) = signal[last_out + 1];
    let edge = if va > target { target + band } else { target - band };
    let frac = if (vb - va).abs() > 0.0 {
        ((edge - va) / (vb - va)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ta + frac * (tb - ta) - t0
}

/// Streaming per-agent detector: in-run warmup calibration, persistence
/// filtering, latched flags and a post-handover hold-off.
#[derive(Debug, Clone)]
pub struct Detector {
    agent: usize,
    cfg: DetectionConfig,
    baseline: Option<AgentBaseline>,
    warmup: Vec<FeatureSample>,
    run: usize,
    run_start: f64,
    run_features: Vec<Feature>,
    in_band_run: usize,
    holdoff_until: f64,
    latched: Option<DetectionVerdict>,
}

impl Detector {
    pub fn new(agent: usize, cfg: DetectionConfig, baseline: Option<AgentBaseline>) -> Self {
        Self {
            agent,
            cfg,
            baseline,
            warmup: Vec::new(),
            run: 0,
            run_start: 0.0,
            run_features: Vec::new(),
            in_band_run: 0,
            holdoff_until: f64::NEG_INFINITY,
            latched: None,
        }
    }

    pub fn baseline(&self) -> Option<&AgentBaseline> {
        self.baseline.as_ref()
    }

    pub fn is_flagged(&self) -> bool {
        self.latched.is_some()
    }

    pub fn verdict(&self) -> DetectionVerdict {
        self.latched
            .clone()
            .unwrap_or_else(|| DetectionVerdict::clear(self.agent))
    }

    /// Whether the last `persistence` samples were all in band.
    pub fn currently_nominal(&self) -> bool {
        self.baseline.is_some() && self.in_band_run >= self.cfg.persistence.max(1)
    }

    pub fn hold_off(&mut self, until: f64) {
        self.holdoff_until = until;
        self.run = 0;
        self.run_features.clear();
        self.in_band_run = 0;
    }

    /// Clears the flag and the persistence counters; keeps the baseline.
    pub fn reset(&mut self) {
        self.latched = None;
        self.run = 0;
        self.run_features.clear();
        self.in_band_run = 0;
    }

    /// Feeds one sample. Returns the verdict when this sample raises a new flag.
    pub fn observe(&mut self, s: FeatureSample) -> Option<DetectionVerdict> {
        let Some(baseline) = &self.baseline else {
            self.warmup.push(s);
            if s.t + 1e-12 >= self.cfg.warmup - self.step_estimate() {
                let samples = std::mem::take(&mut self.warmup);
                self.baseline = calibrate_over(self.agent, &samples, &self.cfg, 0.0).ok();
            }
            return None;
        };
        if s.t < self.holdoff_until {
            return None;
        }
        let violations = baseline.violations(&s);
        if violations.is_empty() {
            self.run = 0;
            self.run_features.clear();
            self.in_band_run += 1;
            return None;
        }
        self.in_band_run = 0;
        if self.run == 0 {
            self.run_start = s.t;
        }
        self.run += 1;
        for f in violations {
            if !self.run_features.contains(&f) {
                self.run_features.push(f);
            }
        }
        if self.latched.is_none() && self.run >= self.cfg.persistence.max(1) {
            let mut features = self.run_features.clone();
            features.sort();
            let v = DetectionVerdict {
                agent: self.agent,
                flagged: true,
                triggered_features: features,
                trigger_time: self.run_start,
                feature_values: Some(s),
            };
            self.latched = Some(v.clone());
            return Some(v);
        }
        None
    }

    fn step_estimate(&self) -> f64 {
        match self.warmup.as_slice() {
            [.., a, b] => b.t - a.t,
            _ => 0.0,
        }
    }
}
