//! Three-phase waveform synthesis with modulation saturation, and THD.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::ConverterState;

pub const DEFAULT_WAVEFORM_RATE_HZ: f64 = 20_000.0;
const MAX_HARMONIC: usize = 50;
const PHASE_OFFSETS: [f64; 3] = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0];

pub fn clipped_sine(amplitude: f64, phase: f64, clip_pu: f64) -> f64 {
    (amplitude * phase.sin()).clamp(-clip_pu, clip_pu)
}

/// `v_abc(t) = clamp(V sin(omega t + beta + phi_k), ±clip_pu)`.
pub fn synthesize_waveform(state: &ConverterState, t: f64, clip_pu: f64) -> [f64; 3] {
    let base = state.omega() * t + state.beta();
    PHASE_OFFSETS.map(|phi| clipped_sine(state.voltage(), base + phi, clip_pu))
}

/// Fundamental amplitude of a sine of amplitude `v` clipped at `clip_pu`.
/// Odd in `v`; tends to `4 clip / pi` as `|v|` grows.
pub fn fundamental_amplitude(v: f64, clip_pu: f64) -> f64 {
    let mag = v.abs();
    if mag <= clip_pu {
        return v;
    }
    let c = clip_pu / mag;
    let fund = 2.0 * mag / PI * (c.asin() + c * (1.0 - c * c).sqrt());
    fund.copysign(v)
}

/// THD over harmonics 2..=50 of one full period held in `samples`.
pub fn thd(samples: &[f64]) -> f64 {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(samples.len());
    thd_with(&*fft, samples)
}

fn thd_with(fft: &dyn Fft<f64>, samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 4 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    let fundamental = buf[1].norm();
    if fundamental < 1e-12 * n as f64 {
        return 0.0;
    }
    let top = MAX_HARMONIC.min(n / 2 - 1);
    let harmonics: f64 = buf[2..=top].iter().map(|c| c.norm_sqr()).sum();
    harmonics.sqrt() / fundamental
}

#[derive(Debug, Clone, Copy)]
struct HistoryEntry {
    t: f64,
    amplitude: f64,
    phase: f64,
    omega: f64,
}

/// Sliding one-fundamental-period THD estimator over a converter's recent
/// history, resampled at the waveform rate.
pub struct ThdWindow {
    history: VecDeque<HistoryEntry>,
    horizon: f64,
    max_period: f64,
    /// Resampling length, fixed by the first evaluation.
    samples: Option<usize>,
    rate_hz: f64,
    clip_pu: f64,
    planner: FftPlanner<f64>,
    plans: Vec<(usize, Arc<dyn Fft<f64>>)>,
    scratch: Vec<f64>,
}

impl ThdWindow {
    /// `max_period` bounds how much history is retained.
    pub fn new(rate_hz: f64, clip_pu: f64, max_period: f64) -> Self {
        Self {
            history: VecDeque::new(),
            horizon: 1.5 * max_period,
            max_period,
            samples: None,
            rate_hz,
            clip_pu,
            planner: FftPlanner::new(),
            plans: Vec::new(),
            scratch: Vec::new(),
        }
    }

    /// Records the state at time `t`. `phase` is the absolute phase of phase a.
    pub fn push(&mut self, t: f64, amplitude: f64, phase: f64, omega: f64) {
        self.history.push_back(HistoryEntry {
            t,
            amplitude,
            phase,
            omega,
        });
        while let Some(front) = self.history.front() {
            if t - front.t > self.horizon && self.history.len() > 2 {
                self.history.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }

    /// THD of phase a over the period ending at the most recent entry.
    pub fn evaluate(&mut self) -> f64 {
        let Some(last) = self.history.back().copied() else {
            return 0.0;
        };
        let period = (TAU / last.omega.abs()).min(self.max_period);
        let rate = self.rate_hz;
        let n = *self
            .samples
            .get_or_insert_with(|| ((rate * period).round() as usize).max(2 * MAX_HARMONIC + 2));
        self.scratch.clear();
        let mut cursor = 0;
        for k in 0..n {
            let tau = last.t - period + (k + 1) as f64 * period / n as f64;
            while cursor + 1 < self.history.len() && self.history[cursor + 1].t <= tau {
                cursor += 1;
            }
            let e = self.history[cursor];
            let phase = e.phase + e.omega * (tau - e.t);
            self.scratch.push(clipped_sine(e.amplitude, phase, self.clip_pu));
        }
        let fft = match self.plans.iter().find(|(len, _)| *len == n) {
            Some((_, plan)) => Arc::clone(plan),
            None => {
                let plan = self.planner.plan_fft_forward(n);
                self.plans.push((n, Arc::clone(&plan)));
                plan
            }
        };
        thd_with(&*fft, &self.scratch)
    }
}
