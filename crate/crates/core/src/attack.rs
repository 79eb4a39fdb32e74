//! Measurement and control-input manipulation on targeted channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// `(1 + a_s) y`
    Scaling,
    /// `y + a_a`
    Additive,
    /// `y + a_r t_rel`
    Ramping,
}

/// Signal an attack can corrupt. All channels carry per-unit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Voltage command of the modulation controller.
    VMod,
    /// Frequency command of the modulation controller.
    OmegaMod,
    /// Active power measurement consumed by the local droop loop.
    P,
    /// Reactive power measurement consumed by the local droop loop.
    Q,
    /// Secondary-control state the agent perceives and shares with neighbours.
    Consensus,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::VMod,
        Channel::OmegaMod,
        Channel::P,
        Channel::Q,
        Channel::Consensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::VMod => "v_mod",
            Channel::OmegaMod => "omega_mod",
            Channel::P => "p",
            Channel::Q => "q",
            Channel::Consensus => "consensus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    OneShot,
    Periodic { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackTarget {
    pub agent: usize,
    pub channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub magnitude: f64,
    pub target: AttackTarget,
    /// Closed activation window `[t_a, t_a']`, seconds.
    pub start: f64,
    pub end: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack window must satisfy start < end (got [{0}, {1}])")]
    EmptyWindow(f64, f64),
    #[error("period {period} must exceed the window length {len}")]
    PeriodTooShort { period: f64, len: f64 },
    #[error("attack magnitude must be finite")]
    NonFinite,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !self.magnitude.is_finite() || !self.start.is_finite() || !self.end.is_finite() {
            return Err(AttackError::NonFinite);
        }
        if !(self.start < self.end) {
            return Err(AttackError::EmptyWindow(self.start, self.end));
        }
        if let Schedule::Periodic { period } = self.schedule {
            let len = self.end - self.start;
            if !(period > len) {
                return Err(AttackError::PeriodTooShort { period, len });
            }
        }
        Ok(())
    }

    /// Opening time of the window containing `t`, if the attack is active.
    pub fn window_open(&self, t: f64) -> Option<f64> {
        if t < self.start {
            return None;
        }
        let open = match self.schedule {
            Schedule::OneShot => self.start,
            Schedule::Periodic { period } => {
                let k = ((t - self.start) / period).floor();
                self.start + k * period
            }
        };
        (t - open <= self.end - self.start).then_some(open)
    }
}

pub fn is_active(spec: &AttackSpec, t: f64) -> bool {
    spec.window_open(t).is_some()
}

/// Value delivered on the channel at time `t` when the true value is `y`.
pub fn apply_attack(spec: &AttackSpec, y: f64, t: f64) -> f64 {
    let Some(open) = spec.window_open(t) else {
        return y;
    };
    match spec.kind {
        AttackKind::Scaling => (1.0 + spec.magnitude) * y,
        AttackKind::Additive => y + spec.magnitude,
        AttackKind::Ramping => y + spec.magnitude * (t - open),
    }
}

/// Applies every spec in `specs` that targets `target`, in order.
pub fn apply_all(specs: &[AttackSpec], target: AttackTarget, y: f64, t: f64) -> f64 {
    specs
        .iter()
        .filter(|s| s.target == target)
        .fold(y, |acc, s| apply_attack(s, acc, t))
}

/// `u = -H y~`: the victim controller acts on whatever value is delivered.
pub fn corrupt_control(h: f64, y_delivered: f64) -> f64 {
    -h * y_delivered
}

/// A measured signal as it travels from sensor to controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackChannel {
    pub feedback_gain: f64,
    pub true_value: f64,
    pub delivered_value: f64,
}

impl AttackChannel {
    pub fn transmit(feedback_gain: f64, y: f64, specs: &[AttackSpec], target: AttackTarget, t: f64) -> Self {
        Self {
            feedback_gain,
            true_value: y,
            delivered_value: apply_all(specs, target, y, t),
        }
    }

    pub fn control(&self) -> f64 {
        corrupt_control(self.feedback_gain, self.delivered_value)
    }
}
