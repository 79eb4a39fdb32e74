//! Incremental load shedding by criticality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheddableLoad {
    pub id: usize,
    /// W
    pub power: f64,
    pub criticality: f64,
    /// W already shed.
    pub shed: f64,
}

impl SheddableLoad {
    pub fn remaining(&self) -> f64 {
        (self.power - self.shed).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheddingPlan {
    pub loads: Vec<SheddableLoad>,
    /// Fraction of a load's rating removed per increment, in (0, 1].
    pub step_fraction: f64,
    /// Loads at this weight are critical and never shed.
    pub critical_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShedCommand {
    pub load_id: usize,
    /// W removed by this command.
    pub amount: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unservable deficit of {remaining} W after shedding all non-critical load")]
pub struct UnservableDeficit {
    pub remaining: f64,
    pub plan: SheddingPlan,
    pub commands: Vec<ShedCommand>,
}

impl SheddingPlan {
    pub fn new(loads: Vec<SheddableLoad>, step_fraction: f64, critical_weight: f64) -> Self {
        Self {
            loads,
            step_fraction,
            critical_weight,
        }
    }

    pub fn total_shed(&self) -> f64 {
        self.loads.iter().map(|l| l.shed).sum()
    }

    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.loads.len()).collect();
        idx.sort_by(|&a, &b| {
            let (la, lb) = (&self.loads[a], &self.loads[b]);
            la.criticality
                .total_cmp(&lb.criticality)
                .then(la.id.cmp(&lb.id))
        });
        idx
    }
}

/// Sheds non-critical load in `step_fraction` increments, lowest criticality
/// first and lower id first on ties, until at least `deficit` W is removed.
pub fn shed_load(plan: &SheddingPlan, deficit: f64) -> Result<(SheddingPlan, Vec<ShedCommand>), UnservableDeficit> {
    let mut next = plan.clone();
    let mut commands = Vec::new();
    let mut remaining = deficit;
    for k in plan.order() {
        if remaining <= 0.0 {
            break;
        }
        let load = &mut next.loads[k];
        if load.criticality >= plan.critical_weight {
            continue;
        }
        let increment = plan.step_fraction * load.power;
        if increment <= 0.0 {
            continue;
        }
        let mut amount = 0.0;
        while remaining > 1e-9 * deficit.abs().max(1.0) && load.remaining() > 0.0 {
            let step = increment.min(load.remaining());
            load.shed += step;
            amount += step;
            remaining -= step;
        }
        if amount > 0.0 {
            commands.push(ShedCommand {
                load_id: load.id,
                amount,
            });
        }
    }
    if remaining > 1e-9 * deficit.abs().max(1.0) {
        return Err(UnservableDeficit {
            remaining,
            plan: next,
            commands,
        });
    }
    Ok((next, commands))
}
