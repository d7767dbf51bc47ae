use serde::{Deserialize, Serialize};

use crate::{DashError, Result};

/// Practice-mode decay factor.
pub const PRACTICE_GAMMA: f64 = 1.27;
/// Practice-mode lower bound on the threshold.
pub const PRACTICE_FLOOR: f64 = 0.05;
/// Threshold multiplier used in practice mode.
pub const PRACTICE_C: f64 = 1.0001;
/// Epochs trained with every unlabeled example before selection starts.
pub const PRACTICE_ACTIVATION_EPOCHS: usize = 10;
/// Epochs between two threshold decays in practice mode.
pub const PRACTICE_DECAY_EPOCHS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayCadence {
    /// One decay per selection-stage iteration.
    PerIteration,
    /// One decay every `n` epochs.
    EveryNEpochs(usize),
}

impl DecayCadence {
    fn period(self) -> usize {
        match self {
            DecayCadence::PerIteration => 1,
            DecayCadence::EveryNEpochs(n) => n,
        }
    }
}

/// `rho(t) = max(C * gamma^-k * rho_hat, floor)` with `k` the number of
/// completed decay periods, and `+inf` while `t <= activation`.
///
/// `t` counts in the cadence's unit: iterations for
/// [`DecayCadence::PerIteration`], epochs for [`DecayCadence::EveryNEpochs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSchedule {
    pub c: f64,
    pub gamma: f64,
    pub rho_hat: f64,
    pub floor: f64,
    pub activation: usize,
    pub cadence: DecayCadence,
}

impl ThresholdSchedule {
    pub fn new(
        c: f64,
        gamma: f64,
        rho_hat: f64,
        floor: f64,
        activation: usize,
        cadence: DecayCadence,
    ) -> Result<Self> {
        let s = ThresholdSchedule {
            c,
            gamma,
            rho_hat,
            floor,
            activation,
            cadence,
        };
        s.validate()?;
        Ok(s)
    }

    /// Per-iteration schedule starting at `C * rho_hat` with no floor.
    pub fn theory(c: f64, gamma: f64, rho_hat: f64) -> Result<Self> {
        Self::new(c, gamma, rho_hat, 0.0, 0, DecayCadence::PerIteration)
    }

    /// Defaults used for practice-mode training.
    pub fn practice(rho_hat: f64) -> Result<Self> {
        Self::new(
            PRACTICE_C,
            PRACTICE_GAMMA,
            rho_hat,
            PRACTICE_FLOOR,
            PRACTICE_ACTIVATION_EPOCHS,
            DecayCadence::EveryNEpochs(PRACTICE_DECAY_EPOCHS),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 1.0 && self.c.is_finite()) {
            return Err(DashError::config(format!("C = {} must exceed 1", self.c)));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(DashError::config(format!("gamma = {} must exceed 1", self.gamma)));
        }
        if !(self.rho_hat > 0.0 && self.rho_hat.is_finite()) {
            return Err(DashError::config(format!("rho_hat = {} must be positive", self.rho_hat)));
        }
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(DashError::config(format!("floor = {} must be nonnegative", self.floor)));
        }
        if self.cadence.period() == 0 {
            return Err(DashError::config("decay period must be at least one epoch"));
        }
        Ok(())
    }

    pub fn is_active(&self, t: usize) -> bool {
        t > self.activation
    }

    pub fn threshold(&self, t: usize) -> f64 {
        threshold(t, self)
    }

    /// Number of completed decay periods at unit index `t` (0 before activation).
    pub fn decays(&self, t: usize) -> usize {
        if !self.is_active(t) {
            return 0;
        }
        (t - self.activation - 1) / self.cadence.period()
    }
}

pub fn threshold(t: usize, schedule: &ThresholdSchedule) -> f64 {
    if !schedule.is_active(t.max(1)) {
        return f64::INFINITY;
    }
    let k = schedule.decays(t.max(1));
    let raw = schedule.c * schedule.gamma.powi(-(k as i32)) * schedule.rho_hat;
    raw.max(schedule.floor)
}

/// Inclusive indicator `loss <= rho`.
pub fn select(losses: &[f64], rho: f64) -> Vec<bool> {
    losses.iter().map(|&l| l <= rho).collect()
}
