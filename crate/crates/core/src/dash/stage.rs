use serde::{Deserialize, Serialize};

use super::selection::{truncated_mean, truncated_mean_with_labeled, SelectionStats, UnlabeledEval};
use super::schedule::ThresholdSchedule;
use crate::{DashError, Result};

/// Default upper bound on the theory-mode batch size.
pub const DEFAULT_N_CAP: u64 = 1 << 20;

/// Which truncated gradient the selection stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientForm {
    /// Mean over selected unlabeled draws only.
    UnlabeledOnly,
    /// Selected unlabeled draws pooled with the whole labeled set.
    WithLabeled,
}

/// Source of stochastic losses and gradients for the two stages.
///
/// Parameters are flat vectors; implementors decide how to interpret them.
pub trait Oracle {
    fn dim(&self) -> usize;

    /// Mean supervised loss and gradient over `size` fresh labeled draws.
    fn warmup_batch(&mut self, w: &[f64], step: usize, size: usize) -> Result<(f64, Vec<f64>)>;

    /// Evaluates `n` fresh unlabeled draws at `w`.
    fn unlabeled(&mut self, w: &[f64], step: usize, n: usize) -> Result<Vec<UnlabeledEval>>;

    /// Gradient sum, count and mean loss over the whole labeled set.
    fn labeled_sum(&mut self, w: &[f64], step: usize) -> Result<(Vec<f64>, usize, f64)>;

    /// Maps an iterate back into the feasible domain.
    fn project(&self, _w: &mut [f64]) {}

    /// Fills diagnostic columns of `row` after the update to `w`.
    fn observe(&mut self, _w: &[f64], _row: &mut SelectionStats) -> Result<()> {
        Ok(())
    }
}

/// `n_t = ceil(m * gamma^(t-1))`, with a small tolerance so exact powers do
/// not round up.
pub fn batch_size(m: u64, gamma: f64, t: usize) -> f64 {
    let raw = m as f64 * gamma.powi(t as i32 - 1);
    (raw - 1e-9 * raw.max(1.0)).ceil()
}

/// Total draws consumed by both stages and the closed-form upper bound
/// `T0 m0 + m gamma^T / (gamma - 1)`.
pub fn sample_complexity(t0: usize, m0: usize, m: u64, gamma: f64, steps: usize) -> (f64, f64) {
    let warm = (t0 * m0) as f64;
    let exact: f64 = (1..=steps).map(|t| batch_size(m, gamma, t)).sum();
    let bound = m as f64 * gamma.powi(steps as i32) / (gamma - 1.0);
    (warm + exact, warm + bound)
}

/// Runs `steps` plain SGD steps on labeled draws and returns the last iterate.
pub fn run_warmup<O: Oracle>(
    oracle: &mut O,
    w0: &[f64],
    eta0: f64,
    steps: usize,
    batch: usize,
) -> Result<Vec<f64>> {
    let mut w = w0.to_vec();
    for step in 1..=steps {
        let (loss, g) = oracle.warmup_batch(&w, step, batch)?;
        if !loss.is_finite() {
            return Err(DashError::Divergence {
                step,
                detail: format!("warm-up loss {loss}"),
            });
        }
        w.iter_mut().zip(&g).for_each(|(w, g)| *w -= eta0 * g);
        oracle.project(&mut w);
        check_finite(&w, step)?;
    }
    Ok(w)
}

pub(crate) fn check_finite(w: &[f64], step: usize) -> Result<()> {
    match w.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(DashError::Divergence {
            step,
            detail: format!("parameter {i} is {}", w[i]),
        }),
    }
}

/// Selection stage with geometrically growing batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryPlan {
    pub m: u64,
    pub gamma: f64,
    pub eta: f64,
    pub steps: usize,
    pub schedule: ThresholdSchedule,
    pub gradient_form: GradientForm,
    pub n_cap: u64,
}

impl TheoryPlan {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(DashError::config("m must be at least 1"));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(DashError::config(format!("gamma = {} must exceed 1", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(DashError::config(format!("eta = {} must be positive", self.eta)));
        }
        self.schedule.validate()
    }

    pub fn batch_size(&self, t: usize) -> Result<u64> {
        let n = batch_size(self.m, self.gamma, t);
        if n > self.n_cap as f64 {
            return Err(DashError::CapExceeded {
                t,
                n_t: if n >= u64::MAX as f64 { u64::MAX } else { n as u64 },
                cap: self.n_cap,
            });
        }
        Ok(n as u64)
    }
}

/// Runs the selection stage from `w1`, one log row per iteration.
pub fn run_selection_stage<O: Oracle>(
    oracle: &mut O,
    w1: &[f64],
    plan: &TheoryPlan,
) -> Result<(Vec<f64>, Vec<SelectionStats>)> {
    plan.validate()?;
    let mut w = w1.to_vec();
    let mut log = Vec::with_capacity(plan.steps);
    for t in 1..=plan.steps {
        let n_t = plan.batch_size(t)? as usize;
        let rho = plan.schedule.threshold(t);
        let mut row = SelectionStats::empty(t, t, rho);
        row.lr = plan.eta;
        let (g, n_sampled, trunc) = match plan.gradient_form {
            GradientForm::UnlabeledOnly => {
                let evals = oracle.unlabeled(&w, t, n_t)?;
                let tr = truncated_mean(&evals, rho, w.len());
                (tr.grad.clone(), n_t, tr)
            }
            GradientForm::WithLabeled => {
                let (lsum, n_l, l_loss) = oracle.labeled_sum(&w, t)?;
                if n_t <= n_l {
                    return Err(DashError::config(format!(
                        "step {t}: batch size {n_t} does not exceed the {n_l} labeled examples"
                    )));
                }
                row.labeled_loss = l_loss;
                let evals = oracle.unlabeled(&w, t, n_t - n_l)?;
                let tr = truncated_mean_with_labeled(&evals, &lsum, n_l, rho);
                (tr.grad.clone(), n_t - n_l, tr)
            }
        };
        trunc.fill(&mut row, n_sampled);
        w.iter_mut().zip(&g).for_each(|(w, g)| *w -= plan.eta * g);
        oracle.project(&mut w);
        check_finite(&w, t)?;
        oracle.observe(&w, &mut row)?;
        log.push(row);
    }
    Ok((w, log))
}
