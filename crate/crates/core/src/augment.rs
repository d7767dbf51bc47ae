//! Perturbations, pseudo labels and the fixed-confidence baseline loss.
//!
//! Weak augmentation adds isotropic Gaussian noise. Strong augmentation adds
//! larger noise and then zeroes coordinates at random. The pseudo label of an
//! unlabeled point comes from the weak view; its loss is measured on the
//! strong view (FixMatch pipeline) or on the same weak view (Pseudo-Labeling
//! pipeline).

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::models::{self, argmax, Model};
use crate::rng::{self, Rng};
use crate::{DashError, Result};

/// FixMatch's default confidence threshold.
pub const DEFAULT_TAU: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub strong_mask_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            weak_noise: 0.05,
            strong_noise: 0.15,
            strong_mask_prob: 0.1,
        }
    }
}

impl AugmentPolicy {
    pub fn new(weak_noise: f64, strong_noise: f64, strong_mask_prob: f64) -> Result<Self> {
        let p = AugmentPolicy {
            weak_noise,
            strong_noise,
            strong_mask_prob,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        AugmentPolicy {
            weak_noise: 0.0,
            strong_noise: 0.0,
            strong_mask_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weak_noise >= 0.0 && self.weak_noise <= self.strong_noise && self.strong_noise.is_finite()) {
            return Err(DashError::config(format!(
                "need 0 <= weak_noise ({}) <= strong_noise ({})",
                self.weak_noise, self.strong_noise
            )));
        }
        if !(0.0..=0.5).contains(&self.strong_mask_prob) {
            return Err(DashError::config(format!(
                "strong_mask_prob {} outside [0, 0.5]",
                self.strong_mask_prob
            )));
        }
        Ok(())
    }
}

fn add_gaussian(x: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    x.iter().map(|v| v + n.sample(rng)).collect()
}

pub fn weak_augment(x: &[f64], policy: &AugmentPolicy, rng: &mut Rng) -> Vec<f64> {
    add_gaussian(x, policy.weak_noise, rng)
}

pub fn strong_augment(x: &[f64], policy: &AugmentPolicy, rng: &mut Rng) -> Vec<f64> {
    let mut out = add_gaussian(x, policy.strong_noise, rng);
    if policy.strong_mask_prob > 0.0 {
        for v in &mut out {
            if rng.random::<f64>() < policy.strong_mask_prob {
                *v = 0.0;
            }
        }
    }
    out
}

/// `p_k^(1/T) / sum_j p_j^(1/T)`, evaluated in the log domain.
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DashError::input(format!("temperature {temperature} must be positive")));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(DashError::input("sharpen needs a nonnegative vector"));
    }
    if temperature == 1.0 {
        if p.iter().all(|v| *v == 0.0) {
            return Err(DashError::input("cannot sharpen a zero vector"));
        }
        return Ok(p.to_vec());
    }
    let logs: Vec<f64> = p
        .iter()
        .map(|&v| if v > 0.0 { v.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DashError::input("cannot sharpen a zero vector"));
    }
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    /// Possibly sharpened soft label.
    pub distribution: Vec<f64>,
    pub hard_index: usize,
    /// Largest entry of the prediction before sharpening.
    pub confidence: f64,
}

impl PseudoLabel {
    pub fn from_prediction(h: &[f64], temperature: f64) -> Result<Self> {
        let distribution = sharpen(h, temperature)?;
        Ok(PseudoLabel {
            hard_index: argmax(&distribution),
            confidence: h[argmax(h)],
            distribution,
        })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        models::one_hot(self.hard_index, self.distribution.len())
    }
}

/// Pseudo label from the softmax prediction on a weak view of `x`.
pub fn pseudo_label(
    model: &Model,
    x: &[f64],
    policy: &AugmentPolicy,
    rng: &mut Rng,
    temperature: f64,
) -> Result<PseudoLabel> {
    let h = model.predict_proba(&weak_augment(x, policy, rng))?;
    PseudoLabel::from_prediction(&h, temperature)
}

/// `I(max h >= tau)`.
pub fn passes_confidence(confidence: f64, tau: f64) -> bool {
    confidence >= tau
}

/// The same indicator written as a one-hot cross-entropy against `-log tau`.
pub fn passes_neg_log(confidence: f64, tau: f64) -> bool {
    -confidence.ln() <= -tau.ln()
}

/// Which model produces pseudo labels and on which view the loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Label from the weak view, loss on a strong view.
    FixMatch,
    /// Label and loss on the same weak view.
    PseudoLabeling,
}

/// Per-example random streams for one training step.
#[derive(Debug, Clone, Copy)]
pub struct Substreams {
    pub seed: u64,
    pub step: u64,
}

impl Substreams {
    pub fn weak(&self, example: u64) -> Rng {
        rng::stream(self.seed, &[rng::tag::WEAK, self.step, example])
    }

    pub fn strong(&self, example: u64) -> Rng {
        rng::stream(self.seed, &[rng::tag::STRONG, self.step, example])
    }

    /// Weak view of a labeled example.
    pub fn labeled(&self, example: u64) -> Rng {
        rng::stream(self.seed, &[rng::tag::LABELED, self.step, example])
    }
}

/// Everything needed to evaluate the unsupervised loss of one unlabeled point.
#[derive(Debug, Clone)]
pub struct UnlabeledTerm {
    pub label: PseudoLabel,
    /// Soft (sharpened) or one-hot target fed to the cross-entropy.
    pub target: Vec<f64>,
    /// The view on which the loss is evaluated.
    pub loss_input: Vec<f64>,
}

/// `soft_temperature = Some(T)` uses the sharpened soft label as target;
/// `None` uses the one-hot pseudo label.
pub fn prepare_unlabeled(
    model: &Model,
    x: &[f64],
    pipeline: Pipeline,
    policy: &AugmentPolicy,
    soft_temperature: Option<f64>,
    streams: &Substreams,
    example: u64,
) -> Result<UnlabeledTerm> {
    let weak = weak_augment(x, policy, &mut streams.weak(example));
    let h = model.predict_proba(&weak)?;
    let label = PseudoLabel::from_prediction(&h, soft_temperature.unwrap_or(1.0))?;
    let target = match soft_temperature {
        Some(_) => label.distribution.clone(),
        None => label.one_hot(),
    };
    let loss_input = match pipeline {
        Pipeline::FixMatch => strong_augment(x, policy, &mut streams.strong(example)),
        Pipeline::PseudoLabeling => weak,
    };
    Ok(UnlabeledTerm {
        label,
        target,
        loss_input,
    })
}

/// Fixed-threshold unsupervised loss: mean one-hot cross-entropy on the strong
/// view over examples whose weak-view confidence reaches `tau`. Returns the
/// mean over selected examples (0 when none) and the count.
pub fn fixmatch_unsup_loss(
    model: &Model,
    batch: &[&[f64]],
    tau: f64,
    policy: &AugmentPolicy,
    streams: &Substreams,
) -> Result<(f64, usize)> {
    let k = model.num_classes() as f64;
    if !(tau > 1.0 / k && tau < 1.0) {
        return Err(DashError::input(format!("tau {tau} outside (1/K, 1)")));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (i, x) in batch.iter().enumerate() {
        let term = prepare_unlabeled(model, x, Pipeline::FixMatch, policy, None, streams, i as u64)?;
        if passes_confidence(term.label.confidence, tau) {
            total += models::cross_entropy(&term.target, &model.forward(&term.loss_input)?)?;
            count += 1;
        }
    }
    let mean = if count == 0 { 0.0 } else { total / count as f64 };
    Ok((mean, count))
}
