use crate::augment::{self, AugmentPolicy, Pipeline, Substreams};
use crate::data::{Example, Provenance};
use crate::models::{self, Model};
use crate::{DashError, Result};

/// One row of the training log.
///
/// The count fields satisfy `n_selected = n_sel_p + n_sel_q =
/// n_sel_correct + n_sel_wrong <= n_sampled`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStats {
    pub step: usize,
    pub epoch: usize,
    pub rho_t: f64,
    pub n_sampled: usize,
    pub n_selected: usize,
    pub n_sel_correct: usize,
    pub n_sel_wrong: usize,
    pub n_sel_p: usize,
    pub n_sel_q: usize,
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub test_error: f64,
    pub lr: f64,
}

impl SelectionStats {
    pub fn empty(step: usize, epoch: usize, rho_t: f64) -> Self {
        SelectionStats {
            step,
            epoch,
            rho_t,
            n_sampled: 0,
            n_selected: 0,
            n_sel_correct: 0,
            n_sel_wrong: 0,
            n_sel_p: 0,
            n_sel_q: 0,
            labeled_loss: f64::NAN,
            unlabeled_loss: 0.0,
            test_error: f64::NAN,
            lr: f64::NAN,
        }
    }

    /// No unlabeled example passed the threshold at this step.
    pub fn is_empty_selection(&self) -> bool {
        self.n_selected == 0
    }

    pub fn counts_consistent(&self) -> bool {
        self.n_selected == self.n_sel_p + self.n_sel_q
            && self.n_selected == self.n_sel_correct + self.n_sel_wrong
            && self.n_selected <= self.n_sampled
    }
}

/// Loss and gradient of one unlabeled draw, with its diagnostics.
#[derive(Debug, Clone)]
pub struct UnlabeledEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub provenance: Provenance,
    /// Pseudo label equals the (hidden) true label.
    pub pseudo_correct: bool,
    /// Weak-view confidence before sharpening.
    pub confidence: f64,
}

/// Result of combining a batch of evaluations under a threshold.
#[derive(Debug, Clone)]
pub struct Truncated {
    pub grad: Vec<f64>,
    pub n_selected: usize,
    pub n_correct: usize,
    pub n_p: usize,
    pub n_q: usize,
    /// Mean loss over selected draws, 0 when none.
    pub mean_selected_loss: f64,
}

impl Truncated {
    pub fn fill(&self, stats: &mut SelectionStats, n_sampled: usize) {
        stats.n_sampled = n_sampled;
        stats.n_selected = self.n_selected;
        stats.n_sel_correct = self.n_correct;
        stats.n_sel_wrong = self.n_selected - self.n_correct;
        stats.n_sel_p = self.n_p;
        stats.n_sel_q = self.n_q;
        stats.unlabeled_loss = self.mean_selected_loss;
    }
}

/// Raw gradient sum over the draws whose `mask` entry is set, with counts.
pub fn selected_sum(evals: &[UnlabeledEval], mask: &[bool], dim: usize) -> Truncated {
    let mut out = Truncated {
        grad: vec![0.0; dim],
        n_selected: 0,
        n_correct: 0,
        n_p: 0,
        n_q: 0,
        mean_selected_loss: 0.0,
    };
    let mut loss_sum = 0.0;
    for (e, _) in evals.iter().zip(mask).filter(|(_, m)| **m) {
        out.grad.iter_mut().zip(&e.grad).for_each(|(g, v)| *g += v);
        loss_sum += e.loss;
        out.n_selected += 1;
        out.n_correct += usize::from(e.pseudo_correct);
        match e.provenance {
            Provenance::UnlabeledQ => out.n_q += 1,
            _ => out.n_p += 1,
        }
    }
    if out.n_selected > 0 {
        out.mean_selected_loss = loss_sum / out.n_selected as f64;
    }
    out
}

fn loss_mask(evals: &[UnlabeledEval], rho: f64) -> Vec<bool> {
    let losses: Vec<f64> = evals.iter().map(|e| e.loss).collect();
    super::select(&losses, rho)
}

/// Mean gradient over draws with `loss <= rho`; the zero vector when none pass.
pub fn truncated_mean(evals: &[UnlabeledEval], rho: f64, dim: usize) -> Truncated {
    let mut t = selected_sum(evals, &loss_mask(evals, rho), dim);
    if t.n_selected > 0 {
        let n = t.n_selected as f64;
        t.grad.iter_mut().for_each(|g| *g /= n);
    }
    t
}

/// Selected unlabeled gradients plus every labeled gradient, divided by
/// `N_l + n_selected`.
pub fn truncated_mean_with_labeled(
    evals: &[UnlabeledEval],
    labeled_grad_sum: &[f64],
    n_labeled: usize,
    rho: f64,
) -> Truncated {
    let mut t = selected_sum(evals, &loss_mask(evals, rho), labeled_grad_sum.len());
    let denom = n_labeled + t.n_selected;
    if denom > 0 {
        let n = denom as f64;
        t.grad
            .iter_mut()
            .zip(labeled_grad_sum)
            .for_each(|(g, l)| *g = (*g + l) / n);
    }
    t
}

/// How the unsupervised loss of an unlabeled point is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlabeledLoss {
    pub pipeline: Pipeline,
    pub policy: AugmentPolicy,
    /// `Some(T)`: sharpened soft label at temperature `T`; `None`: one-hot.
    pub soft_temperature: Option<f64>,
}

impl UnlabeledLoss {
    pub fn fixmatch(policy: AugmentPolicy) -> Self {
        UnlabeledLoss {
            pipeline: Pipeline::FixMatch,
            policy,
            soft_temperature: None,
        }
    }
}

/// Pseudo labels the batch with the current model and evaluates each loss and
/// gradient. Each example uses its own random substreams, so the result does
/// not depend on evaluation order.
pub fn evaluate_unlabeled(
    model: &Model,
    batch: &[&Example],
    spec: &UnlabeledLoss,
    streams: &Substreams,
) -> Result<Vec<UnlabeledEval>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let term = augment::prepare_unlabeled(
                model,
                &ex.x,
                spec.pipeline,
                &spec.policy,
                spec.soft_temperature,
                streams,
                i as u64,
            )?;
            let mut grad = vec![0.0; model.num_params()];
            let loss = model.accumulate_loss_grad(&term.loss_input, &term.target, 1.0, &mut grad)?;
            Ok(UnlabeledEval {
                loss,
                grad,
                provenance: ex.provenance(),
                pseudo_correct: ex.true_label == Some(term.label.hard_index),
                confidence: term.label.confidence,
            })
        })
        .collect()
}

/// Sum of supervised gradients (weak view, true one-hot labels) and the mean
/// supervised loss over `labeled`.
pub fn labeled_grad_sum(
    model: &Model,
    labeled: &[&Example],
    policy: &AugmentPolicy,
    streams: &Substreams,
) -> Result<(Vec<f64>, f64)> {
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (i, ex) in labeled.iter().enumerate() {
        let y = ex
            .true_label
            .ok_or_else(|| DashError::input("labeled example without label"))?;
        let x = augment::weak_augment(&ex.x, policy, &mut streams.labeled(i as u64));
        loss += model.accumulate_loss_grad(&x, &models::one_hot(y, model.num_classes()), 1.0, &mut grad)?;
    }
    let mean = if labeled.is_empty() {
        0.0
    } else {
        loss / labeled.len() as f64
    };
    Ok((grad, mean))
}

/// Truncated stochastic gradient over an unlabeled batch (unlabeled-only form).
pub fn truncated_gradient(
    model: &Model,
    batch: &[&Example],
    rho: f64,
    spec: &UnlabeledLoss,
    streams: &Substreams,
) -> Result<(Vec<f64>, SelectionStats)> {
    if batch.is_empty() {
        return Err(DashError::input("empty unlabeled batch"));
    }
    let evals = evaluate_unlabeled(model, batch, spec, streams)?;
    let t = truncated_mean(&evals, rho, model.num_params());
    let mut stats = SelectionStats::empty(streams.step as usize, 0, rho);
    t.fill(&mut stats, batch.len());
    Ok((t.grad, stats))
}

/// Truncated stochastic gradient that also folds in every labeled example.
pub fn truncated_gradient_with_labeled(
    model: &Model,
    batch: &[&Example],
    labeled: &[&Example],
    rho: f64,
    spec: &UnlabeledLoss,
    streams: &Substreams,
) -> Result<(Vec<f64>, SelectionStats)> {
    if batch.is_empty() {
        return Err(DashError::config(format!(
            "batch of {} holds no unlabeled draws beyond the {} labeled examples",
            labeled.len(),
            labeled.len()
        )));
    }
    let evals = evaluate_unlabeled(model, batch, spec, streams)?;
    let (lsum, lloss) = labeled_grad_sum(model, labeled, &spec.policy, streams)?;
    let t = truncated_mean_with_labeled(&evals, &lsum, labeled.len(), rho);
    let mut stats = SelectionStats::empty(streams.step as usize, 0, rho);
    t.fill(&mut stats, batch.len());
    if !labeled.is_empty() {
        stats.labeled_loss = lloss;
    }
    Ok((t.grad, stats))
}

/// Mean supervised loss of `model` over the labeled set, without augmentation.
pub fn estimate_rho_hat_practical(model: &Model, labeled: &[Example]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(DashError::input("labeled set is empty"));
    }
    let mut total = 0.0;
    for ex in labeled {
        let y = ex
            .true_label
            .ok_or_else(|| DashError::input("labeled example without label"))?;
        total += models::cross_entropy(&models::one_hot(y, model.num_classes()), &model.forward(&ex.x)?)?;
    }
    Ok(total / labeled.len() as f64)
}
