//! Small differentiable classifiers with hand-derived gradients.
//!
//! Two architectures are supported: a softmax-linear model `z = W x + b` and a
//! one-hidden-layer network `z = W2 tanh(W1 x + b1) + b2`. Parameters live in a
//! single flat vector; [`ParamLayout`] records which slice belongs to which
//! weight block.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{DashError, Result};

/// Smallest probability fed to a logarithm.
pub const LOG_CLIP: f64 = 1e-30;

/// Tolerance on `sum(target) == 1`.
pub const TARGET_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Architecture {
    SoftmaxLinear,
    /// One hidden layer with tanh activation.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Maps contiguous slices of the flat parameter vector onto weight blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<Block>,
}

impl ParamLayout {
    fn from_shapes(shapes: &[(&'static str, usize, usize)]) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .iter()
            .map(|&(name, rows, cols)| {
                let b = Block {
                    name,
                    offset,
                    rows,
                    cols,
                };
                offset += rows * cols;
                b
            })
            .collect();
        ParamLayout { blocks }
    }

    pub fn for_architecture(arch: Architecture, input_dim: usize, num_classes: usize) -> Self {
        match arch {
            Architecture::SoftmaxLinear => {
                Self::from_shapes(&[("w", num_classes, input_dim), ("b", num_classes, 1)])
            }
            Architecture::Mlp { hidden } => Self::from_shapes(&[
                ("w1", hidden, input_dim),
                ("b1", hidden, 1),
                ("w2", num_classes, hidden),
                ("b2", num_classes, 1),
            ]),
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flat parameter vector together with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(DashError::input(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.total_len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DashError::input(format!("parameter {i} is not finite")));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    params: ParamVector,
}

impl Model {
    fn check_shape(arch: Architecture, input_dim: usize, num_classes: usize) -> Result<()> {
        if input_dim == 0 {
            return Err(DashError::input("input dimension must be positive"));
        }
        if num_classes < 2 {
            return Err(DashError::input("need at least two classes"));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(DashError::input("hidden width must be positive"));
        }
        Ok(())
    }

    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::check_shape(arch, input_dim, num_classes)?;
        let layout = ParamLayout::for_architecture(arch, input_dim, num_classes);
        let params = ParamVector::new(vec![0.0; layout.total_len()], layout)?;
        Ok(Model {
            arch,
            input_dim,
            num_classes,
            params,
        })
    }

    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per block.
    pub fn init(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(arch, input_dim, num_classes)?;
        let fan_ins: Vec<usize> = match arch {
            Architecture::SoftmaxLinear => vec![input_dim, input_dim],
            Architecture::Mlp { hidden } => vec![input_dim, input_dim, hidden, hidden],
        };
        let blocks = model.params.layout.blocks.clone();
        for (block, fan_in) in blocks.iter().zip(fan_ins) {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut model.params.values[block.range()] {
                *v = rng.random_range(-s..=s);
            }
        }
        Ok(model)
    }

    pub fn with_params(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::check_shape(arch, input_dim, num_classes)?;
        let layout = ParamLayout::for_architecture(arch, input_dim, num_classes);
        let params = ParamVector::new(values, layout)?;
        Ok(Model {
            arch,
            input_dim,
            num_classes,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(DashError::input(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Hidden activations (empty for the linear model) and logits.
    fn activations(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params.values;
        let d = self.input_dim;
        let k = self.num_classes;
        match self.arch {
            Architecture::SoftmaxLinear => {
                let (w, b) = p.split_at(k * d);
                (Vec::new(), affine(w, b, x, k))
            }
            Architecture::Mlp { hidden } => {
                let (w1, rest) = p.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(k * hidden);
                let mut h = affine(w1, b1, x, hidden);
                h.iter_mut().for_each(|v| *v = v.tanh());
                let z = affine(w2, b2, &h, k);
                (h, z)
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).1)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(x)?))
    }

    /// Loss of one example; adds `scale * grad` into `grad_acc`.
    pub fn accumulate_loss_grad(
        &self,
        x: &[f64],
        target: &[f64],
        scale: f64,
        grad_acc: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x)?;
        if grad_acc.len() != self.num_params() {
            return Err(DashError::input("gradient buffer has the wrong length"));
        }
        let (h, z) = self.activations(x);
        let loss = cross_entropy(target, &z)?;
        // d loss / d z = softmax(z) - target, since target sums to one.
        let dz: Vec<f64> = softmax(&z)
            .iter()
            .zip(target)
            .map(|(p, t)| scale * (p - t))
            .collect();

        let d = self.input_dim;
        let k = self.num_classes;
        match self.arch {
            Architecture::SoftmaxLinear => {
                let (gw, gb) = grad_acc.split_at_mut(k * d);
                outer_acc(gw, &dz, x);
                gb.iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
            }
            Architecture::Mlp { hidden } => {
                let w2 = &self.params.values[hidden * d + hidden..hidden * d + hidden + k * hidden];
                let (gw1, rest) = grad_acc.split_at_mut(hidden * d);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(k * hidden);
                outer_acc(gw2, &dz, &h);
                gb2.iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
                let da: Vec<f64> = (0..hidden)
                    .map(|j| {
                        let back: f64 = (0..k).map(|c| w2[c * hidden + j] * dz[c]).sum();
                        back * (1.0 - h[j] * h[j])
                    })
                    .collect();
                outer_acc(gw1, &da, x);
                gb1.iter_mut().zip(&da).for_each(|(g, v)| *g += v);
            }
        }
        Ok(loss)
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], &[f64])]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(DashError::input("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut total = 0.0;
        for (x, t) in batch {
            total += self.accumulate_loss_grad(x, t, scale, &mut grad)?;
        }
        Ok((total * scale, grad))
    }

    pub fn batch_loss(&self, batch: &[(&[f64], &[f64])]) -> Result<f64> {
        if batch.is_empty() {
            return Err(DashError::input("empty batch"));
        }
        let mut total = 0.0;
        for (x, t) in batch {
            total += cross_entropy(t, &self.forward(x)?)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Fraction of examples whose argmax prediction differs from the label.
    pub fn error_rate<'a>(&self, examples: impl IntoIterator<Item = (&'a [f64], usize)>) -> Result<f64> {
        let mut n = 0usize;
        let mut wrong = 0usize;
        for (x, y) in examples {
            n += 1;
            if argmax(&self.forward(x)?) != y {
                wrong += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { wrong as f64 / n as f64 })
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            w[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .fold(b[r], |acc, (wi, xi)| acc + wi * xi)
        })
        .collect()
}

fn outer_acc(acc: &mut [f64], left: &[f64], right: &[f64]) {
    let cols = right.len();
    for (r, l) in left.iter().enumerate() {
        for (a, rv) in acc[r * cols..(r + 1) * cols].iter_mut().zip(right) {
            *a += l * rv;
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DashError::input("distribution has a negative or non-finite entry"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > TARGET_SUM_TOL {
        return Err(DashError::input(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// `-sum_k target_k * log softmax(logits)_k`, stabilised by max-subtraction.
pub fn cross_entropy(target: &[f64], logits: &[f64]) -> Result<f64> {
    if target.len() != logits.len() {
        return Err(DashError::input(format!(
            "target has {} classes, logits have {}",
            target.len(),
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(DashError::input("non-finite logit"));
    }
    validate_distribution(target)?;
    let lse = log_sum_exp(logits);
    let min_log = LOG_CLIP.ln();
    let loss: f64 = target
        .iter()
        .zip(logits)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, z)| -t * (z - lse).max(min_log))
        .sum();
    // Rounding in `lse` can leave a loss of order -1e-17 for saturated logits.
    Ok(loss.max(0.0))
}

pub fn one_hot(k: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[k] = 1.0;
    v
}

/// Worst coordinate-wise discrepancy between the analytic gradient and central
/// differences. Relative error is used unless `max(|analytic|, |numeric|)` is
/// below `1e-12`, in which case the absolute error is reported.
pub fn finite_diff_check(model: &Model, batch: &[(&[f64], &[f64])], step: f64) -> Result<f64> {
    if !(step > 1e-8 && step < 1e-2) {
        return Err(DashError::input(format!("step {step} outside (1e-8, 1e-2)")));
    }
    let (_, analytic) = model.loss_and_grad(batch)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.params.values[i];
        probe.params.values[i] = orig + step;
        let up = probe.batch_loss(batch)?;
        probe.params.values[i] = orig - step;
        let down = probe.batch_loss(batch)?;
        probe.params.values[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = a.abs().max(numeric.abs());
        let err = if denom < 1e-12 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / denom
        };
        worst = worst.max(err);
    }
    Ok(worst)
}
