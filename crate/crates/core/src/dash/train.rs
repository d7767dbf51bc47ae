use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::schedule::{DecayCadence, ThresholdSchedule};
use super::schedule::{
    PRACTICE_ACTIVATION_EPOCHS, PRACTICE_C, PRACTICE_DECAY_EPOCHS, PRACTICE_FLOOR, PRACTICE_GAMMA,
};
use super::selection::{
    estimate_rho_hat_practical, evaluate_unlabeled, labeled_grad_sum, selected_sum, SelectionStats,
    UnlabeledEval, UnlabeledLoss,
};
use super::stage::{self, check_finite, GradientForm, Oracle, TheoryPlan, DEFAULT_N_CAP};
use crate::augment::{self, AugmentPolicy, Pipeline, Substreams};
use crate::data::{DatasetBundle, Example, MixtureStream};
use crate::models::{Architecture, Model};
use crate::rng::{self, tag, Rng};
use crate::{DashError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Growing batches `m * gamma^(t-1)`, per-iteration decay.
    Theory,
    /// Fixed batches, epoch-based decay, soft labels until the floor.
    Practice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// `eta * cos(7 pi k / (16 K))` over `K` selection steps.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, eta: f64, k: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => eta,
            LrSchedule::Cosine => {
                let frac = k as f64 / total.max(1) as f64;
                eta * (7.0 * std::f64::consts::PI * frac / 16.0).cos()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Algorithm {
    Dash,
    /// Fixed confidence threshold, loss on the strong view.
    FixMatch { tau: f64 },
    /// Fixed confidence threshold, loss on the labeling view.
    PseudoLabeling { tau: f64 },
    /// Dash selection on top of the pseudo-labeling pipeline.
    DashPl,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dash => "dash",
            Algorithm::FixMatch { .. } => "fixmatch",
            Algorithm::PseudoLabeling { .. } => "pseudo-labeling",
            Algorithm::DashPl => "dash-pl",
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        match self {
            Algorithm::Dash | Algorithm::FixMatch { .. } => Pipeline::FixMatch,
            Algorithm::PseudoLabeling { .. } | Algorithm::DashPl => Pipeline::PseudoLabeling,
        }
    }

    pub fn fixed_tau(&self) -> Option<f64> {
        match *self {
            Algorithm::FixMatch { tau } | Algorithm::PseudoLabeling { tau } => Some(tau),
            _ => None,
        }
    }
}

/// Threshold parameters; `rho_hat = None` estimates it after warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub c: f64,
    pub gamma: f64,
    pub floor: f64,
    pub activation: usize,
    pub cadence: DecayCadence,
    pub rho_hat: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            c: PRACTICE_C,
            gamma: PRACTICE_GAMMA,
            floor: PRACTICE_FLOOR,
            activation: PRACTICE_ACTIVATION_EPOCHS,
            cadence: DecayCadence::EveryNEpochs(PRACTICE_DECAY_EPOCHS),
            rho_hat: None,
        }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, rho_hat: f64) -> Result<ThresholdSchedule> {
        ThresholdSchedule::new(self.c, self.gamma, rho_hat, self.floor, self.activation, self.cadence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DashConfig {
    pub mode: Mode,
    pub algorithm: Algorithm,
    pub architecture: Architecture,
    pub eta0: f64,
    pub eta: f64,
    pub m0: usize,
    pub m: usize,
    #[serde(rename = "T0")]
    pub t0: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub schedule: ScheduleConfig,
    pub lambda_u: f64,
    pub gradient_form: GradientForm,
    pub sharpen_temperature: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub momentum: f64,
    pub augment: AugmentPolicy,
    /// Smoothness constant; when set, theory mode requires `eta * L <= 1`.
    pub smoothness: Option<f64>,
    pub n_cap: u64,
    pub seed: u64,
}

impl Default for DashConfig {
    fn default() -> Self {
        DashConfig {
            mode: Mode::Practice,
            algorithm: Algorithm::Dash,
            architecture: Architecture::Mlp { hidden: 32 },
            eta0: 0.06,
            eta: 0.06,
            m0: 16,
            m: 64,
            t0: 100,
            t: 800,
            schedule: ScheduleConfig::default(),
            lambda_u: 1.0,
            gradient_form: GradientForm::UnlabeledOnly,
            sharpen_temperature: 0.5,
            lr_schedule: LrSchedule::Cosine,
            weight_decay: 5e-4,
            momentum: 0.9,
            augment: AugmentPolicy::default(),
            smoothness: None,
            n_cap: DEFAULT_N_CAP,
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DashError::config(format!("{name} = {v} must be positive")))
    }
}

impl DashConfig {
    pub fn validate(&self) -> Result<()> {
        positive("eta0", self.eta0)?;
        positive("eta", self.eta)?;
        positive("sharpen_temperature", self.sharpen_temperature)?;
        if self.m0 == 0 || self.m == 0 {
            return Err(DashError::config("m0 and m must be at least 1"));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(DashError::config(format!("lambda_u = {} must be nonnegative", self.lambda_u)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(DashError::config("weight_decay must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DashError::config(format!("momentum = {} outside [0, 1)", self.momentum)));
        }
        if self.n_cap == 0 {
            return Err(DashError::config("n_cap must be at least 1"));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(DashError::config("mlp needs at least one hidden unit"));
        }
        self.augment.validate()?;
        if let Some(tau) = self.algorithm.fixed_tau() {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(DashError::config(format!("tau = {tau} outside (0, 1)")));
            }
        }
        if let Some(r) = self.schedule.rho_hat {
            positive("schedule.rho_hat", r)?;
        }
        self.schedule.resolve(1.0)?;
        if self.mode == Mode::Theory {
            if self.algorithm.fixed_tau().is_some() {
                return Err(DashError::config("theory mode runs dash or dash-pl only"));
            }
            if let Some(l) = self.smoothness {
                positive("smoothness", l)?;
                if self.eta0 * l > 1.0 || self.eta * l > 1.0 {
                    return Err(DashError::config(format!(
                        "step sizes must satisfy eta0 * L <= 1 and eta * L <= 1 (L = {l})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub rho_hat: f64,
    pub log: Vec<SelectionStats>,
}

fn labeled_refs(bundle: &DatasetBundle) -> Vec<&Example> {
    bundle.labeled.iter().collect()
}

/// Classifier-backed oracle drawing unlabeled examples with replacement.
pub struct ClassifierOracle<'a> {
    model: Model,
    bundle: &'a DatasetBundle,
    stream: MixtureStream<'a>,
    warm_rng: Rng,
    spec: UnlabeledLoss,
    seed: u64,
}

impl<'a> ClassifierOracle<'a> {
    pub fn new(model: Model, bundle: &'a DatasetBundle, spec: UnlabeledLoss, seed: u64) -> Result<Self> {
        Ok(ClassifierOracle {
            model,
            bundle,
            stream: MixtureStream::new(bundle, rng::derive_seed(seed, &[tag::SAMPLE]))?,
            warm_rng: rng::stream(seed, &[tag::WARMUP]),
            spec,
            seed,
        })
    }

    fn load(&mut self, w: &[f64]) {
        self.model.params_mut().copy_from_slice(w);
    }

    fn streams(&self, stage: u64, step: usize) -> Substreams {
        Substreams {
            seed: rng::derive_seed(self.seed, &[stage]),
            step: step as u64,
        }
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

impl Oracle for ClassifierOracle<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn warmup_batch(&mut self, w: &[f64], step: usize, size: usize) -> Result<(f64, Vec<f64>)> {
        self.load(w);
        let n = self.bundle.labeled.len();
        let batch: Vec<&Example> = (0..size)
            .map(|_| &self.bundle.labeled[self.warm_rng.random_range(0..n)])
            .collect();
        let (mut g, loss) = labeled_grad_sum(&self.model, &batch, &self.spec.policy, &self.streams(tag::WARMUP, step))?;
        g.iter_mut().for_each(|v| *v /= size as f64);
        Ok((loss, g))
    }

    fn unlabeled(&mut self, w: &[f64], step: usize, n: usize) -> Result<Vec<UnlabeledEval>> {
        self.load(w);
        let pool = &self.bundle.unlabeled;
        let batch: Vec<&Example> = (0..n).map(|_| &pool[self.stream.next_index()]).collect();
        evaluate_unlabeled(&self.model, &batch, &self.spec, &self.streams(tag::SAMPLE, step))
    }

    fn labeled_sum(&mut self, w: &[f64], step: usize) -> Result<(Vec<f64>, usize, f64)> {
        self.load(w);
        let labeled = labeled_refs(self.bundle);
        let (g, loss) = labeled_grad_sum(&self.model, &labeled, &self.spec.policy, &self.streams(tag::LABELED, step))?;
        Ok((g, labeled.len(), loss))
    }

    fn observe(&mut self, w: &[f64], row: &mut SelectionStats) -> Result<()> {
        self.load(w);
        row.test_error = test_error(&self.model, &self.bundle.test)?;
        Ok(())
    }
}

fn test_error(model: &Model, test: &[Example]) -> Result<f64> {
    if test.is_empty() {
        return Ok(f64::NAN);
    }
    model.error_rate(test.iter().filter_map(|e| e.true_label.map(|y| (e.x.as_slice(), y))))
}

/// Warm-up followed by the selection stage in the configured mode.
pub fn dash_train(bundle: &DatasetBundle, config: &DashConfig) -> Result<TrainOutput> {
    config.validate()?;
    bundle.validate()?;
    if bundle.labeled.is_empty() {
        return Err(DashError::input("labeled set is empty"));
    }
    if bundle.unlabeled.is_empty() {
        return Err(DashError::input("unlabeled set is empty"));
    }
    if let Some(tau) = config.algorithm.fixed_tau() {
        let k = bundle.num_classes as f64;
        if tau <= 1.0 / k {
            return Err(DashError::config(format!("tau = {tau} must exceed 1/K = {}", 1.0 / k)));
        }
    }
    let mut init = rng::stream(config.seed, &[tag::INIT]);
    let model = Model::init(config.architecture, bundle.input_dim, bundle.num_classes, &mut init)?;
    let spec = UnlabeledLoss {
        pipeline: config.algorithm.pipeline(),
        policy: config.augment,
        soft_temperature: None,
    };
    let mut oracle = ClassifierOracle::new(model, bundle, spec, config.seed)?;
    let w0 = oracle.model.params().values().to_vec();
    let w1 = stage::run_warmup(&mut oracle, &w0, config.eta0, config.t0, config.m0)?;
    oracle.load(&w1);
    let rho_hat = match config.schedule.rho_hat {
        Some(r) => r,
        None => estimate_rho_hat_practical(&oracle.model, &bundle.labeled)?.max(f64::MIN_POSITIVE),
    };
    let schedule = config.schedule.resolve(rho_hat)?;
    match config.mode {
        Mode::Theory => {
            let plan = TheoryPlan {
                m: config.m as u64,
                gamma: config.schedule.gamma,
                eta: config.eta,
                steps: config.t,
                schedule,
                gradient_form: config.gradient_form,
                n_cap: config.n_cap,
            };
            let (w, log) = stage::run_selection_stage(&mut oracle, &w1, &plan)?;
            oracle.load(&w);
            Ok(TrainOutput {
                model: oracle.into_model(),
                rho_hat,
                log,
            })
        }
        Mode::Practice => {
            let mut model = oracle.into_model();
            let log = train_practice(&mut model, bundle, config, &schedule)?;
            Ok(TrainOutput { model, rho_hat, log })
        }
    }
}

/// Number of selection steps per pass over the unlabeled pool.
pub fn steps_per_epoch(n_unlabeled: usize, batch: usize) -> usize {
    n_unlabeled.div_ceil(batch).max(1)
}

fn train_practice(
    model: &mut Model,
    bundle: &DatasetBundle,
    cfg: &DashConfig,
    schedule: &ThresholdSchedule,
) -> Result<Vec<SelectionStats>> {
    let n_u = bundle.unlabeled.len();
    let per_epoch = steps_per_epoch(n_u, cfg.m);
    let dim = model.num_params();
    let mut velocity = vec![0.0; dim];
    let mut order: Vec<usize> = Vec::new();
    let mut label_rng = rng::stream(cfg.seed, &[tag::LABELED]);
    let aug_seed = rng::derive_seed(cfg.seed, &[tag::SAMPLE]);
    let lab_seed = rng::derive_seed(cfg.seed, &[tag::LABELED]);
    let mut log = Vec::with_capacity(cfg.t);

    for t in 1..=cfg.t {
        let epoch = (t - 1) / per_epoch + 1;
        let pos = (t - 1) % per_epoch;
        if pos == 0 {
            order = (0..n_u).collect();
            order.shuffle(&mut rng::stream(cfg.seed, &[tag::SAMPLE, epoch as u64]));
        }
        let batch: Vec<&Example> = order[pos * cfg.m..((pos + 1) * cfg.m).min(n_u)]
            .iter()
            .map(|&i| &bundle.unlabeled[i])
            .collect();

        let tau = cfg.algorithm.fixed_tau();
        let rho = match tau {
            Some(tau) => -tau.ln(),
            None => schedule.threshold(epoch),
        };
        let soft = match tau {
            None if rho > schedule.floor => Some(cfg.sharpen_temperature),
            _ => None,
        };
        let spec = UnlabeledLoss {
            pipeline: cfg.algorithm.pipeline(),
            policy: cfg.augment,
            soft_temperature: soft,
        };
        let step_streams = |seed| Substreams { seed, step: t as u64 };
        let evals = evaluate_unlabeled(model, &batch, &spec, &step_streams(aug_seed))?;
        let mask: Vec<bool> = match tau {
            Some(tau) => evals
                .iter()
                .map(|e| augment::passes_confidence(e.confidence, tau))
                .collect(),
            None => evals.iter().map(|e| e.loss <= rho).collect(),
        };
        let trunc = selected_sum(&evals, &mask, dim);

        let labeled: Vec<&Example> = if bundle.labeled.len() <= cfg.m0 {
            bundle.labeled.iter().collect()
        } else {
            (0..cfg.m0)
                .map(|_| &bundle.labeled[label_rng.random_range(0..bundle.labeled.len())])
                .collect()
        };
        let (lsum, l_loss) = labeled_grad_sum(model, &labeled, &cfg.augment, &step_streams(lab_seed))?;
        let n_l = labeled.len() as f64;

        let mut g: Vec<f64> = match cfg.gradient_form {
            GradientForm::UnlabeledOnly => {
                let scale = cfg.lambda_u / batch.len() as f64;
                lsum.iter()
                    .zip(&trunc.grad)
                    .map(|(l, u)| l / n_l + scale * u)
                    .collect()
            }
            GradientForm::WithLabeled => {
                let denom = n_l + trunc.n_selected as f64;
                lsum.iter().zip(&trunc.grad).map(|(l, u)| (l + u) / denom).collect()
            }
        };
        let lr = cfg.lr_schedule.rate(cfg.eta, t - 1, cfg.t);
        let w = model.params_mut();
        for ((g, v), w) in g.iter_mut().zip(velocity.iter_mut()).zip(w.iter_mut()) {
            *g += cfg.weight_decay * *w;
            *v = cfg.momentum * *v + *g;
            *w -= lr * *v;
        }
        check_finite(model.params().values(), t)?;

        let mut row = SelectionStats::empty(t, epoch, rho);
        trunc.fill(&mut row, batch.len());
        row.labeled_loss = l_loss;
        row.lr = lr;
        row.test_error = test_error(model, &bundle.test)?;
        log.push(row);
    }
    Ok(log)
}
