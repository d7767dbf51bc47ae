use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::constants::TheoryConstants;
use super::problem::{PLProblem, QDistribution, TsybakovEstimate};
use crate::dash::{self, GradientForm, Oracle, SelectionStats, ThresholdSchedule, TheoryPlan, UnlabeledEval};
use crate::data::Provenance;
use crate::rng::{self, tag, Rng};
use crate::{DashError, Result};

/// Live mixture `q P + (1 - q) Q` over a quadratic problem. Labeled draws
/// come from P. Log rows carry `F(w)` in the `test_error` column.
pub struct MixtureOracle<'a> {
    problem: &'a PLProblem,
    q_dist: &'a QDistribution,
    q: f64,
    rng: Rng,
    /// Number of draws consumed so far, both stages included.
    pub draws: u64,
}

impl<'a> MixtureOracle<'a> {
    pub fn new(problem: &'a PLProblem, q_dist: &'a QDistribution, q: f64, seed: u64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(DashError::input(format!("q = {q} outside (0, 1]")));
        }
        if q_dist.shift.len() != problem.dim() {
            return Err(DashError::input("Q distribution does not match the problem dimension"));
        }
        Ok(MixtureOracle {
            problem,
            q_dist,
            q,
            rng: rng::stream(seed, &[tag::SAMPLE]),
            draws: 0,
        })
    }

    /// Mean loss of `n` P draws at `w`.
    pub fn practical_rho_hat(&mut self, w: &[f64], n: usize) -> f64 {
        self.draws += n as u64;
        (0..n).map(|_| self.problem.sample(w, &mut self.rng).0).sum::<f64>() / n.max(1) as f64
    }
}

impl Oracle for MixtureOracle<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn warmup_batch(&mut self, w: &[f64], _step: usize, size: usize) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; w.len()];
        let mut loss = 0.0;
        for _ in 0..size {
            let (l, gi) = self.problem.sample(w, &mut self.rng);
            loss += l;
            g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
        }
        self.draws += size as u64;
        let n = size.max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        Ok((loss / n, g))
    }

    fn unlabeled(&mut self, w: &[f64], _step: usize, n: usize) -> Result<Vec<UnlabeledEval>> {
        self.draws += n as u64;
        Ok((0..n)
            .map(|_| {
                let from_p = self.rng.random::<f64>() < self.q;
                let (loss, grad) = if from_p {
                    self.problem.sample(w, &mut self.rng)
                } else {
                    self.q_dist.sample(self.problem, w, &mut self.rng)
                };
                UnlabeledEval {
                    loss,
                    grad,
                    provenance: if from_p {
                        Provenance::UnlabeledP
                    } else {
                        Provenance::UnlabeledQ
                    },
                    pseudo_correct: from_p,
                    confidence: f64::NAN,
                }
            })
            .collect())
    }

    fn labeled_sum(&mut self, w: &[f64], _step: usize) -> Result<(Vec<f64>, usize, f64)> {
        Ok((vec![0.0; w.len()], 0, f64::NAN))
    }

    fn project(&self, w: &mut [f64]) {
        self.problem.project(w);
    }

    fn observe(&mut self, w: &[f64], row: &mut SelectionStats) -> Result<()> {
        row.test_error = self.problem.objective(w);
        Ok(())
    }
}

/// Per-seed trajectory and bound checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub seed: u64,
    pub steps: Vec<usize>,
    #[serde(rename = "A_rho")]
    pub a_rho: Vec<usize>,
    #[serde(rename = "B_rho")]
    pub b_rho: Vec<usize>,
    /// `F(w_{t+1})` after each step.
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    /// `rho_hat gamma^-t`.
    pub envelope: Vec<f64>,
    pub pass_envelope: bool,
    #[serde(rename = "pass_A")]
    pub pass_a: bool,
    #[serde(rename = "pass_B")]
    pub pass_b: bool,
}

impl SeedRecord {
    /// Selected P counts never shrink from one step to the next.
    pub fn a_nondecreasing(&self) -> bool {
        self.a_rho.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsybakovFit {
    pub estimates: Vec<TsybakovEstimate>,
    pub b: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundReport {
    pub constants: TheoryConstants,
    #[serde(rename = "T")]
    pub t: usize,
    /// `a0 m gamma^(t-1)` per step.
    #[serde(rename = "A_bound")]
    pub a_bound: Vec<f64>,
    /// `b0 m`.
    #[serde(rename = "B_bound")]
    pub b_bound: f64,
    /// Draws consumed per seed and the closed-form bound on that count.
    pub samples_used: u64,
    pub sample_bound: f64,
    pub runs: Vec<SeedRecord>,
    pub pass_fraction_envelope: f64,
    #[serde(rename = "pass_fraction_A")]
    pub pass_fraction_a: f64,
    #[serde(rename = "pass_fraction_B")]
    pub pass_fraction_b: f64,
    #[serde(rename = "A_nondecreasing_fraction")]
    pub a_nondecreasing_fraction: f64,
    #[serde(rename = "B_below_twice_bound_fraction")]
    pub b_below_twice_bound_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsybakov: Option<TsybakovFit>,
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| DashError::format("bound report", e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: BoundReport =
            serde_json::from_str(s).map_err(|e| DashError::format("bound report", e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            self.pass_fraction_envelope,
            self.pass_fraction_a,
            self.pass_fraction_b,
            self.a_nondecreasing_fraction,
            self.b_below_twice_bound_fraction,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(DashError::format("bound report", "pass fraction outside [0, 1]"));
        }
        if self.a_bound.len() != self.t {
            return Err(DashError::format("bound report", "A_bound length differs from T"));
        }
        for r in &self.runs {
            let n = r.steps.len();
            if n != self.t || r.a_rho.len() != n || r.b_rho.len() != n || r.f.len() != n || r.envelope.len() != n {
                return Err(DashError::format(
                    "bound report",
                    format!("seed {} has arrays of inconsistent length", r.seed),
                ));
            }
        }
        Ok(())
    }
}

/// Theory-mode plan built from derived constants.
pub fn plan_from_constants(k: &TheoryConstants, steps: usize) -> Result<TheoryPlan> {
    Ok(TheoryPlan {
        m: k.m,
        gamma: k.gamma_theory,
        eta: k.inputs.eta,
        steps,
        schedule: ThresholdSchedule::theory(k.inputs.c, k.gamma_theory, k.rho_hat)?,
        gradient_form: GradientForm::UnlabeledOnly,
        n_cap: dash::DEFAULT_N_CAP,
    })
}

/// Warm-up from a random boundary point, then the selection stage.
/// Returns the log and the number of draws consumed.
pub fn run_seed(
    problem: &PLProblem,
    q_dist: &QDistribution,
    q: f64,
    warmup: (usize, usize, f64),
    plan: &TheoryPlan,
    seed: u64,
) -> Result<(Vec<SelectionStats>, u64)> {
    let (t0, m0, eta0) = warmup;
    let w0 = problem.boundary_point(&mut rng::stream(seed, &[tag::INIT]));
    let mut oracle = MixtureOracle::new(problem, q_dist, q, seed)?;
    let w1 = dash::run_warmup(&mut oracle, &w0, eta0, t0, m0)?;
    let (_, log) = dash::run_selection_stage(&mut oracle, &w1, plan)?;
    Ok((log, oracle.draws))
}

/// Runs every seed and checks the envelope and both set-size bounds at each
/// step.
pub fn verify_run(
    problem: &PLProblem,
    q_dist: &QDistribution,
    constants: &TheoryConstants,
    steps: usize,
    seeds: &[u64],
) -> Result<BoundReport> {
    if seeds.is_empty() {
        return Err(DashError::input("no seeds given"));
    }
    if constants.a0 <= 0.0 {
        return Err(DashError::Infeasible(format!("a0 = {}", constants.a0)));
    }
    let plan = plan_from_constants(constants, steps)?;
    let warm = (constants.t0_steps(), constants.m0_batch(), constants.inputs.eta0);
    let a_bound: Vec<f64> = (1..=steps).map(|t| constants.a_bound(t)).collect();
    let b_bound = constants.b_bound();
    let mut runs = Vec::with_capacity(seeds.len());
    let mut samples_used = 0;
    for &seed in seeds {
        let (log, draws) = run_seed(problem, q_dist, constants.inputs.q, warm, &plan, seed)?;
        samples_used = draws;
        let envelope: Vec<f64> = (1..=steps).map(|t| constants.envelope(t)).collect();
        let f: Vec<f64> = log.iter().map(|r| r.test_error).collect();
        let a_rho: Vec<usize> = log.iter().map(|r| r.n_sel_p).collect();
        let b_rho: Vec<usize> = log.iter().map(|r| r.n_sel_q).collect();
        runs.push(SeedRecord {
            seed,
            steps: (1..=steps).collect(),
            pass_envelope: f.iter().zip(&envelope).all(|(f, e)| f <= e),
            pass_a: a_rho.iter().zip(&a_bound).all(|(&a, &b)| a as f64 >= b),
            pass_b: b_rho.iter().all(|&b| b as f64 <= b_bound),
            a_rho,
            b_rho,
            f,
            envelope,
        });
    }
    let frac = |p: &dyn Fn(&SeedRecord) -> bool| runs.iter().filter(|r| p(r)).count() as f64 / runs.len() as f64;
    let (_, sample_bound) = dash::sample_complexity(warm.0, warm.1, constants.m, constants.gamma_theory, steps);
    Ok(BoundReport {
        constants: *constants,
        t: steps,
        a_bound,
        b_bound,
        samples_used,
        sample_bound,
        pass_fraction_envelope: frac(&|r| r.pass_envelope),
        pass_fraction_a: frac(&|r| r.pass_a),
        pass_fraction_b: frac(&|r| r.pass_b),
        a_nondecreasing_fraction: frac(&|r| r.a_nondecreasing()),
        b_below_twice_bound_fraction: frac(&|r| r.b_rho.iter().all(|&b| (b as f64) < 2.0 * b_bound)),
        tsybakov: None,
        runs,
    })
}

/// Objective trajectories of thresholded and unthresholded runs that share
/// every draw.
pub fn compare_with_plain_sgd(
    problem: &PLProblem,
    q_dist: &QDistribution,
    q: f64,
    warmup: (usize, usize, f64),
    plan: &TheoryPlan,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (dash_log, _) = run_seed(problem, q_dist, q, warmup, plan, seed)?;
    let s = plan.schedule;
    let mut plain = plan.clone();
    plain.schedule = ThresholdSchedule::new(s.c, s.gamma, s.rho_hat, 0.0, usize::MAX, s.cadence)?;
    let (plain_log, _) = run_seed(problem, q_dist, q, warmup, &plain, seed)?;
    Ok((
        dash_log.iter().map(|r| r.test_error).collect(),
        plain_log.iter().map(|r| r.test_error).collect(),
    ))
}
