use std::path::PathBuf;

use dash_core::theory::{
    derive_constants, fit_tsybakov, make_pl_problem, make_q_distribution, min_m_for, tsybakov_grid, verify_run,
    BoundReport, QKind, TheoryInputs, TsybakovFit,
};
use serde::{Deserialize, Serialize};

use super::output_dir;
use crate::output::{self, RESOLVED_CONFIG};
use crate::{CliError, CliResult};

pub const REPORT: &str = "report.json";
pub const SERIES: &str = "series";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub dim: usize,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub radius: f64,
    pub seed: u64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            dim: 10,
            mu: 0.5,
            l: 2.0,
            radius: 1.0,
            seed: 0,
        }
    }
}

/// Where the low-loss condition constants `(b, theta)` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ConditionSource {
    /// Closed form for the chosen Q.
    Analytic,
    /// Log-log fit of Monte Carlo estimates.
    Fitted,
    Fixed { b: f64, theta: f64 },
}

/// How the batch parameter `m` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum BatchRule {
    /// The three-term formula as is.
    Formula,
    Fixed { m: u64 },
    /// Smallest `m` keeping both concentration radii at or below the limits.
    Feasible { beta_max: f64, alpha_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsybakovConfig {
    pub levels: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TsybakovConfig {
    fn default() -> Self {
        TsybakovConfig {
            levels: 8,
            samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryVerifyConfig {
    pub problem: ProblemConfig,
    pub q_kind: QKind,
    pub q: f64,
    pub delta: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub eta0: f64,
    pub eta: f64,
    /// Objective level the warm-up must reach.
    pub a: f64,
    /// Starting objective value; defaults to `L R^2 / 2`, the value bound on
    /// the ball where runs start.
    pub f_w0: Option<f64>,
    pub condition: ConditionSource,
    pub batch: BatchRule,
    #[serde(rename = "T")]
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Monte Carlo check of the low-loss condition; `null` skips it.
    pub tsybakov: Option<TsybakovConfig>,
    pub output_dir: Option<String>,
}

impl Default for TheoryVerifyConfig {
    fn default() -> Self {
        TheoryVerifyConfig {
            problem: ProblemConfig::default(),
            q_kind: QKind::ShiftedMinimizer { offset: 50.0 },
            q: 0.8,
            delta: 0.01,
            c: 2.0,
            eta0: 0.5,
            eta: 0.5,
            a: 0.5,
            f_w0: None,
            condition: ConditionSource::Analytic,
            batch: BatchRule::Feasible {
                beta_max: 0.5,
                alpha_max: 0.5,
            },
            steps: 15,
            seeds: (0..20).collect(),
            tsybakov: Some(TsybakovConfig::default()),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TheorySummary {
    pub dir: PathBuf,
    pub report: BoundReport,
    /// Set when the Monte Carlo fit could not be formed.
    pub tsybakov_note: Option<String>,
}

fn is_theory_file(name: &str) -> bool {
    [RESOLVED_CONFIG, REPORT, SERIES].contains(&name)
}

/// Builds the problem, derives the constants, runs every seed and writes the
/// report and its plot series.
pub fn run_theory_verify(cfg: &TheoryVerifyConfig, overwrite: bool) -> CliResult<TheorySummary> {
    let dir = output_dir(&cfg.output_dir)?;
    let p = &cfg.problem;
    let problem = make_pl_problem(p.dim, p.mu, p.l, p.radius, p.seed)?;
    let q_dist = make_q_distribution(&problem, cfg.q_kind.clone(), p.seed)?;

    let mut estimates = None;
    if let Some(ts) = &cfg.tsybakov {
        estimates = Some(tsybakov_grid(&q_dist, &problem, ts.levels, ts.samples, ts.seed)?);
    }
    let fit = estimates.as_deref().map(fit_tsybakov);
    let (b, theta) = match &cfg.condition {
        ConditionSource::Analytic => q_dist.analytic_condition(&problem).ok_or_else(|| {
            CliError::config("condition: no closed form for this Q; use `fitted` or `fixed`")
        })?,
        ConditionSource::Fitted => match &fit {
            Some(Ok(bt)) => *bt,
            Some(Err(e)) => return Err(CliError::config(format!("condition: fit failed: {e}"))),
            None => return Err(CliError::config("condition: `fitted` needs the tsybakov section")),
        },
        ConditionSource::Fixed { b, theta } => (*b, *theta),
    };
    let m_override = match cfg.batch {
        BatchRule::Formula => None,
        BatchRule::Fixed { m } => Some(m),
        BatchRule::Feasible { beta_max, alpha_max } => {
            if !(beta_max > 0.0 && beta_max < 1.0 && alpha_max > 0.0 && alpha_max < 1.0) {
                return Err(CliError::config("batch: beta_max and alpha_max must lie in (0, 1)"));
            }
            Some(min_m_for(cfg.delta, cfg.q, cfg.c, beta_max, alpha_max))
        }
    };
    let inputs = TheoryInputs {
        g: problem.g_bound(),
        l: p.l,
        mu: p.mu,
        a: cfg.a,
        b,
        theta,
        delta: cfg.delta,
        q: cfg.q,
        c: cfg.c,
        eta0: cfg.eta0,
        eta: cfg.eta,
        f_w0: cfg.f_w0.unwrap_or(0.5 * p.l * p.radius * p.radius),
        m_override,
    };
    let constants = derive_constants(&inputs)?;
    let mut report = verify_run(&problem, &q_dist, &constants, cfg.steps, &cfg.seeds)?;
    let mut tsybakov_note = None;
    match (estimates, fit) {
        (Some(estimates), Some(Ok((b, theta)))) => report.tsybakov = Some(TsybakovFit { estimates, b, theta }),
        (_, Some(Err(e))) => tsybakov_note = Some(e.to_string()),
        _ => {}
    }
    let report_json = report.to_json()?;

    let t_axis = |v: &[f64]| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(i, y)| ((i + 1) as f64, *y)).collect() };
    let mut series = vec![
        ("envelope".to_string(), t_axis(&report.runs.first().map(|r| r.envelope.clone()).unwrap_or_default())),
        ("A-bound".to_string(), t_axis(&report.a_bound)),
        ("B-bound".to_string(), t_axis(&vec![report.b_bound; report.t])),
    ];
    for r in &report.runs {
        let counts = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
        series.push((format!("F-seed{}", r.seed), t_axis(&r.f)));
        series.push((format!("A-seed{}", r.seed), t_axis(&counts(&r.a_rho))));
        series.push((format!("B-seed{}", r.seed), t_axis(&counts(&r.b_rho))));
    }

    output::prepare_dir(&dir, is_theory_file, overwrite)?;
    output::write_file(&dir.join(REPORT), report_json.as_bytes())?;
    for (name, pts) in &series {
        output::write_file(&dir.join(SERIES).join(format!("{name}.dat")), output::series_text(pts).as_bytes())?;
    }
    output::write_json(&dir.join(RESOLVED_CONFIG), cfg)?;
    Ok(TheorySummary {
        dir,
        report,
        tsybakov_note,
    })
}
