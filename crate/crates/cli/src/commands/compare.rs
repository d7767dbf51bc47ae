use std::fmt::Write as _;
use std::path::PathBuf;

use dash_core::dash::{Algorithm, DashConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::output_dir;
use super::train::{train_in_memory, RunArtifacts, TrainRunConfig};
use crate::config::{self, DataConfig};
use crate::output::{self, RESOLVED_CONFIG};
use crate::{CliError, CliResult};

pub const TABLE_CSV: &str = "comparison.csv";
pub const TABLE_TEXT: &str = "comparison.txt";
pub const CELLS: &str = "cells";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    /// Row name; defaults to the algorithm name.
    #[serde(default)]
    pub label: Option<String>,
    pub algorithm: Algorithm,
    /// Partial training config laid over `base`.
    #[serde(default = "empty_object")]
    pub overrides: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub data: DataConfig,
    pub base: DashConfig,
    pub variants: Vec<Variant>,
    /// Decay factors to sweep for every dynamic-threshold variant.
    pub gamma_sweep: Vec<f64>,
    /// Label budgets; empty means `data.labels_per_class` only.
    pub labels_per_class: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<String>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            data: DataConfig::default(),
            base: DashConfig::default(),
            variants: vec![
                Variant {
                    label: None,
                    algorithm: Algorithm::Dash,
                    overrides: empty_object(),
                },
                Variant {
                    label: None,
                    algorithm: Algorithm::FixMatch { tau: 0.95 },
                    overrides: empty_object(),
                },
            ],
            gamma_sweep: Vec::new(),
            labels_per_class: Vec::new(),
            seeds: vec![0, 1, 2],
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub labels_per_class: usize,
    /// Decay factor of dynamic-threshold rows.
    pub gamma: Option<f64>,
    pub seeds: usize,
    pub mean_test_error: f64,
    pub std_test_error: f64,
    /// Selected examples with a correct pseudo label, summed over a run.
    pub mean_selected_correct: f64,
    pub mean_selected_wrong: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

struct Row {
    label: String,
    gamma: Option<f64>,
    train: DashConfig,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '-' })
        .collect()
}

fn expand(cfg: &CompareConfig) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    for (i, v) in cfg.variants.iter().enumerate() {
        let mut doc = serde_json::to_value(&cfg.base).map_err(|e| CliError::config(e.to_string()))?;
        config::merge(&mut doc, &v.overrides);
        doc["algorithm"] = serde_json::to_value(&v.algorithm).map_err(|e| CliError::config(e.to_string()))?;
        let train: DashConfig = config::from_value(doc)
            .map_err(|e| CliError::config(format!("variants.{i}.overrides: {e}")))?;
        let label = slug(v.label.as_deref().unwrap_or(v.algorithm.name()));
        if v.algorithm.fixed_tau().is_some() {
            rows.push(Row {
                label,
                gamma: None,
                train,
            });
        } else if cfg.gamma_sweep.is_empty() {
            rows.push(Row {
                label,
                gamma: Some(train.schedule.gamma),
                train,
            });
        } else {
            for &g in &cfg.gamma_sweep {
                let mut t = train.clone();
                t.schedule.gamma = g;
                rows.push(Row {
                    label: format!("{label}-gamma{g}"),
                    gamma: Some(g),
                    train: t,
                });
            }
        }
    }
    let mut names: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::config(format!("two variants share the label `{}`", w[0])));
    }
    Ok(rows)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "algorithm,labels_per_class,gamma,seeds,mean_test_error,std_test_error,mean_selected_correct,mean_selected_wrong\n",
        );
        for r in &self.rows {
            let gamma = r.gamma.map_or_else(String::new, |g| format!("{g:?}"));
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{:?},{:?},{:?}",
                r.algorithm,
                r.labels_per_class,
                gamma,
                r.seeds,
                r.mean_test_error,
                r.std_test_error,
                r.mean_selected_correct,
                r.mean_selected_wrong
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.algorithm.len()).max().unwrap_or(0).max(9);
        let mut s = format!(
            "{:<width$}  {:>6}  {:>6}  {:>17}  {:>10}  {:>10}\n",
            "algorithm", "labels", "gamma", "test error (%)", "correct", "wrong"
        );
        for r in &self.rows {
            let gamma = r.gamma.map_or_else(|| "-".to_string(), |g| format!("{g}"));
            let err = format!("{:.2} ± {:.2}", 100.0 * r.mean_test_error, 100.0 * r.std_test_error);
            let _ = writeln!(
                s,
                "{:<width$}  {:>6}  {:>6}  {:>17}  {:>10.1}  {:>10.1}",
                r.algorithm, r.labels_per_class, gamma, err, r.mean_selected_correct, r.mean_selected_wrong
            );
        }
        let _ = writeln!(s, "seeds: {:?}", self.seeds);
        s
    }
}

fn is_compare_file(name: &str) -> bool {
    [RESOLVED_CONFIG, TABLE_CSV, TABLE_TEXT, CELLS].contains(&name)
}

/// Runs every (variant, label budget, seed) cell, in parallel, then
/// aggregates in config order.
pub fn run_compare(cfg: &CompareConfig, overwrite: bool) -> CliResult<ComparisonTable> {
    let dir = output_dir(&cfg.output_dir)?;
    let rows = expand(cfg)?;
    if rows.len() < 2 {
        return Err(CliError::config(format!("need at least two algorithms, got {}", rows.len())));
    }
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() < 2 || seeds.len() != cfg.seeds.len() {
        return Err(CliError::config("need at least two distinct seeds"));
    }
    let budgets = if cfg.labels_per_class.is_empty() {
        vec![cfg.data.labels_per_class]
    } else {
        cfg.labels_per_class.clone()
    };

    let mut cells = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        for &budget in &budgets {
            for &seed in &cfg.seeds {
                let name = format!("{}-lpc{budget}-seed{seed}", row.label);
                let mut data = cfg.data.clone();
                data.labels_per_class = budget;
                data.seed = seed;
                let mut train = row.train.clone();
                train.seed = seed;
                let cell = TrainRunConfig {
                    data,
                    train,
                    plot: false,
                    output_dir: Some(dir.join(CELLS).join(&name).to_string_lossy().into_owned()),
                };
                cells.push((r, budget, cell));
            }
        }
    }
    let results: Vec<CliResult<(PathBuf, f64, usize, usize, RunArtifacts)>> = cells
        .par_iter()
        .map(|(_, _, cell)| {
            let (summary, artifacts) = train_in_memory(cell)?;
            let correct = summary.log.iter().map(|s| s.n_sel_correct).sum();
            let wrong = summary.log.iter().map(|s| s.n_sel_wrong).sum();
            Ok((summary.dir, summary.final_test_error, correct, wrong, artifacts))
        })
        .collect();
    let results = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut table = ComparisonTable {
        seeds: cfg.seeds.clone(),
        rows: Vec::new(),
    };
    for (r, row) in rows.iter().enumerate() {
        for &budget in &budgets {
            let cell: Vec<_> = cells
                .iter()
                .zip(&results)
                .filter(|((cr, cb, _), _)| *cr == r && *cb == budget)
                .map(|(_, res)| res)
                .collect();
            let errors: Vec<f64> = cell.iter().map(|c| c.1).collect();
            let (mean, std) = mean_std(&errors);
            let mean_of = |f: &dyn Fn(&(PathBuf, f64, usize, usize, RunArtifacts)) -> usize| {
                cell.iter().map(|c| f(c) as f64).sum::<f64>() / cell.len() as f64
            };
            table.rows.push(ComparisonRow {
                algorithm: row.label.clone(),
                labels_per_class: budget,
                gamma: row.gamma,
                seeds: cell.len(),
                mean_test_error: mean,
                std_test_error: std,
                mean_selected_correct: mean_of(&|c| c.2),
                mean_selected_wrong: mean_of(&|c| c.3),
            });
        }
    }

    output::prepare_dir(&dir, is_compare_file, overwrite)?;
    for (cell_dir, _, _, _, artifacts) in &results {
        artifacts.write(cell_dir)?;
    }
    output::write_file(&dir.join(TABLE_CSV), table.to_csv().as_bytes())?;
    output::write_file(&dir.join(TABLE_TEXT), table.to_text().as_bytes())?;
    output::write_json(&dir.join(RESOLVED_CONFIG), cfg)?;
    Ok(table)
}
