use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use dash_core::dash::{SelectionStats, ThresholdSchedule};
use dash_core::io;
use serde::{Deserialize, Serialize};

use super::output_dir;
use crate::output::{self, METRICS, RESOLVED_CONFIG};
use crate::{CliError, CliResult};

pub type Series = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    /// Metrics files, or directories searched recursively for `metrics.csv`.
    pub inputs: Vec<String>,
    /// Emit fixed-versus-dynamic threshold curves.
    pub threshold_demo: bool,
    pub demo_steps: usize,
    pub demo_tau: f64,
    pub demo_c: f64,
    pub demo_rho_hat: f64,
    pub demo_gammas: Vec<f64>,
    pub output_dir: Option<String>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            inputs: Vec::new(),
            threshold_demo: false,
            demo_steps: 30,
            demo_tau: 0.95,
            demo_c: 1.0001,
            demo_rho_hat: 1.0,
            demo_gammas: vec![1.27],
            output_dir: None,
        }
    }
}

#[derive(Default)]
struct EpochAgg {
    correct: usize,
    wrong: usize,
    rho: Option<f64>,
    test_error: Option<f64>,
}

/// Per-epoch curves of one run: selected-correct and selected-wrong counts
/// (summed over the epoch), and the threshold and test error at the epoch's
/// last step. Non-finite values are left out.
pub fn run_series(rows: &[SelectionStats]) -> Vec<(&'static str, Series)> {
    let mut by_epoch: BTreeMap<usize, EpochAgg> = BTreeMap::new();
    for r in rows {
        let a = by_epoch.entry(r.epoch).or_default();
        a.correct += r.n_sel_correct;
        a.wrong += r.n_sel_wrong;
        if r.rho_t.is_finite() {
            a.rho = Some(r.rho_t);
        }
        if r.test_error.is_finite() {
            a.test_error = Some(r.test_error);
        }
    }
    let pick = |f: &dyn Fn(&EpochAgg) -> Option<f64>| -> Series {
        by_epoch
            .iter()
            .filter_map(|(&e, a)| f(a).map(|y| (e as f64, y)))
            .collect()
    };
    vec![
        ("correct", pick(&|a| Some(a.correct as f64))),
        ("wrong", pick(&|a| Some(a.wrong as f64))),
        ("rho", pick(&|a| a.rho)),
        ("test-error", pick(&|a| a.test_error)),
    ]
}

/// A constant `-ln tau` level next to `C gamma^-(t-1) rho_hat` for each gamma.
pub fn threshold_demo(cfg: &PlotConfig) -> CliResult<Vec<(String, Series)>> {
    if !(cfg.demo_tau > 0.0 && cfg.demo_tau < 1.0) {
        return Err(CliError::config(format!("demo_tau = {} must lie in (0, 1)", cfg.demo_tau)));
    }
    if cfg.demo_steps == 0 {
        return Err(CliError::config("demo_steps must be positive"));
    }
    let ts = 1..=cfg.demo_steps;
    let level = -cfg.demo_tau.ln();
    let mut out = vec![(
        format!("threshold-fixed-tau{}", cfg.demo_tau),
        ts.clone().map(|t| (t as f64, level)).collect(),
    )];
    for &g in &cfg.demo_gammas {
        let s = ThresholdSchedule::theory(cfg.demo_c, g, cfg.demo_rho_hat)?;
        out.push((
            format!("threshold-dynamic-gamma{g}"),
            ts.clone().map(|t| (t as f64, s.threshold(t))).collect(),
        ));
    }
    Ok(out)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '-' })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

fn find_metrics(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_metrics(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == METRICS) {
            out.push(p);
        }
    }
    Ok(())
}

/// `(run name, path)` for every metrics file reachable from `inputs`.
pub fn discover(inputs: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    let mut runs = Vec::new();
    for input in inputs {
        let root = Path::new(input);
        if root.is_dir() {
            let mut found = Vec::new();
            find_metrics(root, &mut found)?;
            if found.is_empty() {
                return Err(CliError::config(format!("no {METRICS} under {}", root.display())));
            }
            let base = root
                .canonicalize()
                .ok()
                .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "run".into());
            for f in found {
                let rel = f.parent().and_then(|p| p.strip_prefix(root).ok()).unwrap_or(Path::new(""));
                let mut name = base.clone();
                for c in rel.components() {
                    name.push('-');
                    name.push_str(&c.as_os_str().to_string_lossy());
                }
                runs.push((sanitize(&name), f));
            }
        } else if root.is_file() {
            let name = root
                .canonicalize()
                .ok()
                .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "run".into());
            runs.push((sanitize(&name), root.to_path_buf()));
        } else {
            return Err(CliError::config(format!("input {input} does not exist")));
        }
    }
    let mut names: Vec<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::config(format!("two inputs map to the run name `{}`", w[0])));
    }
    Ok(runs)
}

fn is_plot_file(name: &str) -> bool {
    name == RESOLVED_CONFIG || name.ends_with(".dat")
}

/// Writes one `<run>.<series>.dat` file per curve. Every input is parsed before
/// anything is written.
pub fn run_plot(cfg: &PlotConfig, overwrite: bool) -> CliResult<Vec<PathBuf>> {
    let dir = output_dir(&cfg.output_dir)?;
    if cfg.inputs.is_empty() && !cfg.threshold_demo {
        return Err(CliError::config("no inputs given and threshold_demo is off"));
    }
    let mut files: Vec<(String, Series)> = Vec::new();
    for (name, path) in discover(&cfg.inputs)? {
        let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
        let rows = io::read_metrics(f).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for (series, pts) in run_series(&rows) {
            files.push((format!("{name}.{series}"), pts));
        }
    }
    if cfg.threshold_demo {
        files.extend(threshold_demo(cfg)?);
    }
    output::prepare_dir(&dir, is_plot_file, overwrite)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, pts) in &files {
        let p = dir.join(format!("{name}.dat"));
        output::write_file(&p, output::series_text(pts).as_bytes())?;
        written.push(p);
    }
    output::write_json(&dir.join(RESOLVED_CONFIG), cfg)?;
    Ok(written)
}
