use std::path::PathBuf;

use dash_core::dash::{dash_train, DashConfig, SelectionStats};
use dash_core::io;
use serde::{Deserialize, Serialize};

use super::{output_dir, plot};
use crate::config::DataConfig;
use crate::output::{self, CHECKPOINT, METRICS, PLOTS, RESOLVED_CONFIG};
use crate::CliResult;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub data: DataConfig,
    pub train: DashConfig,
    /// Also write plot series into `plots/`.
    pub plot: bool,
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub rho_hat: f64,
    pub final_test_error: f64,
    pub log: Vec<SelectionStats>,
}

pub(crate) fn is_run_file(name: &str) -> bool {
    [RESOLVED_CONFIG, METRICS, CHECKPOINT, PLOTS].contains(&name)
}

/// Files of one training run, rendered in memory.
pub(crate) struct RunArtifacts {
    pub config: String,
    pub metrics: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub plots: Vec<(String, String)>,
}

impl RunArtifacts {
    pub fn write(&self, dir: &std::path::Path) -> CliResult<()> {
        output::write_file(&dir.join(RESOLVED_CONFIG), self.config.as_bytes())?;
        output::write_file(&dir.join(METRICS), &self.metrics)?;
        output::write_file(&dir.join(CHECKPOINT), &self.checkpoint)?;
        for (name, text) in &self.plots {
            output::write_file(&dir.join(PLOTS).join(name), text.as_bytes())?;
        }
        Ok(())
    }
}

/// Trains without touching the filesystem.
pub(crate) fn train_in_memory(cfg: &TrainRunConfig) -> CliResult<(TrainSummary, RunArtifacts)> {
    let dir = output_dir(&cfg.output_dir)?;
    let bundle = cfg.data.build()?;
    let out = dash_train(&bundle, &cfg.train)?;
    let mut metrics = Vec::new();
    io::write_metrics(&out.log, &mut metrics)?;
    let mut checkpoint = Vec::new();
    io::write_checkpoint(out.model.params().values(), &mut checkpoint)?;
    let plots = if cfg.plot {
        plot::run_series(&out.log)
            .into_iter()
            .map(|(name, pts)| (format!("{name}.dat"), output::series_text(&pts)))
            .collect()
    } else {
        Vec::new()
    };
    let final_test_error = out.log.last().map_or(f64::NAN, |r| r.test_error);
    Ok((
        TrainSummary {
            dir,
            rho_hat: out.rho_hat,
            final_test_error,
            log: out.log,
        },
        RunArtifacts {
            config: output::to_json(cfg)?,
            metrics,
            checkpoint,
            plots,
        },
    ))
}

pub fn run_train(cfg: &TrainRunConfig, overwrite: bool) -> CliResult<TrainSummary> {
    let (summary, artifacts) = train_in_memory(cfg)?;
    output::prepare_dir(&summary.dir, is_run_file, overwrite)?;
    artifacts.write(&summary.dir)?;
    Ok(summary)
}
