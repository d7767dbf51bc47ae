use std::path::PathBuf;

use dash_core::data::{self, DatasetBundle};
use serde::{Deserialize, Serialize};

use super::output_dir;
use crate::config::DataConfig;
use crate::output::{self, RESOLVED_CONFIG};
use crate::CliResult;

pub const SPLIT_FILES: [&str; 3] = ["labeled.csv", "unlabeled.csv", "test.csv"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub data: DataConfig,
    pub output_dir: Option<String>,
}

fn csv_bytes(bundle: &DatasetBundle, which: usize) -> CliResult<Vec<u8>> {
    let rows = match which {
        0 => &bundle.labeled,
        1 => &bundle.unlabeled,
        _ => &bundle.test,
    };
    let mut buf = Vec::new();
    data::write_csv(rows, bundle.input_dim, &mut buf)?;
    Ok(buf)
}

/// Writes the three split files plus the resolved config.
pub fn run_gen_data(cfg: &GenDataConfig, overwrite: bool) -> CliResult<(PathBuf, DatasetBundle)> {
    let dir = output_dir(&cfg.output_dir)?;
    let bundle = cfg.data.build()?;
    let files = (0..3).map(|i| csv_bytes(&bundle, i)).collect::<CliResult<Vec<_>>>()?;
    output::prepare_dir(&dir, |n| n == RESOLVED_CONFIG || SPLIT_FILES.contains(&n), overwrite)?;
    for (name, bytes) in SPLIT_FILES.iter().zip(&files) {
        output::write_file(&dir.join(name), bytes)?;
    }
    output::write_json(&dir.join(RESOLVED_CONFIG), cfg)?;
    Ok((dir, bundle))
}
