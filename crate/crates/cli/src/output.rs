//! Output directories and the files written into them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DASH_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "resolved-config.json";
pub const METRICS: &str = "metrics.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const PLOTS: &str = "plots";

/// Picks the output directory: the command-line flag, then the config value,
/// then `<root>/<command>` where root comes from [`OUTPUT_ROOT_ENV`] or
/// defaults to `runs`.
pub fn resolve_output(flag: Option<&Path>, configured: Option<&str>, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = configured {
        return PathBuf::from(p);
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(command)
}

/// Makes `dir` ready to receive a command's outputs.
///
/// Entries for which `owned` returns true are results of an earlier run; they
/// are removed with `overwrite` and refused without it. Any other entry is
/// always refused, so nothing unrelated is ever deleted.
pub fn prepare_dir(dir: &Path, owned: impl Fn(&str) -> bool, overwrite: bool) -> CliResult<()> {
    if !dir.exists() {
        return fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e));
    }
    if !dir.is_dir() {
        return Err(CliError::config(format!("{} is not a directory", dir.display())));
    }
    let mut previous = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !owned(&name) {
            return Err(CliError::config(format!(
                "{} contains unrelated entry `{name}`; choose an empty or dedicated directory",
                dir.display()
            )));
        }
        previous.push(entry.path());
    }
    if previous.is_empty() {
        return Ok(());
    }
    if !overwrite {
        return Err(CliError::config(format!(
            "{} already holds results; pass --overwrite to replace them",
            dir.display()
        )));
    }
    previous.sort();
    for p in previous {
        let res = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
        res.map_err(|e| CliError::io(&p, e))?;
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, to_json(value)?.as_bytes())
}

/// Two-column whitespace-separated series, one `x y` pair per line.
pub fn series_text(points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (x, y) in points {
        s.push_str(&format!("{x} {y}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_config_beats_root() {
        assert_eq!(resolve_output(Some(Path::new("a")), Some("b"), "train"), PathBuf::from("a"));
        assert_eq!(resolve_output(None, Some("b"), "train"), PathBuf::from("b"));
    }

    #[test]
    fn prepare_refuses_and_overwrites() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let owned = |n: &str| n == "metrics.csv";
        prepare_dir(&dir, owned, false).unwrap();
        fs::write(dir.join("metrics.csv"), "x").unwrap();
        assert!(prepare_dir(&dir, owned, false).is_err());
        prepare_dir(&dir, owned, true).unwrap();
        assert!(!dir.join("metrics.csv").exists());
        fs::write(dir.join("notes.txt"), "keep").unwrap();
        assert!(prepare_dir(&dir, owned, true).is_err());
        assert!(dir.join("notes.txt").exists());
    }
}
