//! Run configurations: one JSON document per command, with `--set` overrides.

use std::fs::File;
use std::path::Path;

use dash_core::data::{self, DatasetBundle, Example, OodKind, SplitSpec};
use dash_core::rng::{self, tag};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

/// Parses `key.path=value`. The value is read as JSON when it parses and as
/// a bare string otherwise.
pub fn parse_assignment(assignment: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("`{assignment}` is not of the form key.path=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(CliError::config(format!("`{key}` has an empty path segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Writes `value` at `path`, creating intermediate objects as needed.
pub fn apply_set(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, value) = parse_assignment(assignment)?;
    let mut node = doc;
    for (i, seg) in path.iter().enumerate() {
        let here = path[..i].join(".");
        let last = i + 1 == path.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.clone(), value);
                    return Ok(());
                }
                map.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| CliError::config(format!("`{here}` is a list; `{seg}` is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("`{here}` has {len} entries, index {idx} is out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::config(format!(
                    "cannot set `{}`: `{here}` is not an object",
                    path.join(".")
                )))
            }
        };
    }
    unreachable!("path has at least one segment")
}

/// Builds a config from an optional JSON document plus overrides. Unknown keys
/// and type errors are reported with their key path.
pub fn parse_config<T: DeserializeOwned>(text: Option<&str>, sets: &[String]) -> CliResult<T> {
    let mut doc = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| CliError::config(format!("invalid JSON: {e}")))?,
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        return Err(CliError::config("config document must be a JSON object"));
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    from_value(doc)
}

pub fn from_value<T: DeserializeOwned>(doc: Value) -> CliResult<T> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::config(inner.to_string())
        } else {
            CliError::config(format!("at `{path}`: {inner}"))
        }
    })
}

/// Reads a config file (if any) and applies overrides.
pub fn load_config<T: DeserializeOwned>(file: Option<&Path>, sets: &[String]) -> CliResult<T> {
    let text = match file {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    parse_config(text.as_deref(), sets)
}

/// Recursively overlays `patch` onto `base`.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Generator {
    TwoMoons {
        noise: f64,
    },
    Blobs {
        classes: usize,
        dim: usize,
        separation: f64,
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub generator: Generator,
    pub labels_per_class: usize,
    /// Size of the unlabeled pool (rounded up to a multiple of the class
    /// count for blobs).
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Fraction of the unlabeled pool left in-distribution.
    pub q: f64,
    pub ood_kind: OodKind,
    pub seed: u64,
    /// Read `labeled.csv`, `unlabeled.csv` and `test.csv` from this directory
    /// instead of generating.
    pub from_dir: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            generator: Generator::TwoMoons { noise: 0.1 },
            labels_per_class: 4,
            n_unlabeled: 1000,
            n_test: 1000,
            q: 0.8,
            ood_kind: OodKind::LabelFlip,
            seed: 0,
            from_dir: None,
        }
    }
}

fn read_split(dir: &Path, name: &str) -> CliResult<(Vec<Example>, usize)> {
    let path = dir.join(name);
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    data::read_csv(f).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

impl DataConfig {
    pub fn build(&self) -> CliResult<DatasetBundle> {
        if let Some(dir) = &self.from_dir {
            return self.load(Path::new(dir));
        }
        let spec = SplitSpec {
            labels_per_class: self.labels_per_class,
            q: self.q,
            ood_kind: self.ood_kind.clone(),
        };
        let train_seed = rng::derive_seed(self.seed, &[tag::DATA, 0]);
        let test_seed = rng::derive_seed(self.seed, &[tag::DATA, 1]);
        let (full, test, k) = match &self.generator {
            Generator::TwoMoons { noise } => (
                data::make_two_moons(2 * self.labels_per_class + self.n_unlabeled, *noise, train_seed)?,
                data::make_two_moons(self.n_test, *noise, test_seed)?,
                2,
            ),
            Generator::Blobs {
                classes,
                dim,
                separation,
                noise,
            } => {
                let k = (*classes).max(1);
                let per_class = self.labels_per_class + self.n_unlabeled.div_ceil(k);
                (
                    data::make_blobs(*classes, per_class, *dim, *separation, *noise, train_seed)?,
                    data::make_blobs(*classes, self.n_test.div_ceil(k), *dim, *separation, *noise, test_seed)?,
                    *classes,
                )
            }
        };
        let mut bundle = data::split_ssl(&full, k, &spec, self.seed)?;
        bundle.test = test;
        bundle.validate()?;
        Ok(bundle)
    }

    fn load(&self, dir: &Path) -> CliResult<DatasetBundle> {
        let (labeled, d1) = read_split(dir, "labeled.csv")?;
        let (unlabeled, d2) = read_split(dir, "unlabeled.csv")?;
        let (test, d3) = read_split(dir, "test.csv")?;
        if d1 != d2 || d1 != d3 {
            return Err(CliError::config(format!(
                "{}: feature dimensions differ across files ({d1}, {d2}, {d3})",
                dir.display()
            )));
        }
        let num_classes = labeled
            .iter()
            .chain(&unlabeled)
            .chain(&test)
            .filter_map(|e| e.true_label)
            .max()
            .map_or(0, |y| y + 1)
            .max(2);
        let bundle = DatasetBundle {
            labeled,
            unlabeled,
            test,
            num_classes,
            input_dim: d1,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}
