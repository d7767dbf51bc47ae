//! Synthetic datasets, label-budget splits and mixture unlabeled pools.
//!
//! The unlabeled pool realises `qP + (1-q)Q`: a fraction `1-q` of the held-out
//! examples is passed through a deterministic out-of-distribution transform
//! and tagged [`Provenance::UnlabeledQ`]. True labels are kept on every
//! example so selection diagnostics can tell right pseudo labels from wrong
//! ones; training code never reads them for unlabeled data.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{DashError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Labeled,
    UnlabeledP,
    UnlabeledQ,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Labeled => "labeled",
            Provenance::UnlabeledP => "unlabeled-p",
            Provenance::UnlabeledQ => "unlabeled-q",
        }
    }

    pub fn is_unlabeled(self) -> bool {
        !matches!(self, Provenance::Labeled)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = DashError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Provenance::Labeled),
            "unlabeled-p" => Ok(Provenance::UnlabeledP),
            "unlabeled-q" => Ok(Provenance::UnlabeledQ),
            other => Err(DashError::format("dataset csv", format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub true_label: Option<usize>,
    provenance: Provenance,
}

impl Example {
    pub fn new(x: Vec<f64>, true_label: Option<usize>, provenance: Provenance) -> Result<Self> {
        if provenance == Provenance::Labeled && true_label.is_none() {
            return Err(DashError::input("labeled example without a label"));
        }
        Ok(Example {
            x,
            true_label,
            provenance,
        })
    }

    pub(crate) fn labeled(x: Vec<f64>, y: usize) -> Self {
        Example {
            x,
            true_label: Some(y),
            provenance: Provenance::Labeled,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum OodKind {
    /// `y -> (y + 1) mod K`, `x` unchanged.
    LabelFlip,
    /// `x -> x + offset`, label unchanged.
    ClusterShift { offset: Vec<f64> },
    /// Tagged as Q but left untouched.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub labels_per_class: usize,
    /// Weight of the in-distribution component, in `(0, 1]`.
    pub q: f64,
    pub ood_kind: OodKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub test: Vec<Example>,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl DatasetBundle {
    pub fn validate(&self) -> Result<()> {
        let check = |e: &Example, what: &str| -> Result<()> {
            if e.x.len() != self.input_dim {
                return Err(DashError::input(format!("{what} example has wrong dimension")));
            }
            if let Some(y) = e.true_label {
                if y >= self.num_classes {
                    return Err(DashError::input(format!("{what} label {y} out of range")));
                }
            }
            Ok(())
        };
        for e in &self.labeled {
            check(e, "labeled")?;
            if e.provenance != Provenance::Labeled || e.true_label.is_none() {
                return Err(DashError::input("labeled set holds a non-labeled example"));
            }
        }
        for e in &self.unlabeled {
            check(e, "unlabeled")?;
            if !e.provenance.is_unlabeled() {
                return Err(DashError::input("unlabeled set holds a labeled example"));
            }
        }
        for e in &self.test {
            check(e, "test")?;
            if e.true_label.is_none() {
                return Err(DashError::input("test example without a label"));
            }
        }
        if self.unlabeled.len() < self.labeled.len() {
            return Err(DashError::input("fewer unlabeled than labeled examples"));
        }
        Ok(())
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.unlabeled
            .iter()
            .filter(|e| e.provenance == provenance)
            .count()
    }
}

/// Two interleaved unit half-circles (`K = 2`, `d = 2`), shuffled.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<Vec<Example>> {
    if n < 2 {
        return Err(DashError::input("two moons needs at least two points"));
    }
    if !(noise >= 0.0) {
        return Err(DashError::input("noise must be nonnegative"));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let arc = |i: usize, count: usize| {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = arc(i, n_outer);
        out.push(Example::labeled(vec![t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = arc(i, n_inner);
        out.push(Example::labeled(vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut r = rng::stream(seed, &[rng::tag::DATA]);
    add_noise(&mut out, noise, &mut r);
    out.shuffle(&mut r);
    Ok(out)
}

/// Isotropic Gaussian clusters. Centers sit on a circle of radius
/// `center_separation` in the first two coordinates (on a line when `d = 1`).
pub fn make_blobs(
    num_classes: usize,
    n_per_class: usize,
    dim: usize,
    center_separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Vec<Example>> {
    if num_classes < 2 {
        return Err(DashError::input("blobs need at least two classes"));
    }
    if dim == 0 {
        return Err(DashError::input("dimension must be positive"));
    }
    if !(noise >= 0.0) {
        return Err(DashError::input("noise must be nonnegative"));
    }
    let mut out = Vec::with_capacity(num_classes * n_per_class);
    for k in 0..num_classes {
        let mut c = vec![0.0; dim];
        if dim == 1 {
            c[0] = center_separation * (k as f64 - (num_classes - 1) as f64 / 2.0);
        } else {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
            c[0] = center_separation * angle.cos();
            c[1] = center_separation * angle.sin();
        }
        for _ in 0..n_per_class {
            out.push(Example::labeled(c.clone(), k));
        }
    }
    let mut r = rng::stream(seed, &[rng::tag::DATA]);
    add_noise(&mut out, noise, &mut r);
    out.shuffle(&mut r);
    Ok(out)
}

fn add_noise(examples: &mut [Example], noise: f64, r: &mut Rng) {
    if noise == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, noise).expect("noise checked nonnegative");
    for e in examples {
        for v in &mut e.x {
            *v += normal.sample(r);
        }
    }
}

/// Number of Q examples in a pool of `n_unlabeled`: `floor((1-q) * N_u)`.
///
/// A relative slack of 1e-9 absorbs representation error, so `q = 0.8`,
/// `N_u = 1000` yields 200 rather than 199.
pub fn q_count(q: f64, n_unlabeled: usize) -> usize {
    let raw = (1.0 - q) * n_unlabeled as f64;
    ((raw + 1e-9 * raw.abs().max(1.0)).floor().max(0.0) as usize).min(n_unlabeled)
}

/// Splits examples into a labeled set with `labels_per_class` per class and an
/// unlabeled mixture pool.
pub fn split_ssl(
    full: &[Example],
    num_classes: usize,
    spec: &SplitSpec,
    seed: u64,
) -> Result<DatasetBundle> {
    if spec.labels_per_class == 0 {
        return Err(DashError::input("labels_per_class must be positive"));
    }
    if !(spec.q > 0.0 && spec.q <= 1.0) {
        return Err(DashError::input(format!("q = {} outside (0, 1]", spec.q)));
    }
    let input_dim = full
        .first()
        .map(|e| e.x.len())
        .ok_or_else(|| DashError::input("empty dataset"))?;
    if num_classes < 2 {
        return Err(DashError::input("need at least two classes"));
    }
    if let OodKind::ClusterShift { offset } = &spec.ood_kind {
        if offset.len() != input_dim {
            return Err(DashError::input("cluster-shift offset has wrong dimension"));
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in full.iter().enumerate() {
        if e.x.len() != input_dim {
            return Err(DashError::input(format!("example {i} has wrong dimension")));
        }
        match e.true_label {
            Some(y) if y < num_classes => by_class[y].push(i),
            _ => return Err(DashError::input(format!("example {i} lacks a valid label"))),
        }
    }

    let mut r = rng::stream(seed, &[rng::tag::SPLIT]);
    let mut is_labeled = vec![false; full.len()];
    for (k, idx) in by_class.iter().enumerate() {
        if idx.len() < spec.labels_per_class {
            return Err(DashError::input(format!(
                "class {k} has {} examples, need {}",
                idx.len(),
                spec.labels_per_class
            )));
        }
        for &i in idx.choose_multiple(&mut r, spec.labels_per_class) {
            is_labeled[i] = true;
        }
    }

    let labeled: Vec<Example> = full
        .iter()
        .zip(&is_labeled)
        .filter(|(_, l)| **l)
        .map(|(e, _)| e.clone().with_provenance(Provenance::Labeled))
        .collect();
    let mut unlabeled: Vec<Example> = full
        .iter()
        .zip(&is_labeled)
        .filter(|(_, l)| !**l)
        .map(|(e, _)| e.clone().with_provenance(Provenance::UnlabeledP))
        .collect();

    let n_q = q_count(spec.q, unlabeled.len());
    let mut order: Vec<usize> = (0..unlabeled.len()).collect();
    order.shuffle(&mut r);
    for &i in &order[..n_q] {
        let e = &mut unlabeled[i];
        e.provenance = Provenance::UnlabeledQ;
        match &spec.ood_kind {
            OodKind::LabelFlip => {
                e.true_label = e.true_label.map(|y| (y + 1) % num_classes);
            }
            OodKind::ClusterShift { offset } => {
                e.x.iter_mut().zip(offset).for_each(|(v, o)| *v += o);
            }
            OodKind::None => {}
        }
    }

    let bundle = DatasetBundle {
        labeled,
        unlabeled,
        test: Vec::new(),
        num_classes,
        input_dim,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Uniform draws with replacement from the unlabeled pool.
pub struct MixtureStream<'a> {
    pool: &'a [Example],
    rng: Rng,
}

impl<'a> MixtureStream<'a> {
    pub fn new(bundle: &'a DatasetBundle, seed: u64) -> Result<Self> {
        Self::from_pool(&bundle.unlabeled, seed)
    }

    pub fn from_pool(pool: &'a [Example], seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(DashError::input("unlabeled pool is empty"));
        }
        Ok(MixtureStream {
            pool,
            rng: rng::stream(seed, &[rng::tag::SAMPLE]),
        })
    }

    pub fn next_index(&mut self) -> usize {
        rand::Rng::random_range(&mut self.rng, 0..self.pool.len())
    }
}

impl<'a> Iterator for MixtureStream<'a> {
    type Item = &'a Example;

    fn next(&mut self) -> Option<&'a Example> {
        let i = self.next_index();
        Some(&self.pool[i])
    }
}

/// Writes `x0,...,x{d-1},label,provenance`; a missing label is `-1`.
pub fn write_csv<W: Write>(examples: &[Example], input_dim: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..input_dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("provenance".into());
    w.write_record(&header).map_err(csv_err)?;
    for e in examples {
        if e.x.len() != input_dim {
            return Err(DashError::input("example dimension does not match header"));
        }
        let mut rec: Vec<String> = e.x.iter().map(|v| format!("{v:?}")).collect();
        rec.push(e.true_label.map_or_else(|| "-1".to_string(), |y| y.to_string()));
        rec.push(e.provenance.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the dataset CSV format. Returns the examples and the input dimension.
pub fn read_csv<R: Read>(input: R) -> Result<(Vec<Example>, usize)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let cols = header.len();
    if cols < 3 {
        return Err(DashError::format("dataset csv", "need at least one feature column"));
    }
    let dim = cols - 2;
    for (i, name) in header.iter().enumerate().take(dim) {
        if name != format!("x{i}") {
            return Err(DashError::format("dataset csv", format!("column {i} is `{name}`, expected `x{i}`")));
        }
    }
    if &header[dim] != "label" || &header[dim + 1] != "provenance" {
        return Err(DashError::format("dataset csv", "last columns must be `label,provenance`"));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let x = (0..dim)
            .map(|i| {
                let v: f64 = rec[i].trim().parse().map_err(|_| {
                    DashError::format("dataset csv", format!("row {row}: bad number `{}`", &rec[i]))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(DashError::format("dataset csv", format!("row {row}: non-finite feature")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let label: i64 = rec[dim].trim().parse().map_err(|_| {
            DashError::format("dataset csv", format!("row {row}: bad label `{}`", &rec[dim]))
        })?;
        let true_label = match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(DashError::format("dataset csv", format!("row {row}: label {l}"))),
        };
        let provenance: Provenance = rec[dim + 1].trim().parse()?;
        let e = Example::new(x, true_label, provenance)
            .map_err(|e| DashError::format("dataset csv", format!("row {row}: {e}")))?;
        out.push(e);
    }
    Ok((out, dim))
}

fn csv_err(e: csv::Error) -> DashError {
    DashError::format("csv", e.to_string())
}
