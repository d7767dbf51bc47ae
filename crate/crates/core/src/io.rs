//! Metrics logs and parameter checkpoints.

use std::io::{Read, Write};

use crate::dash::SelectionStats;
use crate::{DashError, Result};

/// Column order of the metrics log.
pub const METRICS_COLUMNS: [&str; 13] = [
    "step",
    "epoch",
    "rho_t",
    "n_sampled",
    "n_selected",
    "n_sel_correct",
    "n_sel_wrong",
    "n_sel_P",
    "n_sel_Q",
    "labeled_loss",
    "unlabeled_loss",
    "test_error",
    "lr",
];

/// Eight magic bytes opening every checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DASHMODL";

fn real(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:?}")
    }
}

pub fn write_metrics<W: Write>(rows: &[SelectionStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| DashError::format("metrics csv", e.to_string());
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            real(r.rho_t),
            r.n_sampled.to_string(),
            r.n_selected.to_string(),
            r.n_sel_correct.to_string(),
            r.n_sel_wrong.to_string(),
            r.n_sel_p.to_string(),
            r.n_sel_q.to_string(),
            real(r.labeled_loss),
            real(r.unlabeled_loss),
            real(r.test_error),
            real(r.lr),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics log. Columns are located by name; extra columns are
/// ignored and a missing one is reported by name.
pub fn read_metrics<R: Read>(input: R) -> Result<Vec<SelectionStats>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rd
        .headers()
        .map_err(|e| DashError::format("metrics csv", e.to_string()))?
        .clone();
    let mut idx = [0usize; 13];
    for (slot, name) in idx.iter_mut().zip(METRICS_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DashError::format("metrics csv", format!("missing column `{name}`")))?;
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| DashError::format("metrics csv", e.to_string()))?;
        let field = |k: usize| -> Result<&str> {
            rec.get(idx[k]).ok_or_else(|| {
                DashError::format("metrics csv", format!("row {} lacks `{}`", line + 1, METRICS_COLUMNS[k]))
            })
        };
        let count = |k: usize| -> Result<usize> {
            field(k)?.trim().parse().map_err(|_| {
                DashError::format("metrics csv", format!("row {}: bad `{}`", line + 1, METRICS_COLUMNS[k]))
            })
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?.trim().parse().map_err(|_| {
                DashError::format("metrics csv", format!("row {}: bad `{}`", line + 1, METRICS_COLUMNS[k]))
            })
        };
        let row = SelectionStats {
            step: count(0)?,
            epoch: count(1)?,
            rho_t: num(2)?,
            n_sampled: count(3)?,
            n_selected: count(4)?,
            n_sel_correct: count(5)?,
            n_sel_wrong: count(6)?,
            n_sel_p: count(7)?,
            n_sel_q: count(8)?,
            labeled_loss: num(9)?,
            unlabeled_loss: num(10)?,
            test_error: num(11)?,
            lr: num(12)?,
        };
        if !row.counts_consistent() {
            return Err(DashError::format(
                "metrics csv",
                format!("row {}: selection counts do not add up", line + 1),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_checkpoint<W: Write>(params: &[f64], mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Decodes a checkpoint held in memory.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<f64>> {
    let bad = |d: String| DashError::format("checkpoint", d);
    if bytes.len() < 16 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let d = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
    let body = &bytes[16..];
    if (body.len() as u64) % 8 != 0 || body.len() as u64 / 8 != d {
        return Err(bad(format!("header declares {d} values but body holds {} bytes", body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("value {i} is not finite")));
    }
    Ok(values)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
