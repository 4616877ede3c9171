//! `report`: long-format CSV and an ASCII accuracy map from `sweep.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

const REQUIRED: [&str; 8] = ["n", "beta_m", "beta_l", "m", "l", "model", "attack", "accuracy"];
const METRICS: [&str; 7] = ["accuracy", "ambiguity", "pe", "ev1", "ev2", "ev3", "entropy_median"];
const RAMP: &[u8] = b" .:-=+*#%@";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub n: usize,
    pub model: String,
    pub attack: String,
    pub beta_m: f64,
    pub beta_l: f64,
    pub m: usize,
    pub l: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<LongRow>,
}

fn fmt_err(path: &Path, row: usize, message: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        row,
        message,
    }
}

/// Reads a sweep CSV; errors carry the 1-based row (header = row 1).
pub fn build(path: &Path) -> Result<Report> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt_err(path, 1, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fmt_err(path, 1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| col(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(fmt_err(path, 1, format!("missing required column(s): {}", missing.join(", "))));
    }
    let idx: BTreeMap<&str, usize> = REQUIRED.iter().chain(METRICS.iter()).filter_map(|&c| col(c).map(|i| (c, i))).collect();

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| fmt_err(path, row, e.to_string()))?;
        let field = |name: &str| rec.get(idx[name]).unwrap_or("").trim();
        let num = |name: &str| -> Result<f64> {
            let v = field(name);
            v.parse::<f64>()
                .map_err(|_| fmt_err(path, row, format!("column `{name}`: `{v}` is not a number")))
        };
        let int = |name: &str| -> Result<usize> {
            let v = field(name);
            v.parse::<usize>()
                .map_err(|_| fmt_err(path, row, format!("column `{name}`: `{v}` is not a non-negative integer")))
        };
        let (n, m, l) = (int("n")?, int("m")?, int("l")?);
        let (beta_m, beta_l) = (num("beta_m")?, num("beta_l")?);
        let (model, attack) = (field("model").to_string(), field("attack").to_string());
        if model.is_empty() || attack.is_empty() {
            return Err(fmt_err(path, row, "empty model or attack".into()));
        }
        for metric in METRICS {
            if !idx.contains_key(metric) || (metric != "accuracy" && field(metric).is_empty()) {
                continue;
            }
            rows.push(LongRow {
                n,
                model: model.clone(),
                attack: attack.clone(),
                beta_m,
                beta_l,
                m,
                l,
                metric: metric.to_string(),
                value: num(metric)?,
            });
        }
    }
    Ok(Report { rows })
}

pub fn write_long(path: &Path, report: &Report) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Feature dimension implied by a model label such as `r-state(3)`.
pub fn dim_from_label(label: &str) -> Option<usize> {
    let args = |s: &str| -> Option<Vec<usize>> {
        let inner = s.split_once('(')?.1.strip_suffix(')')?;
        inner.split(',').map(|x| x.trim().parse().ok()).collect()
    };
    if label == "two-state" {
        Some(1)
    } else if label.starts_with("r-state") {
        args(label)?.first().and_then(|r| r.checked_sub(1)).filter(|&d| d > 0)
    } else if label.starts_with("markov") {
        match args(label)?.as_slice() {
            [r, e] => e.checked_sub(*r).filter(|&d| d > 0),
            _ => None,
        }
    } else {
        None
    }
}

fn glyph(acc: f64) -> char {
    let i = ((acc.clamp(0.0, 1.0) * RAMP.len() as f64) as usize).min(RAMP.len() - 1);
    RAMP[i] as char
}

/// One map per (model, n, attack): rows are β_l descending, columns β_m ascending.
pub fn render(report: &Report) -> String {
    type Key = (String, usize, String);
    type Cells = BTreeMap<(u64, u64), (f64, f64, f64)>;
    let mut groups: BTreeMap<Key, Cells> = BTreeMap::new();
    for r in report.rows.iter().filter(|r| r.metric == "accuracy") {
        // betas are non-negative, so bit order equals numeric order
        groups
            .entry((r.model.clone(), r.n, r.attack.clone()))
            .or_default()
            .insert((r.beta_m.to_bits(), r.beta_l.to_bits()), (r.beta_m, r.beta_l, r.value));
    }
    let mut s = String::new();
    for ((model, n, attack), cells) in &groups {
        let mut bms: Vec<f64> = cells.values().map(|c| c.0).collect();
        let mut bls: Vec<f64> = cells.values().map(|c| c.1).collect();
        bms.sort_by(f64::total_cmp);
        bms.dedup();
        bls.sort_by(|a, b| b.total_cmp(a));
        bls.dedup();
        let boundary = dim_from_label(model).map(|d| format!("{:.3}", 2.0 / d as f64)).unwrap_or_else(|| "?".into());
        let _ = writeln!(s, "accuracy  model={model} n={n} attack={attack}  (boundary 2/d = {boundary})");
        let _ = writeln!(s, "beta_l \\ beta_m");
        for &bl in &bls {
            let _ = write!(s, "{bl:>7.2} |");
            for &bm in &bms {
                match cells.get(&(bm.to_bits(), bl.to_bits())) {
                    Some(&(_, _, acc)) => {
                        let _ = write!(s, " {}{:.2}", glyph(acc), acc);
                    }
                    None => s.push_str("      "),
                }
            }
            s.push('\n');
        }
        let _ = write!(s, "        +");
        for _ in &bms {
            s.push_str("------");
        }
        let _ = write!(s, "\n         ");
        for &bm in &bms {
            let _ = write!(s, "{bm:>6.2}");
        }
        let _ = writeln!(s, "\nscale: '{}' = 0 .. 1\n", std::str::from_utf8(RAMP).unwrap_or(""));
    }
    s
}
