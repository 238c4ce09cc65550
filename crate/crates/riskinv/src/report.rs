//! Deterministic artifact serialization. Every file is written atomically
//! (temp file in the target directory, then rename), floats are emitted
//! with 17 significant digits so they round-trip exactly, CSV files carry
//! a header comment naming the tool version and the config hash, and JSON
//! documents carry the same fields inline.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::error::{Error, Result};
use crate::forward::{ForwardSolution, FrontierPoint};
use crate::inverse::{InverseInstance, InverseSolution, IpoStatus};
use crate::market_data::{MarketMoments, ReturnPanel};
use crate::metrics::RankComparison;
use crate::online::RiskTrace;
use crate::validation::{OrderResult, ValidationReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// 17 significant digits; parses back to the identical bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Provenance stamp embedded in every output file.
#[derive(Debug, Clone)]
pub struct OutputMeta {
    pub config_sha256: String,
}

impl OutputMeta {
    pub fn from_config_text(text: &str) -> Self {
        OutputMeta {
            config_sha256: sha256_hex(text.as_bytes()),
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# riskinv {TOOL_VERSION} config_sha256={}\n",
            self.config_sha256
        )
    }

    fn stamp(&self, value: &mut Value) {
        let obj = value.as_object_mut().expect("documents are objects");
        obj.insert("schema_version".into(), json!(1));
        obj.insert("tool_version".into(), json!(TOOL_VERSION));
        obj.insert("config_sha256".into(), json!(self.config_sha256));
    }
}

/// Writes bytes via a temporary file in the same directory followed by a
/// rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let dir = parent.unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    std::io::Write::write_all(&mut tmp, bytes).map_err(io_err)?;
    tmp.persist(path)
        .map_err(|e| io_err(e.error))
        .map(|_| ())
}

fn write_json(path: &Path, mut doc: Value, meta: &OutputMeta) -> Result<()> {
    meta.stamp(&mut doc);
    let mut text = serde_json::to_string_pretty(&doc).expect("valid json document");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })
}

/// JSON value for possibly-infinite diagnostics (plain JSON has no
/// infinity literal).
fn finite_or_string(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn matrix_json(m: &Array2<f64>) -> Value {
    Value::Array(
        m.rows()
            .into_iter()
            .map(|r| Value::Array(r.iter().map(|&v| json!(v)).collect()))
            .collect(),
    )
}

fn vector_json(v: &Array1<f64>) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

// -- returns / moments -------------------------------------------------------

pub fn write_returns_csv(path: &Path, panel: &ReturnPanel, meta: &OutputMeta) -> Result<()> {
    let mut out = meta.csv_header();
    out.push_str("date");
    for t in &panel.tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (t, date) in panel.dates.iter().enumerate() {
        out.push_str(&date.to_string());
        for v in panel.returns.row(t) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct MomentsDoc {
    as_of: String,
    lookback_offset: usize,
    c: Vec<f64>,
    q: Vec<Vec<f64>>,
}

pub fn write_moments_json(path: &Path, m: &MarketMoments, meta: &OutputMeta) -> Result<()> {
    let doc = json!({
        "as_of": m.as_of.to_string(),
        "lookback_offset": m.lookback_offset,
        "c": m.c.to_vec(),
        "q": m.q.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    });
    write_json(path, doc, meta)
}

pub fn read_moments_json(path: &Path) -> Result<MarketMoments> {
    let value = read_json(path)?;
    let doc: MomentsDoc =
        serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
    let n = doc.c.len();
    if doc.q.len() != n || doc.q.iter().any(|row| row.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} covariance"),
            actual: format!("{} rows", doc.q.len()),
            context: format!("moments document {}", path.display()),
        });
    }
    let mut q = Array2::zeros((n, n));
    for (i, row) in doc.q.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            q[[i, j]] = v;
        }
    }
    let as_of = doc.as_of.parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        reason: format!("bad as_of date `{}`", doc.as_of),
    })?;
    Ok(MarketMoments {
        q,
        c: Array1::from_vec(doc.c),
        as_of,
        lookback_offset: doc.lookback_offset,
    })
}

// -- forward / frontier -------------------------------------------------------

pub fn forward_solution_json(sol: &ForwardSolution) -> Value {
    json!({
        "x": vector_json(&sol.x),
        "u": vector_json(&sol.u),
        "objective": sol.objective,
        "active_set": sol.active_set,
        "risk": sol.risk,
        "ret": sol.ret,
        "target_dual": sol.target_dual,
        "kkt": {
            "feasibility": sol.kkt.feasibility,
            "dual_feasibility": sol.kkt.dual_feasibility,
            "complementarity": sol.kkt.complementarity,
            "stationarity": sol.kkt.stationarity,
        },
    })
}

pub fn write_forward_json(
    path: &Path,
    r: f64,
    sol: &ForwardSolution,
    meta: &OutputMeta,
) -> Result<()> {
    let mut doc = forward_solution_json(sol);
    doc.as_object_mut()
        .expect("object")
        .insert("r".into(), json!(r));
    write_json(path, doc, meta)
}

pub fn write_frontier_csv(path: &Path, points: &[FrontierPoint], meta: &OutputMeta) -> Result<()> {
    let n = points.first().map(|p| p.x.len()).unwrap_or(0);
    let mut out = meta.csv_header();
    out.push_str("r,risk,ret");
    for j in 0..n {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for p in points {
        out.push_str(&fmt_f64(p.r));
        out.push(',');
        out.push_str(&fmt_f64(p.risk));
        out.push(',');
        out.push_str(&fmt_f64(p.ret));
        for v in &p.x {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

// -- inverse instance / solution ----------------------------------------------

pub fn write_instance_json(path: &Path, inst: &InverseInstance, meta: &OutputMeta) -> Result<()> {
    let constraints = match inst.cons.kind {
        ConstraintKind::LongOnlyBudget => json!({
            "kind": "long_only_budget",
            "n": inst.cons.n(),
        }),
        ConstraintKind::FactorDense { epsilon } => json!({
            "kind": "factor_dense",
            "epsilon": epsilon,
            "a": matrix_json(&inst.cons.a),
            "b": vector_json(&inst.cons.b),
        }),
        ConstraintKind::Custom => json!({
            "kind": "custom",
            "a": matrix_json(&inst.cons.a),
            "b": vector_json(&inst.cons.b),
        }),
    };
    let doc = json!({
        "q": inst.q.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "c": inst.c.to_vec(),
        "constraints": constraints,
        "y": inst.y.to_vec(),
        "r_prev": inst.r_prev,
        "eta": inst.eta,
        "big_m": inst.big_m,
    });
    write_json(path, doc, meta)
}

fn value_matrix(value: &Value, what: &str, path: &Path) -> Result<Array2<f64>> {
    let parse_err = |reason: String| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        reason,
    };
    let rows = value
        .as_array()
        .ok_or_else(|| parse_err(format!("{what} must be an array of rows")))?;
    let ncols = rows
        .first()
        .and_then(|r| r.as_array())
        .map(|r| r.len())
        .unwrap_or(0);
    let mut out = Array2::zeros((rows.len(), ncols));
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| parse_err(format!("{what} row {i} must be an array")))?;
        if row.len() != ncols {
            return Err(parse_err(format!("{what} row {i} has ragged length")));
        }
        for (j, v) in row.iter().enumerate() {
            out[[i, j]] = v
                .as_f64()
                .ok_or_else(|| parse_err(format!("{what}[{i}][{j}] must be a number")))?;
        }
    }
    Ok(out)
}

fn value_vector(value: &Value, what: &str, path: &Path) -> Result<Array1<f64>> {
    let parse_err = |reason: String| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        reason,
    };
    let items = value
        .as_array()
        .ok_or_else(|| parse_err(format!("{what} must be an array")))?;
    let mut out = Array1::zeros(items.len());
    for (i, v) in items.iter().enumerate() {
        out[i] = v
            .as_f64()
            .ok_or_else(|| parse_err(format!("{what}[{i}] must be a number")))?;
    }
    Ok(out)
}

pub fn read_instance_json(path: &Path) -> Result<InverseInstance> {
    let value = read_json(path)?;
    let parse_err = |reason: String| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        reason,
    };
    let field = |name: &str| {
        value
            .get(name)
            .ok_or_else(|| parse_err(format!("missing field `{name}`")))
    };
    let number = |name: &str| -> Result<f64> {
        field(name)?
            .as_f64()
            .ok_or_else(|| parse_err(format!("field `{name}` must be a number")))
    };
    let q = value_matrix(field("q")?, "q", path)?;
    let c = value_vector(field("c")?, "c", path)?;
    let y = value_vector(field("y")?, "y", path)?;
    let cons_doc = field("constraints")?;
    let kind = cons_doc
        .get("kind")
        .and_then(|v| v.as_str())
        .ok_or_else(|| parse_err("constraints.kind must be a string".into()))?;
    let cons = match kind {
        "long_only_budget" => {
            let n = cons_doc
                .get("n")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| parse_err("constraints.n must be an integer".into()))?;
            ConstraintSet::long_only_budget(n as usize)
        }
        "custom" | "factor_dense" => {
            let a = value_matrix(
                cons_doc
                    .get("a")
                    .ok_or_else(|| parse_err("missing constraints.a".into()))?,
                "constraints.a",
                path,
            )?;
            let b = value_vector(
                cons_doc
                    .get("b")
                    .ok_or_else(|| parse_err("missing constraints.b".into()))?,
                "constraints.b",
                path,
            )?;
            ConstraintSet::custom(a, b)?
        }
        other => return Err(parse_err(format!("unknown constraint kind `{other}`"))),
    };
    Ok(InverseInstance {
        q,
        c,
        cons,
        y,
        r_prev: number("r_prev")?,
        eta: number("eta")?,
        big_m: number("big_m")?,
    })
}

pub fn write_inverse_json(
    path: &Path,
    inst: &InverseInstance,
    sol: &InverseSolution,
    meta: &OutputMeta,
) -> Result<()> {
    let cert = sol.certificate(inst);
    let status = match sol.status {
        IpoStatus::Optimal => "optimal",
        IpoStatus::GapTolerance => "gap_tolerance",
        IpoStatus::Infeasible => "infeasible",
    };
    let doc = json!({
        "r": sol.r,
        "x": vector_json(&sol.x),
        "u": vector_json(&sol.u),
        "z": sol.z,
        "objective": sol.objective,
        "loss": sol.loss,
        "status": status,
        "clamped": sol.clamped,
        "binding_m": sol.binding_m,
        "root_bound": finite_or_string(sol.root_bound),
        "nodes": sol.nodes,
        "certificate": {
            "stationarity": cert.stationarity,
            "feasibility": cert.feasibility,
            "dual_feasibility": cert.dual_feasibility,
            "big_m": cert.big_m,
        },
    });
    write_json(path, doc, meta)
}

// -- learning trace -------------------------------------------------------

pub fn write_trace_csv(path: &Path, trace: &RiskTrace, meta: &OutputMeta) -> Result<()> {
    let mut out = meta.csv_header();
    out.push_str("date,r_mean,r_std");
    for l in &trace.lookbacks {
        out.push_str(&format!(",r_l{l}"));
    }
    for l in &trace.lookbacks {
        out.push_str(&format!(",loss_l{l}"));
    }
    for l in &trace.lookbacks {
        out.push_str(&format!(",binding_l{l}"));
    }
    out.push('\n');
    for (t, date) in trace.dates.iter().enumerate() {
        out.push_str(&date.to_string());
        out.push(',');
        out.push_str(&fmt_f64(trace.r_mean[t]));
        out.push(',');
        out.push_str(&fmt_f64(trace.r_std[t]));
        for l in 0..trace.lookbacks.len() {
            out.push(',');
            out.push_str(&fmt_f64(trace.per_lookback[[l, t]]));
        }
        for l in 0..trace.lookbacks.len() {
            out.push(',');
            out.push_str(&fmt_f64(trace.per_round_loss[[l, t]]));
        }
        for l in 0..trace.lookbacks.len() {
            out.push(',');
            out.push(if trace.binding[[l, t]] { '1' } else { '0' });
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Reads back the `date` and `r_mean` columns of a trace CSV, skipping the
/// leading provenance comment.
pub fn read_trace_mean(path: &Path) -> Result<Vec<(chrono::NaiveDate, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if !line.starts_with("date,r_mean,r_std") {
                return Err(parse_err(lineno, "expected trace header".into()));
            }
            saw_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let date = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(lineno, "bad date".into()))?;
        let r_mean: f64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(lineno, "bad r_mean".into()))?;
        rows.push((date, r_mean));
    }
    if !saw_header {
        return Err(parse_err(0, "trace file has no header row".into()));
    }
    Ok(rows)
}

// -- validation -------------------------------------------------------------

fn order_json(order: &OrderResult) -> Value {
    json!({
        "true_r": order.true_r,
        "estimated_r": order.estimated_r,
        "true_order": order.true_order,
        "estimated_order": order.estimated_order,
        "exact_match": order.exact_match,
        "spearman": order.spearman,
        "kendall": order.kendall,
        "seed": order.seed,
    })
}

pub fn write_validation_json(
    path: &Path,
    report: &ValidationReport,
    meta: &OutputMeta,
) -> Result<()> {
    let cells: Vec<Value> = report
        .cells
        .iter()
        .map(|cell| {
            json!({
                "big_m": cell.big_m,
                "lambda": cell.lambda,
                "epsilon": cell.epsilon,
                "error": finite_or_string(cell.error),
            })
        })
        .collect();
    let doc = json!({
        "cells": cells,
        "best": report.best,
        "best_cell": {
            "big_m": report.best_cell().big_m,
            "lambda": report.best_cell().lambda,
            "epsilon": report.best_cell().epsilon,
            "error": finite_or_string(report.best_cell().error),
        },
        "r_samples": report.r_samples,
        "r_guesses": report.r_guesses,
        "rounds": report.rounds,
        "seed": report.seed,
        "order": report.order.as_ref().map(order_json),
    });
    write_json(path, doc, meta)
}

pub fn write_grid_csv(path: &Path, report: &ValidationReport, meta: &OutputMeta) -> Result<()> {
    let mut out = meta.csv_header();
    out.push_str("big_m,lambda,epsilon,error\n");
    for cell in &report.cells {
        out.push_str(&fmt_f64(cell.big_m));
        out.push(',');
        out.push_str(&fmt_f64(cell.lambda));
        out.push(',');
        match cell.epsilon {
            Some(e) => out.push_str(&fmt_f64(e)),
            None => out.push_str(""),
        }
        out.push(',');
        if cell.error.is_finite() {
            out.push_str(&fmt_f64(cell.error));
        } else {
            out.push_str("inf");
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_order_json(path: &Path, order: &OrderResult, meta: &OutputMeta) -> Result<()> {
    write_json(path, order_json(order), meta)
}

// -- metrics -------------------------------------------------------------

pub fn rank_comparison_json(cmp: &RankComparison) -> Value {
    json!({
        "labels": cmp.labels,
        "rank_a": cmp.rank_a,
        "rank_b": cmp.rank_b,
        "spearman": cmp.spearman,
        "kendall": cmp.kendall,
        "exact_match": cmp.exact_match,
    })
}

/// One metrics document: per-label mean learned tolerance, rank comparisons
/// against each beta year, and an optional inverse Sharpe spot value.
pub fn write_metrics_json(
    path: &Path,
    mean_r: &BTreeMap<String, f64>,
    comparisons: &[(i32, RankComparison)],
    inverse_sharpe: Option<f64>,
    meta: &OutputMeta,
) -> Result<()> {
    let comps: Vec<Value> = comparisons
        .iter()
        .map(|(year, cmp)| {
            let mut v = rank_comparison_json(cmp);
            v.as_object_mut()
                .expect("object")
                .insert("year".into(), json!(year));
            v
        })
        .collect();
    let doc = json!({
        "mean_r": mean_r,
        "comparisons": comps,
        "inverse_sharpe": inverse_sharpe,
    });
    write_json(path, doc, meta)
}

/// Flat per-label rank rows for every beta year, ready for plotting.
pub fn write_comparison_csv(
    path: &Path,
    comparisons: &[(i32, RankComparison)],
    meta: &OutputMeta,
) -> Result<()> {
    let mut out = meta.csv_header();
    out.push_str("year,label,rank_learned,rank_beta\n");
    for (year, cmp) in comparisons {
        for (i, label) in cmp.labels.iter().enumerate() {
            out.push_str(&format!(
                "{year},{label},{},{}\n",
                fmt_f64(cmp.rank_a[i]),
                fmt_f64(cmp.rank_b[i])
            ));
        }
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use ndarray::{arr1, arr2};

    fn meta() -> OutputMeta {
        OutputMeta::from_config_text("schema_version = 1\n")
    }

    #[test]
    fn fmt_f64_round_trips_bit_exactly() {
        for &v in &[
            std::f64::consts::PI,
            1.0 / 3.0,
            -1.2345678901234567e-300,
            6.02214076e23,
            0.0,
            -0.0,
            1e-308,
        ] {
            let parsed: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "value {v}");
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_creates_parents_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        // No stray temporaries left behind.
        let extra: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(extra, vec![std::ffi::OsString::from("out.txt")]);
    }

    #[test]
    fn moments_json_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moments.json");
        let m = MarketMoments {
            q: arr2(&[[0.04, 0.01], [0.01, 0.09]]),
            c: arr1(&[0.1, 1.0 / 3.0]),
            as_of: "2020-03-31".parse().unwrap(),
            lookback_offset: 2,
        };
        write_moments_json(&path, &m, &meta()).unwrap();
        let back = read_moments_json(&path).unwrap();
        assert_eq!(back.as_of, m.as_of);
        assert_eq!(back.lookback_offset, 2);
        for (a, b) in m.q.iter().zip(back.q.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in m.c.iter().zip(back.c.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"tool_version\""));
        assert!(text.contains(&meta().config_sha256));
    }

    #[test]
    fn instance_json_round_trips_each_constraint_kind() {
        let dir = tempfile::tempdir().unwrap();
        let base = InverseInstance {
            q: arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            c: arr1(&[0.3, 0.1]),
            cons: ConstraintSet::long_only_budget(2),
            y: arr1(&[0.6, 0.4]),
            r_prev: 1.25,
            eta: 317.0,
            big_m: 1000.0,
        };
        let path = dir.path().join("inst.json");
        write_instance_json(&path, &base, &meta()).unwrap();
        let back = read_instance_json(&path).unwrap();
        assert_eq!(back.cons.m(), 6);
        assert_eq!(back.r_prev, 1.25);
        assert_eq!(back.y, base.y);

        let custom = InverseInstance {
            cons: ConstraintSet::custom(arr2(&[[1.0, 0.0], [0.0, 1.0]]), arr1(&[-5.0, -5.0]))
                .unwrap(),
            ..base.clone()
        };
        let path2 = dir.path().join("inst_custom.json");
        write_instance_json(&path2, &custom, &meta()).unwrap();
        let back2 = read_instance_json(&path2).unwrap();
        assert_eq!(back2.cons.m(), 2);
        assert_eq!(back2.cons.b, arr1(&[-5.0, -5.0]));
    }

    #[test]
    fn returns_csv_has_header_and_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("returns.csv");
        let panel = ReturnPanel::new(
            vec!["2020-01-31".parse().unwrap()],
            vec!["AA".into(), "BB".into()],
            arr2(&[[0.1, 1.0 / 3.0]]),
        )
        .unwrap();
        write_returns_csv(&path, &panel, &meta()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# riskinv "));
        assert_eq!(lines.next().unwrap(), "date,AA,BB");
        let row = lines.next().unwrap();
        assert!(row.starts_with("2020-01-31,"));
        let third: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(third.to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn trace_csv_round_trips_mean_column() {
        use crate::online::RiskTrace;
        use ndarray::Array2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = RiskTrace {
            dates: vec!["2020-02-03".parse().unwrap(), "2020-02-04".parse().unwrap()],
            lookbacks: vec![1, 2],
            r_mean: vec![1.5, 1.0 / 7.0],
            r_std: vec![0.0, 0.25],
            per_lookback: Array2::from_shape_vec((2, 2), vec![1.5, 0.1, 1.5, 0.2]).unwrap(),
            per_round_loss: Array2::zeros((2, 2)),
            binding: Array2::from_elem((2, 2), false),
        };
        write_trace_csv(&path, &trace, &meta()).unwrap();
        let rows = read_trace_mean(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0.to_string(), "2020-02-03");
        assert_eq!(rows[1].1.to_bits(), (1.0f64 / 7.0).to_bits());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with(
            "date,r_mean,r_std,r_l1,r_l2,loss_l1,loss_l2,binding_l1,binding_l2"
        ));
    }

    #[test]
    fn infinite_grid_errors_serialize_as_strings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        let report = ValidationReport {
            cells: vec![
                crate::validation::CellResult {
                    big_m: 1e-4,
                    lambda: 100.0,
                    epsilon: None,
                    error: f64::INFINITY,
                },
                crate::validation::CellResult {
                    big_m: 100.0,
                    lambda: 100.0,
                    epsilon: None,
                    error: 0.5,
                },
            ],
            best: 1,
            r_samples: vec![1.0],
            r_guesses: vec![1.0],
            rounds: 5,
            seed: 1,
            order: None,
        };
        write_validation_json(&path, &report, &meta()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"inf\""));
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["best"], 1);
    }
}
