//! Text renderings of a [`ComparisonReport`].
//!
//! Every file starts with the artifact version and the config hash: CSV
//! files as `#` comment lines, JSON as top-level fields. Wall times only
//! appear in the timings file so the other three are reproducible byte for
//! byte.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::compare::ComparisonReport;

pub const ARTIFACT_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Hex SHA-256 over the parts, each prefixed by its length.
pub fn config_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `# <version> config_sha256=<hash>`
pub fn header_line(hash: &str) -> String {
    format!("# {ARTIFACT_VERSION} config_sha256={hash}\n")
}

/// `a..b` for a contiguous run, else a comma list.
pub fn format_hours(hours: &[usize]) -> String {
    match (hours.first(), hours.last()) {
        (Some(&a), Some(&b)) if b - a + 1 == hours.len() => format!("{a}..{b}"),
        _ => hours.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    }
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "n/a".into())
}

fn fixed6(v: f64) -> String {
    format!("{v:.6}")
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn preamble(r: &ComparisonReport) -> String {
    let reference = r.gap_reference.map(|k| k.as_str()).unwrap_or("n/a");
    format!(
        "{}# instance={} hours={} gap_reference={}\n",
        header_line(&r.config_hash),
        r.instance,
        format_hours(&r.hours),
        reference
    )
}

/// Objectives ($), gaps and violations (%) per row.
pub fn comparison_csv(r: &ComparisonReport) -> String {
    let mut s = preamble(r);
    s.push_str("variant,status,objective,lower_bound,gap_pct,max_violation_pct,avg_violation_pct,repaired_objective,closure_residual_mw\n");
    for row in &r.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.kind.as_str(),
            row.status,
            opt(row.objective, fixed6),
            opt(row.lower_bound, fixed6),
            opt(row.gap.map(|g| 100.0 * g), fixed6),
            opt(row.max_violation.map(|v| 100.0 * v), fixed6),
            opt(row.avg_violation.map(|v| 100.0 * v), fixed6),
            opt(row.repaired_objective, fixed6),
            opt(row.closure_residual(), sci),
        ));
    }
    s
}

fn num(v: Option<f64>) -> Value {
    v.filter(|x| x.is_finite()).map(Value::from).unwrap_or(Value::Null)
}

/// Same content as the CSV plus solver counters and audit summaries.
pub fn comparison_json(r: &ComparisonReport) -> String {
    let rows: Vec<Value> = r
        .rows
        .iter()
        .map(|row| {
            json!({
                "variant": row.kind.as_str(),
                "status": row.status,
                "error": row.error,
                "objective": num(row.objective),
                "lower_bound": num(row.lower_bound),
                "gap_pct": num(row.gap.map(|g| 100.0 * g)),
                "max_violation_pct": num(row.max_violation.map(|v| 100.0 * v)),
                "avg_violation_pct": num(row.avg_violation.map(|v| 100.0 * v)),
                "repaired_objective": num(row.repaired_objective),
                "closure_residual_mw": num(row.closure_residual()),
                "max_taylor_gap": num(row.audit.as_ref().map(|a| a.max_taylor_gap())),
                "flagged_pipes": row.audit.as_ref().map(|a| a.flagged()),
                "nodes": row.nodes,
                "iterations": row.iterations,
            })
        })
        .collect();
    let doc = json!({
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": r.config_hash,
        "instance": r.instance,
        "hours": r.hours,
        "gap_reference": r.gap_reference.map(|k| k.as_str()),
        "rows": rows,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// Exponential-vs-linear loss audit of every row that produced a point.
pub fn audit_csv(r: &ComparisonReport) -> String {
    let mut s = preamble(r);
    s.push_str("variant,pipe,hour,mass_flow,loss_ratio,tau_upstream,exact_outlet,taylor_outlet,abs_gap,taylor_gap,model_outlet,flag\n");
    let e = |v: Option<f64>| opt(v, |x| format!("{x:.12e}"));
    for row in &r.rows {
        let Some(audit) = &row.audit else { continue };
        for p in &audit.pipes {
            s.push_str(&format!(
                "{},{},{},{:.9},{},{:.9},{},{},{},{},{},{}\n",
                row.kind.as_str(),
                p.pipe,
                p.hour,
                p.mass_flow,
                e(p.loss_ratio),
                p.tau_upstream,
                e(p.exact_outlet),
                e(p.taylor_outlet),
                e(p.abs_gap),
                e(p.taylor_gap),
                e(p.model_outlet),
                if p.flagged { "premise" } else { "" },
            ));
        }
    }
    s
}

/// Wall time and work counters per row; not reproducible by nature.
pub fn timings_csv(r: &ComparisonReport) -> String {
    let mut s = header_line(&r.config_hash);
    s.push_str("variant,status,wall_seconds,nodes,iterations\n");
    let count = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
    for row in &r.rows {
        let (nodes, iterations) = (count(row.nodes), count(row.iterations));
        s.push_str(&format!("{},{},{:.6},{nodes},{iterations}\n", row.kind.as_str(), row.status, row.wall_seconds));
    }
    s
}
