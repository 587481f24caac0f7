//! LP-format text export for cross-checking with external solvers.

use std::collections::HashMap;
use std::fmt::Write;

use super::ProblemInstance;

fn col_name(inst: &ProblemInstance, j: usize) -> String {
    let k = inst.vars.key(j);
    format!("{}({},{})", k.kind.as_str(), k.id, k.hour)
}

fn term(out: &mut String, first: &mut bool, v: f64, name: &str) {
    if v == 0.0 {
        return;
    }
    let sign = if v < 0.0 { "-" } else if *first { "" } else { "+" };
    let _ = write!(out, " {sign} {} {name}", v.abs());
    *first = false;
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Renders the instance in CPLEX LP format. Rows are named after their label
/// (`r<tag>(<entity>,<hour>)`, with a `.k` suffix on repeats).
pub fn to_lp_string(inst: &ProblemInstance) -> String {
    let names: Vec<String> = (0..inst.n()).map(|j| col_name(inst, j)).collect();
    let mut out = String::from("\\ variant ");
    out.push_str(inst.variant.as_str());
    out.push_str("\nMinimize\n obj:");
    let mut first = true;
    for (j, &v) in inst.qp.q.iter().enumerate() {
        term(&mut out, &mut first, v, &names[j]);
    }
    if !inst.qp.q_mat.is_empty() {
        out.push_str(if first { " [" } else { " + [" });
        let mut qf = true;
        for (i, j, v) in inst.qp.q_mat.iter() {
            let (coef, prod) = if i == j {
                (v, format!("{} ^ 2", names[i]))
            } else {
                (2.0 * v, format!("{} * {}", names[i], names[j]))
            };
            term(&mut out, &mut qf, coef, &prod);
        }
        out.push_str(" ] / 2");
    }
    if inst.qp.c0 != 0.0 {
        let _ = write!(out, " + {} constant", inst.qp.c0);
    }
    out.push_str("\nSubject To\n");
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut row_name = |label: String| {
        let k = seen.entry(label.clone()).or_insert(0);
        *k += 1;
        if *k == 1 {
            label
        } else {
            format!("{label}.{k}")
        }
    };
    for (rows, b, labels, sense) in [
        (&inst.qp.a_eq, &inst.qp.b_eq, &inst.eq_labels, "="),
        (&inst.qp.a_in, &inst.qp.b_in, &inst.in_labels, "<="),
    ] {
        for (i, l) in labels.iter().enumerate() {
            let _ = write!(out, " {}:", row_name(format!("r{}({},{})", l.tag, l.entity, l.hour)));
            let mut f = true;
            for &(c, v) in rows.row(i) {
                term(&mut out, &mut f, v, &names[c]);
            }
            if f {
                out.push_str(" 0 constant");
            }
            let _ = writeln!(out, " {sense} {}", b[i]);
        }
    }
    for t in &inst.bilinear {
        let _ = writeln!(
            out,
            " {}: {} - [ {} {} * {} ] = 0",
            row_name(format!("r{}({},{})", t.tag, t.pipe, t.hour)),
            names[t.product],
            t.coef,
            names[t.flow],
            names[t.temp]
        );
    }
    out.push_str("Bounds\n");
    for j in 0..inst.n() {
        let (lo, hi) = (inst.qp.lo[j], inst.qp.hi[j]);
        if lo == hi {
            let _ = writeln!(out, " {} = {}", names[j], lo);
        } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            let _ = writeln!(out, " {} free", names[j]);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_bound(lo), names[j], fmt_bound(hi));
        }
    }
    out.push_str("End\n");
    out
}
