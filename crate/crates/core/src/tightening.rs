//! Iterative bound tightening of the McCormick relaxation.
//!
//! Each iteration solves the envelope relaxation under the current boxes
//! and measures the product violations. If they are not yet below `delta`,
//! the box of every flow and every non-source node temperature is shrunk to
//! `[(1-ε)v, (1+ε)v]` around the iteration's value `v`, intersected with the
//! physical bounds, and the loop repeats with the next `ε` of the schedule.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::formulation::{build, mccormick_relax, FormulationError, ProblemInstance, TermBox, Variant};
use crate::network::NetworkModel;
use crate::qp::{solve_qp, QpConfig, QpError, QpStatus};
use crate::repair::{repair_fixed_flow, PolishConfig, Repaired};

/// Floor on `|H|` in the violation denominator, MW.
pub const VIOLATION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum EpsSchedule {
    /// `ε^n = a·r^(n-1)`.
    Geometric { a: f64, r: f64 },
    /// Explicit values; the last one repeats past the end.
    List(Vec<f64>),
}

impl EpsSchedule {
    /// `ε^n` for 1-based `n`.
    pub fn value(&self, n: usize) -> f64 {
        let k = n.max(1) - 1;
        match self {
            EpsSchedule::Geometric { a, r } => a * r.powi(k as i32),
            EpsSchedule::List(v) => v[k.min(v.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<(), TighteningError> {
        let bad = |m: String| Err(TighteningError::InvalidConfig(m));
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        match self {
            EpsSchedule::Geometric { a, r } => {
                if !in_unit(*a) {
                    return bad(format!("geometric start {a} outside (0,1)"));
                }
                if !(*r > 0.0 && *r <= 1.0) {
                    return bad(format!("geometric ratio {r} outside (0,1]"));
                }
            }
            EpsSchedule::List(v) => {
                if v.is_empty() {
                    return bad("empty eps list".into());
                }
                if let Some(e) = v.iter().find(|e| !in_unit(**e)) {
                    return bad(format!("eps value {e} outside (0,1)"));
                }
                if v.windows(2).any(|w| w[1] > w[0]) {
                    return bad("eps list must be nonincreasing".into());
                }
            }
        }
        Ok(())
    }
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule::Geometric { a: 0.5, r: 0.5 }
    }
}

impl fmt::Display for EpsSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsSchedule::Geometric { a, r } => write!(f, "geom:{a},{r}"),
            EpsSchedule::List(v) => {
                let s: Vec<String> = v.iter().map(f64::to_string).collect();
                write!(f, "list:{}", s.join(","))
            }
        }
    }
}

impl FromStr for EpsSchedule {
    type Err = TighteningError;

    /// `geom:a,r` or `list:v1,v2,...`, validated.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TighteningError::InvalidConfig(format!("cannot parse eps schedule {s:?}"));
        let (kind, body) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = body
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let sched = match (kind.trim(), nums.as_slice()) {
            ("geom", [a, r]) => EpsSchedule::Geometric { a: *a, r: *r },
            ("list", _) => EpsSchedule::List(nums),
            _ => return Err(bad()),
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TighteningConfig {
    pub delta: f64,
    pub max_iters: usize,
    pub eps: EpsSchedule,
    pub repair: bool,
    pub qp: QpConfig,
}

impl Default for TighteningConfig {
    fn default() -> Self {
        Self { delta: 0.01, max_iters: 10, eps: EpsSchedule::default(), repair: true, qp: QpConfig::default() }
    }
}

impl TighteningConfig {
    pub fn validate(&self) -> Result<(), TighteningError> {
        if !(self.delta > 0.0) {
            return Err(TighteningError::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if self.max_iters == 0 {
            return Err(TighteningError::InvalidConfig("max_iters must be at least 1".into()));
        }
        self.eps.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TighteningStatus {
    ConvergedByDelta,
    BudgetExhausted,
    /// A later relaxation was infeasible; the result holds the last feasible iterate.
    RelaxationInfeasible,
}

impl TighteningStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TighteningStatus::ConvergedByDelta => "converged",
            TighteningStatus::BudgetExhausted => "budget_exhausted",
            TighteningStatus::RelaxationInfeasible => "relaxation_infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TighteningIteration {
    pub n: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub avg_violation: f64,
    /// Wall time of this iteration's solve.
    pub seconds: f64,
    /// Box of each product term (same order as the instance's terms).
    pub boxes: Vec<TermBox>,
}

#[derive(Debug, Clone)]
pub struct TighteningResult {
    /// Reformulated instance the iterates refer to.
    pub instance: ProblemInstance,
    pub iterations: Vec<TighteningIteration>,
    pub final_x: Vec<f64>,
    pub final_objective: f64,
    pub final_status: TighteningStatus,
    /// Boxes that made the relaxation infeasible, if that ended the run.
    pub infeasible_boxes: Option<Vec<TermBox>>,
    pub repaired: Option<Repaired>,
    /// Why the repair step was skipped, when it was requested and failed.
    pub repair_error: Option<String>,
}

#[derive(Debug, Error)]
pub enum TighteningError {
    #[error("invalid tightening config: {0}")]
    InvalidConfig(String),
    #[error("McCormick relaxation on the physical boxes ended with status {0}")]
    InitialRelaxation(QpStatus),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Per-term relative product violations of `x` with their max and mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    /// `(pipe, hour, tag, relative violation)` in term order.
    pub terms: Vec<(String, usize, &'static str, f64)>,
    pub max: f64,
    pub avg: f64,
}

/// `|H - c·m·τ̃| / max(|H|, 1e-6)` for every product term of `instance`.
pub fn violation_report(x: &[f64], instance: &ProblemInstance) -> ViolationReport {
    let terms: Vec<_> = instance
        .bilinear
        .iter()
        .map(|t| (t.pipe.clone(), t.hour, t.tag, t.relative_violation(x, VIOLATION_FLOOR)))
        .collect();
    let (max, avg) = instance.violation_stats(x, VIOLATION_FLOOR);
    ViolationReport { terms, max, avg }
}

/// New box `[max((1-ε)v, lo0), min((1+ε)v, hi0)]`.
pub fn shrink(v: f64, eps: f64, lo0: f64, hi0: f64) -> (f64, f64) {
    let (a, b) = ((1.0 - eps) * v, (1.0 + eps) * v);
    (a.min(b).max(lo0), a.max(b).min(hi0))
}

/// Columns whose boxes the loop shrinks: every flow in a product and every
/// temperature that is not fixed (source temperatures have `lo == hi`).
fn tightened_columns(inst: &ProblemInstance) -> Vec<usize> {
    let mut cols: Vec<usize> = Vec::new();
    for t in &inst.bilinear {
        cols.push(t.flow);
        if inst.qp.lo[t.temp] < inst.qp.hi[t.temp] {
            cols.push(t.temp);
        }
    }
    cols.sort_unstable();
    cols.dedup();
    cols
}

fn term_boxes(inst: &ProblemInstance, lo: &[f64], hi: &[f64]) -> Vec<TermBox> {
    inst.bilinear
        .iter()
        .map(|t| TermBox { m_lo: lo[t.flow], m_hi: hi[t.flow], tau_lo: lo[t.temp], tau_hi: hi[t.temp] })
        .collect()
}

/// Runs the tightening loop on the reformulated model over `hours`.
pub fn tighten(model: &NetworkModel, hours: &[usize], config: &TighteningConfig) -> Result<TighteningResult, TighteningError> {
    config.validate()?;
    let inst = build(model, Variant::Reformulated, hours)?;
    tighten_instance(&inst, config)
}

/// Tightening loop on an already built reformulated instance.
pub fn tighten_instance(inst: &ProblemInstance, config: &TighteningConfig) -> Result<TighteningResult, TighteningError> {
    config.validate()?;
    let cols = tightened_columns(inst);
    let (lo0, hi0) = (inst.qp.lo.clone(), inst.qp.hi.clone());
    let (mut lo, mut hi) = (lo0.clone(), hi0.clone());
    let mut iterations = Vec::new();
    let mut last: Option<(Vec<f64>, f64)> = None;
    let mut status = TighteningStatus::BudgetExhausted;
    let mut infeasible_boxes = None;

    for n in 1..=config.max_iters {
        let start = Instant::now();
        let boxes = term_boxes(inst, &lo, &hi);
        let mut bounded = inst.clone();
        bounded.qp.lo.clone_from(&lo);
        bounded.qp.hi.clone_from(&hi);
        let relaxed = mccormick_relax(&bounded, &boxes)?;
        let sol = solve_qp(&relaxed.qp, &config.qp)?;
        if sol.status != QpStatus::Optimal {
            if n == 1 {
                return Err(TighteningError::InitialRelaxation(sol.status));
            }
            status = TighteningStatus::RelaxationInfeasible;
            infeasible_boxes = Some(boxes);
            break;
        }
        let (max_violation, avg_violation) = inst.violation_stats(&sol.x, VIOLATION_FLOOR);
        iterations.push(TighteningIteration {
            n,
            objective: sol.objective,
            max_violation,
            avg_violation,
            seconds: start.elapsed().as_secs_f64(),
            boxes,
        });
        let x = sol.x;
        if max_violation <= config.delta {
            status = TighteningStatus::ConvergedByDelta;
            last = Some((x, sol.objective));
            break;
        }
        if n < config.max_iters {
            let eps = config.eps.value(n);
            for &j in &cols {
                let v = x[j].clamp(lo0[j], hi0[j]);
                (lo[j], hi[j]) = shrink(v, eps, lo0[j], hi0[j]);
            }
        }
        last = Some((x, sol.objective));
    }

    let (final_x, final_objective) = last.expect("first iteration either succeeds or returns");
    let (mut repaired, mut repair_error) = (None, None);
    if config.repair && !inst.bilinear.is_empty() {
        match repair_fixed_flow(inst, &final_x, &config.qp, &PolishConfig::default()) {
            Ok(r) => repaired = Some(r),
            Err(e) => repair_error = Some(e.to_string()),
        }
    }
    Ok(TighteningResult {
        instance: inst.clone(),
        iterations,
        final_x,
        final_objective,
        final_status: status,
        infeasible_boxes,
        repaired,
        repair_error,
    })
}

/// Iteration log as CSV: `n,objective,max_violation,avg_violation,seconds`.
pub fn iteration_csv(iterations: &[TighteningIteration]) -> String {
    let mut s = String::from("n,objective,max_violation,avg_violation,seconds\n");
    for it in iterations {
        s.push_str(&format!(
            "{},{:.10e},{:.10e},{:.10e},{:.6}\n",
            it.n, it.objective, it.max_violation, it.avg_violation, it.seconds
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_inside_original_box() {
        let (lo, hi) = shrink(1.5, 0.1, 1.0, 3.0);
        assert!((lo - 1.35).abs() < 1e-12 && (hi - 1.65).abs() < 1e-12);
    }

    #[test]
    fn shrink_clipped_by_original_box() {
        let (lo, hi) = shrink(1.02, 0.1, 1.0, 3.0);
        assert_eq!(lo, 1.0);
        assert!((hi - 1.122).abs() < 1e-12);
    }

    #[test]
    fn default_schedule_values() {
        let s = EpsSchedule::default();
        assert_eq!(s.value(1), 0.5);
        assert_eq!(s.value(2), 0.25);
        assert_eq!(s.value(4), 0.0625);
    }

    #[test]
    fn schedule_grammar() {
        assert_eq!("geom:0.5,0.5".parse::<EpsSchedule>().unwrap(), EpsSchedule::Geometric { a: 0.5, r: 0.5 });
        let l: EpsSchedule = "list:0.3,0.2,0.2,0.1".parse().unwrap();
        assert_eq!(l.value(3), 0.2);
        assert_eq!(l.value(9), 0.1);
        assert_eq!(l.to_string(), "list:0.3,0.2,0.2,0.1");
        for bad in ["list:0.1,0.2", "geom:1.5,0.5", "geom:0.5,1.2", "geom:0.5", "list:", "lin:0.1", "list:0,0"] {
            assert!(bad.parse::<EpsSchedule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TighteningConfig::default();
        assert!(c.validate().is_ok());
        c.delta = 0.0;
        assert!(c.validate().is_err());
        c = TighteningConfig { max_iters: 0, ..TighteningConfig::default() };
        assert!(c.validate().is_err());
    }
}
