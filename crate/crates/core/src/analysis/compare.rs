use std::time::Instant;

use crate::formulation::{build, ProblemInstance, Variant};
use crate::global::{solve_global, GlobalConfig, GlobalError, GlobalStatus};
use crate::network::{to_json_string, NetworkModel};
use crate::par::par_map;
use crate::qp::{solve_qp, QpConfig, QpStatus};
use crate::repair::{repair_fixed_flow, PolishConfig};
use crate::tightening::{tighten_instance, TighteningConfig, VIOLATION_FLOOR};

use super::physics::{exact_heat_loss_audit, PhysicsAudit, DEFAULT_LOSS_RATIO_THRESHOLD};
use super::report::config_hash;
use super::AnalysisError;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub global: GlobalConfig,
    pub tightening: TighteningConfig,
    pub qp: QpConfig,
    /// Leave out the two global rows; gaps are then unavailable.
    pub skip_global: bool,
    /// Variant runs executed concurrently.
    pub workers: usize,
    pub loss_ratio_threshold: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            global: GlobalConfig::default(),
            tightening: TighteningConfig::default(),
            qp: QpConfig::default(),
            skip_global: false,
            workers: 1,
            loss_ratio_threshold: DEFAULT_LOSS_RATIO_THRESHOLD,
        }
    }
}

impl CompareConfig {
    /// Settings that can change report contents, one per line. The worker
    /// count is left out: results do not depend on it.
    pub fn fingerprint(&self) -> String {
        let g = &self.global;
        let t = &self.tightening;
        format!(
            concat!(
                "gap_tol={:e}\nfeas_tol={:e}\nnode_limit={}\ntime_limit_s={}\n",
                "qp_tol={:e}\nqp_max_iter={}\n",
                "delta={:e}\nmax_iters={}\neps={}\nrepair={}\n",
                "skip_global={}\nloss_ratio_threshold={:e}\n",
            ),
            g.gap_tol,
            g.feas_tol,
            g.node_limit,
            g.time_limit.as_secs_f64(),
            self.qp.tol,
            self.qp.max_iter,
            t.delta,
            t.max_iters,
            t.eps,
            t.repair,
            self.skip_global,
            self.loss_ratio_threshold
        )
    }
}

/// Rows of the comparison, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Base,
    Reformulated,
    RemoveBilinear,
    McCormick,
    TighteningMcCormick,
    ConstantFlow,
}

impl RowKind {
    pub const ALL: [RowKind; 6] = [
        RowKind::Base,
        RowKind::Reformulated,
        RowKind::RemoveBilinear,
        RowKind::McCormick,
        RowKind::TighteningMcCormick,
        RowKind::ConstantFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Base => "base",
            RowKind::Reformulated => "reformulated",
            RowKind::RemoveBilinear => "remove_bilinear",
            RowKind::McCormick => "mccormick",
            RowKind::TighteningMcCormick => "tightening_mccormick",
            RowKind::ConstantFlow => "constant_flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRow {
    pub kind: RowKind,
    /// `optimal`, `limit`, `converged`, `budget_exhausted`,
    /// `relaxation_infeasible`, `infeasible`, `failed` or `skipped`.
    pub status: String,
    pub error: Option<String>,
    pub objective: Option<f64>,
    /// Proven lower bound of a global run.
    pub lower_bound: Option<f64>,
    /// `|obj - obj_ref| / |obj_ref|` against the reference global row.
    pub gap: Option<f64>,
    pub max_violation: Option<f64>,
    pub avg_violation: Option<f64>,
    /// Objective after fixing the flows and re-solving.
    pub repaired_objective: Option<f64>,
    pub nodes: Option<usize>,
    pub iterations: Option<usize>,
    pub wall_seconds: f64,
    /// Solution in the column space of [`ComparisonReport::reference`].
    pub x: Option<Vec<f64>>,
    pub audit: Option<PhysicsAudit>,
}

impl VariantRow {
    fn new(kind: RowKind, status: &str) -> Self {
        Self {
            kind,
            status: status.into(),
            error: None,
            objective: None,
            lower_bound: None,
            gap: None,
            max_violation: None,
            avg_violation: None,
            repaired_objective: None,
            nodes: None,
            iterations: None,
            wall_seconds: 0.0,
            x: None,
            audit: None,
        }
    }

    fn failed(kind: RowKind, status: &str, err: impl ToString) -> Self {
        Self { error: Some(err.to_string()), ..Self::new(kind, status) }
    }

    pub fn closure_residual(&self) -> Option<f64> {
        self.audit.as_ref().map(PhysicsAudit::max_closure_residual)
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub instance: String,
    pub hours: Vec<usize>,
    pub config_hash: String,
    /// Row whose objective defines the gaps.
    pub gap_reference: Option<RowKind>,
    pub rows: Vec<VariantRow>,
    /// Reformulated instance; every row's `x` uses its columns.
    pub reference: ProblemInstance,
}

impl ComparisonReport {
    pub fn row(&self, kind: RowKind) -> &VariantRow {
        self.rows.iter().find(|r| r.kind == kind).expect("every kind has a row")
    }
}

/// Maps `x` from `from`'s columns onto `to`'s by variable key.
pub fn map_columns(from: &ProblemInstance, x: &[f64], to: &ProblemInstance) -> Vec<f64> {
    let mut out = vec![0.0; to.n()];
    for (j, key) in from.vars.keys().iter().enumerate() {
        if let Some(k) = to.vars.index_of(key) {
            out[k] = x[j];
        }
    }
    out
}

struct Ctx<'a> {
    model: &'a NetworkModel,
    hours: &'a [usize],
    reference: &'a ProblemInstance,
    cfg: &'a CompareConfig,
}

impl Ctx<'_> {
    fn finish(&self, mut row: VariantRow, x: Vec<f64>, repair: bool) -> VariantRow {
        let (max, avg) = self.reference.violation_stats(&x, VIOLATION_FLOOR);
        row.max_violation = Some(max);
        row.avg_violation = Some(avg);
        if repair && row.repaired_objective.is_none() {
            if let Ok(r) = repair_fixed_flow(self.reference, &x, &self.cfg.qp, &PolishConfig::default()) {
                row.repaired_objective = Some(r.objective);
            }
        }
        row.audit = exact_heat_loss_audit(&x, self.reference, self.model, self.cfg.loss_ratio_threshold).ok();
        row.x = Some(x);
        row
    }

    fn global(&self, kind: RowKind) -> VariantRow {
        if self.cfg.skip_global {
            return VariantRow::new(kind, "skipped");
        }
        let variant = if kind == RowKind::Base { Variant::Base } else { Variant::Reformulated };
        let inst = match build(self.model, variant, self.hours) {
            Ok(i) => i,
            Err(e) => return VariantRow::failed(kind, "failed", e),
        };
        match solve_global(&inst, &self.cfg.global) {
            Ok(g) => {
                let mut row = VariantRow::new(kind, if g.status == GlobalStatus::Optimal { "optimal" } else { "limit" });
                row.objective = Some(g.objective);
                row.lower_bound = Some(g.lower_bound);
                row.nodes = Some(g.nodes);
                let x = map_columns(&inst, &g.x, self.reference);
                self.finish(row, x, false)
            }
            Err(GlobalError::NoFeasibleIncumbent(h)) => VariantRow::failed(kind, "limit", format!("no feasible incumbent in hour {h}")),
            Err(GlobalError::Infeasible) => VariantRow::failed(kind, "infeasible", GlobalError::Infeasible),
            Err(e) => VariantRow::failed(kind, "failed", e),
        }
    }

    fn convex(&self, kind: RowKind, variant: Variant) -> VariantRow {
        let inst = match build(self.model, variant, self.hours) {
            Ok(i) => i,
            Err(e) => return VariantRow::failed(kind, "failed", e),
        };
        match solve_qp(&inst.qp, &self.cfg.qp) {
            Ok(sol) if sol.status == QpStatus::Optimal => {
                let mut row = VariantRow::new(kind, "optimal");
                row.objective = Some(sol.objective);
                row.iterations = Some(sol.iterations);
                let x = map_columns(&inst, &sol.x, self.reference);
                self.finish(row, x, variant != Variant::ConstantFlow)
            }
            Ok(sol) if sol.status == QpStatus::PrimalInfeasible => VariantRow::failed(kind, "infeasible", sol.status),
            Ok(sol) => VariantRow::failed(kind, "failed", sol.status),
            Err(e) => VariantRow::failed(kind, "failed", e),
        }
    }

    fn tightening(&self) -> VariantRow {
        let kind = RowKind::TighteningMcCormick;
        match tighten_instance(self.reference, &self.cfg.tightening) {
            Ok(r) => {
                let mut row = VariantRow::new(kind, r.final_status.as_str());
                row.objective = Some(r.final_objective);
                row.iterations = Some(r.iterations.len());
                row.repaired_objective = r.repaired.as_ref().map(|p| p.objective);
                self.finish(row, r.final_x, false)
            }
            Err(e) => VariantRow::failed(kind, "failed", e),
        }
    }

    fn run(&self, kind: RowKind) -> VariantRow {
        let start = Instant::now();
        let mut row = match kind {
            RowKind::Base | RowKind::Reformulated => self.global(kind),
            RowKind::RemoveBilinear => self.convex(kind, Variant::RemoveBilinear),
            RowKind::McCormick => self.convex(kind, Variant::McCormick),
            RowKind::TighteningMcCormick => self.tightening(),
            RowKind::ConstantFlow => self.convex(kind, Variant::ConstantFlow),
        };
        row.wall_seconds = start.elapsed().as_secs_f64();
        row
    }
}

/// Runs the six comparison rows on one instance and assembles the report.
/// Gaps are measured against the base global row, or the reformulated one
/// when the base run found no solution.
pub fn compare_variants(
    model: &NetworkModel,
    name: &str,
    hours: &[usize],
    config: &CompareConfig,
) -> Result<ComparisonReport, AnalysisError> {
    if hours.is_empty() {
        return Err(AnalysisError::Validation("hour selection is empty".into()));
    }
    let reference = build(model, Variant::Reformulated, hours)?;
    let ctx = Ctx { model, hours, reference: &reference, cfg: config };
    let mut rows = par_map(&RowKind::ALL, config.workers, |&k| ctx.run(k));

    let gap_reference = [RowKind::Base, RowKind::Reformulated]
        .into_iter()
        .find(|k| rows.iter().any(|r| r.kind == *k && r.objective.is_some()));
    if let Some(rk) = gap_reference {
        let base = rows.iter().find(|r| r.kind == rk).and_then(|r| r.objective).expect("reference has objective");
        for r in rows.iter_mut() {
            r.gap = if r.kind == rk { Some(0.0) } else { r.objective.map(|o| (o - base).abs() / base.abs().max(f64::MIN_POSITIVE)) };
        }
    }

    let hash = config_hash(&[
        name.as_bytes(),
        to_json_string(model).as_bytes(),
        format!("{:?}", reference.hours).as_bytes(),
        config.fingerprint().as_bytes(),
    ]);
    Ok(ComparisonReport { instance: name.to_string(), hours: reference.hours.clone(), config_hash: hash, gap_reference, rows, reference })
}
