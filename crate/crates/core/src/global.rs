//! Spatial branch-and-bound over envelope relaxations.
//!
//! Hours never share a row, so each hour is searched separately (and, with
//! more than one worker, concurrently); the per-hour results are stitched
//! back into one point. Within an hour the search is best-first on the node
//! lower bound with FIFO tie-breaking, which keeps it deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::formulation::mccormick_relax;
use crate::formulation::{FormulationError, ProblemInstance, TermBox};
use crate::par::par_map;
use crate::qp::{solve_qp, QpConfig, QpError, QpProblem, QpStatus};
use crate::repair::{linear_violation, polish, PolishConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalConfig {
    pub gap_tol: f64,
    /// Relative tolerance on every product row of an accepted incumbent.
    pub feas_tol: f64,
    pub node_limit: usize,
    pub time_limit: Duration,
    pub qp: QpConfig,
    /// Hours searched concurrently.
    pub workers: usize,
    pub log_nodes: bool,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            feas_tol: 1e-6,
            node_limit: 100_000,
            time_limit: Duration::from_secs(600),
            qp: QpConfig::default(),
            workers: 1,
            log_nodes: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GlobalStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
}

impl GlobalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GlobalStatus::Optimal => "optimal",
            GlobalStatus::NodeLimit => "node_limit",
            GlobalStatus::TimeLimit => "time_limit",
        }
    }
}

/// One search node: bounds on every column plus the inherited lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower_bound: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BnbNode {
    /// Boxes of every product term of `inst` under this node's bounds.
    pub fn term_boxes(&self, inst: &ProblemInstance) -> Vec<TermBox> {
        inst.bilinear
            .iter()
            .map(|t| TermBox { m_lo: self.lo[t.flow], m_hi: self.hi[t.flow], tau_lo: self.lo[t.temp], tau_hi: self.hi[t.temp] })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLogEntry {
    pub hour: usize,
    pub node: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Name of the column branched on, if the node was split.
    pub branch_var: Option<String>,
    pub outcome: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub wall: Duration,
    pub status: GlobalStatus,
    pub log: Vec<NodeLogEntry>,
}

#[derive(Debug, Error)]
pub enum GlobalError {
    #[error("the relaxation at the root is infeasible")]
    Infeasible,
    #[error("no incumbent satisfying the product rows was found in hour {0}")]
    NoFeasibleIncumbent(usize),
    #[error("relaxation solve ended with status {0}")]
    Solver(QpStatus),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
}

/// Branching decision: which column to split and where.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchChoice {
    pub term: usize,
    pub column: usize,
    pub at: f64,
}

/// Picks the most violated term (`|H - c·m·τ̃| / max(1, |H|)`) and splits
/// whichever factor has the larger width relative to its root width, flow
/// first on ties, at the relaxation value kept 10 % away from either end.
/// Returns `None` when no term is violated beyond `tol`.
pub fn branch_choice(inst: &ProblemInstance, node: &BnbNode, root_width: &[f64], x: &[f64], tol: f64) -> Option<BranchChoice> {
    let mut best: Option<(usize, f64)> = None;
    for (k, t) in inst.bilinear.iter().enumerate() {
        let v = t.residual(x).abs() / x[t.product].abs().max(1.0);
        if v > tol && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    let (term, _) = best?;
    let t = &inst.bilinear[term];
    let rel = |j: usize| {
        let w = node.hi[j] - node.lo[j];
        if root_width[j] > 0.0 {
            w / root_width[j]
        } else {
            0.0
        }
    };
    let column = if rel(t.flow) >= rel(t.temp) { t.flow } else { t.temp };
    let (lo, hi) = (node.lo[column], node.hi[column]);
    let w = hi - lo;
    if w <= 0.0 {
        return None;
    }
    let at = x[column].clamp(lo + 0.1 * w, hi - 0.1 * w);
    Some(BranchChoice { term, column, at })
}

/// Splits `node` per `choice`; children inherit the parent's lower bound.
pub fn branch(node: &BnbNode, choice: &BranchChoice, next_id: usize) -> (BnbNode, BnbNode) {
    let mut a = node.clone();
    a.id = next_id;
    a.parent = Some(node.id);
    a.depth = node.depth + 1;
    let mut b = a.clone();
    b.id = next_id + 1;
    a.hi[choice.column] = choice.at;
    b.lo[choice.column] = choice.at;
    (a, b)
}

struct Open(BnbNode);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.lower_bound.total_cmp(&self.0.lower_bound).then(other.0.id.cmp(&self.0.id))
    }
}

struct HourResult {
    x: Vec<f64>,
    upper: f64,
    lower: f64,
    nodes: usize,
    status: GlobalStatus,
    log: Vec<NodeLogEntry>,
}

/// Relaxation of `inst` under the bounds of `node`.
fn relaxation(inst: &ProblemInstance, node: &BnbNode) -> Result<ProblemInstance, FormulationError> {
    let mut bounded = inst.clone();
    bounded.qp.lo.clone_from(&node.lo);
    bounded.qp.hi.clone_from(&node.hi);
    mccormick_relax(&bounded, &node.term_boxes(inst))
}

/// Every inequality row and non-fixed bound moved outward by `1e-7·(1 + |rhs|)`.
/// Node relaxations whose feasible set has (almost) no interior stall the
/// interior-point method; the loosened problem has an interior and its
/// optimum is still a valid lower bound for the node.
fn loosened(qp: &QpProblem) -> QpProblem {
    const EPS: f64 = 1e-7;
    let mut out = qp.clone();
    for b in out.b_in.iter_mut() {
        *b += EPS * (1.0 + b.abs());
    }
    for j in 0..out.n() {
        if out.lo[j] < out.hi[j] {
            out.lo[j] -= EPS * (1.0 + out.lo[j].abs());
            out.hi[j] += EPS * (1.0 + out.hi[j].abs());
        }
    }
    out
}

fn accept(inst: &ProblemInstance, x: &[f64], feas_tol: f64) -> bool {
    inst.bilinear.iter().all(|t| t.relative_violation(x, 1e-6) <= feas_tol) && linear_violation(inst, x) <= 1e-7
}

fn search_hour(inst: &ProblemInstance, cfg: &GlobalConfig, deadline: Instant) -> Result<HourResult, GlobalError> {
    let hour = inst.hours.first().copied().unwrap_or(0);
    let root = BnbNode { id: 0, parent: None, depth: 0, lower_bound: f64::NEG_INFINITY, lo: inst.qp.lo.clone(), hi: inst.qp.hi.clone() };
    let root_width: Vec<f64> = root.lo.iter().zip(&root.hi).map(|(l, h)| h - l).collect();
    let polish_cfg = PolishConfig::default();
    let mut heap = BinaryHeap::new();
    heap.push(Open(root));
    let mut next_id = 1;
    let mut upper = f64::INFINITY;
    let mut incumbent: Option<Vec<f64>> = None;
    let mut pruned_lb = f64::INFINITY;
    let mut nodes = 0;
    let mut log = Vec::new();
    let mut status = GlobalStatus::Optimal;
    let slack = |ub: f64| cfg.gap_tol * ub.abs().max(1.0);

    while let Some(Open(node)) = heap.pop() {
        if node.lower_bound >= upper - slack(upper) {
            pruned_lb = pruned_lb.min(node.lower_bound);
            continue;
        }
        if nodes >= cfg.node_limit {
            status = GlobalStatus::NodeLimit;
            heap.push(Open(node));
            break;
        }
        if Instant::now() >= deadline {
            status = GlobalStatus::TimeLimit;
            heap.push(Open(node));
            break;
        }
        nodes += 1;
        let mut entry = NodeLogEntry {
            hour,
            node: node.id,
            parent: node.parent,
            depth: node.depth,
            lower_bound: node.lower_bound,
            upper_bound: upper,
            branch_var: None,
            outcome: "",
        };
        let relaxed = relaxation(inst, &node)?;
        let mut sol = solve_qp(&relaxed.qp, &cfg.qp)?;
        if matches!(sol.status, QpStatus::NumericalFailure | QpStatus::IterLimit) {
            sol = solve_qp(&loosened(&relaxed.qp), &cfg.qp)?;
        }
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::PrimalInfeasible => {
                if node.id == 0 {
                    return Err(GlobalError::Infeasible);
                }
                entry.outcome = "infeasible";
                if cfg.log_nodes {
                    log.push(entry);
                }
                continue;
            }
            s => return Err(GlobalError::Solver(s)),
        }
        let lb = sol.objective.max(node.lower_bound);
        entry.lower_bound = lb;
        let x = sol.x;
        if accept(inst, &x, cfg.feas_tol) {
            if lb < upper {
                upper = lb.max(inst.qp.objective(&x));
                incumbent = Some(x);
            }
            pruned_lb = pruned_lb.min(lb);
            entry.upper_bound = upper;
            entry.outcome = "feasible";
            if cfg.log_nodes {
                log.push(entry);
            }
            continue;
        }
        if let Some(xp) = polish(inst, &x, &cfg.qp, &polish_cfg) {
            let obj = inst.qp.objective(&xp);
            if obj < upper && accept(inst, &xp, cfg.feas_tol) {
                upper = obj;
                incumbent = Some(xp);
            }
        }
        entry.upper_bound = upper;
        if lb >= upper - slack(upper) {
            pruned_lb = pruned_lb.min(lb);
            entry.outcome = "pruned";
            if cfg.log_nodes {
                log.push(entry);
            }
            continue;
        }
        let node = BnbNode { lower_bound: lb, ..node };
        match branch_choice(inst, &node, &root_width, &x, cfg.feas_tol) {
            Some(choice) => {
                let (a, b) = branch(&node, &choice, next_id);
                next_id += 2;
                entry.branch_var = Some(inst.vars.key(choice.column).name());
                entry.outcome = "branched";
                heap.push(Open(a));
                heap.push(Open(b));
            }
            None => {
                // Violations below the branching threshold but the point
                // failed the stricter acceptance test: nothing left to split.
                pruned_lb = pruned_lb.min(lb);
                entry.outcome = "unsplittable";
            }
        }
        if cfg.log_nodes {
            log.push(entry);
        }
    }
    let x = incumbent.ok_or(GlobalError::NoFeasibleIncumbent(hour))?;
    let open_lb = heap.iter().map(|o| o.0.lower_bound).fold(f64::INFINITY, f64::min);
    let lower = pruned_lb.min(open_lb).min(upper);
    Ok(HourResult { x, upper, lower, nodes, status, log })
}

/// Globally minimizes an instance with product terms.
pub fn solve_global(inst: &ProblemInstance, cfg: &GlobalConfig) -> Result<GlobalSolution, GlobalError> {
    let start = Instant::now();
    if inst.bilinear.is_empty() {
        let sol = solve_qp(&inst.qp, &cfg.qp)?;
        return match sol.status {
            QpStatus::Optimal => Ok(GlobalSolution {
                objective: sol.objective,
                lower_bound: sol.objective,
                x: sol.x,
                gap: 0.0,
                nodes: 1,
                wall: start.elapsed(),
                status: GlobalStatus::Optimal,
                log: Vec::new(),
            }),
            QpStatus::PrimalInfeasible => Err(GlobalError::Infeasible),
            s => Err(GlobalError::Solver(s)),
        };
    }
    let deadline = start + cfg.time_limit;
    let slices: Vec<ProblemInstance> = inst.hours.iter().map(|&h| inst.hour_slice(h)).collect();
    let results = par_map(&slices, cfg.workers, |s| search_hour(s, cfg, deadline));
    let mut x = vec![0.0; inst.n()];
    let (mut upper, mut lower, mut nodes) = (0.0, 0.0, 0);
    let mut status = GlobalStatus::Optimal;
    let mut log = Vec::new();
    for (slice, res) in slices.iter().zip(results) {
        let r = res?;
        for (a, key) in slice.vars.keys().iter().enumerate() {
            x[inst.vars.index_of(key).expect("slice key")] = r.x[a];
        }
        upper += r.upper;
        lower += r.lower;
        nodes += r.nodes;
        status = status.max(r.status);
        log.extend(r.log);
    }
    let gap = ((upper - lower) / upper.abs().max(1.0)).max(0.0);
    Ok(GlobalSolution { x, objective: upper, lower_bound: lower, gap, nodes, wall: start.elapsed(), status, log })
}

/// Node log as CSV (`hour,node,parent,depth,lower_bound,upper_bound,branch_var,outcome`).
pub fn node_log_csv(log: &[NodeLogEntry]) -> String {
    let mut s = String::from("hour,node,parent,depth,lower_bound,upper_bound,branch_var,outcome\n");
    for e in log {
        s.push_str(&format!(
            "{},{},{},{},{:.10e},{:.10e},{},{}\n",
            e.hour,
            e.node,
            e.parent.map(|p| p.to_string()).unwrap_or_default(),
            e.depth,
            e.lower_bound,
            e.upper_bound,
            e.branch_var.as_deref().unwrap_or(""),
            e.outcome
        ));
    }
    s
}
