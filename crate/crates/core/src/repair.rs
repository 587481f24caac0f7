//! Recovering points that satisfy the product rows exactly.
//!
//! [`fix_flows`] freezes every mass flow, which turns each product row into a
//! linear one. On supply trees fixed flows usually overdetermine the sink
//! balances, so [`polish`] first moves a relaxed point onto the product
//! manifold by successive linearization with a proximal term. A fixed point
//! of that iteration satisfies the first-order conditions of the bilinear
//! problem.

use thiserror::Error;

use crate::formulation::{ProblemInstance, RowLabel};
use crate::qp::{solve_qp, QpConfig, QpError, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolishConfig {
    pub max_iter: usize,
    /// Target for the largest absolute product residual, MW.
    pub tol: f64,
}

impl Default for PolishConfig {
    fn default() -> Self {
        Self { max_iter: 60, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repaired {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest relative product violation at `x`.
    pub max_violation: f64,
    /// Whether the flows had to be moved before fixing them.
    pub polished: bool,
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("fixed flows cannot serve the loads within the temperature windows")]
    FixedFlowInfeasible,
    #[error("instance has no product terms to repair")]
    NothingToRepair,
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Freezes every flow that appears in a product at its value in `x`
/// (clamped to its bounds) and replaces each product by the linear row
/// `H - c·m̄·τ̃ = 0`.
pub fn fix_flows(inst: &ProblemInstance, x: &[f64]) -> ProblemInstance {
    let mut out = inst.clone();
    for t in &inst.bilinear {
        let m = x[t.flow].clamp(inst.qp.lo[t.flow], inst.qp.hi[t.flow]);
        out.qp.lo[t.flow] = m;
        out.qp.hi[t.flow] = m;
    }
    for t in &inst.bilinear {
        let m = out.qp.lo[t.flow];
        out.qp.a_eq.push_row([(t.product, 1.0), (t.temp, -t.coef * m)]);
        out.qp.b_eq.push(0.0);
        out.eq_labels.push(RowLabel::new(t.tag, &t.pipe, t.hour));
    }
    out.bilinear.clear();
    out
}

/// Largest absolute residual of the linear rows and bounds, each measured
/// relative to `1 + |rhs|`.
pub fn linear_violation(inst: &ProblemInstance, x: &[f64]) -> f64 {
    let qp = &inst.qp;
    let eq = (0..qp.b_eq.len()).map(|i| (qp.a_eq.row_dot(i, x) - qp.b_eq[i]).abs() / (1.0 + qp.b_eq[i].abs()));
    let le = (0..qp.b_in.len()).map(|i| (qp.a_in.row_dot(i, x) - qp.b_in[i]).max(0.0) / (1.0 + qp.b_in[i].abs()));
    let bd = (0..x.len()).map(|j| ((qp.lo[j] - x[j]).max(x[j] - qp.hi[j])).max(0.0) / (1.0 + x[j].abs()));
    eq.chain(le).chain(bd).fold(0.0, f64::max)
}

/// Successive linearization of the product rows around the current point,
/// with a proximal term on the flows and temperatures. Returns `None` when a
/// subproblem fails or the iteration does not settle.
pub fn polish(inst: &ProblemInstance, x0: &[f64], qp_cfg: &QpConfig, cfg: &PolishConfig) -> Option<Vec<f64>> {
    if inst.bilinear.is_empty() {
        return Some(x0.to_vec());
    }
    let n = inst.n();
    let mut factor = vec![false; n];
    for t in &inst.bilinear {
        factor[t.flow] = true;
        factor[t.temp] = true;
    }
    let mut x: Vec<f64> = (0..n).map(|j| x0[j].clamp(inst.qp.lo[j], inst.qp.hi[j])).collect();
    let q_scale = inst.qp.q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut rho = 1e-3 * q_scale;
    for _ in 0..cfg.max_iter {
        let mut sub = inst.clone();
        sub.bilinear.clear();
        for t in &inst.bilinear {
            let (m, tau, c) = (x[t.flow], x[t.temp], t.coef);
            sub.qp.a_eq.push_row([(t.product, 1.0), (t.temp, -c * m), (t.flow, -c * tau)]);
            sub.qp.b_eq.push(-c * m * tau);
        }
        for j in (0..n).filter(|&j| factor[j]) {
            sub.qp.q_mat.add(j, j, rho);
            sub.qp.q[j] -= rho * x[j];
        }
        let sol = solve_qp(&sub.qp, qp_cfg).ok()?;
        if sol.status != QpStatus::Optimal {
            return None;
        }
        let step = (0..n).filter(|&j| factor[j]).map(|j| (sol.x[j] - x[j]).abs() / (1.0 + x[j].abs())).fold(0.0, f64::max);
        x = sol.x;
        let resid = inst.bilinear.iter().map(|t| t.residual(&x).abs()).fold(0.0, f64::max);
        if resid <= cfg.tol && step <= 1e-9 {
            return Some(x);
        }
        if step < 1e-3 {
            // Close to a fixed point; a smaller proximal weight speeds the last steps.
            rho = (rho * 0.1).max(1e-6 * q_scale);
        }
    }
    let resid = inst.bilinear.iter().map(|t| t.residual(&x).abs()).fold(0.0, f64::max);
    (resid <= 1e3 * cfg.tol).then_some(x)
}

/// Fixes the flows of `x` and re-solves; when that is infeasible, polishes
/// `x` first and fixes the polished flows.
pub fn repair_fixed_flow(inst: &ProblemInstance, x: &[f64], qp_cfg: &QpConfig, cfg: &PolishConfig) -> Result<Repaired, RepairError> {
    if inst.bilinear.is_empty() {
        return Err(RepairError::NothingToRepair);
    }
    let finish = |x: Vec<f64>, polished: bool| {
        let (max_violation, _) = inst.violation_stats(&x, 1e-6);
        Repaired { objective: inst.qp.objective(&x), x, max_violation, polished }
    };
    let fixed = fix_flows(inst, x);
    let sol = solve_qp(&fixed.qp, qp_cfg)?;
    if sol.status == QpStatus::Optimal {
        return Ok(finish(sol.x, false));
    }
    let polished = polish(inst, x, qp_cfg, cfg).ok_or(RepairError::FixedFlowInfeasible)?;
    let fixed = fix_flows(inst, &polished);
    let sol = solve_qp(&fixed.qp, qp_cfg)?;
    if sol.status == QpStatus::Optimal && linear_violation(inst, &sol.x) <= 1e-8 {
        return Ok(finish(sol.x, true));
    }
    Ok(finish(polished, true))
}
