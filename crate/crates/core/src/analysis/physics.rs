use crate::formulation::{ProblemInstance, VarKind};
use crate::network::{derive_adjacency, GenerationUnit, NetworkModel, NodeRole};

use super::AnalysisError;

/// Flows below this carry no meaningful temperature, kg/s.
pub const ZERO_FLOW: f64 = 1e-9;
/// Slack when comparing recovered temperatures to their windows, °C.
const WINDOW_SLACK: f64 = 1e-6;

fn value(inst: &ProblemInstance, x: &[f64], kind: VarKind, id: &str, hour: usize) -> Option<f64> {
    inst.vars.get(kind, id, hour).map(|j| x[j])
}

fn check_len(inst: &ProblemInstance, x: &[f64]) -> Result<(), AnalysisError> {
    if x.len() == inst.n() {
        Ok(())
    } else {
        Err(AnalysisError::DimensionMismatch { expected: inst.n(), got: x.len() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTemperature {
    pub node: String,
    pub hour: usize,
    /// °C; absent when a sink receives no flow.
    pub tau: Option<f64>,
    pub out_of_window: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipeTemperature {
    pub pipe: String,
    pub hour: usize,
    /// Outlet temperature `H_in / (c·m) + τ_a`, °C; absent at zero flow.
    pub tau: Option<f64>,
    pub out_of_window: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Temperatures {
    pub nodes: Vec<NodeTemperature>,
    pub pipes: Vec<PipeTemperature>,
    /// `pipe[hour]` entries whose temperature is undefined because the flow is zero.
    pub zero_flow: Vec<String>,
}

impl Temperatures {
    pub fn flagged(&self) -> usize {
        self.nodes.iter().filter(|n| n.out_of_window).count() + self.pipes.iter().filter(|p| p.out_of_window).count()
    }
}

fn outside(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|v| v < lo - WINDOW_SLACK || v > hi + WINDOW_SLACK)
}

/// Temperatures implied by a solution: pipe outlets from `H_in = c·m·τ̃`,
/// nodes from their `τ̃` variable, sinks from the flow-weighted mix of their
/// inflows.
pub fn recover_temperatures(x: &[f64], inst: &ProblemInstance, model: &NetworkModel) -> Result<Temperatures, AnalysisError> {
    check_len(inst, x)?;
    let adj = derive_adjacency(model);
    let (c, ta) = (model.specific_heat, model.ambient_temp);
    let mut out = Temperatures::default();
    for &t in &inst.hours {
        for p in &model.pipes {
            let m = value(inst, x, VarKind::MPipe, &p.id, t).unwrap_or(0.0);
            let h = value(inst, x, VarKind::HInPipe, &p.id, t).unwrap_or(0.0);
            let tau = if m.abs() < ZERO_FLOW {
                out.zero_flow.push(format!("{}[{}]", p.id, t));
                None
            } else {
                Some(h / (c * m) + ta)
            };
            out.pipes.push(PipeTemperature {
                pipe: p.id.clone(),
                hour: t,
                tau,
                out_of_window: outside(tau, p.tau_pipe_min, p.tau_pipe_max),
            });
        }
        for node in &model.heat_nodes {
            let tau = match model.node_role(&adj, &node.id) {
                NodeRole::Leaf => {
                    let (mut h, mut m) = (0.0, 0.0);
                    for &k in adj.incoming(&node.id) {
                        h += value(inst, x, VarKind::HInPipe, &model.pipes[k].id, t).unwrap_or(0.0);
                        m += value(inst, x, VarKind::MPipe, &model.pipes[k].id, t).unwrap_or(0.0);
                    }
                    (m.abs() >= ZERO_FLOW).then(|| h / (c * m) + ta)
                }
                _ => value(inst, x, VarKind::TauTildeNode, &node.id, t).map(|v| v + ta),
            };
            out.nodes.push(NodeTemperature {
                node: node.id.clone(),
                hour: t,
                tau,
                out_of_window: outside(tau, node.tau_min, node.tau_max),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipeAudit {
    pub pipe: String,
    pub hour: usize,
    pub mass_flow: f64,
    /// `νL / (c·m)`; absent at zero flow.
    pub loss_ratio: Option<f64>,
    /// Upstream node temperature, °C.
    pub tau_upstream: f64,
    /// `τ_a + τ̃·exp(-νL/(c·m))`, °C.
    pub exact_outlet: Option<f64>,
    /// `τ_a + τ̃·(1 - νL/(c·m))`, °C.
    pub taylor_outlet: Option<f64>,
    /// `exact_outlet - taylor_outlet`, °C.
    pub abs_gap: Option<f64>,
    /// `abs_gap / τ̃`, which equals `exp(-x) - (1 - x)`.
    pub taylor_gap: Option<f64>,
    /// Outlet implied by the solution's `H_in`, °C.
    pub model_outlet: Option<f64>,
    /// Loss ratio above the audit threshold.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourClosure {
    pub hour: usize,
    /// Heat produced by all units, MW.
    pub production: f64,
    pub load: f64,
    /// `Σ νL·τ̃_upstream`, MW.
    pub taylor_losses: f64,
    /// `Σ c·m·τ̃_upstream·(1 - exp(-νL/(c·m)))`, MW.
    pub exact_losses: f64,
}

impl HourClosure {
    /// `production - load - taylor_losses`; zero at any point of the reformulated model.
    pub fn residual(&self) -> f64 {
        self.production - self.load - self.taylor_losses
    }

    /// `production - load - exact_losses`.
    pub fn exact_residual(&self) -> f64 {
        self.production - self.load - self.exact_losses
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsAudit {
    pub pipes: Vec<PipeAudit>,
    pub closure: Vec<HourClosure>,
    pub threshold: f64,
}

impl PhysicsAudit {
    pub fn flagged(&self) -> usize {
        self.pipes.iter().filter(|p| p.flagged).count()
    }

    pub fn max_taylor_gap(&self) -> f64 {
        self.pipes.iter().filter_map(|p| p.taylor_gap).fold(0.0, f64::max)
    }

    pub fn max_closure_residual(&self) -> f64 {
        self.closure.iter().map(|c| c.residual().abs()).fold(0.0, f64::max)
    }
}

/// Default loss-ratio threshold above which the linearized loss is flagged.
pub const DEFAULT_LOSS_RATIO_THRESHOLD: f64 = 0.1;

/// Recomputes every pipe's outlet temperature with the exponential loss law
/// and compares it with the linearized one; also sums the heat balance of
/// each hour.
pub fn exact_heat_loss_audit(
    x: &[f64],
    inst: &ProblemInstance,
    model: &NetworkModel,
    threshold: f64,
) -> Result<PhysicsAudit, AnalysisError> {
    check_len(inst, x)?;
    let (c, ta) = (model.specific_heat, model.ambient_temp);
    let mut pipes = Vec::new();
    let mut closure = Vec::new();
    for &t in &inst.hours {
        let mut hc = HourClosure { hour: t, production: 0.0, load: 0.0, taylor_losses: 0.0, exact_losses: 0.0 };
        for unit in &model.units {
            let h = match unit {
                GenerationUnit::HeatingBoiler(u) => value(inst, x, VarKind::HHb, &u.id, t),
                GenerationUnit::Chp(u) => value(inst, x, VarKind::HChp, &u.id, t),
                GenerationUnit::Thermal(_) => None,
            };
            hc.production += h.unwrap_or(0.0);
        }
        hc.load = model.heat_nodes.iter().map(|n| n.heat_load[t - 1]).sum();
        for p in &model.pipes {
            let m = value(inst, x, VarKind::MPipe, &p.id, t).unwrap_or(0.0);
            let tt = value(inst, x, VarKind::TauTildeNode, &p.from, t)
                .or_else(|| model.source_tau_tilde(&p.from))
                .unwrap_or(0.0);
            let h_in = value(inst, x, VarKind::HInPipe, &p.id, t).unwrap_or(0.0);
            let nl = p.loss_coeff();
            hc.taylor_losses += nl * tt;
            let mut a = PipeAudit {
                pipe: p.id.clone(),
                hour: t,
                mass_flow: m,
                loss_ratio: None,
                tau_upstream: tt + ta,
                exact_outlet: None,
                taylor_outlet: None,
                abs_gap: None,
                taylor_gap: None,
                model_outlet: None,
                flagged: false,
            };
            if m.abs() >= ZERO_FLOW {
                let r = nl / (c * m);
                let exact = ta + tt * (-r).exp();
                let taylor = ta + tt * (1.0 - r);
                hc.exact_losses += c * m * tt * (1.0 - (-r).exp());
                a.loss_ratio = Some(r);
                a.exact_outlet = Some(exact);
                a.taylor_outlet = Some(taylor);
                a.abs_gap = Some(exact - taylor);
                a.taylor_gap = (tt != 0.0).then(|| (exact - taylor) / tt);
                a.model_outlet = Some(ta + h_in / (c * m));
                a.flagged = r > threshold;
            }
            pipes.push(a);
        }
        closure.push(hc);
    }
    Ok(PhysicsAudit { pipes, closure, threshold })
}
