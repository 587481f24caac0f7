//! Physical data model of the integrated heat/electricity system.
//!
//! A [`NetworkModel`] is loaded from the canonical JSON network file, checked
//! against the bundled JSON schema, and then validated for structural and
//! numerical invariants. Once built it is immutable.

mod chp;
mod file;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use chp::{validate_chp_region, ChpRegionError, RegionDiagnostics};
pub use file::{from_json_str, load_network, save_network, to_json_string, NETWORK_SCHEMA};

/// Default specific heat of water in MW·s/(kg·°C).
pub const WATER_SPECIFIC_HEAT: f64 = 4.182e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Source,
    Load,
    Junction,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Source => "source",
            NodeKind::Load => "load",
            NodeKind::Junction => "junction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatNode {
    pub id: String,
    pub kind: NodeKind,
    /// Outlet temperature limits, °C.
    pub tau_min: f64,
    pub tau_max: f64,
    /// Fixed supply temperature of a source node, °C.
    pub tau_source: Option<f64>,
    /// Heat demand per hour, MW. All zeros for non-load nodes.
    pub heat_load: Vec<f64>,
}

/// Supply pipe with a fixed flow direction `from -> to`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    /// m
    pub length: f64,
    /// MW/(m·°C)
    pub heat_transfer_coeff: f64,
    /// kg/s
    pub m_min: f64,
    pub m_max: f64,
    /// Pipe outlet temperature limits, °C.
    pub tau_pipe_min: f64,
    pub tau_pipe_max: f64,
    /// Flow used by the constant-flow baseline, kg/s.
    pub m_nominal: f64,
}

impl Pipe {
    /// Heat loss coefficient ν·L in MW/°C.
    pub fn loss_coeff(&self) -> f64 {
        self.heat_transfer_coeff * self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    /// Electric demand per hour, MW.
    pub p_load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Per-unit on the model's MVA base.
    pub reactance: f64,
    /// MW
    pub p_max: f64,
}

/// One half-plane `a·P + b·H <= d` of a CHP operating region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRow {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatingBoiler {
    pub id: String,
    pub node_id: String,
    /// $/MWh
    pub cost_c: f64,
    pub h_min: f64,
    pub h_max: f64,
}

/// Combined heat and power unit with cost
/// `c0 + c1 P + c2 P^2 + c3 H + c4 H^2 + c5 P H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChpUnit {
    pub id: String,
    pub bus_id: String,
    pub node_id: String,
    pub cost: [f64; 6],
    pub region: Vec<RegionRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalUnit {
    pub id: String,
    pub bus_id: String,
    pub cost_c1: f64,
    pub cost_c2: f64,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerationUnit {
    HeatingBoiler(HeatingBoiler),
    Chp(ChpUnit),
    Thermal(ThermalUnit),
}

impl GenerationUnit {
    pub fn id(&self) -> &str {
        match self {
            GenerationUnit::HeatingBoiler(u) => &u.id,
            GenerationUnit::Chp(u) => &u.id,
            GenerationUnit::Thermal(u) => &u.id,
        }
    }

    pub fn heat_node(&self) -> Option<&str> {
        match self {
            GenerationUnit::HeatingBoiler(u) => Some(&u.node_id),
            GenerationUnit::Chp(u) => Some(&u.node_id),
            GenerationUnit::Thermal(_) => None,
        }
    }

    pub fn bus(&self) -> Option<&str> {
        match self {
            GenerationUnit::HeatingBoiler(_) => None,
            GenerationUnit::Chp(u) => Some(&u.bus_id),
            GenerationUnit::Thermal(u) => Some(&u.bus_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub heat_nodes: Vec<HeatNode>,
    pub pipes: Vec<Pipe>,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub units: Vec<GenerationUnit>,
    pub horizon_hours: usize,
    /// °C
    pub ambient_temp: f64,
    /// MW·s/(kg·°C)
    pub specific_heat: f64,
    /// MVA
    pub base_power: f64,
}

/// Pipe indices entering (`incoming`) and leaving (`outgoing`) each heat node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    pub incoming: BTreeMap<String, Vec<usize>>,
    pub outgoing: BTreeMap<String, Vec<usize>>,
}

impl Adjacency {
    pub fn incoming(&self, node: &str) -> &[usize] {
        self.incoming.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn outgoing(&self, node: &str) -> &[usize] {
        self.outgoing.get(node).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// In(i) = pipes with `to == i`, Out(i) = pipes with `from == i`.
pub fn derive_adjacency(model: &NetworkModel) -> Adjacency {
    let mut incoming: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut outgoing: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for node in &model.heat_nodes {
        incoming.insert(node.id.clone(), Vec::new());
        outgoing.insert(node.id.clone(), Vec::new());
    }
    for (k, pipe) in model.pipes.iter().enumerate() {
        incoming.entry(pipe.to.clone()).or_default().push(k);
        outgoing.entry(pipe.from.clone()).or_default().push(k);
    }
    Adjacency { incoming, outgoing }
}

/// Role a heat node plays in the supply network formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    /// Fixed-temperature supply node.
    Source,
    /// Has incoming and outgoing pipes; mass is conserved.
    Interior,
    /// No outgoing pipe; water leaves to the return network.
    Leaf,
}

impl NetworkModel {
    pub fn node(&self, id: &str) -> Option<&HeatNode> {
        self.heat_nodes.iter().find(|n| n.id == id)
    }

    pub fn node_role(&self, adjacency: &Adjacency, id: &str) -> NodeRole {
        match self.node(id).map(|n| n.kind) {
            Some(NodeKind::Source) => NodeRole::Source,
            _ if adjacency.outgoing(id).is_empty() => NodeRole::Leaf,
            _ => NodeRole::Interior,
        }
    }

    /// Relative (above ambient) source temperature.
    pub fn source_tau_tilde(&self, id: &str) -> Option<f64> {
        self.node(id)
            .and_then(|n| n.tau_source)
            .map(|t| t - self.ambient_temp)
    }

    /// Lowest bus id; its voltage angle is the reference.
    pub fn reference_bus(&self) -> Option<&Bus> {
        self.buses.iter().min_by(|a, b| a.id.cmp(&b.id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub entity: String,
    pub message: String,
}

impl ValidationIssue {
    pub(crate) fn new(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unit convention error: {0}")]
    UnitConvention(String),
    #[error("validation error: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),
}

impl NetworkError {
    pub fn issues(&self) -> &[ValidationIssue] {
        match self {
            NetworkError::Validation(v) => v,
            _ => &[],
        }
    }
}

/// Validates an in-memory model (used by the loader and by hand-built models).
pub fn validate(model: &NetworkModel) -> Result<(), NetworkError> {
    let issues = validate::collect_issues(model);
    if issues.is_empty() {
        Ok(())
    } else {
        Err(NetworkError::Validation(issues))
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkModel, NetworkError> {
    load_network(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipe(id: &str, from: &str, to: &str) -> Pipe {
        Pipe {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length: 100.0,
            heat_transfer_coeff: 1e-7,
            m_min: 0.1,
            m_max: 5.0,
            tau_pipe_min: 50.0,
            tau_pipe_max: 100.0,
            m_nominal: 1.0,
        }
    }

    fn model_with(pipes: Vec<Pipe>, nodes: &[&str]) -> NetworkModel {
        NetworkModel {
            heat_nodes: nodes
                .iter()
                .map(|id| HeatNode {
                    id: id.to_string(),
                    kind: NodeKind::Junction,
                    tau_min: 50.0,
                    tau_max: 100.0,
                    tau_source: None,
                    heat_load: vec![0.0],
                })
                .collect(),
            pipes,
            buses: vec![],
            lines: vec![],
            units: vec![],
            horizon_hours: 1,
            ambient_temp: 10.0,
            specific_heat: WATER_SPECIFIC_HEAT,
            base_power: 100.0,
        }
    }

    #[test]
    fn chain_adjacency() {
        let m = model_with(vec![pipe("p1", "s", "a"), pipe("p2", "a", "b")], &["s", "a", "b"]);
        let adj = derive_adjacency(&m);
        assert_eq!(adj.incoming("a"), &[0]);
        assert_eq!(adj.outgoing("a"), &[1]);
    }

    #[test]
    fn star_adjacency() {
        let m = model_with(vec![pipe("p1", "s", "a"), pipe("p2", "s", "b")], &["s", "a", "b"]);
        let adj = derive_adjacency(&m);
        assert_eq!(adj.outgoing("s").len(), 2);
        assert!(adj.incoming("s").is_empty());
    }

    #[test]
    fn single_pipe_endpoints() {
        let m = model_with(vec![pipe("p1", "s", "l")], &["s", "l"]);
        let adj = derive_adjacency(&m);
        assert!(adj.incoming("s").is_empty());
        assert!(adj.outgoing("l").is_empty());
    }

    #[test]
    fn adjacency_conserves_pipe_count() {
        let m = model_with(
            vec![pipe("p1", "s", "a"), pipe("p2", "a", "b"), pipe("p3", "a", "c")],
            &["s", "a", "b", "c"],
        );
        let adj = derive_adjacency(&m);
        let n_in: usize = adj.incoming.values().map(Vec::len).sum();
        let n_out: usize = adj.outgoing.values().map(Vec::len).sum();
        assert_eq!(n_in, 3);
        assert_eq!(n_out, 3);
    }
}
