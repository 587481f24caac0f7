//! Assembly of the planning problem for each model variant.
//!
//! Every variant shares the electric side (DC balance and line limits), the
//! unit operating regions and the generation cost. They differ only in the
//! district-heating block:
//!
//! | variant          | heat block                                        |
//! |------------------|---------------------------------------------------|
//! | `Base`           | nodal/pipe temperatures, two products per pipe    |
//! | `Reformulated`   | heat-flow form, one product per pipe              |
//! | `RemoveBilinear` | heat-flow form without the product rows           |
//! | `McCormick`      | heat-flow form with envelope rows                 |
//! | `ConstantFlow`   | flows fixed at nominal, product rows linear       |
//!
//! Row labels carry the tag of the constraint family they belong to, e.g.
//! `11a` for a nodal heat balance or `12b` for a line limit.

mod build;
mod lp;
mod mccormick;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::network::NetworkModel;
use crate::qp::QpProblem;

pub use lp::to_lp_string;
pub use mccormick::{apply_mccormick, default_boxes, envelope_rows, EnvelopeRow, TermBox};
pub(crate) use mccormick::relax as mccormick_relax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Base,
    Reformulated,
    RemoveBilinear,
    McCormick,
    ConstantFlow,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::Reformulated,
        Variant::RemoveBilinear,
        Variant::McCormick,
        Variant::ConstantFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Reformulated => "reformulated",
            Variant::RemoveBilinear => "remove_bilinear",
            Variant::McCormick => "mccormick",
            Variant::ConstantFlow => "constant_flow",
        }
    }

    pub fn is_convex(self) -> bool {
        !matches!(self, Variant::Base | Variant::Reformulated)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Variable families; the declaration order is the column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    MPipe,
    TauTildeNode,
    /// Pipe outlet temperature above ambient; base variant only.
    TauTildePipe,
    HInPipe,
    HOutPipe,
    ThetaBus,
    PChp,
    HChp,
    PTu,
    HHb,
}

impl VarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VarKind::MPipe => "m_pipe",
            VarKind::TauTildeNode => "tau_tilde_node",
            VarKind::TauTildePipe => "tau_tilde_pipe",
            VarKind::HInPipe => "h_in_pipe",
            VarKind::HOutPipe => "h_out_pipe",
            VarKind::ThetaBus => "theta_bus",
            VarKind::PChp => "p_chp",
            VarKind::HChp => "h_chp",
            VarKind::PTu => "p_tu",
            VarKind::HHb => "h_hb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            VarKind::MPipe,
            VarKind::TauTildeNode,
            VarKind::TauTildePipe,
            VarKind::HInPipe,
            VarKind::HOutPipe,
            VarKind::ThetaBus,
            VarKind::PChp,
            VarKind::HChp,
            VarKind::PTu,
            VarKind::HHb,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarKey {
    pub kind: VarKind,
    pub id: String,
    pub hour: usize,
}

impl VarKey {
    pub fn new(kind: VarKind, id: impl Into<String>, hour: usize) -> Self {
        Self { kind, id: id.into(), hour }
    }

    /// `kind[id,hour]`, the name used in solution files and LP exports.
    pub fn name(&self) -> String {
        format!("{}[{},{}]", self.kind.as_str(), self.id, self.hour)
    }

    pub fn parse_name(s: &str) -> Option<Self> {
        let (kind, rest) = s.split_once('[')?;
        let inner = rest.strip_suffix(']')?;
        let (id, hour) = inner.rsplit_once(',')?;
        Some(Self::new(VarKind::parse(kind)?, id, hour.parse().ok()?))
    }
}

/// Bijection between semantic keys and column indices, in sorted key order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarMap {
    keys: Vec<VarKey>,
    index: BTreeMap<VarKey, usize>,
}

impl VarMap {
    pub fn from_keys(keys: impl IntoIterator<Item = VarKey>) -> Self {
        let index: BTreeMap<VarKey, usize> = keys.into_iter().map(|k| (k, 0)).collect();
        let keys: Vec<VarKey> = index.keys().cloned().collect();
        let index = keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        Self { keys, index }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, kind: VarKind, id: &str, hour: usize) -> Option<usize> {
        self.index.get(&VarKey::new(kind, id, hour)).copied()
    }

    pub fn index_of(&self, key: &VarKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, col: usize) -> &VarKey {
        &self.keys[col]
    }

    pub fn keys(&self) -> &[VarKey] {
        &self.keys
    }
}

/// Constraint family tag plus the entity and hour a row belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowLabel {
    pub tag: &'static str,
    pub entity: String,
    pub hour: usize,
}

impl RowLabel {
    pub fn new(tag: &'static str, entity: impl Into<String>, hour: usize) -> Self {
        Self { tag, entity: entity.into(), hour }
    }
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.tag, self.entity, self.hour)
    }
}

/// `x[product] = coef · x[flow] · x[temp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearTerm {
    pub product: usize,
    pub flow: usize,
    pub temp: usize,
    pub coef: f64,
    pub pipe: String,
    pub hour: usize,
    pub tag: &'static str,
}

impl BilinearTerm {
    /// Signed residual `H - c·m·τ̃`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        x[self.product] - self.coef * x[self.flow] * x[self.temp]
    }

    /// `|H - c·m·τ̃| / max(|H|, floor)`.
    pub fn relative_violation(&self, x: &[f64], floor: f64) -> f64 {
        self.residual(x).abs() / x[self.product].abs().max(floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub variant: Variant,
    pub hours: Vec<usize>,
    pub vars: VarMap,
    pub qp: QpProblem,
    pub eq_labels: Vec<RowLabel>,
    pub in_labels: Vec<RowLabel>,
    pub bilinear: Vec<BilinearTerm>,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.vars.len()
    }

    pub fn eq_rows_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.eq_labels.iter().enumerate().filter(move |(_, l)| l.tag == tag).map(|(i, _)| i)
    }

    pub fn in_rows_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.in_labels.iter().enumerate().filter(move |(_, l)| l.tag == tag).map(|(i, _)| i)
    }

    /// Maximum and mean relative violation over the registered product terms.
    pub fn violation_stats(&self, x: &[f64], floor: f64) -> (f64, f64) {
        if self.bilinear.is_empty() {
            return (0.0, 0.0);
        }
        let v: Vec<f64> = self.bilinear.iter().map(|t| t.relative_violation(x, floor)).collect();
        let max = v.iter().cloned().fold(0.0, f64::max);
        (max, v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Same instance restricted to the columns and rows of one hour.
    pub fn hour_slice(&self, hour: usize) -> ProblemInstance {
        build::slice_hours(self, &[hour])
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FormulationError {
    #[error("hour selection is empty")]
    EmptyHours,
    #[error("hour {0} outside 1..={1}")]
    HourOutOfRange(usize, usize),
    #[error("variant {0} is not supported here")]
    UnsupportedVariant(Variant),
    #[error("empty bound interval for {0}")]
    InfeasibleBounds(String),
    #[error("pipe {0} has no nominal flow")]
    MissingNominalFlow(String),
    #[error("empty McCormick box for term {0}")]
    EmptyBox(String),
    #[error("point has {got} entries, instance has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Builds the instance of `variant` over `hours` (1-based, any order; the
/// instance stores them sorted and deduplicated).
pub fn build(model: &NetworkModel, variant: Variant, hours: &[usize]) -> Result<ProblemInstance, FormulationError> {
    build::build(model, variant, hours)
}

/// Generation cost of the point `x`, $ over the instance's hours.
pub fn objective_value(instance: &ProblemInstance, x: &[f64]) -> Result<f64, FormulationError> {
    if x.len() != instance.n() {
        return Err(FormulationError::DimensionMismatch { expected: instance.n(), got: x.len() });
    }
    Ok(instance.qp.objective(x))
}

/// Nodal heat-balance rows with `b = H_L`, one per (node, hour).
pub const TAG_HEAT_BALANCE: &str = "11a";
/// Nodal power-balance rows with `b = P_L / base`, one per (bus, hour).
pub const TAG_POWER_BALANCE: &str = "12a";
