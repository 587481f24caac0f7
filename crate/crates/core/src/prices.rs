//! Shadow prices of the nodal balance rows.

use thiserror::Error;

use crate::formulation::ProblemInstance;
use crate::network::NetworkModel;
use crate::qp::{QpSolution, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Commodity {
    Heat,
    Power,
}

impl Commodity {
    pub fn as_str(self) -> &'static str {
        match self {
            Commodity::Heat => "heat",
            Commodity::Power => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Price {
    pub commodity: Commodity,
    /// Heat node or bus id.
    pub entity: String,
    pub hour: usize,
    /// $/MWh; positive means serving one more MWh of load costs more.
    pub value: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("prices need an optimal solution, got {0}")]
pub struct NotOptimal(pub QpStatus);

/// Maps every heat-node and bus balance row to its marginal cost.
///
/// The power balance is written per unit, so its multiplier is converted
/// back to $/MWh with the MVA base. A heat balance relaxed to `>=` (fixed
/// flows at a sink) is priced by its inequality multiplier.
pub fn extract_duals(solution: &QpSolution, instance: &ProblemInstance, model: &NetworkModel) -> Result<Vec<Price>, NotOptimal> {
    if solution.status != QpStatus::Optimal {
        return Err(NotOptimal(solution.status));
    }
    let mut out = Vec::new();
    let heat = |tag: &str| tag == "11a" || tag == "1a";
    for (i, l) in instance.eq_labels.iter().enumerate() {
        let (commodity, value) = if heat(l.tag) {
            (Commodity::Heat, solution.duals.y_eq[i])
        } else if l.tag == "12a" {
            (Commodity::Power, solution.duals.y_eq[i] / model.base_power)
        } else {
            continue;
        };
        out.push(Price { commodity, entity: l.entity.clone(), hour: l.hour, value });
    }
    for (i, l) in instance.in_labels.iter().enumerate() {
        if heat(l.tag) {
            out.push(Price { commodity: Commodity::Heat, entity: l.entity.clone(), hour: l.hour, value: solution.duals.z_in[i] });
        }
    }
    out.sort_by(|a, b| (a.hour, a.commodity as u8, &a.entity).cmp(&(b.hour, b.commodity as u8, &b.entity)));
    Ok(out)
}
