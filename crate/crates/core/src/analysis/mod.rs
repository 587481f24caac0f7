//! Post-solution audits and the cross-variant comparison harness.

mod compare;
mod physics;
mod report;

use thiserror::Error;

use crate::formulation::FormulationError;

pub use compare::{compare_variants, map_columns, CompareConfig, ComparisonReport, RowKind, VariantRow};
pub use physics::{
    exact_heat_loss_audit, recover_temperatures, HourClosure, NodeTemperature, PhysicsAudit, PipeAudit, PipeTemperature, Temperatures,
    DEFAULT_LOSS_RATIO_THRESHOLD, ZERO_FLOW,
};
pub use report::{audit_csv, comparison_csv, comparison_json, config_hash, format_hours, header_line, timings_csv, ARTIFACT_VERSION};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("point has {got} entries, instance has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Formulation(#[from] FormulationError),
}
