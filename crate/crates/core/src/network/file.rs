//! Canonical JSON network file: schema enforcement, parsing and serialization.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use jsonschema::error::ValidationErrorKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    validate, Bus, ChpUnit, GenerationUnit, HeatNode, HeatingBoiler, Line, NetworkError,
    NetworkModel, NodeKind, Pipe, RegionRow, ThermalUnit, WATER_SPECIFIC_HEAT,
};

/// JSON-schema document every network file must satisfy.
pub const NETWORK_SCHEMA: &str = include_str!("../../schema/network.schema.json");

fn schema_validator() -> &'static jsonschema::Validator {
    static VALIDATOR: OnceLock<jsonschema::Validator> = OnceLock::new();
    VALIDATOR.get_or_init(|| {
        let schema: Value = serde_json::from_str(NETWORK_SCHEMA).expect("bundled schema is JSON");
        jsonschema::validator_for(&schema).expect("bundled schema compiles")
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    name: Option<String>,
    #[serde(rename = "T")]
    horizon: usize,
    tau_ambient: f64,
    #[serde(default = "default_specific_heat")]
    specific_heat: f64,
    base_mva: f64,
}

fn default_specific_heat() -> f64 {
    WATER_SPECIFIC_HEAT
}

#[derive(Debug, Serialize, Deserialize)]
struct HeatNodeFile {
    id: String,
    kind: String,
    tau_min: f64,
    tau_max: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tau_source: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PipeFile {
    id: String,
    from: String,
    to: String,
    length: f64,
    heat_transfer_coeff: f64,
    m_min: f64,
    m_max: f64,
    m_nominal: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tau_pipe_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tau_pipe_max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusFile {
    id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineFile {
    id: String,
    from: String,
    to: String,
    reactance: f64,
    p_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum UnitFile {
    HeatingBoiler {
        id: String,
        node_id: String,
        cost_c: f64,
        h_min: f64,
        h_max: f64,
    },
    Chp {
        id: String,
        bus_id: String,
        node_id: String,
        cost_c0: f64,
        cost_c1: f64,
        cost_c2: f64,
        cost_c3: f64,
        cost_c4: f64,
        cost_c5: f64,
        region: Vec<RegionRowFile>,
    },
    ThermalUnit {
        id: String,
        bus_id: String,
        cost_c1: f64,
        cost_c2: f64,
        p_min: f64,
        p_max: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionRowFile {
    a: f64,
    b: f64,
    d: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LoadsFile {
    heat: BTreeMap<String, Vec<f64>>,
    power: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    meta: MetaFile,
    heat_nodes: Vec<HeatNodeFile>,
    pipes: Vec<PipeFile>,
    buses: Vec<BusFile>,
    lines: Vec<LineFile>,
    units: Vec<UnitFile>,
    loads: LoadsFile,
}

fn check_schema(value: &Value) -> Result<(), NetworkError> {
    let mut missing = Vec::new();
    let mut other = Vec::new();
    for err in schema_validator().iter_errors(value) {
        let at = err.instance_path().to_string();
        match err.kind() {
            ValidationErrorKind::Required { property } => {
                missing.push(format!("{at}: missing required field {property}"))
            }
            _ => other.push(format!("{at}: {err}")),
        }
    }
    if !missing.is_empty() {
        return Err(NetworkError::UnitConvention(missing.join("; ")));
    }
    if !other.is_empty() {
        return Err(NetworkError::Parse(other.join("; ")));
    }
    Ok(())
}

fn parse_kind(kind: &str) -> NodeKind {
    match kind {
        "source" => NodeKind::Source,
        "load" => NodeKind::Load,
        // Schema restricts the value to the three kinds.
        _ => NodeKind::Junction,
    }
}

fn into_model(file: NetworkFile) -> Result<NetworkModel, NetworkError> {
    let horizon = file.meta.horizon;
    let mut heat_loads = file.loads.heat;
    let mut power_loads = file.loads.power;

    let mut unit_errors = Vec::new();
    let mut heat_nodes = Vec::with_capacity(file.heat_nodes.len());
    for n in &file.heat_nodes {
        let kind = parse_kind(&n.kind);
        let heat_load = match heat_loads.remove(&n.id) {
            Some(series) => series,
            None if kind == NodeKind::Load => {
                unit_errors.push(format!("heat node {}: missing heat load series (MW)", n.id));
                Vec::new()
            }
            None => vec![0.0; horizon],
        };
        heat_nodes.push(HeatNode {
            id: n.id.clone(),
            kind,
            tau_min: n.tau_min,
            tau_max: n.tau_max,
            tau_source: n.tau_source,
            heat_load,
        });
    }
    if !unit_errors.is_empty() {
        return Err(NetworkError::UnitConvention(unit_errors.join("; ")));
    }

    let mut stray: Vec<super::ValidationIssue> = heat_loads
        .keys()
        .map(|id| super::ValidationIssue::new(format!("load {id}"), "no heat node with this id"))
        .collect();

    let pipes = file
        .pipes
        .into_iter()
        .map(|p| {
            // Pipe outlet limits default to the downstream node's limits.
            let to = heat_nodes.iter().find(|n| n.id == p.to);
            let tau_pipe_min = p
                .tau_pipe_min
                .or(to.map(|n| n.tau_min))
                .unwrap_or(f64::NAN);
            let tau_pipe_max = p
                .tau_pipe_max
                .or(to.map(|n| n.tau_max))
                .unwrap_or(f64::NAN);
            Pipe {
                id: p.id,
                from: p.from,
                to: p.to,
                length: p.length,
                heat_transfer_coeff: p.heat_transfer_coeff,
                m_min: p.m_min,
                m_max: p.m_max,
                tau_pipe_min,
                tau_pipe_max,
                m_nominal: p.m_nominal,
            }
        })
        .collect();

    let buses: Vec<Bus> = file
        .buses
        .into_iter()
        .map(|b| {
            let p_load = power_loads.remove(&b.id).unwrap_or_else(|| vec![0.0; horizon]);
            Bus { id: b.id, p_load }
        })
        .collect();
    stray.extend(
        power_loads
            .keys()
            .map(|id| super::ValidationIssue::new(format!("load {id}"), "no bus with this id")),
    );

    let lines = file
        .lines
        .into_iter()
        .map(|l| Line {
            id: l.id,
            from: l.from,
            to: l.to,
            reactance: l.reactance,
            p_max: l.p_max,
        })
        .collect();

    let units = file
        .units
        .into_iter()
        .map(|u| match u {
            UnitFile::HeatingBoiler {
                id,
                node_id,
                cost_c,
                h_min,
                h_max,
            } => GenerationUnit::HeatingBoiler(HeatingBoiler {
                id,
                node_id,
                cost_c,
                h_min,
                h_max,
            }),
            UnitFile::Chp {
                id,
                bus_id,
                node_id,
                cost_c0,
                cost_c1,
                cost_c2,
                cost_c3,
                cost_c4,
                cost_c5,
                region,
            } => GenerationUnit::Chp(ChpUnit {
                id,
                bus_id,
                node_id,
                cost: [cost_c0, cost_c1, cost_c2, cost_c3, cost_c4, cost_c5],
                region: region
                    .into_iter()
                    .map(|r| RegionRow { a: r.a, b: r.b, d: r.d })
                    .collect(),
            }),
            UnitFile::ThermalUnit {
                id,
                bus_id,
                cost_c1,
                cost_c2,
                p_min,
                p_max,
            } => GenerationUnit::Thermal(ThermalUnit {
                id,
                bus_id,
                cost_c1,
                cost_c2,
                p_min,
                p_max,
            }),
        })
        .collect();

    let model = NetworkModel {
        heat_nodes,
        pipes,
        buses,
        lines,
        units,
        horizon_hours: horizon,
        ambient_temp: file.meta.tau_ambient,
        specific_heat: file.meta.specific_heat,
        base_power: file.meta.base_mva,
    };

    match validate(&model) {
        Ok(()) if stray.is_empty() => Ok(model),
        Ok(()) => Err(NetworkError::Validation(stray)),
        Err(NetworkError::Validation(mut issues)) => {
            issues.extend(stray);
            Err(NetworkError::Validation(issues))
        }
        Err(e) => Err(e),
    }
}

/// Parses, schema-checks and validates a network from JSON text.
pub fn from_json_str(text: &str) -> Result<NetworkModel, NetworkError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
    check_schema(&value)?;
    let file: NetworkFile =
        serde_json::from_value(value).map_err(|e| NetworkError::Parse(e.to_string()))?;
    into_model(file)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json_str(&text)
}

fn to_file(model: &NetworkModel) -> NetworkFile {
    let mut heat = BTreeMap::new();
    for n in &model.heat_nodes {
        if n.kind == NodeKind::Load {
            heat.insert(n.id.clone(), n.heat_load.clone());
        }
    }
    let power = model
        .buses
        .iter()
        .map(|b| (b.id.clone(), b.p_load.clone()))
        .collect();
    NetworkFile {
        meta: MetaFile {
            name: None,
            horizon: model.horizon_hours,
            tau_ambient: model.ambient_temp,
            specific_heat: model.specific_heat,
            base_mva: model.base_power,
        },
        heat_nodes: model
            .heat_nodes
            .iter()
            .map(|n| HeatNodeFile {
                id: n.id.clone(),
                kind: n.kind.as_str().to_string(),
                tau_min: n.tau_min,
                tau_max: n.tau_max,
                tau_source: n.tau_source,
            })
            .collect(),
        pipes: model
            .pipes
            .iter()
            .map(|p| PipeFile {
                id: p.id.clone(),
                from: p.from.clone(),
                to: p.to.clone(),
                length: p.length,
                heat_transfer_coeff: p.heat_transfer_coeff,
                m_min: p.m_min,
                m_max: p.m_max,
                m_nominal: p.m_nominal,
                tau_pipe_min: Some(p.tau_pipe_min),
                tau_pipe_max: Some(p.tau_pipe_max),
            })
            .collect(),
        buses: model.buses.iter().map(|b| BusFile { id: b.id.clone() }).collect(),
        lines: model
            .lines
            .iter()
            .map(|l| LineFile {
                id: l.id.clone(),
                from: l.from.clone(),
                to: l.to.clone(),
                reactance: l.reactance,
                p_max: l.p_max,
            })
            .collect(),
        units: model
            .units
            .iter()
            .map(|u| match u {
                GenerationUnit::HeatingBoiler(b) => UnitFile::HeatingBoiler {
                    id: b.id.clone(),
                    node_id: b.node_id.clone(),
                    cost_c: b.cost_c,
                    h_min: b.h_min,
                    h_max: b.h_max,
                },
                GenerationUnit::Chp(c) => UnitFile::Chp {
                    id: c.id.clone(),
                    bus_id: c.bus_id.clone(),
                    node_id: c.node_id.clone(),
                    cost_c0: c.cost[0],
                    cost_c1: c.cost[1],
                    cost_c2: c.cost[2],
                    cost_c3: c.cost[3],
                    cost_c4: c.cost[4],
                    cost_c5: c.cost[5],
                    region: c
                        .region
                        .iter()
                        .map(|r| RegionRowFile { a: r.a, b: r.b, d: r.d })
                        .collect(),
                },
                GenerationUnit::Thermal(t) => UnitFile::ThermalUnit {
                    id: t.id.clone(),
                    bus_id: t.bus_id.clone(),
                    cost_c1: t.cost_c1,
                    cost_c2: t.cost_c2,
                    p_min: t.p_min,
                    p_max: t.p_max,
                },
            })
            .collect(),
        loads: LoadsFile { heat, power },
    }
}

pub fn to_json_string(model: &NetworkModel) -> String {
    serde_json::to_string_pretty(&to_file(model)).expect("network serializes")
}

pub fn save_network(model: &NetworkModel, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, to_json_string(model) + "\n")
}
