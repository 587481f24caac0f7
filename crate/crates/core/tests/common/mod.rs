#![allow(dead_code)]

pub mod random_qp;

use std::path::PathBuf;

use ihes::network::{from_json_str, NetworkModel};
use serde_json::{json, Value};

pub fn crate_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

pub fn load(rel: &str) -> NetworkModel {
    ihes::network::load(crate_path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// The two instances shipped under `data/`.
pub const BUNDLED: [&str; 2] = ["data/micro3.json", "data/small8.json"];

pub const MICRO2: &str = "tests/fixtures/micro2.json";

pub fn all_hours(m: &NetworkModel) -> Vec<usize> {
    (1..=m.horizon_hours).collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Parameters of a one-source, one-load, one-pipe network with a single
/// boiler and one bus carrying no electric load.
#[derive(Debug, Clone)]
pub struct SinglePipe {
    pub tau_source: f64,
    pub tau_ambient: f64,
    pub specific_heat: f64,
    /// ν·L, MW/°C (length is fixed to 1000 m).
    pub nu_l: f64,
    pub heat_load: f64,
    pub boiler_cost: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub m_nominal: f64,
    pub load_tau_max: f64,
}

impl Default for SinglePipe {
    fn default() -> Self {
        // c·τ̃_s = 0.33456 MW·s/kg and νL·τ̃_s = 0.004 MW.
        Self {
            tau_source: 90.0,
            tau_ambient: 10.0,
            specific_heat: 4.182e-3,
            nu_l: 0.004 / 80.0,
            heat_load: 0.3,
            boiler_cost: 30.0,
            m_min: 0.1,
            m_max: 5.0,
            m_nominal: 1.0,
            load_tau_max: 95.0,
        }
    }
}

impl SinglePipe {
    pub fn json(&self) -> Value {
        json!({
            "meta": { "name": "single", "T": 1, "tau_ambient": self.tau_ambient, "specific_heat": self.specific_heat, "base_mva": 100.0 },
            "heat_nodes": [
                { "id": "s", "kind": "source", "tau_min": 20.0, "tau_max": 100.0, "tau_source": self.tau_source },
                { "id": "l", "kind": "load", "tau_min": 20.0, "tau_max": self.load_tau_max }
            ],
            "pipes": [{
                "id": "p1", "from": "s", "to": "l", "length": 1000.0, "heat_transfer_coeff": self.nu_l / 1000.0,
                "m_min": self.m_min, "m_max": self.m_max, "m_nominal": self.m_nominal
            }],
            "buses": [{ "id": "b1" }],
            "lines": [],
            "units": [{ "type": "heating_boiler", "id": "hb", "node_id": "s", "cost_c": self.boiler_cost, "h_min": 0.0, "h_max": 10.0 }],
            "loads": { "heat": { "l": [self.heat_load] }, "power": {} }
        })
    }

    pub fn model(&self) -> NetworkModel {
        from_json_str(&self.json().to_string()).expect("single-pipe fixture is valid")
    }

    pub fn tau_tilde(&self) -> f64 {
        self.tau_source - self.tau_ambient
    }

    /// The only flow that delivers the load: `(H_L + νLτ̃_s) / (c·τ̃_s)`.
    pub fn closed_form_flow(&self) -> f64 {
        (self.heat_load + self.nu_l * self.tau_tilde()) / (self.specific_heat * self.tau_tilde())
    }

    pub fn closed_form_production(&self) -> f64 {
        self.heat_load + self.nu_l * self.tau_tilde()
    }
}

/// Result of the brute-force search over the flows of a network where every
/// pipe runs from a fixed-temperature source with one boiler to a common sink.
#[derive(Debug, Clone, Copy)]
pub struct GridOptimum {
    pub heat_cost: f64,
    pub flows: [f64; 2],
    pub evaluated: usize,
}

/// Exhaustive search for two source pipes feeding one sink in a single hour.
///
/// The first flow is stepped on a grid of width `step` across its bounds and
/// the second follows from the sink's heat balance; the roles are then
/// swapped. Every candidate is checked against the flow bounds, the boiler
/// limits and the pipe outlet windows. Only heat costs are counted: the
/// electric side of these fixtures does not interact with the flows.
pub fn grid_two_sources(model: &NetworkModel, step: f64) -> GridOptimum {
    assert_eq!(model.pipes.len(), 2, "grid oracle expects two pipes");
    let c = model.specific_heat;
    let ta = model.ambient_temp;
    let load: f64 = model.heat_nodes.iter().map(|n| n.heat_load[0]).sum();
    struct Leg {
        tau: f64,
        nu_l: f64,
        m: (f64, f64),
        win: (f64, f64),
        cost: f64,
        h: (f64, f64),
    }
    let legs: Vec<Leg> = model
        .pipes
        .iter()
        .map(|p| {
            let src = model.heat_nodes.iter().find(|n| n.id == p.from).expect("source");
            let boiler = model
                .units
                .iter()
                .find_map(|u| match u {
                    ihes::network::GenerationUnit::HeatingBoiler(b) if b.node_id == p.from => Some(b.clone()),
                    _ => None,
                })
                .expect("one boiler per source");
            Leg {
                tau: src.tau_source.expect("fixed source") - ta,
                nu_l: p.heat_transfer_coeff * p.length,
                m: (p.m_min, p.m_max),
                win: (p.tau_pipe_min - ta, p.tau_pipe_max - ta),
                cost: boiler.cost_c,
                h: (boiler.h_min, boiler.h_max),
            }
        })
        .collect();
    // Heat delivered by leg i at flow m.
    let delivered = |l: &Leg, m: f64| c * m * l.tau - l.nu_l * l.tau;
    let feasible = |l: &Leg, m: f64| {
        let tol = 1e-9;
        let h_out = c * m * l.tau;
        let h_in = h_out - l.nu_l * l.tau;
        m >= l.m.0 - tol
            && m <= l.m.1 + tol
            && h_out >= l.h.0 - tol
            && h_out <= l.h.1 + tol
            && h_in >= c * m * l.win.0 - tol
            && h_in <= c * m * l.win.1 + tol
    };
    let mut best = GridOptimum { heat_cost: f64::INFINITY, flows: [f64::NAN; 2], evaluated: 0 };
    for (a, b) in [(0, 1), (1, 0)] {
        let (la, lb) = (&legs[a], &legs[b]);
        let n = ((la.m.1 - la.m.0) / step).round() as usize;
        for k in 0..=n {
            let ma = (la.m.0 + k as f64 * step).min(la.m.1);
            let rest = load - delivered(la, ma);
            let mb = (rest + lb.nu_l * lb.tau) / (c * lb.tau);
            best.evaluated += 1;
            if !(feasible(la, ma) && feasible(lb, mb)) {
                continue;
            }
            let cost = la.cost * c * ma * la.tau + lb.cost * c * mb * lb.tau;
            if cost < best.heat_cost {
                let mut flows = [0.0; 2];
                flows[a] = ma;
                flows[b] = mb;
                best = GridOptimum { heat_cost: cost, flows, evaluated: best.evaluated };
            }
        }
    }
    best
}

/// Cost of the thermal units at a dispatch that ignores the network: one
/// bus, loads served by the cheapest marginal unit. Valid only for fixtures
/// with a single bus and a single thermal unit.
pub fn single_bus_power_cost(model: &NetworkModel) -> f64 {
    assert_eq!(model.buses.len(), 1);
    let load: f64 = model.buses[0].p_load[0];
    let tu = model
        .units
        .iter()
        .find_map(|u| match u {
            ihes::network::GenerationUnit::Thermal(t) => Some(t.clone()),
            _ => None,
        })
        .expect("one thermal unit");
    tu.cost_c1 * load + tu.cost_c2 * load * load
}
