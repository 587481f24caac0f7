use std::collections::{BTreeMap, BTreeSet};

use super::{
    derive_adjacency, validate_chp_region, GenerationUnit, NetworkModel, NodeKind,
    ValidationIssue as Issue,
};

fn check_unique<'a>(
    issues: &mut Vec<Issue>,
    what: &str,
    ids: impl Iterator<Item = &'a str>,
) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            issues.push(Issue::new(format!("{what} {id}"), "duplicate id"));
        }
    }
    seen
}

fn check_series(issues: &mut Vec<Issue>, entity: String, series: &[f64], horizon: usize, nonneg: bool) {
    if series.len() != horizon {
        issues.push(Issue::new(
            entity,
            format!("series has {} entries, expected T = {horizon}", series.len()),
        ));
    } else if series.iter().any(|v| !v.is_finite()) {
        issues.push(Issue::new(entity, "series contains non-finite values"));
    } else if nonneg && series.iter().any(|&v| v < 0.0) {
        issues.push(Issue::new(entity, "load >= 0 violated"));
    }
}

/// Number of connected components of an undirected graph given as an edge list.
fn components(nodes: &BTreeSet<&str>, edges: &[(&str, &str)]) -> usize {
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        if let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
            }
        }
    }
    (0..nodes.len()).filter(|&k| find(&mut parent, k) == k).count()
}

pub(super) fn collect_issues(model: &NetworkModel) -> Vec<Issue> {
    let mut issues = Vec::new();
    let horizon = model.horizon_hours;

    if horizon == 0 {
        issues.push(Issue::new("meta", "T >= 1 violated"));
    }
    if !(model.specific_heat > 0.0) {
        issues.push(Issue::new("meta", "specific_heat > 0 violated"));
    }
    if !(model.base_power > 0.0) {
        issues.push(Issue::new("meta", "base_mva > 0 violated"));
    }

    let node_ids = check_unique(&mut issues, "heat node", model.heat_nodes.iter().map(|n| n.id.as_str()));
    check_unique(&mut issues, "pipe", model.pipes.iter().map(|p| p.id.as_str()));
    let bus_ids = check_unique(&mut issues, "bus", model.buses.iter().map(|b| b.id.as_str()));
    check_unique(&mut issues, "line", model.lines.iter().map(|l| l.id.as_str()));
    check_unique(&mut issues, "unit", model.units.iter().map(|u| u.id()));

    for n in &model.heat_nodes {
        let e = format!("heat node {}", n.id);
        if !(n.tau_min < n.tau_max) {
            issues.push(Issue::new(&e, "tau_min < tau_max violated"));
        }
        match (n.kind, n.tau_source) {
            (NodeKind::Source, None) => issues.push(Issue::new(&e, "source node requires tau_source")),
            (NodeKind::Source, Some(t)) if !(n.tau_min <= t && t <= n.tau_max) => {
                issues.push(Issue::new(&e, "tau_source within [tau_min, tau_max] violated"))
            }
            (k, Some(_)) if k != NodeKind::Source => {
                issues.push(Issue::new(&e, "tau_source given for a non-source node"))
            }
            _ => {}
        }
        check_series(&mut issues, e.clone(), &n.heat_load, horizon, true);
        if n.kind != NodeKind::Load && n.heat_load.iter().any(|&v| v != 0.0) {
            issues.push(Issue::new(&e, "heat load on a non-load node"));
        }
    }

    for p in &model.pipes {
        let e = format!("pipe {}", p.id);
        for end in [&p.from, &p.to] {
            if !node_ids.contains(end.as_str()) {
                issues.push(Issue::new(&e, format!("unknown heat node {end}")));
            }
        }
        if p.from == p.to {
            issues.push(Issue::new(&e, "pipe connects a node to itself"));
        }
        if !(0.0 <= p.m_min) {
            issues.push(Issue::new(&e, "m_min >= 0 violated"));
        }
        if !(p.m_min < p.m_max) {
            issues.push(Issue::new(&e, "m_min < m_max violated"));
        } else if !(p.m_min <= p.m_nominal && p.m_nominal <= p.m_max) {
            issues.push(Issue::new(&e, "m_nominal within [m_min, m_max] violated"));
        }
        if !(p.length > 0.0) {
            issues.push(Issue::new(&e, "length > 0 violated"));
        }
        if !(p.heat_transfer_coeff >= 0.0) {
            issues.push(Issue::new(&e, "heat_transfer_coeff >= 0 violated"));
        }
        if !(p.tau_pipe_min < p.tau_pipe_max) {
            issues.push(Issue::new(&e, "tau_pipe_min < tau_pipe_max violated"));
        }
    }

    for b in &model.buses {
        check_series(&mut issues, format!("bus {}", b.id), &b.p_load, horizon, false);
    }
    for l in &model.lines {
        let e = format!("line {}", l.id);
        for end in [&l.from, &l.to] {
            if !bus_ids.contains(end.as_str()) {
                issues.push(Issue::new(&e, format!("unknown bus {end}")));
            }
        }
        if l.from == l.to {
            issues.push(Issue::new(&e, "line connects a bus to itself"));
        }
        if !(l.reactance > 0.0) {
            issues.push(Issue::new(&e, "reactance > 0 violated"));
        }
        if !(l.p_max > 0.0) {
            issues.push(Issue::new(&e, "p_max > 0 violated"));
        }
    }

    let mut heated: BTreeSet<&str> = BTreeSet::new();
    for u in &model.units {
        let e = format!("unit {}", u.id());
        if let Some(node) = u.heat_node() {
            match model.node(node) {
                None => issues.push(Issue::new(&e, format!("unknown heat node {node}"))),
                Some(n) if n.kind != NodeKind::Source => {
                    issues.push(Issue::new(&e, format!("heat unit attached to non-source node {node}")))
                }
                Some(_) => {
                    heated.insert(node);
                }
            }
        }
        if let Some(bus) = u.bus() {
            if !bus_ids.contains(bus) {
                issues.push(Issue::new(&e, format!("unknown bus {bus}")));
            }
        }
        match u {
            GenerationUnit::HeatingBoiler(b) => {
                if !(b.h_min <= b.h_max) {
                    issues.push(Issue::new(&e, "h_min <= h_max violated"));
                }
            }
            GenerationUnit::Thermal(t) => {
                if !(t.p_min <= t.p_max) {
                    issues.push(Issue::new(&e, "p_min <= p_max violated"));
                }
                if t.cost_c2 < 0.0 {
                    issues.push(Issue::new(&e, "cost_c2 >= 0 violated (convex cost)"));
                }
            }
            GenerationUnit::Chp(c) => {
                if let Err(err) = validate_chp_region(c) {
                    let msg = err.to_string();
                    let msg = msg.split_once(": ").map(|(_, m)| m.to_string()).unwrap_or(msg);
                    issues.push(Issue::new(&e, msg));
                }
                let (c2, c4, c5) = (c.cost[2], c.cost[4], c.cost[5]);
                let det = 4.0 * c2 * c4 - c5 * c5;
                let tol = 1e-12 * (1.0 + c2.abs() + c4.abs() + c5.abs()).powi(2);
                if c2 < 0.0 || c4 < 0.0 || det < -tol {
                    issues.push(Issue::new(&e, "cost Hessian [[2c2, c5], [c5, 2c4]] is not positive semidefinite"));
                }
            }
        }
    }

    let adjacency = derive_adjacency(model);
    for n in &model.heat_nodes {
        let e = format!("heat node {}", n.id);
        let n_in = adjacency.incoming(&n.id).len();
        if n.kind == NodeKind::Source {
            if !heated.contains(n.id.as_str()) {
                issues.push(Issue::new(&e, "source node hosts no CHP unit or heating boiler"));
            }
            if n_in > 0 {
                issues.push(Issue::new(&e, "source node has incoming pipes"));
            }
        } else if n_in == 0 && model.heat_nodes.len() > 1 {
            issues.push(Issue::new(&e, "non-source node has no incoming pipe"));
        }
    }

    let heat_edges: Vec<(&str, &str)> = model.pipes.iter().map(|p| (p.from.as_str(), p.to.as_str())).collect();
    if !node_ids.is_empty() && components(&node_ids, &heat_edges) > 1 {
        issues.push(Issue::new("heat network", "heat graph is not connected"));
    }
    let bus_edges: Vec<(&str, &str)> = model.lines.iter().map(|l| (l.from.as_str(), l.to.as_str())).collect();
    if bus_ids.is_empty() {
        issues.push(Issue::new("power network", "at least one bus is required"));
    } else if components(&bus_ids, &bus_edges) > 1 {
        issues.push(Issue::new("power network", "bus graph is not connected"));
    }

    issues
}
