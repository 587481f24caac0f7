use std::collections::BTreeSet;

use super::mccormick::{apply_mccormick, default_boxes};
use super::{BilinearTerm, FormulationError, ProblemInstance, RowLabel, VarKey, VarKind, VarMap, Variant};
use crate::network::{derive_adjacency, Adjacency, GenerationUnit, NetworkModel, NodeRole};
use crate::qp::QpProblem;
use crate::sparse::{SparseRows, SymMatrix};

fn check_hours(model: &NetworkModel, hours: &[usize]) -> Result<Vec<usize>, FormulationError> {
    if hours.is_empty() {
        return Err(FormulationError::EmptyHours);
    }
    if let Some(&h) = hours.iter().find(|&&h| h == 0 || h > model.horizon_hours) {
        return Err(FormulationError::HourOutOfRange(h, model.horizon_hours));
    }
    let set: BTreeSet<usize> = hours.iter().copied().collect();
    Ok(set.into_iter().collect())
}

fn var_keys(model: &NetworkModel, adj: &Adjacency, variant: Variant, hours: &[usize]) -> Vec<VarKey> {
    let mut keys = Vec::new();
    for &t in hours {
        for p in &model.pipes {
            keys.push(VarKey::new(VarKind::MPipe, &p.id, t));
            keys.push(VarKey::new(VarKind::HInPipe, &p.id, t));
            keys.push(VarKey::new(VarKind::HOutPipe, &p.id, t));
            if variant == Variant::Base {
                keys.push(VarKey::new(VarKind::TauTildePipe, &p.id, t));
            }
        }
        for node in &model.heat_nodes {
            if model.node_role(adj, &node.id) != NodeRole::Leaf {
                keys.push(VarKey::new(VarKind::TauTildeNode, &node.id, t));
            }
        }
        for bus in &model.buses {
            keys.push(VarKey::new(VarKind::ThetaBus, &bus.id, t));
        }
        for unit in &model.units {
            match unit {
                GenerationUnit::HeatingBoiler(u) => keys.push(VarKey::new(VarKind::HHb, &u.id, t)),
                GenerationUnit::Chp(u) => {
                    keys.push(VarKey::new(VarKind::PChp, &u.id, t));
                    keys.push(VarKey::new(VarKind::HChp, &u.id, t));
                }
                GenerationUnit::Thermal(u) => keys.push(VarKey::new(VarKind::PTu, &u.id, t)),
            }
        }
    }
    keys
}

struct Assembler {
    qp: QpProblem,
    eq_labels: Vec<RowLabel>,
    in_labels: Vec<RowLabel>,
}

impl Assembler {
    fn eq(&mut self, label: RowLabel, row: Vec<(usize, f64)>, b: f64) {
        self.qp.a_eq.push_row(row);
        self.qp.b_eq.push(b);
        self.eq_labels.push(label);
    }

    fn le(&mut self, label: RowLabel, row: Vec<(usize, f64)>, b: f64) {
        self.qp.a_in.push_row(row);
        self.qp.b_in.push(b);
        self.in_labels.push(label);
    }

    fn bound(&mut self, col: usize, lo: f64, hi: f64) {
        self.qp.lo[col] = lo;
        self.qp.hi[col] = hi;
    }
}

pub(super) fn build(model: &NetworkModel, variant: Variant, hours: &[usize]) -> Result<ProblemInstance, FormulationError> {
    if variant == Variant::McCormick {
        let reformulated = build(model, Variant::Reformulated, hours)?;
        return apply_mccormick(&reformulated, &default_boxes(&reformulated));
    }
    let hours = check_hours(model, hours)?;
    let adj = derive_adjacency(model);
    let vars = VarMap::from_keys(var_keys(model, &adj, variant, &hours));
    let col = |kind, id: &str, t| vars.get(kind, id, t).expect("key registered");
    let n = vars.len();
    let mut asm = Assembler { qp: QpProblem::new(n), eq_labels: Vec::new(), in_labels: Vec::new() };
    let mut bilinear = Vec::new();
    let c = model.specific_heat;
    let ta = model.ambient_temp;
    let base = model.base_power;
    let ref_bus = model.reference_bus().map(|b| b.id.clone());
    let is_base = variant == Variant::Base;
    let fixed_flow = variant == Variant::ConstantFlow;
    let balance_tag = if is_base { "1a" } else { "11a" };

    for &t in &hours {
        // Bounds.
        for p in &model.pipes {
            let m = col(VarKind::MPipe, &p.id, t);
            if fixed_flow {
                asm.bound(m, p.m_nominal, p.m_nominal);
            } else {
                asm.bound(m, p.m_min, p.m_max);
            }
            if is_base {
                asm.bound(col(VarKind::TauTildePipe, &p.id, t), p.tau_pipe_min - ta, p.tau_pipe_max - ta);
            }
        }
        for node in &model.heat_nodes {
            match model.node_role(&adj, &node.id) {
                NodeRole::Leaf => {}
                NodeRole::Source => {
                    let v = node.tau_source.expect("validated source") - ta;
                    let k = col(VarKind::TauTildeNode, &node.id, t);
                    asm.bound(k, v, v);
                    asm.eq(RowLabel::new("1f", &node.id, t), vec![(k, 1.0)], v);
                }
                NodeRole::Interior => {
                    asm.bound(col(VarKind::TauTildeNode, &node.id, t), node.tau_min - ta, node.tau_max - ta);
                }
            }
        }
        if let Some(r) = &ref_bus {
            let k = col(VarKind::ThetaBus, r, t);
            asm.bound(k, 0.0, 0.0);
        }

        // Heat network.
        for node in &model.heat_nodes {
            let role = model.node_role(&adj, &node.id);
            let mut row: Vec<(usize, f64)> = Vec::new();
            for unit in &model.units {
                match unit {
                    GenerationUnit::HeatingBoiler(u) if u.node_id == node.id => row.push((col(VarKind::HHb, &u.id, t), 1.0)),
                    GenerationUnit::Chp(u) if u.node_id == node.id => row.push((col(VarKind::HChp, &u.id, t), 1.0)),
                    _ => {}
                }
            }
            for &k in adj.incoming(&node.id) {
                row.push((col(VarKind::HInPipe, &model.pipes[k].id, t), 1.0));
            }
            for &k in adj.outgoing(&node.id) {
                row.push((col(VarKind::HOutPipe, &model.pipes[k].id, t), -1.0));
            }
            let load = node.heat_load[t - 1];
            let label = RowLabel::new(balance_tag, &node.id, t);
            if fixed_flow && role == NodeRole::Leaf {
                // Fixed flows overdetermine a leaf; surplus heat returns unused.
                asm.le(label, row.into_iter().map(|(k, v)| (k, -v)).collect(), -load);
            } else {
                asm.eq(label, row, load);
            }
            if role == NodeRole::Interior {
                let mut mass: Vec<(usize, f64)> = Vec::new();
                for &k in adj.incoming(&node.id) {
                    mass.push((col(VarKind::MPipe, &model.pipes[k].id, t), 1.0));
                }
                for &k in adj.outgoing(&node.id) {
                    mass.push((col(VarKind::MPipe, &model.pipes[k].id, t), -1.0));
                }
                asm.eq(RowLabel::new("1b", &node.id, t), mass, 0.0);
            }
        }
        for p in &model.pipes {
            let m = col(VarKind::MPipe, &p.id, t);
            let h_in = col(VarKind::HInPipe, &p.id, t);
            let h_out = col(VarKind::HOutPipe, &p.id, t);
            let tau_up = col(VarKind::TauTildeNode, &p.from, t);
            let up = model.node(&p.from).expect("validated endpoint");
            asm.eq(
                RowLabel::new(if is_base { "1c" } else { "11b" }, &p.id, t),
                vec![(h_in, 1.0), (h_out, -1.0), (tau_up, p.loss_coeff())],
                0.0,
            );
            if is_base {
                let tau_pipe = col(VarKind::TauTildePipe, &p.id, t);
                bilinear.push(BilinearTerm { product: h_in, flow: m, temp: tau_pipe, coef: c, pipe: p.id.clone(), hour: t, tag: "4" });
                bilinear.push(BilinearTerm { product: h_out, flow: m, temp: tau_up, coef: c, pipe: p.id.clone(), hour: t, tag: "5" });
                continue;
            }
            let lo_in = c * (p.tau_pipe_min - ta);
            let hi_in = c * (p.tau_pipe_max - ta);
            asm.le(RowLabel::new("11c", &p.id, t), vec![(m, lo_in), (h_in, -1.0)], 0.0);
            asm.le(RowLabel::new("11c", &p.id, t), vec![(h_in, 1.0), (m, -hi_in)], 0.0);
            let lo_out = c * (up.tau_min - ta);
            let hi_out = c * (up.tau_max - ta);
            asm.le(RowLabel::new("11d", &p.id, t), vec![(m, lo_out), (h_out, -1.0)], 0.0);
            asm.le(RowLabel::new("11d", &p.id, t), vec![(h_out, 1.0), (m, -hi_out)], 0.0);
            match variant {
                Variant::Reformulated => {
                    bilinear.push(BilinearTerm { product: h_out, flow: m, temp: tau_up, coef: c, pipe: p.id.clone(), hour: t, tag: "11f" });
                }
                Variant::ConstantFlow => {
                    asm.eq(RowLabel::new("11f", &p.id, t), vec![(h_out, 1.0), (tau_up, -c * p.m_nominal)], 0.0);
                }
                _ => {}
            }
        }

        // Electric network, per unit on the MVA base.
        for bus in &model.buses {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for unit in &model.units {
                match unit {
                    GenerationUnit::Chp(u) if u.bus_id == bus.id => row.push((col(VarKind::PChp, &u.id, t), 1.0 / base)),
                    GenerationUnit::Thermal(u) if u.bus_id == bus.id => row.push((col(VarKind::PTu, &u.id, t), 1.0 / base)),
                    _ => {}
                }
            }
            for line in &model.lines {
                let (f, to) = (col(VarKind::ThetaBus, &line.from, t), col(VarKind::ThetaBus, &line.to, t));
                let s = if line.from == bus.id {
                    -1.0
                } else if line.to == bus.id {
                    1.0
                } else {
                    continue;
                };
                row.push((f, s / line.reactance));
                row.push((to, -s / line.reactance));
            }
            asm.eq(RowLabel::new("12a", &bus.id, t), row, bus.p_load[t - 1] / base);
        }
        for line in &model.lines {
            let (f, to) = (col(VarKind::ThetaBus, &line.from, t), col(VarKind::ThetaBus, &line.to, t));
            let x = line.reactance;
            let cap = line.p_max / base;
            asm.le(RowLabel::new("12b", &line.id, t), vec![(f, 1.0 / x), (to, -1.0 / x)], cap);
            asm.le(RowLabel::new("12b", &line.id, t), vec![(f, -1.0 / x), (to, 1.0 / x)], cap);
        }

        // Units: operating limits and cost.
        for unit in &model.units {
            match unit {
                GenerationUnit::HeatingBoiler(u) => {
                    let h = col(VarKind::HHb, &u.id, t);
                    asm.bound(h, u.h_min, u.h_max);
                    asm.qp.q[h] += u.cost_c;
                }
                GenerationUnit::Chp(u) => {
                    let (p, h) = (col(VarKind::PChp, &u.id, t), col(VarKind::HChp, &u.id, t));
                    asm.bound(p, 0.0, f64::INFINITY);
                    asm.bound(h, 0.0, f64::INFINITY);
                    for (b, r) in u.region.iter().enumerate() {
                        asm.le(RowLabel::new("14b", format!("{}#{}", u.id, b + 1), t), vec![(p, r.a), (h, r.b)], r.d);
                    }
                    let [c0, c1, c2, c3, c4, c5] = u.cost;
                    asm.qp.c0 += c0;
                    asm.qp.q[p] += c1;
                    asm.qp.q[h] += c3;
                    asm.qp.q_mat.add(p, p, 2.0 * c2);
                    asm.qp.q_mat.add(h, h, 2.0 * c4);
                    asm.qp.q_mat.add(p, h, c5);
                }
                GenerationUnit::Thermal(u) => {
                    let p = col(VarKind::PTu, &u.id, t);
                    asm.bound(p, u.p_min, u.p_max);
                    asm.qp.q[p] += u.cost_c1;
                    asm.qp.q_mat.add(p, p, 2.0 * u.cost_c2);
                }
            }
        }
    }

    for j in 0..n {
        if asm.qp.lo[j] > asm.qp.hi[j] {
            return Err(FormulationError::InfeasibleBounds(vars.key(j).name()));
        }
    }
    Ok(ProblemInstance {
        variant,
        hours,
        vars,
        qp: asm.qp,
        eq_labels: asm.eq_labels,
        in_labels: asm.in_labels,
        bilinear,
    })
}

/// Restricts an instance to the given hours. Hours never share rows, so
/// the restriction is exact.
pub(super) fn slice_hours(inst: &ProblemInstance, hours: &[usize]) -> ProblemInstance {
    let keep: BTreeSet<usize> = hours.iter().copied().collect();
    let cols: Vec<usize> = (0..inst.n()).filter(|&j| keep.contains(&inst.vars.key(j).hour)).collect();
    let mut map = vec![usize::MAX; inst.n()];
    for (a, &j) in cols.iter().enumerate() {
        map[j] = a;
    }
    let vars = VarMap::from_keys(cols.iter().map(|&j| inst.vars.key(j).clone()));
    let n = cols.len();
    let mut qp = QpProblem::new(n);
    let per_hour_c0 = inst.qp.c0 / inst.hours.len().max(1) as f64;
    qp.c0 = per_hour_c0 * keep.iter().filter(|h| inst.hours.contains(h)).count() as f64;
    for (a, &j) in cols.iter().enumerate() {
        qp.q[a] = inst.qp.q[j];
        qp.lo[a] = inst.qp.lo[j];
        qp.hi[a] = inst.qp.hi[j];
    }
    let mut q_mat = SymMatrix::new(n);
    for (i, j, v) in inst.qp.q_mat.iter() {
        if map[i] != usize::MAX && map[j] != usize::MAX {
            q_mat.add(map[i], map[j], v);
        }
    }
    qp.q_mat = q_mat;
    let remap = |rows: &SparseRows, b: &[f64], labels: &[RowLabel]| {
        let mut out = SparseRows::new(n);
        let mut ob = Vec::new();
        let mut ol = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            if keep.contains(&l.hour) {
                out.push_row(rows.row(i).iter().map(|&(c, v)| (map[c], v)));
                ob.push(b[i]);
                ol.push(l.clone());
            }
        }
        (out, ob, ol)
    };
    let (a_eq, b_eq, eq_labels) = remap(&inst.qp.a_eq, &inst.qp.b_eq, &inst.eq_labels);
    let (a_in, b_in, in_labels) = remap(&inst.qp.a_in, &inst.qp.b_in, &inst.in_labels);
    qp.a_eq = a_eq;
    qp.b_eq = b_eq;
    qp.a_in = a_in;
    qp.b_in = b_in;
    let bilinear = inst
        .bilinear
        .iter()
        .filter(|b| keep.contains(&b.hour))
        .map(|b| BilinearTerm { product: map[b.product], flow: map[b.flow], temp: map[b.temp], ..b.clone() })
        .collect();
    ProblemInstance {
        variant: inst.variant,
        hours: inst.hours.iter().copied().filter(|h| keep.contains(h)).collect(),
        vars,
        qp,
        eq_labels,
        in_labels,
        bilinear,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Bus, HeatNode, HeatingBoiler, Line, NodeKind, Pipe, ThermalUnit, WATER_SPECIFIC_HEAT};

    pub(crate) fn single_pipe(nu_l: f64, c: f64) -> NetworkModel {
        NetworkModel {
            heat_nodes: vec![
                HeatNode {
                    id: "s".into(),
                    kind: NodeKind::Source,
                    tau_min: 60.0,
                    tau_max: 100.0,
                    tau_source: Some(90.0),
                    heat_load: vec![0.0],
                },
                HeatNode { id: "l".into(), kind: NodeKind::Load, tau_min: 20.0, tau_max: 100.0, tau_source: None, heat_load: vec![0.3] },
            ],
            pipes: vec![Pipe {
                id: "p1".into(),
                from: "s".into(),
                to: "l".into(),
                length: 1000.0,
                heat_transfer_coeff: nu_l / 1000.0,
                m_min: 0.1,
                m_max: 3.0,
                tau_pipe_min: 20.0,
                tau_pipe_max: 100.0,
                m_nominal: 1.0,
            }],
            buses: vec![Bus { id: "b1".into(), p_load: vec![0.0] }],
            lines: vec![],
            units: vec![GenerationUnit::HeatingBoiler(HeatingBoiler {
                id: "hb".into(),
                node_id: "s".into(),
                cost_c: 30.0,
                h_min: 0.0,
                h_max: 10.0,
            })],
            horizon_hours: 1,
            ambient_temp: 10.0,
            specific_heat: c,
            base_power: 100.0,
        }
    }

    fn two_bus() -> NetworkModel {
        let mut m = single_pipe(0.0, WATER_SPECIFIC_HEAT);
        m.buses = vec![Bus { id: "b1".into(), p_load: vec![0.0] }, Bus { id: "b2".into(), p_load: vec![20.0] }];
        m.lines = vec![Line { id: "l12".into(), from: "b1".into(), to: "b2".into(), reactance: 0.5, p_max: 100.0 }];
        m.units.push(GenerationUnit::Thermal(ThermalUnit {
            id: "g1".into(),
            bus_id: "b1".into(),
            cost_c1: 20.0,
            cost_c2: 0.0,
            p_min: 0.0,
            p_max: 100.0,
        }));
        m
    }

    #[test]
    fn reformulated_single_pipe_has_one_product() {
        let inst = build(&single_pipe(0.004 / 80.0, WATER_SPECIFIC_HEAT), Variant::Reformulated, &[1]).unwrap();
        assert_eq!(inst.bilinear.len(), 1);
        assert_eq!(inst.bilinear[0].tag, "11f");
    }

    #[test]
    fn base_single_pipe_has_two_products() {
        let inst = build(&single_pipe(0.004 / 80.0, WATER_SPECIFIC_HEAT), Variant::Base, &[1]).unwrap();
        assert_eq!(inst.bilinear.len(), 2);
        assert_eq!(inst.eq_rows_tagged("11c").count() + inst.in_rows_tagged("11c").count(), 0);
    }

    #[test]
    fn convex_variants_have_no_products() {
        let m = single_pipe(0.004 / 80.0, WATER_SPECIFIC_HEAT);
        for v in [Variant::RemoveBilinear, Variant::McCormick, Variant::ConstantFlow] {
            let inst = build(&m, v, &[1]).unwrap();
            assert!(inst.bilinear.is_empty());
        }
        let rb = build(&m, Variant::RemoveBilinear, &[1]).unwrap();
        assert!(rb.eq_labels.iter().chain(&rb.in_labels).all(|l| l.tag != "11f"));
    }

    #[test]
    fn source_fixing_row() {
        let inst = build(&single_pipe(0.0, 1.0), Variant::Reformulated, &[1]).unwrap();
        let r = inst.eq_rows_tagged("1f").next().unwrap();
        assert_eq!(inst.qp.b_eq[r], 80.0);
    }

    #[test]
    fn lossless_pipe_rows_equate_heat() {
        let inst = build(&single_pipe(0.0, 1.0), Variant::Reformulated, &[1]).unwrap();
        let r = inst.eq_rows_tagged("11b").next().unwrap();
        let row = inst.qp.a_eq.row(r);
        let tau = inst.vars.get(VarKind::TauTildeNode, "s", 1).unwrap();
        assert!(row.iter().all(|&(c, v)| c != tau || v == 0.0));
    }

    #[test]
    fn pipe_heat_window_rows() {
        // m in [1,2], pipe window 10..20 above ambient, c = 1: 10 m <= H_in <= 20 m.
        let mut model = single_pipe(0.0, 1.0);
        model.pipes[0].tau_pipe_min = 20.0;
        model.pipes[0].tau_pipe_max = 30.0;
        let inst = build(&model, Variant::Reformulated, &[1]).unwrap();
        let m = inst.vars.get(VarKind::MPipe, "p1", 1).unwrap();
        let h = inst.vars.get(VarKind::HInPipe, "p1", 1).unwrap();
        let rows: Vec<_> = inst.in_rows_tagged("11c").collect();
        assert_eq!(rows.len(), 2);
        let coef = |r: usize, c: usize| inst.qp.a_in.row(r).iter().find(|e| e.0 == c).map_or(0.0, |e| e.1);
        assert_eq!((coef(rows[0], m), coef(rows[0], h)), (10.0, -1.0));
        assert_eq!((coef(rows[1], m), coef(rows[1], h)), (-20.0, 1.0));
    }

    #[test]
    fn row_counts_match_network_size() {
        let model = two_bus();
        let inst = build(&model, Variant::Reformulated, &[1]).unwrap();
        let count = |tag| inst.eq_rows_tagged(tag).count() + inst.in_rows_tagged(tag).count();
        assert_eq!(count("11a"), model.heat_nodes.len());
        assert_eq!(count("11b"), model.pipes.len());
        assert_eq!(count("11c"), 2 * model.pipes.len());
        assert_eq!(count("11d"), 2 * model.pipes.len());
        assert_eq!(count("12a"), model.buses.len());
        assert_eq!(count("12b"), 2 * model.lines.len());
        assert_eq!(count("1f"), 1);
    }

    #[test]
    fn hour_validation() {
        let model = single_pipe(0.0, 1.0);
        assert_eq!(build(&model, Variant::McCormick, &[]).unwrap_err(), FormulationError::EmptyHours);
        assert_eq!(build(&model, Variant::McCormick, &[2]).unwrap_err(), FormulationError::HourOutOfRange(2, 1));
    }

    #[test]
    fn two_bus_flow_identity() {
        // Reference angle 0, X = 0.5 p.u., bus-2 load 0.2 p.u.: the balance
        // rows hold only when (θ1 - θ2)/X = 0.2.
        let model = two_bus();
        let inst = build(&model, Variant::RemoveBilinear, &[1]).unwrap();
        let th2 = inst.vars.get(VarKind::ThetaBus, "b2", 1).unwrap();
        let th1 = inst.vars.get(VarKind::ThetaBus, "b1", 1).unwrap();
        let g = inst.vars.get(VarKind::PTu, "g1", 1).unwrap();
        assert_eq!((inst.qp.lo[th1], inst.qp.hi[th1]), (0.0, 0.0));
        let mut x = vec![0.0; inst.n()];
        x[g] = 20.0;
        x[th2] = -0.1;
        for r in inst.eq_rows_tagged("12a") {
            assert!((inst.qp.a_eq.row_dot(r, &x) - inst.qp.b_eq[r]).abs() < 1e-15);
        }
        x[th2] = -0.12;
        assert!(inst.eq_rows_tagged("12a").any(|r| (inst.qp.a_eq.row_dot(r, &x) - inst.qp.b_eq[r]).abs() > 1e-3));
    }

    #[test]
    fn slicing_matches_single_hour_build() {
        let mut model = two_bus();
        model.horizon_hours = 2;
        for n in &mut model.heat_nodes {
            n.heat_load = vec![n.heat_load[0], 2.0 * n.heat_load[0]];
        }
        for b in &mut model.buses {
            b.p_load = vec![b.p_load[0], 0.5 * b.p_load[0]];
        }
        let joint = build(&model, Variant::Reformulated, &[1, 2]).unwrap();
        let single = build(&model, Variant::Reformulated, &[2]).unwrap();
        assert_eq!(joint.hour_slice(2), single);
    }
}
