mod common;

use std::time::Duration;

use common::{SinglePipe, BUNDLED};
use ihes::analysis::{
    compare_variants, exact_heat_loss_audit, recover_temperatures, AnalysisError, CompareConfig, RowKind, DEFAULT_LOSS_RATIO_THRESHOLD,
};
use ihes::formulation::{build, VarKind, Variant};
use ihes::global::{solve_global, GlobalConfig};
use ihes::qp::{solve_qp, QpConfig};

fn global_x(model: &ihes::network::NetworkModel, hours: &[usize]) -> (ihes::formulation::ProblemInstance, Vec<f64>) {
    let inst = build(model, Variant::Reformulated, hours).unwrap();
    let g = solve_global(&inst, &GlobalConfig::default()).unwrap();
    (inst, g.x)
}

#[test]
fn single_pipe_outlet_temperature() {
    let sp = SinglePipe::default();
    let model = sp.model();
    let (inst, x) = global_x(&model, &[1]);
    let t = recover_temperatures(&x, &inst, &model).unwrap();
    // τ_out = τ_a + τ̃_s - νL·τ̃_s / (c·m) with m from the closed form.
    let expect = sp.tau_ambient + sp.tau_tilde() - sp.nu_l * sp.tau_tilde() / (sp.specific_heat * sp.closed_form_flow());
    let p = &t.pipes[0];
    assert!((p.tau.unwrap() - expect).abs() < 1e-6, "{:?} vs {expect}", p.tau);
    let load = t.nodes.iter().find(|n| n.node == "l").unwrap();
    assert!((load.tau.unwrap() - expect).abs() < 1e-6);
    assert_eq!(t.flagged(), 0);
}

#[test]
fn ambient_operation_carries_no_heat() {
    let sp = SinglePipe { tau_source: 10.0, heat_load: 0.0, ..SinglePipe::default() };
    let mut doc = sp.json();
    doc["heat_nodes"][0]["tau_min"] = 0.0.into();
    doc["heat_nodes"][1]["tau_min"] = 0.0.into();
    let model = ihes::network::from_json_str(&doc.to_string()).unwrap();
    let (inst, x) = global_x(&model, &[1]);
    for kind in [VarKind::HInPipe, VarKind::HOutPipe, VarKind::HHb] {
        let id = if kind == VarKind::HHb { "hb" } else { "p1" };
        assert!(x[inst.vars.get(kind, id, 1).unwrap()].abs() < 1e-8, "{kind:?}");
    }
}

#[test]
fn global_solutions_respect_temperature_windows() {
    for rel in BUNDLED {
        let model = common::load(rel);
        let (inst, x) = global_x(&model, &common::all_hours(&model));
        let t = recover_temperatures(&x, &inst, &model).unwrap();
        assert_eq!(t.flagged(), 0, "{rel}");
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let model = SinglePipe::default().model();
    let inst = build(&model, Variant::Reformulated, &[1]).unwrap();
    let err = recover_temperatures(&[1.0], &inst, &model).unwrap_err();
    assert_eq!(err, AnalysisError::DimensionMismatch { expected: inst.n(), got: 1 });
}

/// Constant-flow solve of a single pipe whose loss ratio `νL/(c·m_nom)` is `ratio`.
fn audit_at_ratio(ratio: f64) -> ihes::analysis::PipeAudit {
    let base = SinglePipe { heat_load: 0.1, m_nominal: 1.0, ..SinglePipe::default() };
    let sp = SinglePipe { nu_l: ratio * base.specific_heat * base.m_nominal, ..base };
    let model = sp.model();
    let inst = build(&model, Variant::ConstantFlow, &[1]).unwrap();
    let sol = solve_qp(&inst.qp, &QpConfig::default()).unwrap();
    assert!(sol.is_optimal());
    let audit = exact_heat_loss_audit(&sol.x, &inst, &model, DEFAULT_LOSS_RATIO_THRESHOLD).unwrap();
    audit.pipes.into_iter().next().unwrap()
}

#[test]
fn lossless_pipe_has_no_taylor_error() {
    let p = audit_at_ratio(0.0);
    assert_eq!(p.taylor_gap, Some(0.0));
    assert_eq!(p.exact_outlet, p.taylor_outlet);
}

#[test]
fn five_percent_loss_ratio_outlets() {
    let p = audit_at_ratio(0.05);
    assert!((p.loss_ratio.unwrap() - 0.05).abs() < 1e-12);
    let exact = p.exact_outlet.unwrap();
    assert!((exact - (10.0 + 80.0 * (-0.05f64).exp())).abs() < 1e-10);
    // 86.0983 is printed to four decimals (the value is 86.098354).
    assert!((exact - 86.0983).abs() < 1e-4, "{exact}");
    assert!((p.taylor_outlet.unwrap() - 86.0).abs() < 1e-9);
    assert!(!p.flagged);
}

#[test]
fn large_loss_ratio_is_flagged() {
    let p = audit_at_ratio(0.2);
    assert!(p.flagged);
    let expect = (-0.2f64).exp() - 0.8;
    assert!((p.taylor_gap.unwrap() - expect).abs() < 1e-12);
}

#[test]
fn lossless_single_pipe_variants_agree() {
    let sp = SinglePipe { nu_l: 0.0, m_nominal: SinglePipe::default().heat_load / (4.182e-3 * 80.0), ..SinglePipe::default() };
    let r = compare_variants(&sp.model(), "single", &[1], &CompareConfig::default()).unwrap();
    let reference = r.row(RowKind::Base).objective.unwrap();
    for row in &r.rows {
        let o = row.objective.unwrap_or_else(|| panic!("{} has no objective", row.kind.as_str()));
        assert!((o - reference).abs() <= 1e-6 * reference.abs().max(1.0), "{}: {o} vs {reference}", row.kind.as_str());
    }
}

#[test]
fn report_has_six_rows_in_order() {
    let model = common::load(BUNDLED[1]);
    let r = compare_variants(&model, "small8", &[1], &CompareConfig::default()).unwrap();
    let kinds: Vec<_> = r.rows.iter().map(|row| row.kind).collect();
    assert_eq!(kinds, RowKind::ALL.to_vec());
    assert_eq!(r.gap_reference, Some(RowKind::Base));
    assert_eq!(r.row(RowKind::Base).gap, Some(0.0));
}

#[test]
fn skipping_global_leaves_gaps_unavailable() {
    let model = common::load(BUNDLED[0]);
    let cfg = CompareConfig { skip_global: true, ..CompareConfig::default() };
    let r = compare_variants(&model, "micro3", &[1, 2], &cfg).unwrap();
    assert_eq!(r.gap_reference, None);
    assert!(r.rows.iter().all(|row| row.gap.is_none()));
    assert_eq!(r.row(RowKind::Base).status, "skipped");
    assert!(r.row(RowKind::McCormick).objective.is_some());
    let csv = ihes::analysis::comparison_csv(&r);
    assert!(csv.contains("base,skipped,n/a,n/a,n/a"));
}

#[test]
fn time_limited_global_is_marked_limit() {
    let model = common::load(BUNDLED[1]);
    let mut cfg = CompareConfig::default();
    cfg.global.time_limit = Duration::ZERO;
    let r = compare_variants(&model, "small8", &[1], &cfg).unwrap();
    assert_eq!(r.row(RowKind::Base).status, "limit");
    assert_eq!(r.row(RowKind::Reformulated).status, "limit");
    assert_eq!(r.row(RowKind::McCormick).status, "optimal");
}

#[test]
fn empty_hour_selection_is_a_validation_error() {
    let model = common::load(BUNDLED[0]);
    let err = compare_variants(&model, "micro3", &[], &CompareConfig::default()).unwrap_err();
    assert!(matches!(err, AnalysisError::Validation(_)));
}

#[test]
fn worker_count_does_not_change_report() {
    let model = common::load(BUNDLED[0]);
    let hours = common::all_hours(&model);
    let one = compare_variants(&model, "micro3", &hours, &CompareConfig::default()).unwrap();
    let many = compare_variants(&model, "micro3", &hours, &CompareConfig { workers: 4, ..CompareConfig::default() }).unwrap();
    assert_eq!(one.config_hash, many.config_hash);
    assert_eq!(ihes::analysis::comparison_csv(&one), ihes::analysis::comparison_csv(&many));
    assert_eq!(ihes::analysis::comparison_json(&one), ihes::analysis::comparison_json(&many));
}
