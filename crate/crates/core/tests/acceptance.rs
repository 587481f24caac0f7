//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any fails. Built with `harness = false` so the lines are shown
//! without `--nocapture`.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::random_qp::random_qp_with_point;
use common::{all_hours, grid_two_sources, rel_diff, single_bus_power_cost, SinglePipe, BUNDLED, MICRO2};
use ihes::analysis::{exact_heat_loss_audit, map_columns, CompareConfig, DEFAULT_LOSS_RATIO_THRESHOLD};
use ihes::cli::{cmd_compare, comparison_files, HourRange};
use ihes::formulation::{build, ProblemInstance, Variant};
use ihes::global::{solve_global, GlobalConfig, GlobalStatus};
use ihes::network::NetworkModel;
use ihes::qp::{kkt_residuals, solve_qp, Duals, QpConfig, QpStatus};
use ihes::repair::{repair_fixed_flow, PolishConfig};
use ihes::tightening::{tighten, violation_report, TighteningConfig};

type Outcome = Result<String, String>;

fn qp_objective(model: &NetworkModel, variant: Variant, hours: &[usize]) -> Result<(ProblemInstance, Vec<f64>, f64), String> {
    let inst = build(model, variant, hours).map_err(|e| e.to_string())?;
    let s = solve_qp(&inst.qp, &QpConfig::default()).map_err(|e| e.to_string())?;
    if s.status != QpStatus::Optimal {
        return Err(format!("{variant} {hours:?}: {}", s.status.as_str()));
    }
    Ok((inst, s.x, s.objective))
}

fn global(model: &NetworkModel, variant: Variant, hours: &[usize]) -> Result<(ProblemInstance, Vec<f64>, f64), String> {
    let inst = build(model, variant, hours).map_err(|e| e.to_string())?;
    let cfg = GlobalConfig { workers: 1, ..GlobalConfig::default() };
    let g = solve_global(&inst, &cfg).map_err(|e| format!("{variant} {hours:?}: {e}"))?;
    if g.status != GlobalStatus::Optimal {
        return Err(format!("{variant} {hours:?}: {}", g.status.as_str()));
    }
    Ok((inst, g.x, g.objective))
}

fn le(a: f64, b: f64, rel: f64) -> bool {
    a <= b + rel * b.abs().max(1.0)
}

fn within(start: Instant, budget: u64) -> Result<Duration, String> {
    let t = start.elapsed();
    if t < Duration::from_secs(budget) {
        Ok(t)
    } else {
        Err(format!("took {t:.1?}, budget {budget} s"))
    }
}

fn variant_ordering() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for rel in BUNDLED {
        let model = common::load(rel);
        for h in all_hours(&model) {
            let hours = [h];
            let (_, _, rb) = qp_objective(&model, Variant::RemoveBilinear, &hours)?;
            let (mc_inst, mc_x, mc) = qp_objective(&model, Variant::McCormick, &hours)?;
            let (_, _, cf) = qp_objective(&model, Variant::ConstantFlow, &hours)?;
            let (inst, _, g) = global(&model, Variant::Reformulated, &hours)?;
            let x = map_columns(&mc_inst, &mc_x, &inst);
            let repaired = repair_fixed_flow(&inst, &x, &QpConfig::default(), &PolishConfig::default())
                .map_err(|e| format!("{rel} h{h}: repair {e}"))?
                .objective;
            let chain = [("remove_bilinear", rb), ("mccormick", mc), ("global", g), ("repair", repaired)];
            for w in chain.windows(2) {
                if !le(w[0].1, w[1].1, 1e-6) {
                    return Err(format!("{rel} h{h}: {} {} > {} {}", w[0].0, w[0].1, w[1].0, w[1].1));
                }
            }
            if !le(g, cf, 1e-6) {
                return Err(format!("{rel} h{h}: constant_flow {cf} < global {g}"));
            }
            checked += 1;
        }
    }
    let t = within(start, 60)?;
    Ok(format!("{checked} instance-hours ordered, {t:.1?}"))
}

fn reformulation_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for rel in BUNDLED {
        let model = common::load(rel);
        let hours = all_hours(&model);
        let (inst, x, r) = global(&model, Variant::Reformulated, &hours)?;
        let audit = exact_heat_loss_audit(&x, &inst, &model, DEFAULT_LOSS_RATIO_THRESHOLD).map_err(|e| e.to_string())?;
        let ratio = audit.pipes.iter().filter_map(|p| p.loss_ratio).fold(0.0, f64::max);
        if ratio > 0.05 {
            return Err(format!("{rel}: loss ratio {ratio:.4} exceeds 0.05, premise not met"));
        }
        let (_, _, b) = global(&model, Variant::Base, &hours)?;
        let d = rel_diff(b, r);
        if d > 1e-3 {
            return Err(format!("{rel}: base {b} vs reformulated {r} ({d:.2e})"));
        }
        worst = worst.max(d);
    }
    let t = within(start, 120)?;
    Ok(format!("max relative difference {worst:.2e}, {t:.1?}"))
}

fn global_matches_grid() -> Outcome {
    let start = Instant::now();
    let model = common::load(MICRO2);
    let grid = grid_two_sources(&model, 1e-3);
    if !grid.heat_cost.is_finite() {
        return Err("grid search found no feasible point".into());
    }
    let oracle = grid.heat_cost + single_bus_power_cost(&model);
    let (_, _, g) = global(&model, Variant::Reformulated, &[1])?;
    let d = rel_diff(g, oracle);
    if d > 1e-3 {
        return Err(format!("global {g} vs grid {oracle} ({d:.2e})"));
    }
    let t = within(start, 60)?;
    Ok(format!("global {g:.6} vs grid {oracle:.6} over {} points ({d:.2e}), {t:.1?}", grid.evaluated))
}

struct TighteningRun {
    instance: &'static str,
    max: f64,
    avg: f64,
    mccormick_max: f64,
    mccormick_avg: f64,
    objective: f64,
    global: f64,
}

fn tightening_runs() -> Result<Vec<TighteningRun>, String> {
    let mut out = Vec::new();
    for rel in BUNDLED {
        let model = common::load(rel);
        let hours = all_hours(&model);
        let r = tighten(&model, &hours, &TighteningConfig::default()).map_err(|e| format!("{rel}: {e}"))?;
        if r.iterations.is_empty() {
            return Err(format!("{rel}: no tightening iterate"));
        }
        let last = r.iterations.last().expect("nonempty");
        let (mc_inst, mc_x, _) = qp_objective(&model, Variant::McCormick, &hours)?;
        let reference = build(&model, Variant::Reformulated, &hours).map_err(|e| e.to_string())?;
        let plain = violation_report(&map_columns(&mc_inst, &mc_x, &reference), &reference);
        let (_, _, g) = global(&model, Variant::Reformulated, &hours)?;
        out.push(TighteningRun {
            instance: rel,
            max: last.max_violation,
            avg: last.avg_violation,
            mccormick_max: plain.max,
            mccormick_avg: plain.avg,
            objective: r.final_objective,
            global: g,
        });
    }
    Ok(out)
}

fn tightening_efficacy(runs: &[TighteningRun], elapsed: Duration) -> Outcome {
    let mut parts = Vec::new();
    for r in runs {
        let (rel, max, avg, mc_max, mc_avg) = (r.instance, r.max, r.avg, r.mccormick_max, r.mccormick_avg);
        if max > 0.08 || avg > 0.025 {
            return Err(format!("{rel}: max {max:.4} avg {avg:.4}"));
        }
        if max >= mc_max || avg >= mc_avg {
            return Err(format!("{rel}: tightening {max:.4}/{avg:.4} not below mccormick {mc_max:.4}/{mc_avg:.4}"));
        }
        parts.push(format!("{rel} max {:.3}% avg {:.3}% (mccormick {:.3}%)", 100.0 * max, 100.0 * avg, 100.0 * mc_max));
    }
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("took {elapsed:.1?}, budget 60 s"));
    }
    Ok(format!("{}, {elapsed:.1?}", parts.join("; ")))
}

fn tightening_gap(runs: &[TighteningRun]) -> Outcome {
    let mut parts = Vec::new();
    for r in runs {
        let (rel, obj, g) = (r.instance, r.objective, r.global);
        let d = rel_diff(obj, g);
        if d > 5e-3 {
            return Err(format!("{rel}: tightening {obj} vs global {g} ({:.4}%)", 100.0 * d));
        }
        parts.push(format!("{rel} {:.4}%", 100.0 * d));
    }
    Ok(parts.join("; "))
}

fn taylor_audit() -> Outcome {
    let mut worst = 0.0f64;
    for x in [0.01, 0.05, 0.1] {
        let base = SinglePipe { heat_load: 0.1, m_nominal: 1.0, ..SinglePipe::default() };
        let sp = SinglePipe { nu_l: x * base.specific_heat * base.m_nominal, ..base };
        let model = sp.model();
        let (inst, sol_x, _) = qp_objective(&model, Variant::ConstantFlow, &[1])?;
        let audit = exact_heat_loss_audit(&sol_x, &inst, &model, DEFAULT_LOSS_RATIO_THRESHOLD).map_err(|e| e.to_string())?;
        let gap = audit.pipes[0].taylor_gap.ok_or("no taylor gap")?;
        let expect = (-x).exp() - (1.0 - x);
        let err = (gap - expect).abs();
        if err > 1e-12 {
            return Err(format!("x = {x}: audit {gap:e} vs {expect:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn qp_certificates() -> Outcome {
    let cfg = QpConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let (p, x0) = random_qp_with_point(seed, 200);
        let s = solve_qp(&p, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        if s.status != QpStatus::Optimal || !s.residuals.within(1e-8) {
            return Err(format!("seed {seed}: {} {:?}", s.status.as_str(), s.residuals));
        }
        worst = worst.max(s.residuals.primal_rel).max(s.residuals.dual_rel).max(s.residuals.gap_rel);
        let lambda = 7.5;
        let mut scaled = p.clone();
        scaled.q_mat.scale(lambda);
        scaled.q.iter_mut().for_each(|v| *v *= lambda);
        scaled.c0 *= lambda;
        let t = solve_qp(&scaled, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let target = lambda * s.objective;
        if t.status != QpStatus::Optimal || (t.objective - target).abs() > 1e-7 * (1.0 + target.abs()) {
            return Err(format!("seed {seed}: scaled objective {} vs {target}", t.objective));
        }
        let unscaled = |v: &[f64]| v.iter().map(|z| z / lambda).collect::<Vec<_>>();
        let d = Duals {
            y_eq: unscaled(&t.duals.y_eq),
            z_in: unscaled(&t.duals.z_in),
            z_lo: unscaled(&t.duals.z_lo),
            z_hi: unscaled(&t.duals.z_hi),
        };
        if !kkt_residuals(&p, &t.x, &d).within(1e-7) {
            return Err(format!("seed {seed}: scaled multipliers do not certify the original"));
        }
        // Dual value recomputed here; it must meet the primal and bound the generating point.
        let mut dual = p.c0 - 0.5 * dot(&s.x, &p.q_mat.mul_vec(&s.x)) + dot(&p.b_eq, &s.duals.y_eq) - dot(&p.b_in, &s.duals.z_in);
        for j in 0..p.n() {
            if s.duals.z_lo[j] != 0.0 {
                dual += s.duals.z_lo[j] * p.lo[j];
            }
            if s.duals.z_hi[j] != 0.0 {
                dual -= s.duals.z_hi[j] * p.hi[j];
            }
        }
        let f0 = p.objective(&x0);
        if (s.objective - dual).abs() > 1e-8 * (1.0 + s.objective.abs()) || dual > f0 + 1e-8 * (1.0 + f0.abs()) {
            return Err(format!("seed {seed}: primal {} dual {dual} feasible {f0}", s.objective));
        }
    }
    Ok(format!("50 QPs, worst relative KKT residual {worst:.1e}"))
}

fn hour_decoupling() -> Outcome {
    let hours = [1, 2, 3, 4];
    let mut worst = 0.0f64;
    let variants = [Variant::RemoveBilinear, Variant::McCormick, Variant::ConstantFlow, Variant::Reformulated, Variant::Base];
    for rel in BUNDLED {
        let model = common::load(rel);
        for v in variants {
            let solve = |hs: &[usize]| if v.is_convex() { qp_objective(&model, v, hs) } else { global(&model, v, hs) };
            let (_, _, joint) = solve(&hours)?;
            let mut sum = 0.0;
            for h in hours {
                sum += solve(&[h])?.2;
            }
            let d = rel_diff(joint, sum);
            if d > 1e-8 {
                return Err(format!("{rel} {v}: joint {joint} vs sum {sum} ({d:.2e})"));
            }
            worst = worst.max(d);
        }
        let tightened = |hs: &[usize]| {
            tighten(&model, hs, &TighteningConfig::default()).map(|r| r.final_objective).map_err(|e| e.to_string())
        };
        let joint = tightened(&hours)?;
        let mut sum = 0.0;
        for h in hours {
            sum += tightened(&[h])?;
        }
        let d = rel_diff(joint, sum);
        if d > 1e-8 {
            return Err(format!("{rel} tightening: joint {joint} vs sum {sum} ({d:.2e})"));
        }
        worst = worst.max(d);
    }
    Ok(format!("{} variants and tightening on {} instances, max relative difference {worst:.1e}", variants.len(), BUNDLED.len()))
}

fn energy_closure() -> Outcome {
    let mut worst = 0.0f64;
    for rel in BUNDLED {
        let model = common::load(rel);
        let (inst, x, _) = global(&model, Variant::Reformulated, &all_hours(&model))?;
        let audit = exact_heat_loss_audit(&x, &inst, &model, DEFAULT_LOSS_RATIO_THRESHOLD).map_err(|e| e.to_string())?;
        let r = audit.max_closure_residual();
        if r > 1e-8 {
            return Err(format!("{rel}: closure residual {r:e} MW"));
        }
        worst = worst.max(r);
    }
    Ok(format!("max residual {worst:.1e} MW"))
}

fn reproducibility() -> Outcome {
    let mut cfg = CompareConfig { workers: 1, ..CompareConfig::default() };
    cfg.global.workers = 1;
    cfg.qp.workers = 1;
    cfg.tightening.qp.workers = 1;
    let network = common::crate_path(BUNDLED[0]);
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        cmd_compare(&network, None::<HourRange>, &cfg, d.path()).map_err(|e| e.to_string())?;
    }
    // Timings hold wall-clock seconds and are left out of the comparison.
    let files = comparison_files("micro3");
    let compared = &files[..3];
    for f in compared {
        let a = fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!("{} identical", compared.join(", ")))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "variant ordering", variant_ordering()),
        (2, "reformulation equivalence", reformulation_equivalence()),
        (3, "global vs grid search", global_matches_grid()),
    ];
    let start = Instant::now();
    match tightening_runs() {
        Ok(runs) => {
            let elapsed = start.elapsed();
            results.push((4, "tightening efficacy", tightening_efficacy(&runs, elapsed)));
            results.push((5, "tightening gap", tightening_gap(&runs)));
        }
        Err(e) => {
            results.push((4, "tightening efficacy", Err(e.clone())));
            results.push((5, "tightening gap", Err(e)));
        }
    }
    results.push((6, "taylor audit", taylor_audit()));
    results.push((7, "qp certificates", qp_certificates()));
    results.push((8, "hour decoupling", hour_decoupling()));
    results.push((9, "energy closure", energy_closure()));
    results.push((10, "reproducibility", reproducibility()));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(msg) => println!("criterion {n:>2}: PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
