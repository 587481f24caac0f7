//! Command-line front end: `solve`, `compare` and `check`.
//!
//! Exit codes: 0 success, 1 error, 2 infeasible, 3 budget exhausted with an
//! incumbent, 4 violation above the `check` tolerance.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::analysis::{
    audit_csv, compare_variants, comparison_csv, comparison_json, config_hash, exact_heat_loss_audit, header_line, map_columns,
    recover_temperatures, timings_csv, AnalysisError, CompareConfig, ARTIFACT_VERSION, DEFAULT_LOSS_RATIO_THRESHOLD,
};
use crate::formulation::{build, objective_value, to_lp_string, FormulationError, ProblemInstance, VarKey, VarKind, Variant};
use crate::global::{node_log_csv, solve_global, GlobalConfig, GlobalError, GlobalStatus};
use crate::network::{load, to_json_string, GenerationUnit, NetworkError, NetworkModel};
use crate::prices::extract_duals;
use crate::qp::{solve_qp, QpConfig, QpError, QpStatus};
use crate::tightening::{iteration_csv, tighten, violation_report, EpsSchedule, TighteningConfig, TighteningError, TighteningStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

/// Overrides the default output directory (`out`); `--out` still wins.
pub const OUT_DIR_ENV: &str = "IHES_OUT_DIR";

pub const DEFAULT_CHECK_TOLERANCE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
    #[error(transparent)]
    Global(#[from] GlobalError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Inclusive hour range `a..b`; a single number selects one hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourRange {
    pub first: usize,
    pub last: usize,
}

impl HourRange {
    /// Empty when `last < first`.
    pub fn hours(&self) -> Vec<usize> {
        (self.first..=self.last).collect()
    }
}

impl FromStr for HourRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad hour `{t}` in `{s}`, expected a..b"));
        match s.split_once("..") {
            Some((a, b)) => Ok(Self { first: num(a)?, last: num(b)? }),
            None => num(s).map(|a| Self { first: a, last: a }),
        }
    }
}

impl fmt::Display for HourRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveVariant {
    Base,
    Reformulated,
    #[value(name = "remove_bilinear", alias = "remove-bilinear")]
    RemoveBilinear,
    #[value(name = "mccormick")]
    McCormick,
    #[value(name = "constant_flow", alias = "constant-flow")]
    ConstantFlow,
    Tightening,
}

impl SolveVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveVariant::Base => "base",
            SolveVariant::Reformulated => "reformulated",
            SolveVariant::RemoveBilinear => "remove_bilinear",
            SolveVariant::McCormick => "mccormick",
            SolveVariant::ConstantFlow => "constant_flow",
            SolveVariant::Tightening => "tightening",
        }
    }

    /// Formulation whose columns the written solution uses.
    pub fn formulation(self) -> Variant {
        match self {
            SolveVariant::Base => Variant::Base,
            SolveVariant::Reformulated | SolveVariant::Tightening => Variant::Reformulated,
            SolveVariant::RemoveBilinear => Variant::RemoveBilinear,
            SolveVariant::McCormick => Variant::McCormick,
            SolveVariant::ConstantFlow => Variant::ConstantFlow,
        }
    }

    fn parse_name(s: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(s, false).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Skip {
    Global,
}

#[derive(Debug, Parser)]
#[command(name = "ihes", version, about = "District-heating and DC power dispatch: solve, compare and check")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one variant and write the solution artifacts.
    Solve(SolveArgs),
    /// Run every variant on one instance and write the comparison report.
    Compare(CompareArgs),
    /// Measure product violations and loss-model error of a solution file.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct InstanceArgs {
    /// Network file (JSON).
    #[arg(long)]
    network: PathBuf,
    /// Hours `a..b` (inclusive); all hours when omitted.
    #[arg(long)]
    hours: Option<HourRange>,
    /// Output directory; defaults to $IHES_OUT_DIR, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// QP optimality tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Relative optimality gap of the global search.
    #[arg(long, default_value_t = 1e-4)]
    gap_tol: f64,
    /// Relative product residual accepted in a global incumbent.
    #[arg(long, default_value_t = 1e-6)]
    feas_tol: f64,
    #[arg(long, default_value_t = 100_000)]
    node_limit: usize,
    /// Seconds.
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
}

#[derive(Debug, Args)]
struct TighteningArgs {
    /// Stop once the largest relative violation is at most this.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// `geom:a,r` or `list:v1,v2,...`.
    #[arg(long, default_value = "geom:0.5,0.5", value_parser = parse_eps)]
    eps: EpsSchedule,
    /// Skip the fixed-flow repair of the final iterate.
    #[arg(long)]
    no_repair: bool,
}

fn parse_eps(s: &str) -> Result<EpsSchedule, String> {
    s.parse::<EpsSchedule>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum)]
    variant: SolveVariant,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    tightening: TighteningArgs,
    /// Also write the problem in LP format.
    #[arg(long)]
    dump_lp: bool,
    /// Also write the branch-and-bound node log.
    #[arg(long)]
    node_log: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum)]
    skip: Vec<Skip>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    tightening: TighteningArgs,
    #[arg(long, default_value_t = DEFAULT_LOSS_RATIO_THRESHOLD)]
    loss_ratio_threshold: f64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// `solution.json` written by `solve`.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    network: PathBuf,
    /// Largest acceptable relative product violation.
    #[arg(long, default_value_t = DEFAULT_CHECK_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_LOSS_RATIO_THRESHOLD)]
    loss_ratio_threshold: f64,
}

/// Everything that determines one `solve` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: PathBuf,
    pub variant: SolveVariant,
    pub hours: Option<HourRange>,
    pub tightening: TighteningConfig,
    pub qp: QpConfig,
    pub global: GlobalConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub dump_lp: bool,
    pub node_log: bool,
}

impl RunConfig {
    pub fn new(network: impl Into<PathBuf>, variant: SolveVariant, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            network: network.into(),
            variant,
            hours: None,
            tightening: TighteningConfig::default(),
            qp: QpConfig::default(),
            global: GlobalConfig::default(),
            out_dir: out_dir.into(),
            workers: 1,
            dump_lp: false,
            node_log: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !self.network.is_file() {
            return Err(CliError::Validation(format!("network file {} does not exist", self.network.display())));
        }
        if self.workers == 0 {
            return Err(CliError::Validation("worker count must be at least 1".into()));
        }
        if !(self.qp.tol > 0.0) || !(self.global.gap_tol >= 0.0) || !(self.global.feas_tol > 0.0) {
            return Err(CliError::Validation("tolerances must be positive".into()));
        }
        self.tightening.validate()?;
        Ok(())
    }

    /// Settings that can change results, one per line; the worker count and
    /// output location are left out.
    pub fn fingerprint(&self) -> String {
        let (g, t) = (&self.global, &self.tightening);
        [
            format!("variant={}", self.variant.as_str()),
            format!("qp_tol={:e}", self.qp.tol),
            format!("qp_max_iter={}", self.qp.max_iter),
            format!("gap_tol={:e}", g.gap_tol),
            format!("feas_tol={:e}", g.feas_tol),
            format!("node_limit={}", g.node_limit),
            format!("time_limit_s={}", g.time_limit.as_secs_f64()),
            format!("delta={:e}", t.delta),
            format!("max_iters={}", t.max_iters),
            format!("eps={}", t.eps),
            format!("repair={}", t.repair),
        ]
        .join("\n")
    }

    fn hours_for(&self, model: &NetworkModel) -> Vec<usize> {
        self.hours.map(|r| r.hours()).unwrap_or_else(|| (1..=model.horizon_hours).collect())
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn qp_config(s: &SolverArgs, workers: usize) -> QpConfig {
    QpConfig { tol: s.tol, max_iter: s.max_iter, workers, ..QpConfig::default() }
}

fn global_config(s: &SolverArgs, workers: usize) -> Result<GlobalConfig, CliError> {
    if !(s.time_limit.is_finite() && s.time_limit >= 0.0) {
        return Err(CliError::Validation(format!("time limit {} is not a nonnegative number of seconds", s.time_limit)));
    }
    Ok(GlobalConfig {
        gap_tol: s.gap_tol,
        feas_tol: s.feas_tol,
        node_limit: s.node_limit,
        time_limit: Duration::from_secs_f64(s.time_limit),
        qp: qp_config(s, 1),
        workers,
        log_nodes: false,
    })
}

fn tightening_config(t: &TighteningArgs, qp: QpConfig) -> TighteningConfig {
    TighteningConfig { delta: t.delta, max_iters: t.max_iters, eps: t.eps.clone(), repair: !t.no_repair, qp }
}

fn instance_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "instance".into())
}

fn write(dir: &Path, file: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(file);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn number(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::Null
    }
}

fn variables_json(inst: &ProblemInstance, x: &[f64]) -> Value {
    let mut m = Map::new();
    for (j, key) in inst.vars.keys().iter().enumerate() {
        m.insert(key.name(), number(x[j]));
    }
    Value::Object(m)
}

struct Written {
    status: &'static str,
    exit: i32,
    objective: f64,
}

struct SolveCtx<'a> {
    cfg: &'a RunConfig,
    model: &'a NetworkModel,
    name: String,
    hours: Vec<usize>,
    hash: String,
    reference: ProblemInstance,
}

impl SolveCtx<'_> {
    fn header(&self) -> String {
        header_line(&self.hash)
    }

    fn solution_doc(&self, status: &str, objective: f64, extra: Map<String, Value>, inst: &ProblemInstance, x: &[f64]) -> String {
        let mut doc = Map::new();
        doc.insert("artifact_version".into(), json!(ARTIFACT_VERSION));
        doc.insert("config_hash".into(), json!(self.hash));
        doc.insert("instance".into(), json!(self.name));
        doc.insert("variant".into(), json!(self.cfg.variant.as_str()));
        doc.insert("hours".into(), json!(self.hours));
        doc.insert("status".into(), json!(status));
        doc.insert("objective".into(), number(objective));
        doc.extend(extra);
        doc.insert("variables".into(), variables_json(inst, x));
        let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("solution serializes");
        s.push('\n');
        s
    }

    /// Violations against the reformulated products, unit schedules and
    /// recovered temperatures of a point in `inst`'s columns.
    fn point_artifacts(&self, inst: &ProblemInstance, x: &[f64]) -> Result<(f64, f64), CliError> {
        let dir = &self.cfg.out_dir;
        let xr = map_columns(inst, x, &self.reference);
        let report = violation_report(&xr, &self.reference);
        let mut s = self.header();
        s.push_str("pipe,hour,tag,relative_violation\n");
        for (pipe, hour, tag, v) in &report.terms {
            s.push_str(&format!("{pipe},{hour},{tag},{v:e}\n"));
        }
        write(dir, "violations.csv", &s)?;

        let mut s = self.header();
        s.push_str("hour,unit,type,power_mw,heat_mw\n");
        let get = |kind, id: &str, t| inst.vars.get(kind, id, t).map(|j| x[j]).unwrap_or(0.0);
        for &t in &self.hours {
            for u in &self.model.units {
                let (ty, p, h) = match u {
                    GenerationUnit::Chp(c) => ("chp", get(VarKind::PChp, &c.id, t), get(VarKind::HChp, &c.id, t)),
                    GenerationUnit::Thermal(c) => ("thermal", get(VarKind::PTu, &c.id, t), 0.0),
                    GenerationUnit::HeatingBoiler(c) => ("boiler", 0.0, get(VarKind::HHb, &c.id, t)),
                };
                s.push_str(&format!("{t},{},{ty},{p},{h}\n", u.id()));
            }
        }
        write(dir, "schedule.csv", &s)?;

        let temps = recover_temperatures(&xr, &self.reference, self.model)?;
        let mut s = self.header();
        s.push_str("kind,id,hour,temperature_c,out_of_window\n");
        let fmt = |v: Option<f64>| v.map(|t| t.to_string()).unwrap_or_else(|| "n/a".into());
        for n in &temps.nodes {
            s.push_str(&format!("node,{},{},{},{}\n", n.node, n.hour, fmt(n.tau), n.out_of_window));
        }
        for p in &temps.pipes {
            s.push_str(&format!("pipe_outlet,{},{},{},{}\n", p.pipe, p.hour, fmt(p.tau), p.out_of_window));
        }
        write(dir, "temperatures.csv", &s)?;
        Ok((report.max, report.avg))
    }

    fn solve_global(&self) -> Result<Written, CliError> {
        let inst = build(self.model, self.cfg.variant.formulation(), &self.hours)?;
        self.maybe_dump(&inst)?;
        let gcfg = GlobalConfig { log_nodes: self.cfg.node_log, ..self.cfg.global };
        let g = match solve_global(&inst, &gcfg) {
            Ok(g) => g,
            Err(GlobalError::Infeasible) => {
                eprintln!("infeasible: {}", GlobalError::Infeasible);
                return Ok(Written { status: "infeasible", exit: EXIT_INFEASIBLE, objective: f64::NAN });
            }
            Err(e) => return Err(e.into()),
        };
        if self.cfg.node_log {
            write(&self.cfg.out_dir, "node_log.csv", &(self.header() + &node_log_csv(&g.log)))?;
        }
        let (max, avg) = self.point_artifacts(&inst, &g.x)?;
        let mut extra = Map::new();
        extra.insert("lower_bound".into(), number(g.lower_bound));
        extra.insert("gap".into(), number(g.gap));
        extra.insert("nodes".into(), json!(g.nodes));
        extra.insert("max_violation".into(), number(max));
        extra.insert("avg_violation".into(), number(avg));
        let status = g.status.as_str();
        write(&self.cfg.out_dir, "solution.json", &self.solution_doc(status, g.objective, extra, &inst, &g.x))?;
        let exit = if g.status == GlobalStatus::Optimal { EXIT_OK } else { EXIT_BUDGET };
        Ok(Written { status, exit, objective: g.objective })
    }

    fn solve_convex(&self) -> Result<Written, CliError> {
        let inst = build(self.model, self.cfg.variant.formulation(), &self.hours)?;
        self.maybe_dump(&inst)?;
        let sol = solve_qp(&inst.qp, &self.cfg.qp)?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::PrimalInfeasible => {
                eprintln!("infeasible: {}", sol.status);
                return Ok(Written { status: "infeasible", exit: EXIT_INFEASIBLE, objective: f64::NAN });
            }
            s => {
                let culprits = if sol.culprits.is_empty() { String::new() } else { format!(" (suspects: {})", sol.culprits.join(", ")) };
                return Err(CliError::Validation(format!("QP solve ended with status {s}{culprits}")));
            }
        }
        let dir = &self.cfg.out_dir;
        let mut s = self.header();
        s.push_str("row_type,tag,entity,hour,dual\n");
        for (l, y) in inst.eq_labels.iter().zip(&sol.duals.y_eq) {
            s.push_str(&format!("eq,{},{},{},{y}\n", l.tag, l.entity, l.hour));
        }
        for (l, z) in inst.in_labels.iter().zip(&sol.duals.z_in) {
            s.push_str(&format!("in,{},{},{},{z}\n", l.tag, l.entity, l.hour));
        }
        write(dir, "duals.csv", &s)?;
        let prices = extract_duals(&sol, &inst, self.model).expect("solution is optimal");
        let mut s = self.header();
        s.push_str("commodity,entity,hour,price_per_mwh\n");
        for p in &prices {
            s.push_str(&format!("{},{},{},{}\n", p.commodity.as_str(), p.entity, p.hour, p.value));
        }
        write(dir, "prices.csv", &s)?;

        let (max, avg) = self.point_artifacts(&inst, &sol.x)?;
        let mut extra = Map::new();
        extra.insert("iterations".into(), json!(sol.iterations));
        extra.insert("max_violation".into(), number(max));
        extra.insert("avg_violation".into(), number(avg));
        write(dir, "solution.json", &self.solution_doc("optimal", sol.objective, extra, &inst, &sol.x))?;
        Ok(Written { status: "optimal", exit: EXIT_OK, objective: sol.objective })
    }

    fn solve_tightening(&self) -> Result<Written, CliError> {
        let dir = &self.cfg.out_dir;
        let r = match tighten(self.model, &self.hours, &self.cfg.tightening) {
            Ok(r) => r,
            Err(TighteningError::InitialRelaxation(QpStatus::PrimalInfeasible)) => {
                eprintln!("infeasible: the McCormick relaxation on the physical boxes has no solution");
                return Ok(Written { status: "infeasible", exit: EXIT_INFEASIBLE, objective: f64::NAN });
            }
            Err(e) => return Err(e.into()),
        };
        self.maybe_dump(&r.instance)?;
        write(dir, "tightening_iterations.csv", &(self.header() + &iteration_csv(&r.iterations)))?;
        let (max, avg) = self.point_artifacts(&r.instance, &r.final_x)?;
        let mut extra = Map::new();
        extra.insert("iterations".into(), json!(r.iterations.len()));
        extra.insert("max_violation".into(), number(max));
        extra.insert("avg_violation".into(), number(avg));
        if let Some(p) = &r.repaired {
            extra.insert(
                "repaired".into(),
                json!({
                    "objective": number(p.objective),
                    "max_violation": number(p.max_violation),
                    "polished": p.polished,
                    "variables": variables_json(&r.instance, &p.x),
                }),
            );
        }
        if let Some(e) = &r.repair_error {
            extra.insert("repair_error".into(), json!(e));
        }
        let status = r.final_status.as_str();
        write(dir, "solution.json", &self.solution_doc(status, r.final_objective, extra, &r.instance, &r.final_x))?;
        let exit = if r.final_status == TighteningStatus::ConvergedByDelta { EXIT_OK } else { EXIT_BUDGET };
        Ok(Written { status, exit, objective: r.final_objective })
    }

    fn maybe_dump(&self, inst: &ProblemInstance) -> Result<(), CliError> {
        if self.cfg.dump_lp {
            let text = format!("\\ {}\n{}", header_line(&self.hash).trim_start_matches("# ").trim_end(), to_lp_string(inst));
            write(&self.cfg.out_dir, "problem.lp", &text)?;
        }
        Ok(())
    }
}

/// Solves one variant and writes its artifacts; returns the exit code.
pub fn cmd_solve(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate()?;
    let model = load(&cfg.network)?;
    let hours = cfg.hours_for(&model);
    let reference = build(&model, Variant::Reformulated, &hours)?;
    let name = instance_name(&cfg.network);
    let hash = config_hash(&[
        name.as_bytes(),
        to_json_string(&model).as_bytes(),
        format!("{:?}", reference.hours).as_bytes(),
        cfg.fingerprint().as_bytes(),
    ]);
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let ctx = SolveCtx { cfg, model: &model, name, hours: reference.hours.clone(), hash, reference };
    let w = match cfg.variant {
        SolveVariant::Base | SolveVariant::Reformulated => ctx.solve_global()?,
        SolveVariant::Tightening => ctx.solve_tightening()?,
        _ => ctx.solve_convex()?,
    };
    println!("{} {} objective={} -> {}", cfg.variant.as_str(), w.status, w.objective, cfg.out_dir.display());
    Ok(w.exit)
}

/// File names of the four comparison artifacts for `instance`.
pub fn comparison_files(instance: &str) -> [String; 4] {
    ["comparison.csv", "comparison.json", "audit.csv", "timings.csv"].map(|s| format!("{instance}.{s}"))
}

/// Runs the comparison harness and writes its reports into `out_dir`.
pub fn cmd_compare(network: &Path, hours: Option<HourRange>, config: &CompareConfig, out_dir: &Path) -> Result<i32, CliError> {
    if config.workers == 0 {
        return Err(CliError::Validation("worker count must be at least 1".into()));
    }
    config.tightening.validate()?;
    let model = load(network)?;
    let hours = hours.map(|r| r.hours()).unwrap_or_else(|| (1..=model.horizon_hours).collect());
    let name = instance_name(network);
    let report = compare_variants(&model, &name, &hours, config)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let [csv, js, audit, timings] = comparison_files(&name);
    let csv_text = comparison_csv(&report);
    write(out_dir, &csv, &csv_text)?;
    write(out_dir, &js, &comparison_json(&report))?;
    write(out_dir, &audit, &audit_csv(&report))?;
    write(out_dir, &timings, &timings_csv(&report))?;
    print!("{csv_text}");
    Ok(EXIT_OK)
}

/// Summary printed by `check`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub objective: f64,
    pub max_violation: f64,
    pub avg_violation: f64,
    pub max_taylor_gap: f64,
    pub flagged_pipes: usize,
    pub max_closure_residual: f64,
    pub max_exact_closure_residual: f64,
}

type ParsedSolution = (Option<SolveVariant>, Vec<(VarKey, f64)>);

fn parse_solution(path: &Path, text: &str) -> Result<ParsedSolution, CliError> {
    let perr = |message: String| CliError::Parse { path: path.to_path_buf(), message };
    let doc: Value = serde_json::from_str(text).map_err(|e| perr(e.to_string()))?;
    let variant = match doc.get("variant") {
        None => None,
        Some(v) => {
            let s = v.as_str().ok_or_else(|| perr("`variant` is not a string".into()))?;
            Some(SolveVariant::parse_name(s).ok_or_else(|| perr(format!("unknown variant `{s}`")))?)
        }
    };
    let vars = doc.get("variables").and_then(Value::as_object).ok_or_else(|| perr("missing `variables` object".into()))?;
    let mut out = Vec::with_capacity(vars.len());
    for (name, v) in vars {
        let key = VarKey::parse_name(name).ok_or_else(|| perr(format!("bad variable name `{name}`")))?;
        let x = v.as_f64().ok_or_else(|| perr(format!("value of `{name}` is not a number")))?;
        out.push((key, x));
    }
    Ok((variant, out))
}

/// Loads a solution file, maps it onto `model` and measures it.
pub fn check_solution(solution: &Path, network: &Path, loss_ratio_threshold: f64) -> Result<CheckSummary, CliError> {
    let text = fs::read_to_string(solution).map_err(io_err(solution))?;
    let (variant, values) = parse_solution(solution, &text)?;
    let model = load(network)?;
    let mut hours: Vec<usize> = values.iter().map(|(k, _)| k.hour).collect();
    hours.sort_unstable();
    hours.dedup();
    let inst = build(&model, variant.map(SolveVariant::formulation).unwrap_or(Variant::Reformulated), &hours)?;
    let mut x = vec![f64::NAN; inst.n()];
    let mut matched = 0;
    for (key, v) in &values {
        if let Some(j) = inst.vars.index_of(key) {
            x[j] = *v;
            matched += 1;
        }
    }
    if matched != values.len() || matched != inst.n() {
        return Err(AnalysisError::DimensionMismatch { expected: inst.n(), got: values.len() }.into());
    }
    let reference = build(&model, Variant::Reformulated, &hours)?;
    let xr = map_columns(&inst, &x, &reference);
    let (max, avg) = reference.violation_stats(&xr, crate::tightening::VIOLATION_FLOOR);
    let audit = exact_heat_loss_audit(&xr, &reference, &model, loss_ratio_threshold)?;
    Ok(CheckSummary {
        objective: objective_value(&inst, &x)?,
        max_violation: max,
        avg_violation: avg,
        max_taylor_gap: audit.max_taylor_gap(),
        flagged_pipes: audit.flagged(),
        max_closure_residual: audit.max_closure_residual(),
        max_exact_closure_residual: audit.closure.iter().map(|c| c.exact_residual().abs()).fold(0.0, f64::max),
    })
}

/// Prints the check summary; 0 when the largest violation is within `tolerance`, else 4.
pub fn cmd_check(solution: &Path, network: &Path, tolerance: f64, loss_ratio_threshold: f64) -> Result<i32, CliError> {
    let s = check_solution(solution, network, loss_ratio_threshold)?;
    println!("objective {}", s.objective);
    println!("max_violation {:.6e} ({:.4}%)", s.max_violation, 100.0 * s.max_violation);
    println!("avg_violation {:.6e} ({:.4}%)", s.avg_violation, 100.0 * s.avg_violation);
    println!("max_taylor_gap {:.6e}", s.max_taylor_gap);
    println!("flagged_pipes {}", s.flagged_pipes);
    println!("closure_residual_mw {:.6e}", s.max_closure_residual);
    println!("exact_closure_residual_mw {:.6e}", s.max_exact_closure_residual);
    let ok = s.max_violation <= tolerance;
    println!("{} (tolerance {tolerance})", if ok { "pass" } else { "fail" });
    Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Solve(a) => {
            let workers = a.instance.workers as usize;
            let qp = qp_config(&a.solver, workers);
            let cfg = RunConfig {
                network: a.instance.network,
                variant: a.variant,
                hours: a.instance.hours,
                tightening: tightening_config(&a.tightening, qp),
                qp,
                global: global_config(&a.solver, workers)?,
                out_dir: out_dir(a.instance.out),
                workers,
                dump_lp: a.dump_lp,
                node_log: a.node_log,
            };
            cmd_solve(&cfg)
        }
        Command::Compare(a) => {
            let qp = qp_config(&a.solver, 1);
            let config = CompareConfig {
                global: global_config(&a.solver, 1)?,
                tightening: tightening_config(&a.tightening, qp),
                qp,
                skip_global: a.skip.contains(&Skip::Global),
                workers: a.instance.workers as usize,
                loss_ratio_threshold: a.loss_ratio_threshold,
            };
            cmd_compare(&a.instance.network, a.instance.hours, &config, &out_dir(a.instance.out))
        }
        Command::Check(a) => cmd_check(&a.solution, &a.network, a.tolerance, a.loss_ratio_threshold),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
