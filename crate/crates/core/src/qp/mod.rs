//! Convex quadratic programming by a primal-dual interior-point method.
//!
//! Problems are presolved (fixed variables substituted, empty rows checked),
//! split into independent connected blocks, and each block is solved by the
//! dense quasi-definite IPM in [`ipm`]. When a block fails to converge an
//! elastic phase-1 LP decides whether it is infeasible and, if so, supplies a
//! Farkas certificate.
//!
//! Sign conventions of the returned multipliers:
//!
//! ```text
//! Q x + q - A_eqᵀ y + A_inᵀ z_in - z_lo + z_hi = 0,   z_in, z_lo, z_hi >= 0
//! ```
//!
//! so `y` is the sensitivity of the optimal value to `b_eq`.

mod dense;
mod ipm;

use std::fmt;

use thiserror::Error;

use crate::par::par_map;
use crate::sparse::{SparseRows, SymMatrix};
use dense::{psd_violation, DenseSym};
use ipm::{solve_block, solve_phase1, Block, IpmOutcome, IpmSettings, IpmStatus};

/// `min ½xᵀQx + qᵀx + c0  s.t.  A_eq x = b_eq,  A_in x <= b_in,  lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QpProblem {
    pub q_mat: SymMatrix,
    pub q: Vec<f64>,
    pub c0: f64,
    pub a_eq: SparseRows,
    pub b_eq: Vec<f64>,
    pub a_in: SparseRows,
    pub b_in: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained, zero-cost problem in `n` free variables.
    pub fn new(n: usize) -> Self {
        Self {
            q_mat: SymMatrix::new(n),
            q: vec![0.0; n],
            c0: 0.0,
            a_eq: SparseRows::new(n),
            b_eq: Vec::new(),
            a_in: SparseRows::new(n),
            b_in: Vec::new(),
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c0
            + self.q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + 0.5 * self.q_mat.quad_form(x)
    }

    pub fn check_dimensions(&self) -> Result<(), QpError> {
        let n = self.n();
        let checks = [
            (self.q_mat.n == n, "Q order"),
            (self.a_eq.ncols == n, "A_eq columns"),
            (self.a_eq.nrows() == self.b_eq.len(), "A_eq rows vs b_eq"),
            (self.a_in.ncols == n, "A_in columns"),
            (self.a_in.nrows() == self.b_in.len(), "A_in rows vs b_in"),
            (self.lo.len() == n, "lower bounds"),
            (self.hi.len() == n, "upper bounds"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(QpError::DimensionMismatch(format!("{what} inconsistent with n = {n}"))),
            None => Ok(()),
        }
    }

    /// Largest right-hand-side magnitude, counting finite bounds.
    pub fn rhs_norm(&self) -> f64 {
        self.b_eq
            .iter()
            .chain(&self.b_in)
            .chain(self.lo.iter().filter(|v| v.is_finite()))
            .chain(self.hi.iter().filter(|v| v.is_finite()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub static_reg: f64,
    /// Independent blocks are solved on this many threads.
    pub workers: usize,
    pub check_psd: bool,
}

impl Default for QpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            static_reg: 1e-9,
            workers: 1,
            check_psd: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QpStatus {
    Optimal,
    IterLimit,
    NumericalFailure,
    DualInfeasible,
    PrimalInfeasible,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::IterLimit => "iteration_limit",
            QpStatus::NumericalFailure => "numerical_failure",
            QpStatus::DualInfeasible => "dual_infeasible",
            QpStatus::PrimalInfeasible => "primal_infeasible",
        }
    }
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Duals {
    pub y_eq: Vec<f64>,
    pub z_in: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
}

impl Duals {
    fn zeros(p: &QpProblem) -> Self {
        Self {
            y_eq: vec![0.0; p.b_eq.len()],
            z_in: vec![0.0; p.b_in.len()],
            z_lo: vec![0.0; p.n()],
            z_hi: vec![0.0; p.n()],
        }
    }

    fn scale(&mut self, s: f64) {
        for v in [&mut self.y_eq, &mut self.z_in, &mut self.z_lo, &mut self.z_hi] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Absolute and relative KKT residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    /// `|primal objective - dual objective|`.
    pub gap: f64,
    /// `primal / (1 + ‖rhs‖∞)`.
    pub primal_rel: f64,
    /// `dual / (1 + ‖q‖∞)`.
    pub dual_rel: f64,
    /// `gap / (1 + |primal objective|)`.
    pub gap_rel: f64,
}

impl Residuals {
    pub fn within(&self, tol: f64) -> bool {
        self.primal_rel <= tol && self.dual_rel <= tol && self.gap_rel <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// Multipliers with `-A_eqᵀy + A_inᵀz - z_lo + z_hi = 0`, nonnegative
    /// inequality parts, and `bᵀy - b_inᵀz + loᵀz_lo - hiᵀz_hi > 0`.
    Farkas(Duals),
    /// Direction `d` with `Qd = 0`, `A_eq d = 0`, `A_in d <= 0`, bounds
    /// respected along `d`, and `qᵀd < 0`.
    Ray(Vec<f64>),
}

impl Certificate {
    /// Positive margin when the certificate proves its claim, up to `tol`
    /// violation of the homogeneous conditions.
    pub fn margin(&self, p: &QpProblem) -> (f64, f64) {
        match self {
            Certificate::Farkas(d) => {
                let mut r = p.a_in.tmul_vec(&d.z_in);
                for (ri, v) in r.iter_mut().zip(p.a_eq.tmul_vec(&d.y_eq)) {
                    *ri -= v;
                }
                let mut value: f64 = p.b_eq.iter().zip(&d.y_eq).map(|(a, b)| a * b).sum::<f64>()
                    - p.b_in.iter().zip(&d.z_in).map(|(a, b)| a * b).sum::<f64>();
                for j in 0..p.n() {
                    r[j] += d.z_hi[j] - d.z_lo[j];
                    if d.z_lo[j] != 0.0 {
                        value += p.lo[j] * d.z_lo[j];
                    }
                    if d.z_hi[j] != 0.0 {
                        value -= p.hi[j] * d.z_hi[j];
                    }
                }
                let neg = d
                    .z_in
                    .iter()
                    .chain(&d.z_lo)
                    .chain(&d.z_hi)
                    .fold(0.0f64, |m, v| m.max(-v));
                (value, inf(&r).max(neg))
            }
            Certificate::Ray(dir) => {
                let descent = -p.q.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>();
                let mut viol = inf(&p.q_mat.mul_vec(dir)).max(inf(&p.a_eq.mul_vec(dir)));
                viol = p.a_in.mul_vec(dir).iter().fold(viol, |m, v| m.max(*v));
                for j in 0..p.n() {
                    if p.lo[j].is_finite() {
                        viol = viol.max(-dir[j]);
                    }
                    if p.hi[j].is_finite() {
                        viol = viol.max(dir[j]);
                    }
                }
                (descent, viol)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    pub duals: Duals,
    pub objective: f64,
    pub residuals: Residuals,
    /// Largest iteration count over the solved blocks.
    pub iterations: usize,
    pub blocks: usize,
    pub certificate: Option<Certificate>,
    /// Variables/rows implicated in a numerical breakdown.
    pub culprits: Vec<String>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Q is not positive semidefinite (pivot failure at column {column})")]
    NotPsd { column: usize },
}

fn inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Checks `Q ⪰ 0` block by block with a pivot tolerance of `tol` (relative to
/// the largest diagonal entry).
pub fn check_psd(q: &SymMatrix, tol: f64) -> Result<(), QpError> {
    let n = q.n;
    let mut uf = UnionFind::new(n);
    let mut touched = vec![false; n];
    for (i, j, _) in q.iter() {
        uf.union(i, j);
        touched[i] = true;
        touched[j] = true;
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for j in (0..n).filter(|&j| touched[j]) {
        groups.entry(uf.find(j)).or_default().push(j);
    }
    for cols in groups.values() {
        let mut local = DenseSym::zeros(cols.len());
        let mut max_diag = 0.0f64;
        for (a, &i) in cols.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate().skip(a) {
                let v = q.get(i, j);
                if v != 0.0 {
                    local.add_sym(a, b, v);
                }
            }
            max_diag = max_diag.max(q.get(i, i).abs());
        }
        if let Some(k) = psd_violation(&local, tol * max_diag.max(1.0)) {
            return Err(QpError::NotPsd { column: cols[k] });
        }
    }
    Ok(())
}

/// KKT residuals of `(x, duals)` for `p`, in the module's sign convention.
pub fn kkt_residuals(p: &QpProblem, x: &[f64], d: &Duals) -> Residuals {
    let mut primal = 0.0f64;
    for (i, b) in p.b_eq.iter().enumerate() {
        primal = primal.max((p.a_eq.row_dot(i, x) - b).abs());
    }
    for (i, b) in p.b_in.iter().enumerate() {
        primal = primal.max(p.a_in.row_dot(i, x) - b);
    }
    for j in 0..p.n() {
        primal = primal.max(p.lo[j] - x[j]).max(x[j] - p.hi[j]);
    }
    let mut r = p.q_mat.mul_vec(x);
    for (j, v) in p.q.iter().enumerate() {
        r[j] += v;
    }
    for (j, v) in p.a_eq.tmul_vec(&d.y_eq).into_iter().enumerate() {
        r[j] -= v;
    }
    for (j, v) in p.a_in.tmul_vec(&d.z_in).into_iter().enumerate() {
        r[j] += v;
    }
    let mut dobj = p.c0 - 0.5 * p.q_mat.quad_form(x);
    dobj += p.b_eq.iter().zip(&d.y_eq).map(|(a, b)| a * b).sum::<f64>();
    dobj -= p.b_in.iter().zip(&d.z_in).map(|(a, b)| a * b).sum::<f64>();
    for j in 0..p.n() {
        r[j] += d.z_hi[j] - d.z_lo[j];
        if d.z_lo[j] != 0.0 {
            dobj += d.z_lo[j] * p.lo[j];
        }
        if d.z_hi[j] != 0.0 {
            dobj -= d.z_hi[j] * p.hi[j];
        }
    }
    let dual = inf(&r);
    let pobj = p.objective(x);
    let gap = (pobj - dobj).abs();
    Residuals {
        primal,
        dual,
        gap,
        primal_rel: primal / (1.0 + p.rhs_norm()),
        dual_rel: dual / (1.0 + inf(&p.q)),
        gap_rel: gap / (1.0 + pobj.abs()),
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so grouping is order-independent.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum GRow {
    In(usize),
    Lo(usize),
    Hi(usize),
}

/// One independent piece of the presolved problem and its index maps.
struct Piece {
    vars: Vec<usize>,
    eq_rows: Vec<usize>,
    g_src: Vec<GRow>,
    block: Block,
}

struct PieceResult {
    status: QpStatus,
    outcome: IpmOutcome,
    /// Phase-1 multipliers when the block is infeasible.
    farkas: Option<(Vec<f64>, Vec<f64>)>,
}

const INFEASIBILITY_THRESHOLD: f64 = 1e-7;

fn solve_piece(piece: &Piece, set: IpmSettings) -> PieceResult {
    let blk = &piece.block;
    let out = solve_block(blk, set);
    if out.status == IpmStatus::Converged {
        return PieceResult { status: QpStatus::Optimal, outcome: out, farkas: None };
    }
    let p1_set = IpmSettings { tol: 1e-10, gap_tol: 1e-10, ..set };
    let p1 = solve_phase1(blk, p1_set);
    let p1_ok = matches!(p1.status, IpmStatus::Converged | IpmStatus::IterLimit | IpmStatus::Stalled);
    if p1_ok && p1.objective > INFEASIBILITY_THRESHOLD {
        return PieceResult {
            status: QpStatus::PrimalInfeasible,
            outcome: out,
            farkas: Some((p1.y, p1.z)),
        };
    }
    let status = match out.status {
        _ if inf(&out.x) > 1e6 && is_descent_ray(blk, &out.x) => QpStatus::DualInfeasible,
        IpmStatus::IterLimit => QpStatus::IterLimit,
        _ => QpStatus::NumericalFailure,
    };
    PieceResult { status, outcome: out, farkas: None }
}

fn is_descent_ray(blk: &Block, x: &[f64]) -> bool {
    let nx = inf(x);
    if !(nx > 0.0) {
        return false;
    }
    let d: Vec<f64> = x.iter().map(|v| v / nx).collect();
    let mut qd = vec![0.0; blk.n];
    for &(i, j, v) in &blk.q_entries {
        qd[i] += v * d[j];
        if i != j {
            qd[j] += v * d[i];
        }
    }
    let dot = |r: &[(usize, f64)]| r.iter().map(|&(c, v)| v * d[c]).sum::<f64>();
    let lin: f64 = blk.q.iter().zip(&d).map(|(a, b)| a * b).sum();
    inf(&qd) <= 1e-6
        && blk.a.iter().all(|r| dot(r).abs() <= 1e-6)
        && blk.g.iter().all(|r| dot(r) <= 1e-6)
        && lin < 0.0
}

fn fixed_value(lo: f64, hi: f64) -> Option<f64> {
    if lo.is_finite() && hi.is_finite() && hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        Some(0.5 * (lo + hi))
    } else {
        None
    }
}

/// Sets bound multipliers of fixed columns so the stationarity row of each
/// fixed column is satisfied exactly. `with_cost` selects the optimality
/// (true) or Farkas (false) version of the row.
fn complete_fixed_duals(p: &QpProblem, x: &[f64], fixed: &[bool], d: &mut Duals, with_cost: bool) {
    let mut r = if with_cost {
        let mut r = p.q_mat.mul_vec(x);
        r.iter_mut().zip(&p.q).for_each(|(a, b)| *a += b);
        r
    } else {
        vec![0.0; p.n()]
    };
    for (j, v) in p.a_eq.tmul_vec(&d.y_eq).into_iter().enumerate() {
        r[j] -= v;
    }
    for (j, v) in p.a_in.tmul_vec(&d.z_in).into_iter().enumerate() {
        r[j] += v;
    }
    for j in (0..p.n()).filter(|&j| fixed[j]) {
        d.z_lo[j] = r[j].max(0.0);
        d.z_hi[j] = (-r[j]).max(0.0);
    }
}

fn infeasible(p: &QpProblem, x: Vec<f64>, cert: Duals) -> QpSolution {
    QpSolution {
        status: QpStatus::PrimalInfeasible,
        objective: p.objective(&x),
        residuals: Residuals::default(),
        duals: Duals::zeros(p),
        x,
        iterations: 0,
        blocks: 0,
        certificate: Some(Certificate::Farkas(cert)),
        culprits: Vec::new(),
    }
}

/// Solves a convex QP.
///
/// Returns an error only for malformed input (dimension mismatch, or a `Q`
/// that fails the PSD check); solver outcomes, including infeasibility and
/// numerical breakdown, are reported through [`QpSolution::status`].
pub fn solve_qp(p: &QpProblem, config: &QpConfig) -> Result<QpSolution, QpError> {
    p.check_dimensions()?;
    if config.check_psd {
        check_psd(&p.q_mat, 1e-10)?;
    }
    let n = p.n();

    for j in 0..n {
        let (lo, hi) = (p.lo[j], p.hi[j]);
        if lo > hi + 1e-9 * (1.0 + lo.abs().max(hi.abs())) {
            let mut cert = Duals::zeros(p);
            cert.z_lo[j] = 1.0;
            cert.z_hi[j] = 1.0;
            let x = (0..n).map(|k| clamp_finite(0.0, p.lo[k], p.hi[k])).collect();
            return Ok(infeasible(p, x, cert));
        }
    }

    let mut x = vec![0.0; n];
    let mut fixed = vec![false; n];
    for j in 0..n {
        if let Some(v) = fixed_value(p.lo[j], p.hi[j]) {
            fixed[j] = true;
            x[j] = v;
        }
    }

    // Right-hand sides with fixed columns moved over.
    let shift = |rows: &SparseRows, rhs: &[f64]| -> Vec<f64> {
        rhs.iter()
            .enumerate()
            .map(|(i, b)| b - rows.row(i).iter().filter(|(c, _)| fixed[*c]).map(|&(c, v)| v * x[c]).sum::<f64>())
            .collect()
    };
    let b_eq = shift(&p.a_eq, &p.b_eq);
    let b_in = shift(&p.a_in, &p.b_in);
    let free_part = |rows: &SparseRows, i: usize| -> Vec<(usize, f64)> {
        rows.row(i).iter().copied().filter(|(c, _)| !fixed[*c]).collect()
    };

    // Rows left without free columns must already hold.
    let rhs_scale = 1.0 + p.rhs_norm();
    for (i, b) in b_eq.iter().enumerate() {
        if free_part(&p.a_eq, i).is_empty() && b.abs() > config.tol * rhs_scale {
            let mut cert = Duals::zeros(p);
            cert.y_eq[i] = b.signum();
            complete_fixed_duals(p, &x, &fixed, &mut cert, false);
            return Ok(infeasible(p, x, cert));
        }
    }
    for (i, b) in b_in.iter().enumerate() {
        if free_part(&p.a_in, i).is_empty() && *b < -config.tol * rhs_scale {
            let mut cert = Duals::zeros(p);
            cert.z_in[i] = 1.0;
            complete_fixed_duals(p, &x, &fixed, &mut cert, false);
            return Ok(infeasible(p, x, cert));
        }
    }

    // Connected components over free columns.
    let mut uf = UnionFind::new(n);
    for (i, j, _) in p.q_mat.iter() {
        if !fixed[i] && !fixed[j] {
            uf.union(i, j);
        }
    }
    let mut eq_owner = vec![usize::MAX; p.b_eq.len()];
    let mut in_owner = vec![usize::MAX; p.b_in.len()];
    for (rows, owner) in [(&p.a_eq, &mut eq_owner), (&p.a_in, &mut in_owner)] {
        for i in 0..rows.nrows() {
            let cols = free_part(rows, i);
            if let Some(&(c0, _)) = cols.first() {
                for &(c, _) in &cols[1..] {
                    uf.union(c0, c);
                }
                owner[i] = c0;
            }
        }
    }
    let mut root_index: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut pieces_vars: Vec<Vec<usize>> = Vec::new();
    for j in (0..n).filter(|&j| !fixed[j]) {
        let r = uf.find(j);
        let k = *root_index.entry(r).or_insert_with(|| {
            pieces_vars.push(Vec::new());
            pieces_vars.len() - 1
        });
        pieces_vars[k].push(j);
    }
    let mut pieces_eq: Vec<Vec<usize>> = vec![Vec::new(); pieces_vars.len()];
    let mut pieces_in: Vec<Vec<usize>> = vec![Vec::new(); pieces_vars.len()];
    for (owner, dest) in [(&eq_owner, &mut pieces_eq), (&in_owner, &mut pieces_in)] {
        for (i, &c) in owner.iter().enumerate() {
            if c != usize::MAX {
                dest[root_index[&uf.find(c)]].push(i);
            }
        }
    }

    let mut local = vec![usize::MAX; n];
    let q_eff = {
        let mut q = p.q.clone();
        for (i, j, v) in p.q_mat.iter() {
            if fixed[j] && !fixed[i] {
                q[i] += v * x[j];
            }
            if fixed[i] && !fixed[j] {
                q[j] += v * x[i];
            }
        }
        q
    };
    let mut pieces = Vec::with_capacity(pieces_vars.len());
    for k in 0..pieces_vars.len() {
        let vars = std::mem::take(&mut pieces_vars[k]);
        for (a, &j) in vars.iter().enumerate() {
            local[j] = a;
        }
        let mut blk = Block {
            n: vars.len(),
            q: vars.iter().map(|&j| q_eff[j]).collect(),
            ..Block::default()
        };
        for (a, &i) in vars.iter().enumerate() {
            for &j in &vars[a..] {
                let v = p.q_mat.get(i, j);
                if v != 0.0 {
                    blk.q_entries.push((local[i], local[j], v));
                }
            }
        }
        let scaled = |row: Vec<(usize, f64)>| -> (Vec<(usize, f64)>, f64) {
            let m = row.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()));
            let s = if m > 0.0 { 1.0 / m } else { 1.0 };
            (row.into_iter().map(|(c, v)| (local[c], v * s)).collect(), s)
        };
        for &i in &pieces_eq[k] {
            let (row, s) = scaled(free_part(&p.a_eq, i));
            blk.a.push(row);
            blk.b.push(b_eq[i] * s);
            blk.eq_scale.push(s);
        }
        let mut g_src = Vec::new();
        for &i in &pieces_in[k] {
            let (row, s) = scaled(free_part(&p.a_in, i));
            blk.g.push(row);
            blk.h.push(b_in[i] * s);
            blk.g_scale.push(s);
            g_src.push(GRow::In(i));
        }
        for &j in &vars {
            if p.lo[j].is_finite() {
                blk.g.push(vec![(local[j], -1.0)]);
                blk.h.push(-p.lo[j]);
                blk.g_scale.push(1.0);
                g_src.push(GRow::Lo(j));
            }
            if p.hi[j].is_finite() {
                blk.g.push(vec![(local[j], 1.0)]);
                blk.h.push(p.hi[j]);
                blk.g_scale.push(1.0);
                g_src.push(GRow::Hi(j));
            }
        }
        // Termination references depend only on the block's own data, so a
        // block solves identically whether or not it is part of a larger problem.
        blk.p_ref = pieces_eq[k]
            .iter()
            .map(|&i| b_eq[i])
            .chain(pieces_in[k].iter().map(|&i| b_in[i]))
            .chain(vars.iter().flat_map(|&j| [p.lo[j], p.hi[j]]).filter(|v| v.is_finite()))
            .fold(0.0, |m, v: f64| m.max(v.abs()));
        blk.d_ref = vars.iter().fold(0.0, |m, &j| m.max(p.q[j].abs()));
        pieces.push(Piece { vars, eq_rows: std::mem::take(&mut pieces_eq[k]), g_src, block: blk });
    }

    let mut set = IpmSettings {
        tol: config.tol,
        gap_tol: 0.1 * config.tol,
        max_iter: config.max_iter,
        static_reg: config.static_reg,
    };
    let mut sol = assemble_solution(p, &pieces, par_map(&pieces, config.workers, |pc| solve_piece(pc, set)), x.clone(), &fixed);
    if sol.status == QpStatus::Optimal && !sol.residuals.within(config.tol) {
        set.tol *= 0.01;
        set.gap_tol *= 0.01;
        let retry = assemble_solution(p, &pieces, par_map(&pieces, config.workers, |pc| solve_piece(pc, set)), x, &fixed);
        sol = if retry.status == QpStatus::Optimal && retry.residuals.within(config.tol) {
            retry
        } else {
            QpSolution { status: QpStatus::NumericalFailure, ..sol }
        };
    }
    Ok(sol)
}

fn clamp_finite(v: f64, lo: f64, hi: f64) -> f64 {
    let v = if lo.is_finite() { v.max(lo) } else { v };
    if hi.is_finite() { v.min(hi) } else { v }
}

fn assemble_solution(p: &QpProblem, pieces: &[Piece], results: Vec<PieceResult>, mut x: Vec<f64>, fixed: &[bool]) -> QpSolution {
    let status = results.iter().map(|r| r.status).max().unwrap_or(QpStatus::Optimal);
    let mut duals = Duals::zeros(p);
    let mut culprits = Vec::new();
    let mut iterations = 0;
    for (pc, res) in pieces.iter().zip(&results) {
        iterations = iterations.max(res.outcome.iterations);
        for (a, &j) in pc.vars.iter().enumerate() {
            x[j] = res.outcome.x[a];
        }
        let (y, z) = match (&res.farkas, status) {
            (Some((y, z)), QpStatus::PrimalInfeasible) => (y, z),
            (None, QpStatus::PrimalInfeasible) => continue,
            _ => (&res.outcome.y, &res.outcome.z),
        };
        for (a, &i) in pc.eq_rows.iter().enumerate() {
            duals.y_eq[i] = -pc.block.eq_scale[a] * y[a];
        }
        for (a, src) in pc.g_src.iter().enumerate() {
            let v = pc.block.g_scale[a] * z[a];
            match *src {
                GRow::In(i) => duals.z_in[i] = v,
                GRow::Lo(j) => duals.z_lo[j] = v,
                GRow::Hi(j) => duals.z_hi[j] = v,
            }
        }
        if matches!(res.status, QpStatus::NumericalFailure | QpStatus::IterLimit) {
            let nv = pc.vars.len();
            for &k in &res.outcome.bumped {
                let ne = pc.eq_rows.len();
                culprits.push(if k < nv {
                    format!("column {}", pc.vars[k])
                } else if k < nv + ne {
                    format!("equality row {}", pc.eq_rows[k - nv])
                } else {
                    match pc.g_src.get(k - nv - ne) {
                        Some(GRow::In(i)) => format!("inequality row {i}"),
                        Some(GRow::Lo(j) | GRow::Hi(j)) => format!("bound of column {j}"),
                        None => continue,
                    }
                });
            }
        }
    }
    let objective = p.objective(&x);
    match status {
        QpStatus::PrimalInfeasible => {
            complete_fixed_duals(p, &x, fixed, &mut duals, false);
            let mut cert = duals;
            // Normalize so the largest multiplier is 1.
            let m = inf(&cert.y_eq).max(inf(&cert.z_in)).max(inf(&cert.z_lo)).max(inf(&cert.z_hi));
            if m > 0.0 {
                cert.scale(1.0 / m);
            }
            QpSolution {
                status,
                x,
                duals: Duals::zeros(p),
                objective,
                residuals: Residuals::default(),
                iterations,
                blocks: pieces.len(),
                certificate: Some(Certificate::Farkas(cert)),
                culprits,
            }
        }
        _ => {
            complete_fixed_duals(p, &x, fixed, &mut duals, true);
            let residuals = kkt_residuals(p, &x, &duals);
            let certificate = if status == QpStatus::DualInfeasible {
                let nx = inf(&x);
                Some(Certificate::Ray(x.iter().map(|v| v / nx).collect()))
            } else {
                None
            };
            QpSolution {
                status,
                x,
                duals,
                objective,
                residuals,
                iterations,
                blocks: pieces.len(),
                certificate,
                culprits,
            }
        }
    }
}
