//! Mehrotra predictor-corrector interior-point engine for one decoupled block.
//!
//! The block is `min ½xᵀQx + qᵀx  s.t.  Ax = b, Gx <= h` with rows already
//! equilibrated (the original scale of each row is kept for reporting). In
//! elastic mode the engine instead solves the phase-1 problem
//! `min Σu + Σv + Σw  s.t.  Ax + u - v = b, Gx - w <= h, u, v, w >= 0`,
//! whose elastic variables are eliminated analytically so the reduced KKT
//! system keeps the size `n + m_eq` of the original one.
//!
//! Internally equality multipliers follow `Qx + q + Aᵀy + Gᵀz = 0`.

use super::dense::{solve_refined, DenseSym, Lu};

#[derive(Debug, Clone, Default)]
pub(crate) struct Block {
    pub n: usize,
    /// Upper-triangle Hessian entries `(i, j, v)` with `i <= j`.
    pub q_entries: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub a: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    /// Factor applied to each equality row (`row_scaled = scale · row`).
    pub eq_scale: Vec<f64>,
    pub g: Vec<Vec<(usize, f64)>>,
    pub h: Vec<f64>,
    pub g_scale: Vec<f64>,
    /// Reference magnitudes for the relative primal and dual residuals.
    pub p_ref: f64,
    pub d_ref: f64,
}

fn dot(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(c, v)| v * x[c]).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl Block {
    fn q_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, v) in &self.q_entries {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    /// Original-unit primal infeasibility of `x` (slacks and elastics ignored).
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let e = self
            .a
            .iter()
            .zip(&self.b)
            .zip(&self.eq_scale)
            .map(|((row, b), s)| ((dot(row, x) - b) / s).abs());
        let g = self
            .g
            .iter()
            .zip(&self.h)
            .zip(&self.g_scale)
            .map(|((row, h), s)| ((dot(row, x) - h) / s).max(0.0));
        e.chain(g).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub static_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    IterLimit,
    /// No progress over many iterations; often a sign of infeasibility.
    Stalled,
    /// Iterates grew without bound.
    Diverged,
    Numerical,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub status: IpmStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
    /// Objective of the solved problem (phase-1 objective in elastic mode).
    pub objective: f64,
    /// KKT columns whose pivots needed dynamic regularization in the last factorization.
    pub bumped: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    lu: Vec<f64>,
    lv: Vec<f64>,
    w: Vec<f64>,
    lw: Vec<f64>,
}

struct Residuals {
    rx: Vec<f64>,
    rp: Vec<f64>,
    rg: Vec<f64>,
    ru: Vec<f64>,
    rv: Vec<f64>,
    rw: Vec<f64>,
}

/// Complementarity right-hand sides, one per nonnegative pair.
struct Comp {
    s: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
}

type Dir = Iterate;

/// Factored Newton system. Single-variable inequality rows are folded into
/// the diagonal of the x-block; all other inequality rows keep their own
/// multiplier unknown (quasi-definite augmented form), which avoids forming
/// the badly conditioned `GᵀΘ⁻¹G` for nearly active rows.
struct Kkt {
    k_true: DenseSym,
    factor: Lu,
    dg: Vec<f64>,
    aug: Vec<Option<usize>>,
}

struct Engine<'a> {
    blk: &'a Block,
    elastic: bool,
    set: IpmSettings,
    me: usize,
    mg: usize,
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| yi + a * xi).collect()
}

fn max_step(v: &[f64], dv: &[f64], cap: f64) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .fold(cap, |a, (&x, &d)| a.min(-x / d))
}

impl<'a> Engine<'a> {
    fn residuals(&self, it: &Iterate) -> Residuals {
        let blk = self.blk;
        let mut rx = if self.elastic { vec![0.0; blk.n] } else { axpy(1.0, &blk.q, &blk.q_mul(&it.x)) };
        for (row, yi) in blk.a.iter().zip(&it.y) {
            for &(c, v) in row {
                rx[c] += v * yi;
            }
        }
        for (row, zi) in blk.g.iter().zip(&it.z) {
            for &(c, v) in row {
                rx[c] += v * zi;
            }
        }
        let mut rp: Vec<f64> = blk.a.iter().zip(&blk.b).map(|(r, b)| dot(r, &it.x) - b).collect();
        let mut rg: Vec<f64> = blk
            .g
            .iter()
            .zip(&blk.h)
            .zip(&it.s)
            .map(|((r, h), s)| dot(r, &it.x) + s - h)
            .collect();
        let (mut ru, mut rv, mut rw) = (Vec::new(), Vec::new(), Vec::new());
        if self.elastic {
            for i in 0..self.me {
                rp[i] += it.u[i] - it.v[i];
                ru.push(1.0 + it.y[i] - it.lu[i]);
                rv.push(1.0 - it.y[i] - it.lv[i]);
            }
            for i in 0..self.mg {
                rg[i] -= it.w[i];
                rw.push(1.0 - it.z[i] - it.lw[i]);
            }
        }
        Residuals { rx, rp, rg, ru, rv, rw }
    }

    fn n_pairs(&self) -> usize {
        self.mg + if self.elastic { 2 * self.me + self.mg } else { 0 }
    }

    fn mu(&self, it: &Iterate) -> f64 {
        let np = self.n_pairs();
        if np == 0 {
            return 0.0;
        }
        let mut sum: f64 = it.s.iter().zip(&it.z).map(|(a, b)| a * b).sum();
        if self.elastic {
            sum += it.u.iter().zip(&it.lu).map(|(a, b)| a * b).sum::<f64>();
            sum += it.v.iter().zip(&it.lv).map(|(a, b)| a * b).sum::<f64>();
            sum += it.w.iter().zip(&it.lw).map(|(a, b)| a * b).sum::<f64>();
        }
        sum / np as f64
    }

    fn assemble(&self, theta: &[f64], de: &[f64]) -> Kkt {
        let blk = self.blk;
        let n = blk.n;
        let mut aug = vec![None; self.mg];
        let mut dim = n + self.me;
        for (i, row) in blk.g.iter().enumerate() {
            if row.len() > 1 {
                aug[i] = Some(dim);
                dim += 1;
            }
        }
        let mut k = DenseSym::zeros(dim);
        if !self.elastic {
            for &(i, j, v) in &blk.q_entries {
                k.add_sym(i, j, v);
            }
        }
        let dg: Vec<f64> = theta.iter().map(|t| 1.0 / t).collect();
        for (i, row) in blk.g.iter().enumerate() {
            match aug[i] {
                Some(r) => {
                    for &(c, v) in row {
                        k.add_sym(r, c, v);
                    }
                    k.add_sym(r, r, -theta[i]);
                }
                None => {
                    for &(c, v) in row {
                        k.add_sym(c, c, dg[i] * v * v);
                    }
                }
            }
        }
        for (i, row) in blk.a.iter().enumerate() {
            for &(c, v) in row {
                k.add_sym(n + i, c, v);
            }
            k.add_sym(n + i, n + i, -de[i]);
        }
        let mut k_reg = k.clone();
        let reg = self.set.static_reg;
        for i in 0..dim {
            let sign = if i < n { 1.0 } else { -1.0 };
            k_reg.data[i * dim + i] += sign * reg;
        }
        let factor = Lu::factor(&k_reg, 1e-14, reg);
        Kkt { k_true: k, factor, dg, aug }
    }

    /// Solves the Newton system for `(dx, dy, dz)` given the x- and y-block
    /// right-hand sides and the per-row terms `ξ` with `G dx - Θ dz = -ξ`.
    fn solve_kkt(&self, kkt: &Kkt, theta: &[f64], rhs_x: &[f64], rhs_y: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let blk = self.blk;
        let n = blk.n;
        let mut rhs = vec![0.0; kkt.k_true.n];
        rhs[..n].copy_from_slice(rhs_x);
        rhs[n..n + self.me].copy_from_slice(rhs_y);
        for (i, row) in blk.g.iter().enumerate() {
            match kkt.aug[i] {
                Some(r) => rhs[r] = -xi[i],
                None => {
                    let f = kkt.dg[i] * xi[i];
                    for &(c, v) in row {
                        rhs[c] -= v * f;
                    }
                }
            }
        }
        let sol = solve_refined(&kkt.k_true, &kkt.factor, &rhs, 5);
        let dx = sol[..n].to_vec();
        let dy = sol[n..n + self.me].to_vec();
        let dz = (0..self.mg)
            .map(|i| match kkt.aug[i] {
                Some(r) => sol[r],
                None => (dot(&blk.g[i], &dx) + xi[i]) / theta[i],
            })
            .collect();
        (dx, dy, dz)
    }

    fn theta_de(&self, it: &Iterate) -> (Vec<f64>, Vec<f64>) {
        let mut theta: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| s / z).collect();
        let mut de = vec![0.0; self.me];
        if self.elastic {
            for i in 0..self.mg {
                theta[i] += it.w[i] / it.lw[i];
            }
            for i in 0..self.me {
                de[i] = it.u[i] / it.lu[i] + it.v[i] / it.lv[i];
            }
        }
        (theta, de)
    }

    fn direction(&self, it: &Iterate, res: &Residuals, rc: &Comp, kkt: &Kkt, theta: &[f64]) -> Dir {
        let el = self.elastic;
        let xi_g: Vec<f64> = (0..self.mg)
            .map(|i| {
                let mut v = res.rg[i] - rc.s[i] / it.z[i];
                if el {
                    v += it.w[i] / it.lw[i] * res.rw[i] + rc.w[i] / it.lw[i];
                }
                v
            })
            .collect();
        let rhs_x: Vec<f64> = res.rx.iter().map(|v| -v).collect();
        let rhs_y: Vec<f64> = (0..self.me)
            .map(|i| {
                let mut v = -res.rp[i];
                if el {
                    v += it.u[i] / it.lu[i] * res.ru[i] + rc.u[i] / it.lu[i]
                        - it.v[i] / it.lv[i] * res.rv[i]
                        - rc.v[i] / it.lv[i];
                }
                v
            })
            .collect();
        let (dx, dy, dz) = self.solve_kkt(kkt, theta, &rhs_x, &rhs_y, &xi_g);
        let ds: Vec<f64> = (0..self.mg)
            .map(|i| (-rc.s[i] - it.s[i] * dz[i]) / it.z[i])
            .collect();
        let mut d = Dir {
            x: dx,
            y: dy,
            s: ds,
            z: dz,
            u: vec![],
            v: vec![],
            lu: vec![],
            lv: vec![],
            w: vec![],
            lw: vec![],
        };
        if el {
            for i in 0..self.me {
                let (u, lu, v, lv) = (it.u[i], it.lu[i], it.v[i], it.lv[i]);
                let du = -(u / lu) * (res.ru[i] + d.y[i]) - rc.u[i] / lu;
                let dv = (v / lv) * (d.y[i] - res.rv[i]) - rc.v[i] / lv;
                d.lu.push((-rc.u[i] - lu * du) / u);
                d.lv.push((-rc.v[i] - lv * dv) / v);
                d.u.push(du);
                d.v.push(dv);
            }
            for i in 0..self.mg {
                let (w, lw) = (it.w[i], it.lw[i]);
                let dw = (w / lw) * (d.z[i] - res.rw[i]) - rc.w[i] / lw;
                d.lw.push((-rc.w[i] - lw * dw) / w);
                d.w.push(dw);
            }
        }
        d
    }

    fn step_length(&self, it: &Iterate, d: &Dir) -> f64 {
        let mut a = 1.0f64;
        for (v, dv) in [
            (&it.s, &d.s),
            (&it.z, &d.z),
            (&it.u, &d.u),
            (&it.v, &d.v),
            (&it.lu, &d.lu),
            (&it.lv, &d.lv),
            (&it.w, &d.w),
            (&it.lw, &d.lw),
        ] {
            a = max_step(v, dv, a);
        }
        a
    }

    fn comp_products(&self, it: &Iterate, d: Option<(&Dir, f64)>, target: f64) -> Comp {
        let prod = |a: &[f64], b: &[f64], da: &[f64], db: &[f64]| -> Vec<f64> {
            (0..a.len())
                .map(|i| {
                    let mut p = a[i] * b[i] - target;
                    if d.is_some() {
                        p += da[i] * db[i];
                    }
                    p
                })
                .collect()
        };
        let empty = Iterate {
            x: vec![],
            y: vec![],
            s: vec![0.0; self.mg],
            z: vec![0.0; self.mg],
            u: vec![0.0; it.u.len()],
            v: vec![0.0; it.v.len()],
            lu: vec![0.0; it.lu.len()],
            lv: vec![0.0; it.lv.len()],
            w: vec![0.0; it.w.len()],
            lw: vec![0.0; it.lw.len()],
        };
        let dd = d.map(|(d, _)| d).unwrap_or(&empty);
        Comp {
            s: prod(&it.s, &it.z, &dd.s, &dd.z),
            u: prod(&it.u, &it.lu, &dd.u, &dd.lu),
            v: prod(&it.v, &it.lv, &dd.v, &dd.lv),
            w: prod(&it.w, &it.lw, &dd.w, &dd.lw),
        }
    }

    fn initial(&self) -> Iterate {
        let blk = self.blk;
        let n = blk.n;
        let el = self.elastic;
        let ones_g = vec![1.0; self.mg];
        let de0 = vec![if el { 2.0 } else { 0.0 }; self.me];
        let kkt = self.assemble(&ones_g, &de0);
        let rhs_x: Vec<f64> = if el { vec![0.0; n] } else { blk.q.iter().map(|v| -v).collect() };
        let neg_h: Vec<f64> = blk.h.iter().map(|v| -v).collect();
        let (x, y, _) = self.solve_kkt(&kkt, &ones_g, &rhs_x, &blk.b, &neg_h);
        let extra = if el { 1.0 } else { 0.0 };
        let s0: Vec<f64> = blk.g.iter().zip(&blk.h).map(|(r, h)| h - dot(r, &x) + extra).collect();
        let z0: Vec<f64> = blk.g.iter().zip(&blk.h).map(|(r, h)| dot(r, &x) - h).collect();
        let shift = |v: Vec<f64>| -> Vec<f64> {
            let alpha = -v.iter().cloned().fold(f64::INFINITY, f64::min);
            if v.is_empty() || alpha < 0.0 {
                v
            } else {
                v.iter().map(|x| x + 1.0 + alpha).collect()
            }
        };
        let s = shift(s0);
        let mut z = shift(z0);
        let (me, mg) = if el { (self.me, self.mg) } else { (0, 0) };
        if el {
            // Phase-1 duals live in the box z <= 1.
            z.iter_mut().for_each(|v| *v = 0.5);
        }
        Iterate {
            x,
            y: if el { vec![0.0; self.me] } else { y },
            s,
            z,
            u: vec![1.0; me],
            v: vec![1.0; me],
            lu: vec![1.0; me],
            lv: vec![1.0; me],
            w: vec![1.0; mg],
            lw: vec![0.5; mg],
        }
    }

    fn objectives(&self, it: &Iterate) -> (f64, f64) {
        let blk = self.blk;
        let by: f64 = blk.b.iter().zip(&it.y).map(|(a, b)| a * b).sum();
        let hz: f64 = blk.h.iter().zip(&it.z).map(|(a, b)| a * b).sum();
        if self.elastic {
            let p = it.u.iter().sum::<f64>() + it.v.iter().sum::<f64>() + it.w.iter().sum::<f64>();
            (p, -by - hz)
        } else {
            let qx = blk.q_mul(&it.x);
            let xqx: f64 = qx.iter().zip(&it.x).map(|(a, b)| a * b).sum();
            let lin: f64 = blk.q.iter().zip(&it.x).map(|(a, b)| a * b).sum();
            (0.5 * xqx + lin, -0.5 * xqx - by - hz)
        }
    }

    /// Relative (primal, dual, gap) measures used for termination.
    fn measures(&self, it: &Iterate, res: &Residuals, rhs_norm: f64, q_norm: f64) -> (f64, f64, f64) {
        let blk = self.blk;
        let (pobj, dobj) = self.objectives(it);
        if self.elastic {
            let p = inf_norm(&res.rp).max(inf_norm(&res.rg));
            let d = inf_norm(&res.rx)
                .max(inf_norm(&res.ru))
                .max(inf_norm(&res.rv))
                .max(inf_norm(&res.rw));
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
            return (p / (1.0 + inf_norm(&blk.b).max(inf_norm(&blk.h))), d, gap);
        }
        let p = blk.primal_violation(&it.x) / (1.0 + rhs_norm);
        let d = inf_norm(&res.rx) / (1.0 + q_norm);
        let comp: f64 = blk
            .g
            .iter()
            .zip(&blk.h)
            .zip(&it.z)
            .map(|((r, h), z)| z * (h - dot(r, &it.x)).abs())
            .sum();
        let gap = (pobj - dobj).abs().max(comp) / (1.0 + pobj.abs());
        (p, d, gap)
    }

    fn run(&self) -> IpmOutcome {
        let blk = self.blk;
        let rhs_norm = blk.p_ref;
        let q_norm = blk.d_ref;
        let mut it = self.initial();
        let mut best = f64::INFINITY;
        let mut best_iter = 0;
        let mut tiny_steps = 0;
        let mut bumped = Vec::new();
        let outcome = |it: &Iterate, status, iterations, bumped: Vec<usize>| {
            let (pobj, _) = self.objectives(it);
            IpmOutcome {
                status,
                x: it.x.clone(),
                y: it.y.clone(),
                z: it.z.clone(),
                iterations,
                objective: pobj,
                bumped,
            }
        };
        for iter in 0..=self.set.max_iter {
            let res = self.residuals(&it);
            let (p, d, g) = self.measures(&it, &res, rhs_norm, q_norm);
            if !(p.is_finite() && d.is_finite() && g.is_finite()) {
                return outcome(&it, IpmStatus::Numerical, iter, bumped);
            }
            if p <= self.set.tol && d <= self.set.tol && g <= self.set.gap_tol {
                return outcome(&it, IpmStatus::Converged, iter, bumped);
            }
            if iter == self.set.max_iter {
                break;
            }
            let big = inf_norm(&it.x).max(inf_norm(&it.y)).max(inf_norm(&it.z));
            if big > 1e13 {
                return outcome(&it, IpmStatus::Diverged, iter, bumped);
            }
            let merit = p.max(d).max(g);
            if merit < 0.5 * best {
                best = merit;
                best_iter = iter;
            } else if iter >= best_iter + 30 {
                return outcome(&it, IpmStatus::Stalled, iter, bumped);
            }

            let (theta, de) = self.theta_de(&it);
            let kkt = self.assemble(&theta, &de);
            // Report augmented pivots by their inequality row: index n + me + row.
            let base = blk.n + self.me;
            bumped = kkt
                .factor
                .bumped
                .iter()
                .map(|&k| if k < base { k } else { base + kkt.aug.iter().position(|a| *a == Some(k)).unwrap_or(0) })
                .collect();
            let mu = self.mu(&it);
            let rc_aff = self.comp_products(&it, None, 0.0);
            let d_aff = self.direction(&it, &res, &rc_aff, &kkt, &theta);
            let dir = if self.n_pairs() == 0 {
                d_aff
            } else {
                let a_aff = self.step_length(&it, &d_aff);
                let trial = step(&it, &d_aff, a_aff);
                let mu_aff = self.mu(&trial);
                let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
                let rc = self.comp_products(&it, Some((&d_aff, a_aff)), sigma * mu);
                self.direction(&it, &res, &rc, &kkt, &theta)
            };
            let alpha = if self.n_pairs() == 0 {
                1.0
            } else {
                (0.99 * self.step_length(&it, &dir)).min(1.0)
            };
            if alpha < 1e-10 {
                tiny_steps += 1;
                if tiny_steps >= 5 {
                    return outcome(&it, IpmStatus::Stalled, iter, bumped);
                }
            } else {
                tiny_steps = 0;
            }
            it = step(&it, &dir, alpha);
        }
        outcome(&it, IpmStatus::IterLimit, self.set.max_iter, bumped)
    }
}

fn step(it: &Iterate, d: &Dir, a: f64) -> Iterate {
    Iterate {
        x: axpy(a, &d.x, &it.x),
        y: axpy(a, &d.y, &it.y),
        s: axpy(a, &d.s, &it.s),
        z: axpy(a, &d.z, &it.z),
        u: axpy(a, &d.u, &it.u),
        v: axpy(a, &d.v, &it.v),
        lu: axpy(a, &d.lu, &it.lu),
        lv: axpy(a, &d.lv, &it.lv),
        w: axpy(a, &d.w, &it.w),
        lw: axpy(a, &d.lw, &it.lw),
    }
}

/// Solves the block QP.
pub(crate) fn solve_block(blk: &Block, set: IpmSettings) -> IpmOutcome {
    Engine { blk, elastic: false, set, me: blk.a.len(), mg: blk.g.len() }.run()
}

/// Solves the elastic phase-1 LP; its objective is the total constraint
/// violation (in equilibrated units) of the least-infeasible point.
pub(crate) fn solve_phase1(blk: &Block, set: IpmSettings) -> IpmOutcome {
    Engine { blk, elastic: true, set, me: blk.a.len(), mg: blk.g.len() }.run()
}
