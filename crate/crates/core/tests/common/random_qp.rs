//! Random convex QPs that are feasible and bounded by construction.

use ihes::qp::QpProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_qp(seed: u64, max_dim: usize) -> QpProblem {
    random_qp_with_point(seed, max_dim).0
}

/// Also returns the feasible point the constraints were built around.
pub fn random_qp_with_point(seed: u64, max_dim: usize) -> (QpProblem, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_dim);
    let mut p = QpProblem::new(n);

    // Q = MᵀM with M of random rank, so Q may be singular.
    let rank = rng.gen_range(0..=n);
    let density = rng.gen_range(0.05..1.0);
    let mut m = vec![vec![0.0; n]; rank];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            if rng.gen_bool(density) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v: f64 = m.iter().map(|r| r[i] * r[j]).sum();
            if v != 0.0 {
                p.q_mat.add(i, j, v);
            }
        }
    }
    for v in p.q.iter_mut() {
        *v = rng.gen_range(-10.0..10.0);
    }
    p.c0 = rng.gen_range(-5.0..5.0);

    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for ((lo, hi), x) in p.lo.iter_mut().zip(p.hi.iter_mut()).zip(&x0) {
        *lo = x - rng.gen_range(0.0..3.0);
        *hi = x + rng.gen_range(0.0..3.0);
    }
    let me = rng.gen_range(0..=n / 3);
    let mi = rng.gen_range(0..=n);
    let random_row = |rng: &mut ChaCha8Rng| -> Vec<(usize, f64)> {
        let k = rng.gen_range(1..=n.min(12));
        (0..k).map(|_| (rng.gen_range(0..n), rng.gen_range(-3.0..3.0))).collect()
    };
    for _ in 0..me {
        let row = random_row(&mut rng);
        let b: f64 = row.iter().map(|&(c, v)| v * x0[c]).sum();
        p.a_eq.push_row(row);
        p.b_eq.push(b);
    }
    for _ in 0..mi {
        let row = random_row(&mut rng);
        let b: f64 = row.iter().map(|&(c, v)| v * x0[c]).sum();
        let slack = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) };
        p.a_in.push_row(row);
        p.b_in.push(b + slack);
    }
    (p, x0)
}
