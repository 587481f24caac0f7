//! Dense symmetric factorizations for small KKT blocks.

/// Row-major dense square matrix.
#[derive(Debug, Clone)]
pub(crate) struct DenseSym {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
        if i != j {
            self.data[j * self.n + i] += v;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// `P K = L U` with row partial pivoting.
///
/// Pivoting keeps element growth bounded however small the regularization
/// on the diagonal is. A pivot below `tiny` times the largest entry of its
/// column is replaced by `±tiny_reg` and its column index recorded.
#[derive(Debug, Clone)]
pub(crate) struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    pub bumped: Vec<usize>,
}

impl Lu {
    pub fn factor(k: &DenseSym, tiny: f64, tiny_reg: f64) -> Self {
        let n = k.n;
        let mut a = k.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut bumped = Vec::new();
        let col_scale: Vec<f64> = (0..n).map(|j| (0..n).fold(0.0f64, |m, i| m.max(k.data[i * n + j].abs()))).collect();
        for j in 0..n {
            let (p, pv) = (j..n).fold((j, -1.0), |best, i| {
                let v = a[i * n + j].abs();
                if v > best.1 { (i, v) } else { best }
            });
            if p != j {
                for c in 0..n {
                    a.swap(j * n + c, p * n + c);
                }
                perm.swap(j, p);
            }
            if pv <= tiny * col_scale[j].max(1.0) {
                let sign = if a[j * n + j] < 0.0 { -1.0 } else { 1.0 };
                a[j * n + j] = sign * tiny_reg.max(pv);
                bumped.push(j);
            }
            let piv = a[j * n + j];
            for i in (j + 1)..n {
                let f = a[i * n + j] / piv;
                a[i * n + j] = f;
                if f == 0.0 {
                    continue;
                }
                let (top, bottom) = a.split_at_mut(i * n);
                let rj = &top[j * n + j + 1..j * n + n];
                for (x, u) in bottom[j + 1..n].iter_mut().zip(rj) {
                    *x -= f * u;
                }
            }
        }
        Self { n, lu: a, perm, bumped }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&y[i + 1..]).map(|(u, v)| u * v).sum();
            y[i] = (y[i] - s) / self.lu[i * n + i];
        }
        b.copy_from_slice(&y);
    }
}

/// Solves `K x = rhs` using the factor of a regularized `K` and a few steps
/// of iterative refinement against the unregularized matrix.
pub(crate) fn solve_refined(k_true: &DenseSym, factor: &Lu, rhs: &[f64], steps: usize) -> Vec<f64> {
    let mut x = rhs.to_vec();
    factor.solve_in_place(&mut x);
    let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual = |x: &[f64]| -> Vec<f64> {
        let kx = k_true.mul_vec(x);
        rhs.iter().zip(&kx).map(|(b, a)| b - a).collect()
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut r = residual(&x);
    let mut rn = norm(&r);
    for _ in 0..steps {
        if rn <= 1e-14 * (1.0 + rhs_norm) {
            break;
        }
        factor.solve_in_place(&mut r);
        let cand: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
        let r_new = residual(&cand);
        let rn_new = norm(&r_new);
        // The true matrix may be singular; only keep corrections that help.
        if !(rn_new < rn) {
            break;
        }
        x = cand;
        r = r_new;
        rn = rn_new;
    }
    x
}

/// Returns a column that proves `q` is not positive semidefinite, or `None`
/// when it is PSD up to `tol`.
///
/// Uses diagonally pivoted Cholesky, which reveals rank: once the largest
/// remaining diagonal entry is below `tol` the trailing block must vanish.
pub(crate) fn psd_violation(q: &DenseSym, tol: f64) -> Option<usize> {
    let n = q.n;
    let mut a = q.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (p, piv) = (k..n)
            .map(|i| (i, a[perm[i] * n + perm[i]]))
            .fold((k, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
        if let Some(i) = (k..n).find(|&i| a[perm[i] * n + perm[i]] < -tol) {
            return Some(perm[i]);
        }
        if piv <= tol {
            for i in k..n {
                for j in k..n {
                    if a[perm[i] * n + perm[j]].abs() > 10.0 * tol {
                        return Some(perm[i]);
                    }
                }
            }
            return None;
        }
        perm.swap(k, p);
        let pk = perm[k];
        for i in (k + 1)..n {
            let pi = perm[i];
            let f = a[pi * n + pk] / piv;
            if f == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                let pj = perm[j];
                a[pi * n + pj] -= f * a[pk * n + pj];
            }
        }
    }
    None
}
