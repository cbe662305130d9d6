//! Dual active-set method for `min 1/2 v'Gv + a'v  s.t.  g_i v <= h_i`, with `G` supplied as
//! `J0 = L^{-T}` where `G = LL'`. Working factors are updated by Givens rotations.

use crate::linalg::{Mat, Vector};

/// Rows whose reduced normal is shorter than this are treated as constants by the caller.
pub(crate) const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub(crate) struct ActiveSetResult {
    pub v: Vector,
    pub lambda: Vector,
    pub outcome: Outcome,
    pub iterations: usize,
    /// Nonnegative row weights with `sum y_i g_i = 0` and `y'h < 0`.
    pub farkas: Option<Vector>,
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0);
    }
    let r = a.hypot(b);
    (a / r, b / r)
}

fn rotate_cols(m: &mut Mat, i: usize, k: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let a = m[(row, i)];
        let b = m[(row, k)];
        m[(row, i)] = c * a + s * b;
        m[(row, k)] = -s * a + c * b;
    }
}

fn back_substitute(r: &Mat, q: usize, rhs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q];
    for i in (0..q).rev() {
        let mut acc = rhs[i];
        for k in i + 1..q {
            acc -= r[(i, k)] * out[k];
        }
        out[i] = acc / r[(i, i)];
    }
    out
}

struct Working {
    j: Mat,
    r: Mat,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl Working {
    fn drop_at(&mut self, k: usize, is_active: &mut [bool]) {
        let q = self.active.len();
        is_active[self.active[k]] = false;
        self.active.remove(k);
        self.u.remove(k);
        for col in k..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        let qn = q - 1;
        for i in k..qn {
            let (c, s) = givens(self.r[(i, i)], self.r[(i + 1, i)]);
            for col in i..qn {
                let a = self.r[(i, col)];
                let b = self.r[(i + 1, col)];
                self.r[(i, col)] = c * a + s * b;
                self.r[(i + 1, col)] = -s * a + c * b;
            }
            self.r[(i + 1, i)] = 0.0;
            rotate_cols(&mut self.j, i, i + 1, c, s);
        }
    }

    fn add(&mut self, p: usize, mut d: Vector, u_plus: f64, is_active: &mut [bool]) {
        let n = d.len();
        let q = self.active.len();
        for jj in (q + 1..n).rev() {
            let (c, s) = givens(d[jj - 1], d[jj]);
            let a = d[jj - 1];
            let b = d[jj];
            d[jj - 1] = c * a + s * b;
            d[jj] = 0.0;
            rotate_cols(&mut self.j, jj - 1, jj, c, s);
        }
        for row in 0..=q {
            self.r[(row, q)] = d[row];
        }
        self.active.push(p);
        self.u.push(u_plus);
        is_active[p] = true;
    }
}

/// Rows `i` with `skip[i]` set never enter the active set.
pub(crate) fn solve(
    j0: &Mat,
    a: &Vector,
    g: &Mat,
    h: &Vector,
    skip: &[bool],
    feas_tol: f64,
    max_iter: usize,
) -> ActiveSetResult {
    let n = a.len();
    let m = g.nrows();
    let mut w = Working { j: j0.clone(), r: Mat::zeros(n, n), active: Vec::new(), u: Vec::new() };
    let mut is_active = vec![false; m];
    let mut v = -(j0 * (j0.transpose() * a));
    let mut iterations = 0;

    let finish = |w: &Working, v: Vector, outcome, iterations, farkas| {
        let mut lambda = Vector::zeros(m);
        for (k, &i) in w.active.iter().enumerate() {
            lambda[i] = w.u[k];
        }
        ActiveSetResult { v, lambda, outcome, iterations, farkas }
    };

    loop {
        let gv = g * &v;
        let mut p = None;
        let mut worst = -feas_tol;
        for i in 0..m {
            if is_active[i] || skip[i] {
                continue;
            }
            let s = h[i] - gv[i];
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return finish(&w, v, Outcome::Optimal, iterations, None);
        };

        let np: Vector = -g.row(p).transpose();
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return finish(&w, v, Outcome::MaxIter, iterations, None);
            }
            let q = w.active.len();
            let d = w.j.transpose() * &np;
            let d2 = d.rows(q, n - q);
            let z = w.j.columns(q, n - q) * d2;
            let rr = back_substitute(&w.r, q, &d.as_slice()[..q]);

            let mut t1 = f64::INFINITY;
            let mut kdrop = None;
            for (k, &rk) in rr.iter().enumerate() {
                if rk > 0.0 {
                    let ratio = w.u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        kdrop = Some(k);
                    }
                }
            }
            let dz = d2.norm_squared();
            let slack = h[p] - g.row(p).dot(&v.transpose());
            let t2 = if dz > (1e-12 * d.norm()).powi(2) && dz > 0.0 { (-slack).max(0.0) / dz } else { f64::INFINITY };

            if t1.is_infinite() && t2.is_infinite() {
                let mut y = Vector::zeros(m);
                y[p] = 1.0;
                for (k, &i) in w.active.iter().enumerate() {
                    y[i] = (-rr[k]).max(0.0);
                }
                return finish(&w, v, Outcome::Infeasible, iterations, Some(y));
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                v += &z * t;
            }
            for (k, rk) in rr.iter().enumerate() {
                w.u[k] -= t * rk;
            }
            u_plus += t;
            if t2 <= t1 {
                w.add(p, d, u_plus, &mut is_active);
                break;
            }
            let k = kdrop.expect("finite t1 has a blocking index");
            w.u[k] = 0.0;
            w.drop_at(k, &mut is_active);
        }
    }
}
