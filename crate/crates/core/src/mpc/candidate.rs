//! The shifted solution of the previous step, used to check recursive feasibility and cost
//! decrease.

use super::layout::{Series, Trajectory};
use super::problem::ParametricQp;
use super::MpcConfig;
use crate::internal_model::MatrixFractionFilter;
use crate::linalg::{Mat, Vector};
use crate::qp::soc::facet_max;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CandidateReport {
    /// Largest equality residual on unit-norm rows.
    pub eq_residual: f64,
    /// Largest inequality violation on unit-norm rows (zero when satisfied).
    pub ineq_violation: f64,
    /// Candidate cost under the current history.
    pub objective: f64,
    /// Previous optimal cost minus its first stage cost.
    pub bound: f64,
    /// Largest mismatch between the candidate's history entries and the measured ones.
    pub pin_mismatch: f64,
}

impl CandidateReport {
    pub fn feasible(&self, tol: f64) -> bool {
        self.eq_residual <= tol && self.ineq_violation <= tol && self.pin_mismatch <= tol
    }

    /// `objective <= bound` up to a relative tolerance.
    pub fn decreases(&self, rel_tol: f64) -> bool {
        self.objective <= self.bound + rel_tol * self.bound.abs().max(1.0)
    }
}

fn shift(s: &Series, next: Vector) -> Series {
    let mut values: Vec<Vector> = s.values[1..].to_vec();
    values.push(next);
    Series { first: s.first, values }
}

/// `-Q0^-1 sum_{i>=1} Q_i e(N+1-i)` over the previous sequence, which makes the shifted
/// sequence satisfy the terminal filter condition.
fn terminal_filtered(g: &MatrixFractionFilter, s: &Series) -> Vector {
    let last = s.last();
    let mut acc = Vector::zeros(g.dim());
    for i in 1..g.numerator.len() {
        acc += &g.numerator[i] * s.get(last + 1 - i as isize);
    }
    -(g.q0_inv() * acc)
}

/// Raw sample at the end of the shifted series: `(1/p0)[M sum Q_i e(N-i) - sum_{i>=1} p_i s(N-i)]`.
fn terminal_raw(g: &MatrixFractionFilter, out: &Mat, e: &Series, s: &Series, p: &[f64]) -> Vector {
    let last = e.last();
    let mut filt = Vector::zeros(g.dim());
    for (i, qi) in g.numerator.iter().enumerate() {
        filt += qi * e.get(last - i as isize);
    }
    let mut acc = out * filt;
    let slast = s.last() + 1;
    for (i, pi) in p.iter().enumerate().skip(1) {
        acc -= s.get(slast - i as isize) * *pi;
    }
    acc / p[0]
}

pub fn shifted_candidate(cfg: &MpcConfig, qp: &ParametricQp, prev: &Trajectory) -> Trajectory {
    let p = &cfg.denominator().coeffs;
    let ex = shift(&prev.ex, terminal_filtered(&cfg.gx, &prev.ex));
    let eu = shift(&prev.eu, terminal_filtered(&cfg.gu, &prev.eu));
    let n = cfg.plant.n();
    let m = cfg.plant.m();
    let mut x = shift(&prev.x, Vector::zeros(n));
    let mut y = shift(&prev.y, Vector::zeros(cfg.plant.p()));
    let mut u = shift(&prev.u, Vector::zeros(m));
    let drop_last = |s: &mut Series| {
        s.values.pop();
    };
    drop_last(&mut x);
    drop_last(&mut y);
    drop_last(&mut u);
    let xn = terminal_raw(&cfg.gx, &Mat::identity(n, n), &ex, &x, p);
    let yn = terminal_raw(&cfg.gx, &cfg.plant.c, &ex, &y, p);
    let un = terminal_raw(&cfg.gu, &Mat::identity(m, m), &eu, &u, p);
    x.values.push(xn);
    y.values.push(yn);
    u.values.push(un);

    let theta = prev.theta.as_ref().map(|th| th.shifted(&cfg.generator, &cfg.generator_a));
    let aux = match &theta {
        Some(th) => {
            let nx = th.theta_x.len();
            let mut v = Vector::zeros(nx + th.theta_u.len());
            v.rows_mut(0, nx).copy_from(&th.theta_x);
            v.rows_mut(nx, th.theta_u.len()).copy_from(&th.theta_u);
            let vals: Vec<f64> = qp
                .soc_groups
                .iter()
                .flat_map(|g| g.pairs.iter().map(|(a, b)| facet_max(a.dot(&v), b.dot(&v), cfg.facets)).collect::<Vec<_>>())
                .collect();
            Vector::from_vec(vals)
        }
        None => prev.aux.clone(),
    };
    Trajectory { ex, eu, x, y, u, theta, aux }
}

fn row_norms(a: &Mat, b: &Mat) -> Vec<f64> {
    (0..a.nrows()).map(|i| (a.row(i).norm_squared() + b.row(i).norm_squared()).sqrt().max(f64::MIN_POSITIVE)).collect()
}

/// Evaluates a candidate against the problem posed with the measured history `h`.
pub fn check_candidate(qp: &ParametricQp, cand: &Trajectory, h: &Vector, xf: Option<&Vector>, bound: f64) -> CandidateReport {
    let l = &qp.layout;
    let (v, hc) = l.split(&l.encode(cand));
    let pin_mismatch = (&hc - h).amax();
    let r = qp.rhs(h, xf);
    let req = &qp.aeq_f * &v - &r.beq;
    let eq_residual = row_norms(&qp.aeq_f, &qp.aeq_p)
        .iter()
        .zip(req.iter())
        .map(|(n, r)| r.abs() / n)
        .fold(0.0, f64::max);
    let rin = &qp.aineq_f * &v - &r.bineq;
    let ineq_violation = row_norms(&qp.aineq_f, &qp.aineq_p)
        .iter()
        .zip(rin.iter())
        .map(|(n, r)| r.max(0.0) / n)
        .fold(0.0, f64::max);
    let objective = 0.5 * v.dot(&(&qp.h_ff * &v)) + r.f.dot(&v) + r.constant;
    CandidateReport { eq_residual, ineq_violation, objective, bound, pin_mismatch }
}
