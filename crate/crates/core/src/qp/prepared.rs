//! QP factorization that depends only on `(H, Aeq, Aineq)`, reusable across right-hand sides.

use super::active_set::{self, Outcome, NORM_EPS};
use super::{kkt_residuals, InfeasibilityCertificate, KktResiduals, QpSolution, QpStatus};
use crate::error::{dim_err, ImmpcError, Result};
use crate::linalg::{symmetrize, Mat, Vector};

/// Rows whose component orthogonal to the already selected rows is shorter than this
/// (rows are unit-norm) are treated as linearly dependent.
const INDEPENDENCE_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-8;
const REG: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PreparedQp {
    h: Mat,
    aeq: Mat,
    aineq: Mat,
    eq_scale: Vec<f64>,
    ineq_scale: Vec<f64>,
    aineq_s: Mat,
    indep: Vec<usize>,
    /// Dependent rows with coefficients against `indep`.
    dependent: Vec<(usize, Vector)>,
    zero_eq: Vec<usize>,
    y: Mat,
    r: Mat,
    z: Mat,
    hz: Mat,
    j0: Mat,
    gr: Mat,
    constant_row: Vec<bool>,
    regularization: f64,
    pub max_iter: usize,
}

fn scales(a: &Mat) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| {
            let n = a.row(i).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

fn scale_rows(a: &Mat, s: &[f64]) -> Mat {
    let mut out = a.clone();
    for (i, si) in s.iter().enumerate() {
        out.row_mut(i).scale_mut(*si);
    }
    out
}

fn lower_solve_transposed(r: &Mat, rhs: &Vector) -> Vector {
    // R' z = rhs with R upper triangular
    let k = r.nrows();
    let mut z = Vector::zeros(k);
    for i in 0..k {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= r[(j, i)] * z[j];
        }
        z[i] = acc / r[(i, i)];
    }
    z
}

fn upper_solve(r: &Mat, rhs: &Vector) -> Vector {
    let k = r.nrows();
    let mut z = Vector::zeros(k);
    for i in (0..k).rev() {
        let mut acc = rhs[i];
        for j in i + 1..k {
            acc -= r[(i, j)] * z[j];
        }
        z[i] = acc / r[(i, i)];
    }
    z
}

impl PreparedQp {
    pub fn new(h: &Mat, aeq: &Mat, aineq: &Mat) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d || aeq.ncols() != d || aineq.ncols() != d {
            return dim_err(format!("H {:?}, Aeq {:?}, Aineq {:?}", h.shape(), aeq.shape(), aineq.shape()));
        }
        let h = symmetrize(h);
        let eq_scale = scales(aeq);
        let ineq_scale = scales(aineq);
        let aeq_s = scale_rows(aeq, &eq_scale);
        let aineq_s = scale_rows(aineq, &ineq_scale);

        // Ordered row selection by modified Gram-Schmidt with one reorthogonalization pass.
        let mut basis: Vec<Vector> = Vec::new();
        let mut rcols: Vec<Vec<f64>> = Vec::new();
        let mut indep = Vec::new();
        let mut dependent_raw: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut zero_eq = Vec::new();
        for i in 0..aeq_s.nrows() {
            if eq_scale[i] == 0.0 {
                zero_eq.push(i);
                continue;
            }
            let mut v: Vector = aeq_s.row(i).transpose();
            let mut coef = vec![0.0; basis.len()];
            for _ in 0..2 {
                for (k, b) in basis.iter().enumerate() {
                    let c = b.dot(&v);
                    v.axpy(-c, b, 1.0);
                    coef[k] += c;
                }
            }
            let nv = v.norm();
            if nv > INDEPENDENCE_TOL {
                coef.push(nv);
                basis.push(v / nv);
                rcols.push(coef);
                indep.push(i);
            } else {
                dependent_raw.push((i, coef));
            }
        }
        let rk = basis.len();
        let y = if rk > 0 { Mat::from_columns(&basis) } else { Mat::zeros(d, 0) };
        let mut r = Mat::zeros(rk, rk);
        for (col, c) in rcols.iter().enumerate() {
            for (row, val) in c.iter().enumerate() {
                r[(row, col)] = *val;
            }
        }
        let dependent = dependent_raw
            .into_iter()
            .map(|(i, coef)| {
                let mut c = Vector::from_vec(coef);
                c.resize_vertically_mut(rk, 0.0);
                (i, upper_solve(&r, &c))
            })
            .collect();

        let z = if rk == 0 {
            Mat::identity(d, d)
        } else if rk == d {
            Mat::zeros(d, 0)
        } else {
            let mut aug = Mat::zeros(d, rk + d);
            aug.view_mut((0, 0), (d, rk)).copy_from(&y);
            aug.view_mut((0, rk), (d, d)).fill_with_identity();
            let q = aug.qr().q();
            q.columns(rk, d - rk).into_owned()
        };

        let hz = &h * &z;
        let hr = symmetrize(&(z.transpose() * &hz));
        let nr = hr.nrows();
        let mut regularization = 0.0;
        if nr > 0 {
            let lmin = hr.clone().symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
            let scale = hr.amax().max(1.0);
            if lmin < -1e-9 * scale {
                return Err(ImmpcError::Solver(format!("reduced Hessian indefinite (min eigenvalue {lmin:e})")));
            }
            if lmin < 1e-8 {
                regularization = REG + (-lmin).max(0.0);
            }
        }
        let hreg = &hr + Mat::identity(nr, nr) * regularization;
        let chol = hreg
            .cholesky()
            .ok_or_else(|| ImmpcError::Solver("reduced Hessian factorization failed".into()))?;
        let lt = chol.l().transpose();
        let j0 = lt
            .solve_upper_triangular(&Mat::identity(nr, nr))
            .ok_or_else(|| ImmpcError::Solver("singular Cholesky factor".into()))?;

        let gr = &aineq_s * &z;
        let constant_row = (0..gr.nrows()).map(|i| gr.row(i).norm() <= NORM_EPS).collect();
        let max_iter = 20 * (nr + aineq.nrows()) + 100;
        Ok(Self {
            h,
            aeq: aeq.clone(),
            aineq: aineq.clone(),
            eq_scale,
            ineq_scale,
            aineq_s,
            indep,
            dependent,
            zero_eq,
            y,
            r,
            z,
            hz,
            j0,
            gr,
            constant_row,
            regularization,
            max_iter,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_eq(&self) -> usize {
        self.aeq.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.aineq.nrows()
    }

    /// Number of linearly independent equality rows.
    pub fn eq_rank(&self) -> usize {
        self.indep.len()
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn h(&self) -> &Mat {
        &self.h
    }

    pub fn aeq(&self) -> &Mat {
        &self.aeq
    }

    pub fn aineq(&self) -> &Mat {
        &self.aineq
    }

    fn failure(&self, status: QpStatus, x: Vector) -> QpSolution {
        QpSolution {
            x,
            objective: f64::NAN,
            status,
            kkt: KktResiduals::default(),
            lambda_eq: Vector::zeros(self.n_eq()),
            lambda_ineq: Vector::zeros(self.n_ineq()),
            iterations: 0,
            certificate: None,
        }
    }

    fn infeasible(&self, y_eq_s: Vector, y_ineq_s: Vector, iterations: usize) -> QpSolution {
        let unscale = |y: Vector, s: &[f64]| {
            Vector::from_iterator(y.len(), y.iter().zip(s).map(|(v, sc)| if *sc > 0.0 { v * sc } else { *v }))
        };
        let mut sol = self.failure(QpStatus::Infeasible, Vector::zeros(self.dim()));
        sol.iterations = iterations;
        sol.certificate = Some(InfeasibilityCertificate {
            y_eq: unscale(y_eq_s, &self.eq_scale),
            y_ineq: unscale(y_ineq_s, &self.ineq_scale),
        });
        sol
    }

    /// Equality multipliers (scaled rows) that cancel `Aineq_s' y` against `indep` rows.
    fn eq_combination(&self, v: &Vector) -> Vector {
        let c = upper_solve(&self.r, &(self.y.transpose() * v));
        let mut out = Vector::zeros(self.n_eq());
        for (k, &i) in self.indep.iter().enumerate() {
            out[i] = c[k];
        }
        out
    }

    pub fn solve(&self, f: &Vector, beq: &Vector, bineq: &Vector) -> QpSolution {
        let d = self.dim();
        if f.len() != d || beq.len() != self.n_eq() || bineq.len() != self.n_ineq() {
            return self.failure(QpStatus::NumericalFailure, Vector::zeros(d));
        }
        let beq_s = Vector::from_iterator(beq.len(), beq.iter().zip(&self.eq_scale).map(|(b, s)| b * s));
        let bineq_s = Vector::from_iterator(
            bineq.len(),
            bineq.iter().zip(&self.ineq_scale).map(|(b, s)| if *s > 0.0 { b * s } else { *b }),
        );

        for &i in &self.zero_eq {
            if beq[i].abs() > CONSISTENCY_TOL {
                let mut y = Vector::zeros(self.n_eq());
                y[i] = -beq[i].signum();
                return self.infeasible(y, Vector::zeros(self.n_ineq()), 0);
            }
        }
        let b_indep = Vector::from_iterator(self.indep.len(), self.indep.iter().map(|&i| beq_s[i]));
        for (i, c) in &self.dependent {
            let rho = beq_s[*i] - c.dot(&b_indep);
            if rho.abs() > CONSISTENCY_TOL * (1.0 + beq_s[*i].abs()) {
                let sign = -rho.signum();
                let mut y = Vector::zeros(self.n_eq());
                y[*i] = sign;
                for (k, &j) in self.indep.iter().enumerate() {
                    y[j] -= sign * c[k];
                }
                return self.infeasible(y, Vector::zeros(self.n_ineq()), 0);
            }
        }
        for i in 0..self.n_ineq() {
            if self.ineq_scale[i] == 0.0 && bineq[i] < -FEAS_TOL {
                let mut y = Vector::zeros(self.n_ineq());
                y[i] = 1.0;
                return self.infeasible(Vector::zeros(self.n_eq()), y, 0);
            }
        }

        let xp = &self.y * lower_solve_transposed(&self.r, &b_indep);
        let fr = self.hz.transpose() * &xp + self.z.transpose() * f;
        let hr_rhs = &bineq_s - &self.aineq_s * &xp;
        let skip: Vec<bool> =
            (0..self.n_ineq()).map(|i| self.ineq_scale[i] == 0.0 || self.constant_row[i]).collect();
        for i in 0..self.n_ineq() {
            if self.ineq_scale[i] > 0.0 && self.constant_row[i] && hr_rhs[i] < -FEAS_TOL {
                let mut y = Vector::zeros(self.n_ineq());
                y[i] = 1.0;
                let y_eq = -self.eq_combination(&(self.aineq_s.transpose() * &y));
                return self.infeasible(y_eq, y, 0);
            }
        }

        let res = active_set::solve(&self.j0, &fr, &self.gr, &hr_rhs, &skip, FEAS_TOL, self.max_iter);
        let x = &xp + &self.z * &res.v;
        match res.outcome {
            Outcome::Infeasible => {
                let y = res.farkas.expect("infeasible outcome carries weights");
                let y_eq = -self.eq_combination(&(self.aineq_s.transpose() * &y));
                return self.infeasible(y_eq, y, res.iterations);
            }
            Outcome::MaxIter => {
                let mut sol = self.failure(QpStatus::MaxIter, x);
                sol.iterations = res.iterations;
                return sol;
            }
            Outcome::Optimal => {}
        }

        let lambda_s = res.lambda;
        let hx = &self.h * &x;
        let grad = &hx + f + self.aineq_s.transpose() * &lambda_s;
        let mu_s = -self.eq_combination(&grad);
        let lambda_eq =
            Vector::from_iterator(mu_s.len(), mu_s.iter().zip(&self.eq_scale).map(|(m, s)| m * s));
        let lambda_ineq =
            Vector::from_iterator(lambda_s.len(), lambda_s.iter().zip(&self.ineq_scale).map(|(l, s)| l * s));
        let kkt = kkt_residuals(&self.h, f, &self.aeq, beq, &self.aineq, bineq, &x, &lambda_eq, &lambda_ineq);
        let objective = 0.5 * x.dot(&hx) + f.dot(&x);
        QpSolution {
            x,
            objective,
            status: QpStatus::Optimal,
            kkt,
            lambda_eq,
            lambda_ineq,
            iterations: res.iterations,
            certificate: None,
        }
    }
}
