//! Dense convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' H x + f' x + constant
//!     subject to  Aeq x  = beq
//!                 Aineq x <= bineq
//! ```
//!
//! Equality rows are eliminated through an orthonormal null-space basis (redundant rows are
//! dropped first), and the reduced inequality problem is handed to a dual active-set method.
//! Every returned optimum carries KKT residuals recomputed from the raw problem data with
//! all constraint rows scaled to unit norm.

mod active_set;
mod prepared;
pub mod soc;

use std::io::Write;

use crate::error::{dim_err, Result};
use crate::linalg::{symmetrize, Mat, Vector};

pub use prepared::PreparedQp;
pub use soc::{soc_rows, SocRow, SocRows};

/// KKT tolerance that an `Optimal` status guarantees.
pub const KKT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Mat,
    pub f: Vector,
    pub aeq: Mat,
    pub beq: Vector,
    pub aineq: Mat,
    pub bineq: Vector,
    pub constant: f64,
    /// Optional variable names for diagnostics and dumps.
    pub names: Vec<String>,
}

impl QpProblem {
    /// Unconstrained problem; `H` is symmetrized.
    pub fn new(h: Mat, f: Vector) -> Result<Self> {
        let d = f.len();
        if h.shape() != (d, d) {
            return dim_err(format!("H is {:?}, f has {d} entries", h.shape()));
        }
        Ok(Self {
            h: symmetrize(&h),
            f,
            aeq: Mat::zeros(0, d),
            beq: Vector::zeros(0),
            aineq: Mat::zeros(0, d),
            bineq: Vector::zeros(0),
            constant: 0.0,
            names: Vec::new(),
        })
    }

    pub fn with_equalities(mut self, a: Mat, b: Vector) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return dim_err(format!("Aeq {:?} / beq {} vs d = {}", a.shape(), b.len(), self.dim()));
        }
        self.aeq = a;
        self.beq = b;
        Ok(self)
    }

    pub fn with_inequalities(mut self, a: Mat, b: Vector) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return dim_err(format!("Aineq {:?} / bineq {} vs d = {}", a.shape(), b.len(), self.dim()));
        }
        self.aineq = a;
        self.bineq = b;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x) + self.constant
    }

    /// Plain-text dump: a header line, the dimensions, then each block as rows of
    /// space-separated values in row-major order (17 significant digits).
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# immpc qp dump v1: minimize 1/2 x'Hx + f'x s.t. Aeq x = beq, Aineq x <= bineq")?;
        writeln!(w, "dims {} {} {}", self.dim(), self.beq.len(), self.bineq.len())?;
        writeln!(w, "constant {:.16e}", self.constant)?;
        if !self.names.is_empty() {
            writeln!(w, "names {}", self.names.join(" "))?;
        }
        let mut block = |name: &str, m: &Mat| -> std::io::Result<()> {
            writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        block("H", &self.h)?;
        block("f", &Mat::from_column_slice(1, self.f.len(), self.f.as_slice()))?;
        block("Aeq", &self.aeq)?;
        block("beq", &Mat::from_column_slice(1, self.beq.len(), self.beq.as_slice()))?;
        block("Aineq", &self.aineq)?;
        block("bineq", &Mat::from_column_slice(1, self.bineq.len(), self.bineq.as_slice()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    /// Reduced Hessian indefinite or a factorization broke down.
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub complementarity: f64,
    /// Most negative inequality multiplier, as a positive number.
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

/// Farkas-type proof of infeasibility: `Aeq' y_eq + Aineq' y_ineq = 0` with `y_ineq >= 0` and
/// `beq' y_eq + bineq' y_ineq < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub y_eq: Vector,
    pub y_ineq: Vector,
}

impl InfeasibilityCertificate {
    /// `(max |Aeq' y_eq + Aineq' y_ineq|, beq' y_eq + bineq' y_ineq)` on unit-scaled rows, with
    /// `y` normalized to unit infinity norm.
    pub fn check(&self, aeq: &Mat, beq: &Vector, aineq: &Mat, bineq: &Vector) -> (f64, f64) {
        let (ye, yi) = scaled_duals(aeq, &self.y_eq, aineq, &self.y_ineq);
        let norm = ye.amax().max(yi.amax()).max(f64::MIN_POSITIVE);
        let (ae, be) = unit_rows(aeq, beq);
        let (ai, bi) = unit_rows(aineq, bineq);
        let comb = ae.transpose() * &ye + ai.transpose() * &yi;
        ((comb / norm).amax(), (be.dot(&ye) + bi.dot(&yi)) / norm)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub lambda_eq: Vector,
    pub lambda_ineq: Vector,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

pub fn solve_qp(p: &QpProblem) -> QpSolution {
    match PreparedQp::new(&p.h, &p.aeq, &p.aineq) {
        Ok(prep) => {
            let mut sol = prep.solve(&p.f, &p.beq, &p.bineq);
            sol.objective += p.constant;
            sol
        }
        Err(_) => QpSolution {
            x: Vector::zeros(p.dim()),
            objective: f64::NAN,
            status: QpStatus::NumericalFailure,
            kkt: KktResiduals::default(),
            lambda_eq: Vector::zeros(p.beq.len()),
            lambda_ineq: Vector::zeros(p.bineq.len()),
            iterations: 0,
            certificate: None,
        },
    }
}

fn row_norms(a: &Mat) -> Vec<f64> {
    (0..a.nrows()).map(|i| a.row(i).norm()).collect()
}

/// Rows scaled to unit Euclidean norm; zero rows are left unchanged.
pub(crate) fn unit_rows(a: &Mat, b: &Vector) -> (Mat, Vector) {
    let mut a = a.clone();
    let mut b = b.clone();
    for (i, nrm) in row_norms(&a).into_iter().enumerate() {
        if nrm > 0.0 {
            a.row_mut(i).scale_mut(1.0 / nrm);
            b[i] /= nrm;
        }
    }
    (a, b)
}

/// Multipliers expressed against unit-norm rows.
fn scaled_duals(aeq: &Mat, leq: &Vector, aineq: &Mat, lineq: &Vector) -> (Vector, Vector) {
    let se = row_norms(aeq);
    let si = row_norms(aineq);
    (
        Vector::from_iterator(leq.len(), leq.iter().zip(&se).map(|(l, s)| l * s)),
        Vector::from_iterator(lineq.len(), lineq.iter().zip(&si).map(|(l, s)| l * s)),
    )
}

/// KKT residuals of `(x, lambda_eq, lambda_ineq)` computed from raw problem data, every
/// constraint row rescaled to unit norm (multipliers rescaled accordingly).
pub fn kkt_residuals(
    h: &Mat,
    f: &Vector,
    aeq: &Mat,
    beq: &Vector,
    aineq: &Mat,
    bineq: &Vector,
    x: &Vector,
    lambda_eq: &Vector,
    lambda_ineq: &Vector,
) -> KktResiduals {
    let grad = h * x + f + aeq.transpose() * lambda_eq + aineq.transpose() * lambda_ineq;
    let (ae, be) = unit_rows(aeq, beq);
    let (ai, bi) = unit_rows(aineq, bineq);
    let (_, li) = scaled_duals(aeq, lambda_eq, aineq, lambda_ineq);
    let eq_res = &ae * x - &be;
    let slack = &ai * x - &bi;
    let primal_ineq = slack.iter().cloned().fold(0.0, f64::max);
    let complementarity = slack.iter().zip(li.iter()).map(|(s, l)| (s * l).abs()).fold(0.0, f64::max);
    let dual_sign = li.iter().map(|l| -l).fold(0.0, f64::max);
    KktResiduals {
        stationarity: grad.amax(),
        primal_eq: if eq_res.is_empty() { 0.0 } else { eq_res.amax() },
        primal_ineq,
        complementarity,
        dual_sign,
    }
}

/// Residuals of a given solution against a problem.
pub fn check_solution(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    kkt_residuals(&p.h, &p.f, &p.aeq, &p.beq, &p.aineq, &p.bineq, &s.x, &s.lambda_eq, &s.lambda_ineq)
}
