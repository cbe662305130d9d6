//! Terminal ingredients: block-companion realizations of the filter numerators, discrete
//! Lyapunov solutions for the terminal cost, and the diagonal reference weight `P_a`.

use crate::error::{ImmpcError, Result};
use crate::internal_model::{MatrixFractionFilter, SignalGenerator};
use crate::linalg::{blkdiag_repeat, kron, max_abs, min_sym_eigenvalue, spectral_radius, symmetrize, Mat};

/// Block-companion matrix of `sum_{i=0}^{n_d} Q_i e(t-i) = 0` with state
/// `(e(t), e(t-1), ..., e(t-n_d+1))`.
pub fn companion_realization(q: &[Mat]) -> Result<Mat> {
    let Some(q0) = q.first() else {
        return Err(ImmpcError::InvalidArgument("empty numerator".into()));
    };
    let q0_inv = q0.clone().try_inverse().ok_or_else(|| ImmpcError::Singular("Q0".into()))?;
    Ok(companion_from_parts(&q0_inv, q))
}

pub(crate) fn companion_from_parts(q0_inv: &Mat, q: &[Mat]) -> Mat {
    let nd = q.len() - 1;
    let d = q0_inv.nrows();
    let mut a = Mat::zeros(d * nd, d * nd);
    for i in 1..=nd {
        let blk = -(q0_inv * &q[i]);
        a.view_mut((0, (i - 1) * d), (d, d)).copy_from(&blk);
    }
    for i in 1..nd {
        a.view_mut((i * d, (i - 1) * d), (d, d)).copy_from(&Mat::identity(d, d));
    }
    a
}

/// Solves `A' P A - P + Q + eps I = 0` through the Kronecker form, with two rounds of
/// iterative refinement.
pub fn dlyap(a: &Mat, q: &Mat, eps: f64) -> Result<Mat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(ImmpcError::Dimension(format!("dlyap: A {:?}, Q {:?}", a.shape(), q.shape())));
    }
    if eps < 0.0 {
        return Err(ImmpcError::InvalidArgument("eps must be nonnegative".into()));
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(ImmpcError::NotSchur(rho));
    }
    let at = a.transpose();
    let k = kron(&at, &at) - Mat::identity(n * n, n * n);
    let rhs_m = -(q + Mat::identity(n, n) * eps);
    let rhs = nalgebra::DVector::from_column_slice(rhs_m.as_slice());
    let lu = k.clone().lu();
    let mut x = lu.solve(&rhs).ok_or_else(|| ImmpcError::Singular("Lyapunov operator".into()))?;
    for _ in 0..2 {
        let r = &rhs - &k * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let p = Mat::from_column_slice(n, n, x.as_slice());
    Ok(symmetrize(&p))
}

/// `max |A' P A - P + Q + eps I|`.
pub fn lyapunov_residual(a: &Mat, p: &Mat, q: &Mat, eps: f64) -> f64 {
    let n = a.nrows();
    max_abs(&(a.transpose() * p * a - p + q + Mat::identity(n, n) * eps))
}

/// Terminal cost matrices; empty when the corresponding numerator has degree zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub px: Mat,
    pub pu: Mat,
    pub eps_x: f64,
    pub eps_u: f64,
}

impl TerminalCost {
    /// Builds `P_x`, `P_u` from the filter numerators and stage weights. Slack defaults to
    /// `1e-6 * max|blkdiag(Q)|`.
    pub fn design(gx: &MatrixFractionFilter, gu: &MatrixFractionFilter, q: &Mat, r: &Mat) -> Result<Self> {
        let (px, eps_x) = terminal_block(gx, q)?;
        let (pu, eps_u) = terminal_block(gu, r)?;
        Ok(Self { px, pu, eps_x, eps_u })
    }

    pub fn is_empty(&self) -> bool {
        self.px.nrows() == 0 && self.pu.nrows() == 0
    }
}

fn terminal_block(f: &MatrixFractionFilter, w: &Mat) -> Result<(Mat, f64)> {
    let nd = f.nd();
    if nd == 0 {
        return Ok((Mat::zeros(0, 0), 0.0));
    }
    let ae = companion_realization(&f.numerator)?;
    let qblk = blkdiag_repeat(w, nd);
    let eps = 1e-6 * max_abs(&qblk).max(f64::MIN_POSITIVE);
    let p = dlyap(&ae, &qblk, eps)?;
    if min_sym_eigenvalue(&p) <= 0.0 {
        return Err(ImmpcError::Solver("terminal matrix not positive definite".into()));
    }
    Ok((p, eps))
}

/// Diagonal `P_a` for `blkdiag_p(S_a)`. `weights` has one entry per diagonal element
/// (`p` blocks of size `q_a`); the two entries of every rotation pair must agree.
pub fn build_pa(gen_a: &SignalGenerator, p: usize, weights: &[f64]) -> Result<Mat> {
    let qa = gen_a.q();
    if weights.len() != p * qa {
        return Err(ImmpcError::Dimension(format!(
            "P_a needs {} weights, got {}",
            p * qa,
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(ImmpcError::InvalidArgument("P_a weights must be positive".into()));
    }
    for blk in 0..p {
        for j in 0..gen_a.n_freq() {
            let k = blk * qa + gen_a.pair_offset(j);
            if weights[k] != weights[k + 1] {
                return Err(ImmpcError::InvalidArgument(format!(
                    "unequal weights {} and {} inside rotation pair",
                    weights[k],
                    weights[k + 1]
                )));
            }
        }
    }
    Ok(Mat::from_diagonal(&nalgebra::DVector::from_row_slice(weights)))
}

/// `P_a = weight * I`.
pub fn build_pa_uniform(gen_a: &SignalGenerator, p: usize, weight: f64) -> Result<Mat> {
    build_pa(gen_a, p, &vec![weight; p * gen_a.q()])
}
