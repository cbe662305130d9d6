//! Condensed velocity-form LQ controller, used as an independent reference for the step
//! disturbance case.
//!
//! Decision variables `du(0..=N)`, with `dx(k+1) = A dx(k) + B du(k)`, `y(k) = y(0) + C sum_{i=1}^k dx(i)`
//! and cost `sum_{k=0}^N |dx(k)|^2_Q + |du(k)|^2_R + |y(k)|^2_Qy`.

use crate::error::{ImmpcError, Result};
use crate::linalg::{mat_pow, Mat, Vector};
use crate::model::DiscreteLti;

#[derive(Debug, Clone)]
pub struct VelocityMpc {
    /// `du(0) = -(kx dx(0) + ky y(0))`.
    pub kx: Mat,
    pub ky: Mat,
    prev_x: Option<Vector>,
    prev_u: Vector,
}

impl VelocityMpc {
    pub fn new(plant: &DiscreteLti, q: &Mat, r: &Mat, qy: &Mat, horizon: usize) -> Result<Self> {
        let (n, m, p) = (plant.n(), plant.m(), plant.p());
        let steps = horizon + 1;
        // dx stack over k = 0..=N
        let mut phi = Mat::zeros(n * steps, n);
        let mut gam = Mat::zeros(n * steps, m * steps);
        for k in 0..steps {
            phi.view_mut((k * n, 0), (n, n)).copy_from(&mat_pow(&plant.a, k));
            for j in 0..k {
                let blk = mat_pow(&plant.a, k - 1 - j) * &plant.b;
                gam.view_mut((k * n, j * m), (n, m)).copy_from(&blk);
            }
        }
        // y stack: y(k) = y0 + C sum_{i=1}^k dx(i)
        let mut psi = Mat::zeros(p * steps, n);
        let mut lam = Mat::zeros(p * steps, m * steps);
        let mut ey = Mat::zeros(p * steps, p);
        for k in 0..steps {
            ey.view_mut((k * p, 0), (p, p)).fill_with_identity();
            for i in 1..=k {
                let cphi = &plant.c * phi.view((i * n, 0), (n, n));
                let cg = &plant.c * gam.view((i * n, 0), (n, m * steps));
                let mut vp = psi.view_mut((k * p, 0), (p, n));
                vp += cphi;
                let mut vl = lam.view_mut((k * p, 0), (p, m * steps));
                vl += cg;
            }
        }
        let qb = crate::linalg::blkdiag_repeat(q, steps);
        let rb = crate::linalg::blkdiag_repeat(r, steps);
        let qyb = crate::linalg::blkdiag_repeat(qy, steps);
        let hess = gam.transpose() * &qb * &gam + &rb + lam.transpose() * &qyb * &lam;
        let chol = hess.cholesky().ok_or_else(|| ImmpcError::Singular("velocity-form Hessian".into()))?;
        let gx = chol.solve(&(gam.transpose() * &qb * &phi + lam.transpose() * &qyb * &psi));
        let gy = chol.solve(&(lam.transpose() * &qyb * &ey));
        Ok(Self { kx: gx.rows(0, m).into_owned(), ky: gy.rows(0, m).into_owned(), prev_x: None, prev_u: Vector::zeros(m) })
    }

    /// Input for the measurement `(x(t), y(t))`; the first call assumes `x(-1) = x(0)`, `u(-1) = 0`.
    pub fn control(&mut self, x: &Vector, y: &Vector) -> Vector {
        let dx = match &self.prev_x {
            Some(px) => x - px,
            None => Vector::zeros(x.len()),
        };
        let u = &self.prev_u - (&self.kx * dx + &self.ky * y);
        self.prev_x = Some(x.clone());
        self.prev_u = u.clone();
        u
    }
}
