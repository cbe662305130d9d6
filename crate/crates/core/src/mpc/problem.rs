//! Parametric QPs in the history vector `h`.
//!
//! Matrices are assembled once over the combined vector `[free; pinned]` and split by
//! columns, so a step only evaluates right-hand sides:
//!
//! ```text
//!     f(h)     = H_fp h
//!     beq(h)   = -Aeq_p h
//!     bineq(h) = bineq0 - Aineq_p h - L x_f
//!     const(h) = 1/2 h' H_pp h
//! ```
//!
//! where `x_f` is the low-pass filtered state (only present when the low-pass option is on).

use super::layout::Layout;
use super::{Formulation, MpcConfig};
use crate::error::Result;
use crate::linalg::{blkdiag_repeat, Mat, Vector};
use crate::qp::{soc_rows, PreparedQp, QpProblem, SocRow};
use crate::regulation::admissible_rows;

#[derive(Debug, Clone)]
pub struct ParametricQp {
    pub layout: Layout,
    pub h_ff: Mat,
    pub h_fp: Mat,
    pub h_pp: Mat,
    pub aeq_f: Mat,
    pub aeq_p: Mat,
    pub aineq_f: Mat,
    pub aineq_p: Mat,
    pub bineq0: Vector,
    pub lowpass: Mat,
    /// Inequality rows eligible for softening (pure state rows of the stage constraints).
    pub state_rows: Vec<bool>,
    /// Norm-bound rows over `(theta_x, theta_u)` in local coordinates.
    pub soc_groups: Vec<SocRow>,
    /// Extra free variables appended after the layout (the fallback slack).
    pub n_extra: usize,
}

#[derive(Debug, Clone)]
pub struct QpRhs {
    pub f: Vector,
    pub beq: Vector,
    pub bineq: Vector,
    pub constant: f64,
}

struct Builder {
    dim: usize,
    eq: Vec<Mat>,
    ineq: Vec<(Mat, Vector, Mat, bool)>,
    h: Mat,
}

fn put(b: &mut Mat, col: usize, m: &Mat) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            b[(i, col + j)] += m[(i, j)];
        }
    }
}

impl Builder {
    fn new(dim: usize) -> Self {
        Self { dim, eq: Vec::new(), ineq: Vec::new(), h: Mat::zeros(dim, dim) }
    }

    fn block(&self, rows: usize) -> Mat {
        Mat::zeros(rows, self.dim)
    }

    /// Adds `2 * L' W L` to the Hessian, so the cost carries `|L z|^2_W`.
    fn cost(&mut self, l: &Mat, w: &Mat) {
        self.h += l.transpose() * (w * 2.0) * l;
    }

    fn cost_at(&mut self, col: usize, w: &Mat) {
        let mut l = Mat::zeros(w.nrows(), self.dim);
        put(&mut l, col, &Mat::identity(w.nrows(), w.nrows()));
        self.cost(&l, w);
    }
}

impl ParametricQp {
    pub fn build(cfg: &MpcConfig) -> Result<Self> {
        let l = cfg.layout();
        let big_n = cfg.horizon as isize;
        let (n, m, p) = (cfg.plant.n(), cfg.plant.m(), cfg.plant.p());
        let (a, b, c) = (&cfg.plant.a, &cfg.plant.b, &cfg.plant.c);
        let qx = &cfg.gx.numerator;
        let qu = &cfg.gu.numerator;
        let pc = &cfg.denominator().coeffs;
        let mut bd = Builder::new(l.dim());

        // prediction recursions
        for k in 1..=big_n {
            let mut blk = bd.block(n);
            for (i, qi) in qx.iter().enumerate() {
                let i = i as isize;
                put(&mut blk, l.ex(k - i), qi);
                put(&mut blk, l.ex(k - 1 - i), &-(a * qi));
            }
            for (i, qi) in qu.iter().enumerate() {
                put(&mut blk, l.eu(k - 1 - i as isize), &-(b * qi));
            }
            bd.eq.push(blk);

            let mut blk = bd.block(p);
            for (i, pi) in pc.iter().enumerate() {
                put(&mut blk, l.y(k - i as isize), &(Mat::identity(p, p) * *pi));
            }
            for (i, qi) in qx.iter().enumerate() {
                put(&mut blk, l.ex(k - i as isize), &-(c * qi));
            }
            bd.eq.push(blk);

            let mut blk = bd.block(n);
            for (i, pi) in pc.iter().enumerate() {
                put(&mut blk, l.x(k - i as isize), &(Mat::identity(n, n) * *pi));
            }
            for (i, qi) in qx.iter().enumerate() {
                put(&mut blk, l.ex(k - i as isize), &-qi);
            }
            bd.eq.push(blk);
        }
        for k in 0..=big_n {
            let mut blk = bd.block(m);
            for (i, pi) in pc.iter().enumerate() {
                put(&mut blk, l.u(k - i as isize), &(Mat::identity(m, m) * *pi));
            }
            for (i, qi) in qu.iter().enumerate() {
                put(&mut blk, l.eu(k - i as isize), &-qi);
            }
            bd.eq.push(blk);
        }

        // stage constraints
        let poly = &cfg.constraints;
        for k in 0..=big_n {
            let mut blk = bd.block(poly.n_rows());
            let mut lp = Mat::zeros(poly.n_rows(), n);
            match cfg.lowpass_alpha {
                Some(alpha) => {
                    for j in 0..k {
                        let w = alpha * (1.0 - alpha).powi((k - 1 - j) as i32);
                        put(&mut blk, l.x(j), &(&poly.cbar * w));
                    }
                    lp = &poly.cbar * (1.0 - alpha).powi(k as i32);
                }
                None => put(&mut blk, l.x(k), &poly.cbar),
            }
            put(&mut blk, l.u(k), &poly.dbar);
            for i in 0..poly.n_rows() {
                bd.ineq.push((
                    blk.rows(i, 1).into_owned(),
                    Vector::from_element(1, poly.rhs[i]),
                    lp.rows(i, 1).into_owned(),
                    poly.is_state_row(i),
                ));
            }
        }

        let mut soc_groups = Vec::new();
        match cfg.formulation {
            Formulation::Basic => {
                for k in 0..=big_n {
                    bd.cost_at(l.ex(k), &cfg.q);
                    bd.cost_at(l.eu(k), &cfg.r);
                    bd.cost_at(l.y(k), &cfg.qy);
                }
            }
            Formulation::ArtificialReference => {
                let (gen, gen_a) = (&cfg.generator, &cfg.generator_a);
                let (nx, nu) = (n * gen.q(), m * gen.q());
                // terminal pins on the reference trajectories
                let first = (big_n + 1 - cfg.nn() as isize).max(0);
                for k in first..=big_n {
                    let ku = k as usize;
                    let mut blk = bd.block(n);
                    put(&mut blk, l.x(k), &Mat::identity(n, n));
                    put(&mut blk, l.theta_x(), &-blkdiag_repeat(&gen.output_row(ku), n));
                    bd.eq.push(blk);
                    let mut blk = bd.block(m);
                    put(&mut blk, l.u(k), &Mat::identity(m, m));
                    put(&mut blk, l.theta_u(), &-blkdiag_repeat(&gen.output_row(ku), m));
                    bd.eq.push(blk);
                    let mut blk = bd.block(p);
                    put(&mut blk, l.y(k), &Mat::identity(p, p));
                    put(&mut blk, l.theta_y(), &-blkdiag_repeat(&gen_a.output_row(ku), p));
                    bd.eq.push(blk);
                }
                // terminal filter conditions
                let mut blk = bd.block(n);
                for (i, qi) in qx.iter().enumerate() {
                    put(&mut blk, l.ex(big_n - i as isize), qi);
                }
                bd.eq.push(blk);
                let mut blk = bd.block(m);
                for (i, qi) in qu.iter().enumerate() {
                    put(&mut blk, l.eu(big_n - i as isize), qi);
                }
                bd.eq.push(blk);

                // admissible references
                soc_groups = admissible_rows(gen, poly, &cfg.sigma, nx + nu, 0, nx);
                let rows = soc_rows(&soc_groups, nx + nu, cfg.facets)?;
                for i in 0..rows.a.nrows() {
                    let mut blk = bd.block(1);
                    for j in 0..nx + nu + rows.n_aux {
                        let col = if j < nx + nu { l.theta_x() + j } else { l.aux() + j - nx - nu };
                        blk[(0, col)] = rows.a[(i, j)];
                    }
                    bd.ineq.push((blk, Vector::from_element(1, rows.b[i]), Mat::zeros(1, n), false));
                }

                // cost
                for k in 0..big_n {
                    bd.cost_at(l.ex(k), &cfg.q);
                    bd.cost_at(l.eu(k), &cfg.r);
                    let mut sel = bd.block(p);
                    put(&mut sel, l.y(k), &Mat::identity(p, p));
                    put(&mut sel, l.theta_y(), &-blkdiag_repeat(&gen_a.output_row(k as usize), p));
                    bd.cost(&sel, &cfg.qy);
                }
                bd.cost_at(l.theta_y(), &cfg.pa);
                let t = &cfg.terminal;
                for (pm, nd, dim, index) in [
                    (&t.px, cfg.gx.nd(), n, &(|k| l.ex(k)) as &dyn Fn(isize) -> usize),
                    (&t.pu, cfg.gu.nd(), m, &(|k| l.eu(k)) as &dyn Fn(isize) -> usize),
                ] {
                    if nd == 0 {
                        continue;
                    }
                    let mut sel = bd.block(nd * dim);
                    for a_ in 0..nd {
                        let col = index(big_n - a_ as isize);
                        for r in 0..dim {
                            sel[(a_ * dim + r, col + r)] = 1.0;
                        }
                    }
                    bd.cost(&sel, pm);
                }
            }
        }
        Ok(Self::split(bd, l, soc_groups))
    }

    fn split(bd: Builder, l: Layout, soc_groups: Vec<SocRow>) -> Self {
        let nf = l.n_free();
        let np = l.n_pinned();
        let eq_rows: usize = bd.eq.iter().map(|b| b.nrows()).sum();
        let mut aeq = Mat::zeros(eq_rows, l.dim());
        let mut r = 0;
        for blk in &bd.eq {
            aeq.view_mut((r, 0), blk.shape()).copy_from(blk);
            r += blk.nrows();
        }
        // rows without free entries only restate measured data; they are dropped
        let has_free = |row: &Mat| row.columns(0, nf).iter().any(|v| *v != 0.0);
        let kept: Vec<&(Mat, Vector, Mat, bool)> = bd.ineq.iter().filter(|(row, ..)| has_free(row)).collect();
        let ni = kept.len();
        let n = l.n;
        let mut aineq = Mat::zeros(ni, l.dim());
        let mut bineq0 = Vector::zeros(ni);
        let mut lowpass = Mat::zeros(ni, n);
        let mut state_rows = Vec::with_capacity(ni);
        for (i, (row, b, lp, st)) in kept.into_iter().enumerate() {
            aineq.set_row(i, &row.row(0));
            bineq0[i] = b[0];
            lowpass.set_row(i, &lp.row(0));
            state_rows.push(*st);
        }
        let h = crate::linalg::symmetrize(&bd.h);
        Self {
            h_ff: h.view((0, 0), (nf, nf)).into_owned(),
            h_fp: h.view((0, nf), (nf, np)).into_owned(),
            h_pp: h.view((nf, nf), (np, np)).into_owned(),
            aeq_f: aeq.columns(0, nf).into_owned(),
            aeq_p: aeq.columns(nf, np).into_owned(),
            aineq_f: aineq.columns(0, nf).into_owned(),
            aineq_p: aineq.columns(nf, np).into_owned(),
            bineq0,
            lowpass,
            state_rows,
            soc_groups,
            layout: l,
            n_extra: 0,
        }
    }

    pub fn n_free(&self) -> usize {
        self.h_ff.nrows()
    }

    pub fn rhs(&self, h: &Vector, xf: Option<&Vector>) -> QpRhs {
        let mut bineq = &self.bineq0 - &self.aineq_p * h;
        if let Some(xf) = xf {
            bineq -= &self.lowpass * xf;
        }
        QpRhs {
            f: &self.h_fp * h,
            beq: -(&self.aeq_p * h),
            bineq,
            constant: 0.5 * h.dot(&(&self.h_pp * h)),
        }
    }

    pub fn problem(&self, h: &Vector, xf: Option<&Vector>) -> Result<QpProblem> {
        let r = self.rhs(h, xf);
        let mut qp = QpProblem::new(self.h_ff.clone(), r.f)?
            .with_equalities(self.aeq_f.clone(), r.beq)?
            .with_inequalities(self.aineq_f.clone(), r.bineq)?;
        qp.constant = r.constant;
        qp.names = self.layout.free_names();
        qp.names.extend((0..self.n_extra).map(|i| format!("slack[{i}]")));
        Ok(qp)
    }

    pub fn prepare(&self) -> Result<PreparedQp> {
        PreparedQp::new(&self.h_ff, &self.aeq_f, &self.aineq_f)
    }

    /// Equality-only variant (all inequality rows removed).
    pub fn prepare_unconstrained(&self) -> Result<PreparedQp> {
        PreparedQp::new(&self.h_ff, &self.aeq_f, &Mat::zeros(0, self.n_free()))
    }

    /// Adds one slack `s >= 0` shared by all state rows, with cost `weight * s^2`.
    pub fn softened(&self, weight: f64) -> Self {
        let nf = self.n_free();
        let ni = self.aineq_f.nrows();
        let mut out = self.clone();
        out.n_extra += 1;
        let mut h_ff = Mat::zeros(nf + 1, nf + 1);
        h_ff.view_mut((0, 0), (nf, nf)).copy_from(&self.h_ff);
        h_ff[(nf, nf)] = 2.0 * weight;
        out.h_ff = h_ff;
        out.h_fp = self.h_fp.clone().insert_row(nf, 0.0);
        out.aeq_f = self.aeq_f.clone().insert_column(nf, 0.0);
        let mut aineq_f = Mat::zeros(ni + 1, nf + 1);
        aineq_f.view_mut((0, 0), (ni, nf)).copy_from(&self.aineq_f);
        for (i, st) in self.state_rows.iter().enumerate() {
            if *st {
                aineq_f[(i, nf)] = -1.0;
            }
        }
        aineq_f[(ni, nf)] = -1.0;
        out.aineq_f = aineq_f;
        out.aineq_p = self.aineq_p.clone().insert_row(ni, 0.0);
        out.bineq0 = self.bineq0.clone().insert_row(ni, 0.0);
        out.lowpass = self.lowpass.clone().insert_row(ni, 0.0);
        out.state_rows.push(false);
        out
    }

    /// Objective (including the constant) of a free vector under history `h`.
    pub fn objective(&self, v: &Vector, h: &Vector) -> f64 {
        let r = self.rhs(h, None);
        0.5 * v.dot(&(&self.h_ff * v)) + r.f.dot(v) + r.constant
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::tests::four_tank_config;

    #[test]
    fn basic_four_tank_dimensions() {
        let cfg = four_tank_config().with_formulation(Formulation::Basic);
        let qp = ParametricQp::build(&cfg).unwrap();
        assert_eq!(qp.n_free(), 564);
        // 40 x (4 + 2 + 4) prediction rows plus 41 x 2 input rows
        assert_eq!(qp.aeq_f.nrows(), 40 * 10 + 41 * 2);
        // state rows at k = 0 carry no free variable
        assert_eq!(qp.aineq_f.nrows(), 41 * 12 - 8);
        assert_eq!(qp.h_ff.nrows(), 564);
    }

    #[test]
    fn zero_history_gives_zero_solution() {
        let cfg = four_tank_config().with_formulation(Formulation::Basic);
        let qp = ParametricQp::build(&cfg).unwrap();
        let prep = qp.prepare().unwrap();
        let h = Vector::zeros(qp.layout.n_pinned());
        let r = qp.rhs(&h, None);
        let sol = prep.solve(&r.f, &r.beq, &r.bineq);
        assert!(sol.is_optimal());
        assert!(sol.x.amax() < 1e-9);
        assert!(sol.objective.abs() < 1e-12);
    }

    #[test]
    fn artificial_reference_adds_parameters() {
        let cfg = four_tank_config();
        let qp = ParametricQp::build(&cfg).unwrap();
        let l = &qp.layout;
        // theta_x, theta_u, theta_y with q = 3, plus one auxiliary per constraint row
        assert_eq!(l.n_free(), 564 + 3 * (4 + 2 + 2) + 12);
        assert_eq!(qp.soc_groups.len(), 12);
        let prep = qp.prepare().unwrap();
        let h = Vector::zeros(l.n_pinned());
        let r = qp.rhs(&h, None);
        let sol = prep.solve(&r.f, &r.beq, &r.bineq);
        assert!(sol.is_optimal());
        assert!(sol.objective.abs() < 1e-10);
    }

    #[test]
    fn softened_problem_extends_by_one_slack() {
        let cfg = four_tank_config();
        let qp = ParametricQp::build(&cfg).unwrap();
        let soft = qp.softened(1e6);
        assert_eq!(soft.n_free(), qp.n_free() + 1);
        assert_eq!(soft.aineq_f.nrows(), qp.aineq_f.nrows() + 1);
        let nf = qp.n_free();
        for (i, st) in qp.state_rows.iter().enumerate() {
            assert_eq!(soft.aineq_f[(i, nf)], if *st { -1.0 } else { 0.0 });
        }
        let p = soft.problem(&Vector::zeros(qp.layout.n_pinned()), None).unwrap();
        assert_eq!(p.names.last().unwrap(), "slack[0]");
    }

    #[test]
    fn objective_matches_rhs_constant() {
        let cfg = four_tank_config().with_formulation(Formulation::Basic);
        let qp = ParametricQp::build(&cfg).unwrap();
        let h = Vector::from_fn(qp.layout.n_pinned(), |i, _| (i as f64 * 0.37).sin());
        let v = Vector::zeros(qp.n_free());
        assert!((qp.objective(&v, &h) - qp.rhs(&h, None).constant).abs() < 1e-12);
    }
}
