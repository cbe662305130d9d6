//! Regulation equations, admissibility of artificial references, and the optimal reachable
//! reference used as an independent oracle for the closed loop.
//!
//! Reference parameters are stored component-major: `theta_x = (theta_x1, ..., theta_xn)` with
//! each `theta_xi` a `q`-vector laid out like the generator state (constant entry first, then
//! one `(cos, sin)` pair per frequency), so that `x_a(k) = blkdiag_n(C_S S^k) theta_x`.

use crate::error::{dim_err, ImmpcError, Result};
use crate::internal_model::SignalGenerator;
use crate::linalg::{blkdiag_repeat, kron, Mat, Vector};
use crate::model::{ConstraintPolytope, DiscreteLti};
use crate::qp::{soc_rows, solve_qp, QpProblem, QpStatus, SocRow};

pub const REGULATION_COND_LIMIT: f64 = 1e12;
pub const REGULATION_RESIDUAL_TOL: f64 = 1e-8;
/// Rounding allowance for boundary points in `admissible_check`.
pub const ADMISSIBLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RegulationSolution {
    pub pi1: Mat,
    pub pi2: Mat,
    /// `max |Pi1 S - A Pi1 - E - B Pi2|`
    pub dynamics_residual: f64,
    /// `max |C Pi1 + F|`
    pub output_residual: f64,
}

/// Solves `Pi1 S = A Pi1 + E + B Pi2`, `0 = C Pi1 + F` in vectorized form.
pub fn solve_regulation(plant: &DiscreteLti, e: &Mat, f: &Mat, s: &Mat) -> Result<RegulationSolution> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let q = s.nrows();
    if e.shape() != (n, q) || f.shape() != (p, q) || s.ncols() != q {
        return dim_err(format!("E {:?}, F {:?}, S {:?} for n={n}, p={p}", e.shape(), f.shape(), s.shape()));
    }
    let iq = Mat::identity(q, q);
    let rows = n * q + p * q;
    let cols = n * q + m * q;
    let mut k = Mat::zeros(rows, cols);
    let dyn_blk = kron(&s.transpose(), &Mat::identity(n, n)) - kron(&iq, &plant.a);
    k.view_mut((0, 0), (n * q, n * q)).copy_from(&dyn_blk);
    k.view_mut((0, n * q), (n * q, m * q)).copy_from(&(-kron(&iq, &plant.b)));
    k.view_mut((n * q, 0), (p * q, n * q)).copy_from(&kron(&iq, &plant.c));
    let mut rhs = Vector::zeros(rows);
    rhs.rows_mut(0, n * q).copy_from_slice(e.as_slice());
    rhs.rows_mut(n * q, p * q).copy_from(&(-Vector::from_column_slice(f.as_slice())));

    let svd = k.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = if rows >= cols { sv.min() } else { 0.0 };
    if smax > 0.0 && (smin == 0.0 || smax / smin > REGULATION_COND_LIMIT) {
        return Err(ImmpcError::RegulationIllPosed(format!(
            "condition number {:.3e} of the stacked system",
            if smin == 0.0 { f64::INFINITY } else { smax / smin }
        )));
    }
    let sol = if smax == 0.0 {
        Vector::zeros(cols)
    } else {
        svd.solve(&rhs, 0.0).map_err(|e| ImmpcError::Singular(e.to_string()))?
    };
    let pi1 = Mat::from_column_slice(n, q, &sol.as_slice()[..n * q]);
    let pi2 = Mat::from_column_slice(m, q, &sol.as_slice()[n * q..]);
    let dynamics_residual = (&pi1 * s - &plant.a * &pi1 - e - &plant.b * &pi2).amax();
    let output_residual = (&plant.c * &pi1 + f).amax();
    if dynamics_residual > REGULATION_RESIDUAL_TOL || output_residual > REGULATION_RESIDUAL_TOL {
        return Err(ImmpcError::RegulationIllPosed(format!(
            "residuals {dynamics_residual:.3e}, {output_residual:.3e} (no exact solution)"
        )));
    }
    Ok(RegulationSolution { pi1, pi2, dynamics_residual, output_residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtificialReferenceParam {
    pub theta_x: Vector,
    pub theta_u: Vector,
    pub theta_y: Vector,
}

impl ArtificialReferenceParam {
    pub fn zeros(n: usize, m: usize, p: usize, gen: &SignalGenerator, gen_a: &SignalGenerator) -> Self {
        Self {
            theta_x: Vector::zeros(n * gen.q()),
            theta_u: Vector::zeros(m * gen.q()),
            theta_y: Vector::zeros(p * gen_a.q()),
        }
    }

    pub fn x_at(&self, gen: &SignalGenerator, k: usize) -> Vector {
        eval_param(&self.theta_x, gen, k)
    }

    pub fn u_at(&self, gen: &SignalGenerator, k: usize) -> Vector {
        eval_param(&self.theta_u, gen, k)
    }

    pub fn y_at(&self, gen_a: &SignalGenerator, k: usize) -> Vector {
        eval_param(&self.theta_y, gen_a, k)
    }

    /// Parameters of the same trajectories observed one step later.
    pub fn shifted(&self, gen: &SignalGenerator, gen_a: &SignalGenerator) -> Self {
        let sh = |t: &Vector, g: &SignalGenerator| blkdiag_repeat(&g.s, t.len() / g.q().max(1)) * t;
        Self { theta_x: sh(&self.theta_x, gen), theta_u: sh(&self.theta_u, gen), theta_y: sh(&self.theta_y, gen_a) }
    }
}

/// `blkdiag(C_S S^k) theta` for a component-major parameter.
pub fn eval_param(theta: &Vector, gen: &SignalGenerator, k: usize) -> Vector {
    let q = gen.q();
    if q == 0 {
        return Vector::zeros(0);
    }
    let row = gen.output_row(k);
    let dim = theta.len() / q;
    Vector::from_fn(dim, |i, _| (0..q).map(|l| row[(0, l)] * theta[i * q + l]).sum())
}

/// Selector matrices picking, from a component-major parameter of `dim` components, the
/// constant part and the `(first, second)` entries of every frequency pair.
pub(crate) fn param_selectors(gen: &SignalGenerator, dim: usize) -> (Option<Mat>, Vec<(Mat, Mat)>) {
    let q = gen.q();
    let pick = |off: usize| {
        let mut s = Mat::zeros(dim, dim * q);
        for i in 0..dim {
            s[(i, i * q + off)] = 1.0;
        }
        s
    };
    let c = gen.include_constant.then(|| pick(0));
    let pairs = (0..gen.n_freq()).map(|j| (pick(gen.pair_offset(j)), pick(gen.pair_offset(j) + 1))).collect();
    (c, pairs)
}

/// `Z_{F,sigma}` rows over a variable vector where `theta_x` starts at column `x_col` and
/// `theta_u` at `u_col` (total width `d`).
pub fn admissible_rows(
    gen: &SignalGenerator,
    poly: &ConstraintPolytope,
    sigma: &Vector,
    d: usize,
    x_col: usize,
    u_col: usize,
) -> Vec<SocRow> {
    let (n, m) = (poly.n(), poly.m());
    let (cx, px) = param_selectors(gen, n);
    let (cu, pu) = param_selectors(gen, m);
    let embed = |row: Vector, sel: &Mat, col: usize, out: &mut Vector| {
        let coeffs = sel.transpose() * row;
        for (k, c) in coeffs.iter().enumerate() {
            out[col + k] += c;
        }
    };
    (0..poly.n_rows())
        .map(|i| {
            let cbar: Vector = poly.cbar.row(i).transpose();
            let dbar: Vector = poly.dbar.row(i).transpose();
            let mut z0 = Vector::zeros(d);
            if let (Some(sx), Some(su)) = (&cx, &cu) {
                embed(cbar.clone(), sx, x_col, &mut z0);
                embed(dbar.clone(), su, u_col, &mut z0);
            }
            let pairs = px
                .iter()
                .zip(&pu)
                .map(|((sx1, sx2), (su1, su2))| {
                    let mut a = Vector::zeros(d);
                    let mut b = Vector::zeros(d);
                    embed(cbar.clone(), sx1, x_col, &mut a);
                    embed(dbar.clone(), su1, u_col, &mut a);
                    embed(cbar.clone(), sx2, x_col, &mut b);
                    embed(dbar.clone(), su2, u_col, &mut b);
                    (a, b)
                })
                .collect();
            SocRow { z0, pairs, bound: poly.rhs[i] - sigma[i] }
        })
        .collect()
}

/// Exact admissibility: `(all rows satisfied, per-row margin c - sigma - lhs)`.
pub fn admissible_check(
    r: &ArtificialReferenceParam,
    gen: &SignalGenerator,
    poly: &ConstraintPolytope,
    sigma: &Vector,
) -> (bool, Vec<f64>) {
    let nx = r.theta_x.len();
    let d = nx + r.theta_u.len();
    let mut v = Vector::zeros(d);
    v.rows_mut(0, nx).copy_from(&r.theta_x);
    v.rows_mut(nx, r.theta_u.len()).copy_from(&r.theta_u);
    let margins: Vec<f64> =
        admissible_rows(gen, poly, sigma, d, 0, nx).iter().map(|row| row.exact_margin(&v)).collect();
    (margins.iter().all(|m| *m >= -ADMISSIBLE_TOL), margins)
}

/// Disturbance data as seen by the oracle: the true plant-side channel and the current `w`.
#[derive(Debug, Clone)]
pub struct TrueDisturbance<'a> {
    pub e: &'a Mat,
    pub f: &'a Mat,
    pub s: &'a Mat,
    pub w: &'a Vector,
}

#[derive(Debug, Clone)]
pub struct OptimalReference {
    pub param: ArtificialReferenceParam,
    /// `|theta_y|^2_{P_a}`
    pub objective: f64,
    pub gen_a: SignalGenerator,
}

impl OptimalReference {
    /// `y*(t + k)`
    pub fn y_at(&self, k: usize) -> Vector {
        self.param.y_at(&self.gen_a, k)
    }
}

/// Smallest `|theta_y|_{P_a}` over reference trajectories that follow the true plant
/// (including `E w`, `F w`) and lie in `Z_{F,sigma}` (polyhedral rows with `facets` facets).
/// `(theta_x, theta_u)` ties are broken by minimum norm.
#[allow(clippy::too_many_arguments)]
pub fn optimal_reference(
    plant: &DiscreteLti,
    dist: TrueDisturbance<'_>,
    gen: &SignalGenerator,
    gen_a: &SignalGenerator,
    pa: &Mat,
    poly: &ConstraintPolytope,
    sigma: &Vector,
    facets: usize,
) -> Result<OptimalReference> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let (q, qa) = (gen.q(), gen_a.q());
    if gen_a.n_freq() > gen.n_freq() || (gen_a.include_constant && !gen.include_constant) {
        return Err(ImmpcError::InvalidArgument("reference generator must be a subset of the generator".into()));
    }
    if pa.shape() != (p * qa, p * qa) {
        return dim_err(format!("P_a is {:?}, expected {}", pa.shape(), p * qa));
    }
    let nx = n * q;
    let nu = m * q;
    let ny = p * qa;
    let d = nx + nu + ny;

    // Every signal lies in the span of the generator modes; matching q + 1 consecutive samples
    // (observability of (C_S, S)) enforces the dynamics for all k.
    let samples = q.max(1) + 1;
    let mut rows: Vec<(Vector, f64)> = Vec::new();
    let sel = |g: &SignalGenerator, dim: usize, k: usize| blkdiag_repeat(&g.output_row(k), dim);
    let mut wk = dist.w.clone();
    for k in 0..samples {
        let xk = sel(gen, n, k);
        let xk1 = sel(gen, n, k + 1);
        let uk = sel(gen, m, k);
        let yk = sel(gen_a, p, k);
        let ew = dist.e * &wk;
        let fw = dist.f * &wk;
        // x(k+1) - A x(k) - B u(k) = E w(k)
        let dyn_x = &xk1 - &plant.a * &xk;
        let dyn_u = -(&plant.b * &uk);
        for i in 0..n {
            let mut a = Vector::zeros(d);
            a.rows_mut(0, nx).copy_from(&dyn_x.row(i).transpose());
            a.rows_mut(nx, nu).copy_from(&dyn_u.row(i).transpose());
            rows.push((a, ew[i]));
        }
        // C x(k) - y_a(k) = -F w(k)
        let out_x = &plant.c * &xk;
        for i in 0..p {
            let mut a = Vector::zeros(d);
            a.rows_mut(0, nx).copy_from(&out_x.row(i).transpose());
            a.rows_mut(nx + nu, ny).copy_from(&(-yk.row(i).transpose()));
            rows.push((a, -fw[i]));
        }
        wk = dist.s * wk;
    }
    let aeq = Mat::from_fn(rows.len(), d, |i, j| rows[i].0[j]);
    let beq = Vector::from_iterator(rows.len(), rows.iter().map(|r| r.1));

    let groups = admissible_rows(gen, poly, sigma, d, 0, nx);
    let soc = soc_rows(&groups, d, facets)?;
    let dt = d + soc.n_aux;
    let mut h = Mat::zeros(dt, dt);
    for i in 0..nx + nu {
        h[(i, i)] = 2e-10;
    }
    h.view_mut((nx + nu, nx + nu), (ny, ny)).copy_from(&(pa * 2.0));
    let mut aeq_full = Mat::zeros(aeq.nrows(), dt);
    aeq_full.view_mut((0, 0), (aeq.nrows(), d)).copy_from(&aeq);
    let qp = QpProblem::new(h, Vector::zeros(dt))?
        .with_equalities(aeq_full, beq)?
        .with_inequalities(soc.a, soc.b)?;
    let sol = solve_qp(&qp);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(ImmpcError::Infeasible("no admissible reference (sigma too large?)".into()))
        }
        s => return Err(ImmpcError::Solver(format!("reference program ended with {s:?}"))),
    }
    let x = &sol.x;
    let param = ArtificialReferenceParam {
        theta_x: x.rows(0, nx).into_owned(),
        theta_u: x.rows(nx, nu).into_owned(),
        theta_y: x.rows(nx + nu, ny).into_owned(),
    };
    let objective = (param.theta_y.transpose() * pa * &param.theta_y)[0];
    Ok(OptimalReference { param, objective, gen_a: gen_a.clone() })
}
