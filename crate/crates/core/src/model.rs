//! Plant representations, Euler-forward discretization, the four-tank preset and the
//! simulator-side plant step with its hidden disturbance channel.
//!
//! All states, inputs and outputs are deviations from an operating point.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, ImmpcError, Result};
use crate::internal_model::SignalGenerator;
use crate::linalg::{blkdiag_repeat, rank, Mat, Vector};
use crate::qp::{solve_qp, QpProblem, QpStatus};

/// Singular-value tolerance for the controllability and detectability rank tests.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

/// Discrete-time plant `x+ = A x + B u`, `y = C x` as seen by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLti {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub ts: f64,
}

impl ContinuousLti {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        check_abc(&a, &b, &c)?;
        Ok(Self { a, b, c })
    }
}

fn check_abc(a: &Mat, b: &Mat, c: &Mat) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return dim_err(format!("A must be square, got {:?}", a.shape()));
    }
    if b.nrows() != n {
        return dim_err(format!("B has {} rows, expected {n}", b.nrows()));
    }
    if c.ncols() != n {
        return dim_err(format!("C has {} columns, expected {n}", c.ncols()));
    }
    Ok(())
}

impl DiscreteLti {
    pub fn new(a: Mat, b: Mat, c: Mat, ts: f64) -> Result<Self> {
        check_abc(&a, &b, &c)?;
        if !(ts > 0.0) {
            return Err(ImmpcError::InvalidArgument(format!("sample time must be positive, got {ts}")));
        }
        Ok(Self { a, b, c, ts })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn controllability_matrix(&self) -> Mat {
        let (n, m) = (self.n(), self.m());
        let mut out = Mat::zeros(n, n * m);
        let mut blk = self.b.clone();
        for i in 0..n {
            out.view_mut((0, i * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        out
    }

    pub fn is_controllable(&self) -> bool {
        rank(&self.controllability_matrix(), RANK_TOL) == self.n()
    }

    /// PBH test on every eigenvalue with modulus >= 1.
    pub fn is_detectable(&self) -> bool {
        let n = self.n();
        for lam in crate::linalg::eigenvalues(&self.a) {
            if lam.norm() < 1.0 {
                continue;
            }
            // Real embedding of [lam I - A; C] for complex lam.
            let mut m = Mat::zeros(2 * (n + self.p()), 2 * n);
            for i in 0..n {
                for j in 0..n {
                    let re = if i == j { lam.re } else { 0.0 } - self.a[(i, j)];
                    let im = if i == j { lam.im } else { 0.0 };
                    m[(i, j)] = re;
                    m[(i, n + j)] = -im;
                    m[(n + i, j)] = im;
                    m[(n + i, n + j)] = re;
                }
            }
            for i in 0..self.p() {
                for j in 0..n {
                    m[(2 * n + i, j)] = self.c[(i, j)];
                    m[(2 * n + self.p() + i, n + j)] = self.c[(i, j)];
                }
            }
            if rank(&m, RANK_TOL) < 2 * n {
                return false;
            }
        }
        true
    }
}

/// `A = I + Ts A_c`, `B = Ts B_c`, `C` unchanged.
pub fn discretize_euler(sys: &ContinuousLti, ts: f64) -> Result<DiscreteLti> {
    if !(ts > 0.0) {
        return Err(ImmpcError::InvalidArgument(format!("sample time must be positive, got {ts}")));
    }
    let n = sys.a.nrows();
    DiscreteLti::new(Mat::identity(n, n) + &sys.a * ts, &sys.b * ts, sys.c.clone(), ts)
}

/// Hidden exogenous channel `x+ = ... + E w`, `y = ... + F w`, `w+ = S w`. Only the simulator
/// holds one of these.
///
/// `w` stacks `copies` independent signals, each generated by `generator`, so the exosystem
/// matrix is `blkdiag_copies(S)`.
#[derive(Debug, Clone)]
pub struct DisturbanceChannel {
    pub e: Mat,
    pub f: Mat,
    pub w0: Vector,
    pub generator: SignalGenerator,
    pub copies: usize,
}

impl DisturbanceChannel {
    pub fn new(e: Mat, f: Mat, w0: Vector, generator: SignalGenerator, copies: usize) -> Result<Self> {
        let q = generator.q() * copies;
        if e.ncols() != q || f.ncols() != q || w0.len() != q {
            return dim_err(format!(
                "disturbance dimension q={q} (generator {} x {copies} copies) does not match E {:?}, F {:?}, w0 {}",
                generator.q(),
                e.shape(),
                f.shape(),
                w0.len()
            ));
        }
        Ok(Self { e, f, w0, generator, copies })
    }

    /// No disturbance at all: a single zero copy of the generator.
    pub fn zero(n: usize, p: usize, generator: SignalGenerator) -> Self {
        let q = generator.q();
        Self { e: Mat::zeros(n, q), f: Mat::zeros(p, q), w0: Vector::zeros(q), generator, copies: 1 }
    }

    pub fn q(&self) -> usize {
        self.w0.len()
    }

    pub fn exo_matrix(&self) -> Mat {
        blkdiag_repeat(&self.generator.s, self.copies)
    }

    /// Indices of the constant component of each copy (empty when the generator has none).
    pub fn constant_indices(&self) -> Vec<usize> {
        if !self.generator.include_constant {
            return Vec::new();
        }
        (0..self.copies).map(|c| c * self.generator.q()).collect()
    }

    fn check(&self, sys: &DiscreteLti) -> Result<()> {
        if self.e.nrows() != sys.n() || self.f.nrows() != sys.p() {
            return dim_err(format!(
                "E {:?} / F {:?} incompatible with plant n={}, p={}",
                self.e.shape(),
                self.f.shape(),
                sys.n(),
                sys.p()
            ));
        }
        Ok(())
    }
}

/// One step of the true plant: returns `(A x + E w + B u, C x + F w)`.
pub fn plant_step(
    sys: &DiscreteLti,
    dist: &DisturbanceChannel,
    x: &Vector,
    u: &Vector,
    w: &Vector,
) -> Result<(Vector, Vector)> {
    dist.check(sys)?;
    if x.len() != sys.n() || u.len() != sys.m() || w.len() != dist.q() {
        return dim_err(format!(
            "plant_step got x:{}, u:{}, w:{}; expected {}, {}, {}",
            x.len(),
            u.len(),
            w.len(),
            sys.n(),
            sys.m(),
            dist.q()
        ));
    }
    let x_next = &sys.a * x + &dist.e * w + &sys.b * u;
    let y = &sys.c * x + &dist.f * w;
    Ok((x_next, y))
}

/// Polytope `{(x, u) : Cbar x + Dbar u <= cbar}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPolytope {
    pub cbar: Mat,
    pub dbar: Mat,
    pub rhs: Vector,
}

impl ConstraintPolytope {
    pub fn new(cbar: Mat, dbar: Mat, rhs: Vector) -> Result<Self> {
        if cbar.nrows() != dbar.nrows() || cbar.nrows() != rhs.len() {
            return dim_err(format!(
                "constraint rows disagree: Cbar {:?}, Dbar {:?}, cbar {}",
                cbar.shape(),
                dbar.shape(),
                rhs.len()
            ));
        }
        Ok(Self { cbar, dbar, rhs })
    }

    /// Box constraints, two rows per bound: for every state `x_i <= hi`, `-x_i <= -lo`,
    /// then the same for every input.
    pub fn from_box(x_lo: &[f64], x_hi: &[f64], u_lo: &[f64], u_hi: &[f64]) -> Result<Self> {
        let (n, m) = (x_lo.len(), u_lo.len());
        if x_hi.len() != n || u_hi.len() != m {
            return dim_err("box bound lengths disagree");
        }
        let rows = 2 * (n + m);
        let mut cbar = Mat::zeros(rows, n);
        let mut dbar = Mat::zeros(rows, m);
        let mut rhs = Vector::zeros(rows);
        for i in 0..n {
            if x_lo[i] > x_hi[i] {
                return Err(ImmpcError::InvalidArgument(format!("empty bound on state {i}")));
            }
            cbar[(2 * i, i)] = 1.0;
            rhs[2 * i] = x_hi[i];
            cbar[(2 * i + 1, i)] = -1.0;
            rhs[2 * i + 1] = -x_lo[i];
        }
        for j in 0..m {
            if u_lo[j] > u_hi[j] {
                return Err(ImmpcError::InvalidArgument(format!("empty bound on input {j}")));
            }
            let r = 2 * (n + j);
            dbar[(r, j)] = 1.0;
            rhs[r] = u_hi[j];
            dbar[(r + 1, j)] = -1.0;
            rhs[r + 1] = -u_lo[j];
        }
        Ok(Self { cbar, dbar, rhs })
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn n(&self) -> usize {
        self.cbar.ncols()
    }

    pub fn m(&self) -> usize {
        self.dbar.ncols()
    }

    /// `Cbar x + Dbar u - cbar`; positive entries are violations.
    pub fn residual(&self, x: &Vector, u: &Vector) -> Vector {
        &self.cbar * x + &self.dbar * u - &self.rhs
    }

    pub fn max_violation(&self, x: &Vector, u: &Vector) -> f64 {
        self.residual(x, u).iter().cloned().fold(0.0, f64::max)
    }

    /// True for rows that involve at least one state.
    pub fn is_state_row(&self, i: usize) -> bool {
        self.cbar.row(i).iter().any(|v| *v != 0.0)
    }

    /// Joint row matrix `[Cbar Dbar]`.
    pub fn joint(&self) -> Mat {
        let mut g = Mat::zeros(self.n_rows(), self.n() + self.m());
        g.view_mut((0, 0), self.cbar.shape()).copy_from(&self.cbar);
        g.view_mut((0, self.n()), self.dbar.shape()).copy_from(&self.dbar);
        g
    }

    /// Checks that the set is nonempty and bounded.
    ///
    /// Nonemptiness is a minimum-norm feasibility QP. Boundedness asks, for each coordinate
    /// direction, whether the recession cone `{d : G d <= 0}` intersected with the unit box
    /// contains a point with a positive component along that direction.
    pub fn validate(&self) -> Result<()> {
        let g = self.joint();
        let d = g.ncols();
        let feas = QpProblem::new(Mat::identity(d, d), Vector::zeros(d))?.with_inequalities(g.clone(), self.rhs.clone())?;
        let sol = solve_qp(&feas);
        if sol.status != QpStatus::Optimal {
            return Err(ImmpcError::InvalidArgument("constraint polytope is empty".into()));
        }
        let mut rows = g.clone();
        rows = rows.insert_rows(self.n_rows(), 2 * d, 0.0);
        let mut rhs = Vector::zeros(self.n_rows() + 2 * d);
        for i in 0..d {
            rows[(self.n_rows() + 2 * i, i)] = 1.0;
            rows[(self.n_rows() + 2 * i + 1, i)] = -1.0;
            rhs[self.n_rows() + 2 * i] = 1.0;
            rhs[self.n_rows() + 2 * i + 1] = 1.0;
        }
        let reg = 1e-6;
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut f = Vector::zeros(d);
                f[i] = -sign;
                let prob = QpProblem::new(Mat::identity(d, d) * reg, f)?.with_inequalities(rows.clone(), rhs.clone())?;
                let sol = solve_qp(&prob);
                if sol.status == QpStatus::Optimal && sign * sol.x[i] > 1e-6 {
                    return Err(ImmpcError::InvalidArgument(format!(
                        "constraint polytope is unbounded along coordinate {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Operating point the deviation model is linearized around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub x_lin: Vec<f64>,
    pub u_lin: Vec<f64>,
}

pub const FOUR_TANK_A1: f64 = 0.0751;
pub const FOUR_TANK_A2: f64 = 0.0371;
pub const FOUR_TANK_B1: f64 = 0.151;
pub const FOUR_TANK_B2: f64 = 0.0693;
pub const FOUR_TANK_LEVEL_MAX: f64 = 22.0;
pub const FOUR_TANK_VOLTAGE_MAX: f64 = 16.0;

/// Linearized four-tank benchmark: levels `h1..h4` (upper tanks 1 and 3), pump voltages
/// `u1, u2`, outputs `h2, h4`. Constraints `h_i in [0, 22]`, `u_i in [0, 16]` are returned
/// in deviation coordinates around `x_lin = (8, 18, 8, 18)`, `u_lin = (8, 8)`.
pub fn four_tank() -> (ContinuousLti, ConstraintPolytope, OperatingPoint) {
    let (a1, a2, b1, b2) = (FOUR_TANK_A1, FOUR_TANK_A2, FOUR_TANK_B1, FOUR_TANK_B2);
    #[rustfmt::skip]
    let a = Mat::from_row_slice(4, 4, &[
        -a1, 0.0, 0.0, 0.0,
         a1, -a2, 0.0, 0.0,
        0.0, 0.0, -a1, 0.0,
        0.0, 0.0,  a1, -a2,
    ]);
    #[rustfmt::skip]
    let b = Mat::from_row_slice(4, 2, &[
         b1, 0.0,
        0.0,  b2,
        0.0,  b1,
         b2, 0.0,
    ]);
    #[rustfmt::skip]
    let c = Mat::from_row_slice(2, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    let op = OperatingPoint { x_lin: vec![8.0, 18.0, 8.0, 18.0], u_lin: vec![8.0, 8.0] };
    let x_lo: Vec<f64> = op.x_lin.iter().map(|v| -v).collect();
    let x_hi: Vec<f64> = op.x_lin.iter().map(|v| FOUR_TANK_LEVEL_MAX - v).collect();
    let u_lo: Vec<f64> = op.u_lin.iter().map(|v| -v).collect();
    let u_hi: Vec<f64> = op.u_lin.iter().map(|v| FOUR_TANK_VOLTAGE_MAX - v).collect();
    let poly = ConstraintPolytope::from_box(&x_lo, &x_hi, &u_lo, &u_hi).expect("static box");
    (ContinuousLti { a, b, c }, poly, op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn euler_identity_case() {
        let sys = ContinuousLti::new(Mat::zeros(1, 1), Mat::from_element(1, 1, 1.0), Mat::identity(1, 1)).unwrap();
        let d = discretize_euler(&sys, 1.0).unwrap();
        assert_eq!(d.a[(0, 0)], 1.0);
    }

    #[test]
    fn euler_scalar_arithmetic() {
        let sys = ContinuousLti::new(
            Mat::from_element(1, 1, -2.0),
            Mat::from_element(1, 1, 3.0),
            Mat::identity(1, 1),
        )
        .unwrap();
        let d = discretize_euler(&sys, 0.1).unwrap();
        assert_abs_diff_eq!(d.a[(0, 0)], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(d.b[(0, 0)], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn euler_rejects_nonpositive_ts() {
        let (sys, _, _) = four_tank();
        assert!(discretize_euler(&sys, 0.0).is_err());
        assert!(discretize_euler(&sys, -1.0).is_err());
    }

    #[test]
    fn four_tank_entries() {
        let (sys, poly, op) = four_tank();
        assert_eq!(sys.a[(1, 0)], 0.0751);
        let d = discretize_euler(&sys, 1.0).unwrap();
        assert_abs_diff_eq!(d.a[(0, 0)], 0.9249, epsilon = 1e-12);
        let y = &sys.c * Vector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(y, Vector::from_vec(vec![1.0, 0.0]));
        // h1 bounds in deviation coordinates: -8 <= dh1 <= 14
        assert_eq!(poly.rhs[0], 14.0);
        assert_eq!(poly.rhs[1], 8.0);
        assert_eq!(poly.n_rows(), 12);
        assert_eq!(op.u_lin, vec![8.0, 8.0]);
        poly.validate().unwrap();
    }

    #[test]
    fn four_tank_is_controllable_and_detectable() {
        let (sys, _, _) = four_tank();
        let d = discretize_euler(&sys, 1.0).unwrap();
        assert_eq!(rank(&d.controllability_matrix(), RANK_TOL), 4);
        assert!(d.is_controllable());
        assert!(d.is_detectable());
    }

    #[test]
    fn euler_consistency_is_first_order() {
        let (sys, _, _) = four_tank();
        let mut errs = Vec::new();
        for ts in [1e-1, 1e-2, 1e-3] {
            let d = discretize_euler(&sys, ts).unwrap();
            let approx = (&d.a - Mat::identity(4, 4)) / ts;
            errs.push(crate::linalg::max_abs(&(approx - &sys.a)));
        }
        // Euler is exact in A for the affine map, so the error is pure rounding.
        assert!(errs.iter().all(|e| *e < 1e-12));
    }

    fn scalar_plant() -> (DiscreteLti, DisturbanceChannel) {
        let sys = DiscreteLti::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            1.0,
        )
        .unwrap();
        let gen = SignalGenerator::new(&[], true).unwrap();
        let dist = DisturbanceChannel::new(
            Mat::from_element(1, 1, 1.0),
            Mat::zeros(1, 1),
            Vector::from_element(1, 0.0),
            gen,
            1,
        )
        .unwrap();
        (sys, dist)
    }

    #[test]
    fn plant_step_substitution() {
        let (sys, dist) = scalar_plant();
        let v = |x: f64| Vector::from_element(1, x);
        let (xn, y) = plant_step(&sys, &dist, &v(2.0), &v(1.0), &v(3.0)).unwrap();
        assert_eq!(xn[0], 5.0);
        assert_eq!(y[0], 2.0);
        let (xn, y) = plant_step(&sys, &dist, &v(0.0), &v(0.0), &v(0.0)).unwrap();
        assert_eq!((xn[0], y[0]), (0.0, 0.0));
    }

    #[test]
    fn plant_step_dimension_mismatch() {
        let (sys, dist) = scalar_plant();
        let r = plant_step(&sys, &dist, &Vector::zeros(2), &Vector::zeros(1), &Vector::zeros(1));
        assert!(matches!(r, Err(ImmpcError::Dimension(_))));
    }

    #[test]
    fn unbounded_polytope_detected() {
        let poly = ConstraintPolytope::new(
            Mat::from_row_slice(1, 1, &[1.0]),
            Mat::zeros(1, 1),
            Vector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(poly.validate().is_err());
    }

    #[test]
    fn empty_polytope_detected() {
        let poly = ConstraintPolytope::new(
            Mat::from_row_slice(2, 1, &[1.0, -1.0]),
            Mat::zeros(2, 0),
            Vector::from_vec(vec![-1.0, -1.0]),
        )
        .unwrap();
        assert!(poly.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn plant_step_is_linear(vals in proptest::collection::vec(-10.0f64..10.0, 21)) {
            let (sys0, _, _) = four_tank();
            let sys = discretize_euler(&sys0, 1.0).unwrap();
            let gen = SignalGenerator::new(&[0.3], true).unwrap();
            let e = Mat::from_fn(4, 3, |i, j| 0.1 * (i as f64 + 1.0) - 0.05 * j as f64);
            let f = Mat::from_fn(2, 3, |i, j| 0.2 * (j as f64) - 0.3 * i as f64);
            let dist = DisturbanceChannel::new(e, f, Vector::zeros(3), gen, 1).unwrap();
            let x1 = Vector::from_row_slice(&vals[0..4]);
            let x2 = Vector::from_row_slice(&vals[4..8]);
            let u1 = Vector::from_row_slice(&vals[8..10]);
            let u2 = Vector::from_row_slice(&vals[10..12]);
            let w1 = Vector::from_row_slice(&vals[12..15]);
            let w2 = Vector::from_row_slice(&vals[15..18]);
            let (a, ya) = plant_step(&sys, &dist, &(&x1 + &x2), &(&u1 + &u2), &(&w1 + &w2)).unwrap();
            let (b1, yb1) = plant_step(&sys, &dist, &x1, &u1, &w1).unwrap();
            let (b2, yb2) = plant_step(&sys, &dist, &x2, &u2, &w2).unwrap();
            proptest::prop_assert!((a - b1 - b2).amax() < 1e-12);
            proptest::prop_assert!((ya - yb1 - yb2).amax() < 1e-12);
            // w = 0 reduces to the disturbance-free step
            let (c, _) = plant_step(&sys, &dist, &x1, &u1, &Vector::zeros(3)).unwrap();
            proptest::prop_assert_eq!(c, &sys.a * &x1 + &sys.b * &u1);
        }
    }
}
