//! Receding-horizon loop over measured histories.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use super::candidate::{check_candidate, shifted_candidate, CandidateReport};
use super::layout::Trajectory;
use super::problem::ParametricQp;
use super::{FallbackPolicy, Formulation, MpcConfig, SOFT_PENALTY};
use crate::error::{dim_err, Result};
use crate::internal_model::{FilterState, MatrixFractionFilter};
use crate::linalg::Vector;
use crate::qp::{KktResiduals, PreparedQp, QpProblem, QpStatus};
use crate::regulation::{eval_param, ArtificialReferenceParam};

/// Measured and filtered histories, most recent first.
#[derive(Debug, Clone)]
pub struct History {
    gx: MatrixFractionFilter,
    gu: MatrixFractionFilter,
    gx_state: FilterState,
    gu_state: FilterState,
    /// `x(t), x(t-1), ...` (`n_n` entries).
    pub x: VecDeque<Vector>,
    pub y: VecDeque<Vector>,
    /// `u(t-1), u(t-2), ...` (`n_n` entries).
    pub u: VecDeque<Vector>,
    /// `e_x(t), e_x(t-1), ...` (`n_dx + 1` entries).
    pub ex: VecDeque<Vector>,
    /// `e_u(t-1), ...` (`n_du` entries).
    pub eu: VecDeque<Vector>,
    seeded: bool,
}

fn push(d: &mut VecDeque<Vector>, v: Vector) {
    if !d.is_empty() {
        d.pop_back();
        d.push_front(v);
    }
}

impl History {
    pub fn new(p: usize, gx: &MatrixFractionFilter, gu: &MatrixFractionFilter) -> Self {
        let (n, m, nn) = (gx.dim(), gu.dim(), gx.nn());
        let zeros = |dim: usize, len: usize| (0..len).map(|_| Vector::zeros(dim)).collect();
        Self {
            gx_state: gx.new_state(),
            gu_state: gu.new_state(),
            gx: gx.clone(),
            gu: gu.clone(),
            x: zeros(n, nn),
            y: zeros(p, nn),
            u: zeros(m, nn),
            ex: zeros(n, gx.nd() + 1),
            eu: zeros(m, gu.nd()),
            seeded: false,
        }
    }

    /// Records a measurement and returns `e_x(t)`. The first call fills the state and output
    /// histories with copies of the measurement.
    pub fn observe(&mut self, x: &Vector, y: &Vector) -> Vector {
        if !self.seeded {
            self.gx_state.seed_raw(x);
            for v in self.x.iter_mut() {
                *v = x.clone();
            }
            for v in self.y.iter_mut() {
                *v = y.clone();
            }
            self.seeded = true;
        }
        let e = self.gx.inverse_step(&mut self.gx_state, x);
        push(&mut self.x, x.clone());
        push(&mut self.y, y.clone());
        push(&mut self.ex, e.clone());
        e
    }

    /// Records the applied input and returns `e_u(t)`.
    pub fn commit(&mut self, u: &Vector) -> Vector {
        let e = self.gu.inverse_step(&mut self.gu_state, u);
        push(&mut self.u, u.clone());
        push(&mut self.eu, e.clone());
        e
    }

    /// The input `G_u` would reproduce from `e_u` at the current step.
    pub fn forward_input(&self, eu: &Vector) -> Vector {
        let mut st = self.gu_state.clone();
        self.gu.forward_step(&mut st, eu)
    }

    /// History vector `h` in layout order.
    pub fn pinned(&self) -> Vector {
        let parts: Vec<&Vector> =
            self.ex.iter().chain(self.eu.iter()).chain(self.x.iter()).chain(self.y.iter()).chain(self.u.iter()).collect();
        let len = parts.iter().map(|v| v.len()).sum();
        let mut h = Vector::zeros(len);
        let mut off = 0;
        for v in parts {
            h.rows_mut(off, v.len()).copy_from(v);
            off += v.len();
        }
        h
    }

    pub fn last_u(&self) -> Vector {
        self.u.front().cloned().unwrap_or_else(|| Vector::zeros(self.gu.dim()))
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub t: usize,
    /// Applied input.
    pub u: Vector,
    /// Optimal value including the history-dependent constant (`NaN` when the input was held).
    pub objective: f64,
    /// Nominal problem solved.
    pub feasible: bool,
    /// Constraint relaxation used by the fallback.
    pub slack: f64,
    pub held: bool,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub theta: Option<ArtificialReferenceParam>,
    /// First-stage cost of the optimal trajectory.
    pub stage_cost: f64,
    pub e_x: Vector,
    pub e_u: Vector,
    /// `|u_0 - forward filter(e_u_0)|`.
    pub input_recovery_gap: f64,
    /// At least `n_n + 1` steps since the last disturbance break.
    pub trusted: bool,
    pub solve_time: Duration,
    /// The previous step's shifted solution checked against this step's problem.
    pub candidate: Option<CandidateReport>,
    pub trajectory: Option<Trajectory>,
}

struct Previous {
    traj: Trajectory,
    objective: f64,
    stage_cost: f64,
}

pub struct Controller {
    cfg: MpcConfig,
    qp: ParametricQp,
    prepared: PreparedQp,
    soft: Option<(ParametricQp, PreparedQp)>,
    hist: History,
    t: usize,
    last_break: usize,
    xf: Option<Vector>,
    prev: Option<Previous>,
    dump_at: Option<usize>,
    dumped: Option<QpProblem>,
}

impl Controller {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        let qp = ParametricQp::build(&cfg)?;
        let prepared = qp.prepare()?;
        let hist = History::new(cfg.plant.p(), &cfg.gx, &cfg.gu);
        Ok(Self {
            cfg,
            qp,
            prepared,
            soft: None,
            hist,
            t: 0,
            last_break: 0,
            xf: None,
            prev: None,
            dump_at: None,
            dumped: None,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn qp(&self) -> &ParametricQp {
        &self.qp
    }

    pub fn history(&self) -> &History {
        &self.hist
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Marks a change of the disturbance taking effect at the next step.
    pub fn signal_break(&mut self) {
        self.last_break = self.t;
    }

    /// Captures the QP of step `t` for inspection.
    pub fn request_dump(&mut self, t: usize) {
        self.dump_at = Some(t);
    }

    pub fn take_dump(&mut self) -> Option<QpProblem> {
        self.dumped.take()
    }

    fn stage_cost(&self, traj: &Trajectory) -> f64 {
        let c = &self.cfg;
        let quad = |v: &Vector, w: &crate::linalg::Mat| v.dot(&(w * v));
        let mut y = traj.y.get(0).clone();
        if let (Formulation::ArtificialReference, Some(th)) = (c.formulation, &traj.theta) {
            y -= eval_param(&th.theta_y, &c.generator_a, 0);
        }
        quad(traj.ex.get(0), &c.q) + quad(traj.eu.get(0), &c.r) + quad(&y, &c.qy)
    }

    pub fn step(&mut self, x: &Vector, y: &Vector) -> Result<StepResult> {
        let (n, p) = (self.cfg.plant.n(), self.cfg.plant.p());
        if x.len() != n || y.len() != p {
            return dim_err(format!("measurement sizes ({}, {}) for a plant with (n, p) = ({n}, {p})", x.len(), y.len()));
        }
        let t = self.t;
        let e_x = self.hist.observe(x, y);
        let xf = self.cfg.lowpass_alpha.map(|_| self.xf.get_or_insert_with(|| x.clone()).clone());
        let h = self.hist.pinned();
        let rhs = self.qp.rhs(&h, xf.as_ref());
        let layout = &self.qp.layout;

        let candidate = self.prev.take().map(|prev| {
            let cand = shifted_candidate(&self.cfg, &self.qp, &prev.traj);
            check_candidate(&self.qp, &cand, &h, xf.as_ref(), prev.objective - prev.stage_cost)
        });
        if self.dump_at == Some(t) {
            self.dumped = Some(self.qp.problem(&h, xf.as_ref())?);
        }

        let start = Instant::now();
        let sol = self.prepared.solve(&rhs.f, &rhs.beq, &rhs.bineq);
        let mut status = sol.status;
        let mut kkt = sol.kkt;
        let mut iterations = sol.iterations;
        let mut outcome = None;
        if sol.is_optimal() {
            outcome = Some((sol.x, sol.objective + rhs.constant, 0.0, true));
        } else {
            log::warn!("t={t}: nominal QP {:?}", sol.status);
            if self.cfg.fallback == FallbackPolicy::SoftStateConstraints {
                if self.soft.is_none() {
                    let weight = SOFT_PENALTY * self.cfg.qy.amax().max(1e-12);
                    let sq = self.qp.softened(weight);
                    let sp = sq.prepare()?;
                    self.soft = Some((sq, sp));
                }
                let (sq, sp) = self.soft.as_ref().expect("soft problem built");
                let srhs = sq.rhs(&h, xf.as_ref());
                let ssol = sp.solve(&srhs.f, &srhs.beq, &srhs.bineq);
                status = ssol.status;
                kkt = ssol.kkt;
                iterations += ssol.iterations;
                if ssol.is_optimal() {
                    let nf = layout.n_free();
                    let slack = ssol.x[nf];
                    outcome = Some((ssol.x.rows(0, nf).into_owned(), ssol.objective + srhs.constant, slack, false));
                } else {
                    log::warn!("t={t}: softened QP {:?}", ssol.status);
                }
            }
        }
        let solve_time = start.elapsed();

        let result = match outcome {
            Some((v, objective, slack, feasible)) => {
                let traj = layout.decode(&layout.join(&v, &h));
                let u = traj.u.get(0).clone();
                let eu0 = traj.eu.get(0).clone();
                let gap = (self.hist.forward_input(&eu0) - &u).amax();
                let stage_cost = self.stage_cost(&traj);
                if feasible {
                    self.prev = Some(Previous { traj: traj.clone(), objective, stage_cost });
                }
                StepResult {
                    t,
                    u,
                    objective,
                    feasible,
                    slack,
                    held: false,
                    status,
                    kkt,
                    iterations,
                    theta: traj.theta.clone(),
                    stage_cost,
                    e_x: e_x.clone(),
                    e_u: Vector::zeros(0),
                    input_recovery_gap: gap,
                    trusted: false,
                    solve_time,
                    candidate,
                    trajectory: Some(traj),
                }
            }
            None => StepResult {
                t,
                u: self.hist.last_u(),
                objective: f64::NAN,
                feasible: false,
                slack: f64::NAN,
                held: true,
                status,
                kkt,
                iterations,
                theta: None,
                stage_cost: f64::NAN,
                e_x: e_x.clone(),
                e_u: Vector::zeros(0),
                input_recovery_gap: 0.0,
                trusted: false,
                solve_time,
                candidate,
                trajectory: None,
            },
        };
        let mut result = result;
        result.trusted = t - self.last_break > self.cfg.nn();
        result.e_u = self.hist.commit(&result.u);
        if let (Some(alpha), Some(xf)) = (self.cfg.lowpass_alpha, self.xf.as_mut()) {
            *xf = &*xf * (1.0 - alpha) + x * alpha;
        }
        self.t += 1;
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::tests::four_tank_config;

    #[test]
    fn history_seeds_with_first_measurement() {
        let cfg = four_tank_config();
        let mut h = History::new(2, &cfg.gx, &cfg.gu);
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let y = Vector::from_vec(vec![0.5, -0.5]);
        let e = h.observe(&x, &y);
        // p(1) = 0, so a constant history filters to zero
        assert!(e.amax() < 1e-12);
        assert!(h.x.iter().all(|v| *v == x));
        assert!(h.y.iter().all(|v| *v == y));
        let pinned = h.pinned();
        assert_eq!(pinned.len(), cfg.layout().n_pinned());
        assert_eq!(pinned.rows(4, 4), x.rows(0, 4));
    }

    #[test]
    fn commit_shifts_input_history() {
        let cfg = four_tank_config();
        let mut h = History::new(2, &cfg.gx, &cfg.gu);
        h.observe(&Vector::zeros(4), &Vector::zeros(2));
        let u = Vector::from_vec(vec![1.0, -1.0]);
        let e = h.commit(&u);
        assert_eq!(e, u);
        assert_eq!(h.last_u(), u);
        assert_eq!(h.u[1], Vector::zeros(2));
    }

    #[test]
    fn zero_measurements_give_zero_input() {
        let mut ctl = Controller::new(four_tank_config()).unwrap();
        for t in 0..5 {
            let r = ctl.step(&Vector::zeros(4), &Vector::zeros(2)).unwrap();
            assert_eq!(r.t, t);
            assert!(r.feasible);
            assert!(r.u.amax() < 1e-9);
            assert!(r.objective.abs() < 1e-9);
            assert_eq!(r.trusted, t > 3);
        }
    }

    #[test]
    fn rejects_wrong_measurement_sizes() {
        let mut ctl = Controller::new(four_tank_config()).unwrap();
        assert!(ctl.step(&Vector::zeros(3), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn break_resets_trust() {
        let mut ctl = Controller::new(four_tank_config()).unwrap();
        for _ in 0..6 {
            ctl.step(&Vector::zeros(4), &Vector::zeros(2)).unwrap();
        }
        ctl.signal_break();
        let r = ctl.step(&Vector::zeros(4), &Vector::zeros(2)).unwrap();
        assert!(!r.trusted);
    }

    #[test]
    fn dump_captures_requested_step() {
        let mut ctl = Controller::new(four_tank_config()).unwrap();
        ctl.request_dump(1);
        ctl.step(&Vector::zeros(4), &Vector::zeros(2)).unwrap();
        assert!(ctl.take_dump().is_none());
        ctl.step(&Vector::zeros(4), &Vector::zeros(2)).unwrap();
        let d = ctl.take_dump().unwrap();
        assert_eq!(d.dim(), ctl.qp().n_free());
    }
}
