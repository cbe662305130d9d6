//! Closed-loop simulation. The simulator owns the true plant, the hidden disturbance and the
//! reference schedule; the controller only sees measurements.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Scenario;
use crate::error::Result;
use crate::linalg::Vector;
use crate::model::plant_step;
use crate::mpc::{CandidateReport, Controller, Formulation};
use crate::qp::{QpProblem, QpStatus};
use crate::regulation::{optimal_reference, OptimalReference, TrueDisturbance};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    /// Deviation coordinates.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Simulator-internal disturbance state.
    pub w: Vec<f64>,
    pub e_x_norm: f64,
    pub e_u_norm: f64,
    /// Optimal value including the history constant; `NaN` for held inputs.
    pub cost: f64,
    pub stage_cost: f64,
    pub feasible: bool,
    pub held: bool,
    pub slack: f64,
    pub trusted: bool,
    pub status: QpStatus,
    pub kkt: f64,
    pub iterations: usize,
    pub theta_y: Vec<f64>,
    /// Optimal reachable output reference at this step.
    pub y_star: Option<Vec<f64>>,
    /// Largest realized constraint violation `max(Cbar x + Dbar u - c, 0)`.
    pub violation: f64,
    pub input_recovery_gap: f64,
    pub candidate: Option<CandidateReport>,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLog {
    pub name: String,
    pub scenario_hash: String,
    /// Steps at which the schedule changed `w`.
    pub changes: Vec<usize>,
    /// Measurements carried noise, so the closed-loop guarantees do not apply.
    pub noisy: bool,
    pub x_op: Vec<f64>,
    pub u_op: Vec<f64>,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Default)]
pub struct RunOptions {
    /// Capture the QP of this step.
    pub dump_qp_at: Option<usize>,
}

pub struct RunOutput {
    pub log: SimLog,
    pub qp_dump: Option<QpProblem>,
}

fn oracle(sc: &Scenario, w: &Vector) -> Result<OptimalReference> {
    let c = &sc.mpc;
    let s = sc.disturbance.exo_matrix();
    optimal_reference(
        &sc.plant,
        TrueDisturbance { e: &sc.disturbance.e, f: &sc.disturbance.f, s: &s, w },
        &c.generator,
        &c.generator_a,
        &c.pa,
        &c.constraints,
        &c.sigma,
        c.facets,
    )
}

pub fn run(sc: &Scenario) -> Result<SimLog> {
    Ok(run_with(sc, &RunOptions::default())?.log)
}

pub fn run_with(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput> {
    let cfg = &sc.config;
    let dist = &sc.disturbance;
    let s = dist.exo_matrix();
    let consts = dist.constant_indices();
    let mut ctl = Controller::new(sc.mpc.clone())?;
    if let Some(t) = opts.dump_qp_at {
        ctl.request_dump(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    let noise = cfg.sim.noise;
    let with_oracle = cfg.sim.oracle && sc.mpc.formulation == Formulation::ArtificialReference;

    let mut x = sc.x0.clone();
    let mut w = dist.w0.clone();
    let mut edits = cfg.schedule.iter().peekable();
    let mut reference: Option<(usize, OptimalReference)> = None;
    let mut records = Vec::with_capacity(cfg.sim.steps);
    let mut qp_dump = None;
    let mut changes = Vec::new();
    for t in 0..cfg.sim.steps {
        if let Some(edit) = edits.next_if(|e| e.t == t) {
            for (copy, v) in edit.constants.iter().enumerate() {
                if let Some(v) = v {
                    w[consts[copy]] = *v;
                }
            }
            ctl.signal_break();
            changes.push(t);
            reference = None;
        }
        if with_oracle && reference.is_none() {
            reference = Some((t, oracle(sc, &w)?));
        }
        let y = &sc.plant.c * &x + &dist.f * &w;
        let (xm, ym) = if noise > 0.0 {
            let mut jitter = |v: &Vector| v.map(|e| e + rng.random_range(-noise..=noise));
            (jitter(&x), jitter(&y))
        } else {
            (x.clone(), y.clone())
        };
        let r = ctl.step(&xm, &ym)?;
        if let Some(dump) = ctl.take_dump() {
            qp_dump = Some(dump);
        }
        let violation = sc.constraints.max_violation(&x, &r.u).max(0.0);
        let y_star = reference.as_ref().map(|(t0, o)| o.y_at(t - t0).as_slice().to_vec());
        records.push(StepRecord {
            t,
            x: x.as_slice().to_vec(),
            u: r.u.as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            w: w.as_slice().to_vec(),
            e_x_norm: r.e_x.norm(),
            e_u_norm: r.e_u.norm(),
            cost: r.objective,
            stage_cost: r.stage_cost,
            feasible: r.feasible,
            held: r.held,
            slack: r.slack,
            trusted: r.trusted,
            status: r.status,
            kkt: r.kkt.max(),
            iterations: r.iterations,
            theta_y: r.theta.as_ref().map(|th| th.theta_y.as_slice().to_vec()).unwrap_or_default(),
            y_star,
            violation,
            input_recovery_gap: r.input_recovery_gap,
            candidate: r.candidate,
            solve_ms: r.solve_time.as_secs_f64() * 1e3,
        });
        let (xn, _) = plant_step(&sc.plant, dist, &x, &r.u, &w)?;
        x = xn;
        w = &s * &w;
    }
    let log = SimLog {
        name: cfg.name.clone(),
        scenario_hash: sc.hash.clone(),
        changes,
        noisy: noise > 0.0,
        x_op: sc.x_op.clone(),
        u_op: sc.u_op.clone(),
        records,
    };
    Ok(RunOutput { log, qp_dump })
}

impl SimLog {
    /// Plot-ready CSV: `t, x1.., u1.., y1.., e_x_norm, e_u_norm, cost, feasible, slack, solve_ms`,
    /// with `x`, `u` in absolute units (operating point added).
    pub fn write_csv<W: Write>(&self, mut out: W, with_timing: bool) -> std::io::Result<()> {
        let Some(first) = self.records.first() else {
            return writeln!(out, "t");
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.x.len()).map(|i| format!("x{i}")));
        header.extend((1..=first.u.len()).map(|i| format!("u{i}")));
        header.extend((1..=first.y.len()).map(|i| format!("y{i}")));
        header.extend(["e_x_norm", "e_u_norm", "cost", "feasible", "slack", "solve_ms"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        let num = |v: f64| format!("{v:.16e}");
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.x.iter().zip(&self.x_op).map(|(v, o)| num(v + o)));
            row.extend(r.u.iter().zip(&self.u_op).map(|(v, o)| num(v + o)));
            row.extend(r.y.iter().map(|v| num(*v)));
            row.push(num(r.e_x_norm));
            row.push(num(r.e_u_norm));
            row.push(num(r.cost));
            row.push(u8::from(r.feasible).to_string());
            row.push(num(r.slack));
            row.push(num(if with_timing { r.solve_ms } else { 0.0 }));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// SHA-256 over every logged value except solve times.
    pub fn fingerprint(&self) -> String {
        let mut copy = self.clone();
        for r in &mut copy.records {
            r.solve_ms = 0.0;
        }
        let json = serde_json::to_string(&copy).expect("log serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Steps from each segment start (step 0 and every change) until `|y - y*|_inf <= tol`
    /// holds for the rest of the segment; `None` if it never does.
    pub settling: Vec<(usize, Option<usize>)>,
    pub settle_tol: f64,
    /// Largest realized violation over steps whose nominal problem was feasible.
    pub max_violation: f64,
    /// Largest slack used by softened steps.
    pub max_softened_violation: f64,
    pub infeasible_steps: usize,
    pub held_steps: usize,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub max_kkt: f64,
    pub final_e_x_norm: f64,
    pub final_e_u_norm: f64,
    /// `|y(T) - y*(T)|_inf` (against zero without an oracle).
    pub final_tracking_error: f64,
    /// `|y*(T)|_inf`.
    pub final_reference_offset: f64,
}

impl Metrics {
    pub fn converged(&self) -> bool {
        self.settling.last().is_some_and(|(_, s)| s.is_some())
    }
}

fn tracking_error(r: &StepRecord) -> f64 {
    match &r.y_star {
        Some(ys) => r.y.iter().zip(ys).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        None => r.y.iter().map(|v| v.abs()).fold(0.0, f64::max),
    }
}

/// Settling tolerance when a scenario does not set one.
pub const DEFAULT_SETTLE_TOL: f64 = 0.05;

pub fn metrics(log: &SimLog, settle_tol: f64) -> Metrics {
    let recs = &log.records;
    let mut starts = vec![0];
    starts.extend(log.changes.iter().copied().filter(|&c| c > 0));
    let mut settling = Vec::new();
    for (i, &s) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(recs.len());
        let mut settled = None;
        for t in (s..end).rev() {
            if tracking_error(&recs[t]) > settle_tol {
                break;
            }
            settled = Some(t - s);
        }
        settling.push((s, settled));
    }
    let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    let solve: Vec<f64> = recs.iter().map(|r| r.solve_ms).collect();
    let last = recs.last();
    Metrics {
        settling,
        settle_tol,
        max_violation: fmax(&mut recs.iter().filter(|r| r.feasible).map(|r| r.violation)),
        max_softened_violation: fmax(&mut recs.iter().filter(|r| !r.feasible && !r.held).map(|r| r.slack)),
        infeasible_steps: recs.iter().filter(|r| !r.feasible).count(),
        held_steps: recs.iter().filter(|r| r.held).count(),
        mean_solve_ms: if solve.is_empty() { 0.0 } else { solve.iter().sum::<f64>() / solve.len() as f64 },
        max_solve_ms: fmax(&mut solve.iter().copied()),
        max_kkt: fmax(&mut recs.iter().filter(|r| !r.held).map(|r| r.kkt)),
        final_e_x_norm: last.map_or(0.0, |r| r.e_x_norm),
        final_e_u_norm: last.map_or(0.0, |r| r.e_u_norm),
        final_tracking_error: last.map_or(0.0, tracking_error),
        final_reference_offset: last
            .and_then(|r| r.y_star.as_ref())
            .map_or(0.0, |ys| ys.iter().map(|v| v.abs()).fold(0.0, f64::max)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Evaluates the scenario's assertions on a run.
pub fn check_assertions(sc: &Scenario, m: &Metrics) -> Vec<AssertionResult> {
    let a = &sc.config.assertions;
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(AssertionResult { name: name.into(), passed, detail });
    };
    if let Some(budget) = a.settle_budget {
        for (start, s) in &m.settling {
            let ok = s.is_some_and(|s| s <= budget);
            push(&format!("settled_after_{start}"), ok, format!("{s:?} steps (budget {budget}, tol {})", m.settle_tol));
        }
    }
    if let Some(v) = a.max_violation {
        push("constraint_violation", m.max_violation <= v, format!("{:.3e} <= {v:.1e}", m.max_violation));
    }
    if let Some(v) = a.max_kkt {
        push("kkt", m.max_kkt <= v, format!("{:.3e} <= {v:.1e}", m.max_kkt));
    }
    if let Some(v) = a.max_infeasible_steps {
        push("infeasible_steps", m.infeasible_steps <= v, format!("{} <= {v}", m.infeasible_steps));
    }
    if let Some(v) = a.final_tracking_tol {
        push("final_tracking", m.final_tracking_error <= v, format!("{:.3e} <= {v:.1e}", m.final_tracking_error));
    }
    if let Some(v) = a.min_final_offset {
        push("final_offset", m.final_reference_offset >= v, format!("{:.3e} >= {v:.1e}", m.final_reference_offset));
    }
    out
}

/// Summary of one scenario run; every field follows from the log and the scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub steps: usize,
    pub noisy: bool,
    pub converged: bool,
    pub passed: bool,
    pub metrics: Metrics,
    pub assertions: Vec<AssertionResult>,
    pub files: Vec<String>,
}

impl RunReport {
    pub fn new(sc: &Scenario, log: &SimLog) -> Self {
        let tol = sc.config.assertions.settle_tol.unwrap_or(DEFAULT_SETTLE_TOL);
        let m = metrics(log, tol);
        let assertions = check_assertions(sc, &m);
        Self {
            scenario: log.name.clone(),
            scenario_hash: log.scenario_hash.clone(),
            steps: log.records.len(),
            noisy: log.noisy,
            converged: m.converged(),
            passed: assertions.iter().all(|a| a.passed),
            metrics: m,
            assertions,
            files: Vec::new(),
        }
    }
}

