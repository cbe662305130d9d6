//! Property suites shared by the test targets and the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{four_tank_sine, four_tank_unreachable};
use crate::error::{ImmpcError, Result};
use crate::internal_model::{char_poly, MatrixFractionFilter, Polynomial, SignalGenerator};
use crate::linalg::{spectral_radius, Mat, Vector};
use crate::lyapunov::build_pa_uniform;
use crate::model::{plant_step, ConstraintPolytope, DiscreteLti, DisturbanceChannel};
use crate::mpc::velocity::VelocityMpc;
use crate::mpc::{rollout, Controller, Formulation, History, MpcConfig};
use crate::regulation::{optimal_reference, TrueDisturbance};
use crate::sim::{metrics, run, SimLog};

pub const SUITES: [&str; 4] = ["theorem1", "theorem2", "velocity", "oracle"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value <= threshold }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value >= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &str, checks: Vec<Check>) -> Self {
        Self { suite: suite.into(), passed: checks.iter().all(|c| c.passed), checks }
    }
}

pub fn run_suite(name: &str) -> Result<SuiteReport> {
    match name {
        "theorem1" => Ok(theorem1(20, 7)),
        "theorem2" => theorem2(),
        "velocity" => velocity(100),
        "oracle" => oracle(),
        other => Err(ImmpcError::InvalidArgument(format!("unknown suite '{other}' (expected one of {SUITES:?})"))),
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random instance: plant, hidden disturbance and filters whose denominator annihilates it.
pub struct RandomInstance {
    pub plant: DiscreteLti,
    pub dist: DisturbanceChannel,
    pub gx: MatrixFractionFilter,
    pub gu: MatrixFractionFilter,
}

fn random_numerator(rng: &mut ChaCha8Rng, max_deg: usize) -> Polynomial {
    let deg = rng.random_range(0..=max_deg);
    let mut poly = Polynomial::new(vec![1.0]).expect("constant polynomial");
    for _ in 0..deg {
        let root: f64 = rng.random_range(-0.8..0.8);
        poly = poly.mul(&Polynomial::new(vec![1.0, -root]).expect("linear factor"));
    }
    poly
}

/// `n <= 6`, `q <= 3`, numerators of degree up to 2 and an optional extra stable pole.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Result<RandomInstance> {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=3);
    let p = rng.random_range(1..=3);
    let gen = match rng.random_range(0..3) {
        0 => SignalGenerator::new(&[], true)?,
        1 => SignalGenerator::new(&[rng.random_range(0.2..2.8)], false)?,
        _ => SignalGenerator::new(&[rng.random_range(0.2..2.8)], true)?,
    };
    let mut a = uniform(rng, n, n);
    let rho = spectral_radius(&a).max(1e-3);
    a *= 0.95 / rho;
    let plant = DiscreteLti::new(a, uniform(rng, n, m), uniform(rng, p, n), 1.0)?;
    let q = gen.q();
    let dist = DisturbanceChannel::new(uniform(rng, n, q), uniform(rng, p, q), uniform(rng, q, 1).column(0).into(), gen.clone(), 1)?;
    let mut den = char_poly(&gen);
    if rng.random_bool(0.5) {
        den = den.mul(&Polynomial::new(vec![1.0, -rng.random_range(-0.5..0.5)])?);
    }
    let gx = MatrixFractionFilter::scalar(n, &random_numerator(rng, 2), den.clone())?;
    let gu = MatrixFractionFilter::scalar(m, &random_numerator(rng, 2), den)?;
    Ok(RandomInstance { plant, dist, gx, gu })
}

/// Largest relative mismatch between the recursions and the true plant over `horizon` steps
/// after `n_n + 1` warmup steps, driven by random inputs.
pub fn prediction_residual(inst: &RandomInstance, rng: &mut ChaCha8Rng, horizon: usize) -> Result<f64> {
    let (plant, dist) = (&inst.plant, &inst.dist);
    let t0 = inst.gx.nn() + 1;
    let s = dist.exo_matrix();
    let mut hist = History::new(plant.p(), &inst.gx, &inst.gu);
    let mut x = uniform(rng, plant.n(), 1).column(0).into_owned();
    let mut w = dist.w0.clone();
    let mut snapshot = None;
    let (mut xs, mut ys, mut us, mut exs, mut eus) = (vec![], vec![], vec![], vec![], vec![]);
    for t in 0..=t0 + horizon {
        let y = &plant.c * &x + &dist.f * &w;
        let ex = hist.observe(&x, &y);
        if t == t0 {
            snapshot = Some(hist.clone());
        }
        let u: Vector = uniform(rng, plant.m(), 1).column(0).into();
        let eu = hist.commit(&u);
        xs.push(x.clone());
        ys.push(y);
        us.push(u.clone());
        exs.push(ex);
        eus.push(eu);
        let (xn, _) = plant_step(plant, dist, &x, &u, &w)?;
        x = xn;
        w = &s * &w;
    }
    let snap = snapshot.expect("snapshot taken");
    let pred = rollout(plant, &inst.gx, &inst.gu, &snap, &eus[t0..t0 + horizon]);
    let mut worst: f64 = 0.0;
    let mut cmp = |a: &Vector, b: &Vector| {
        worst = worst.max((a - b).amax() / b.amax().max(1.0));
    };
    for k in 0..horizon {
        cmp(&pred.u[k], &us[t0 + k]);
        cmp(&pred.x[k], &xs[t0 + k + 1]);
        cmp(&pred.y[k], &ys[t0 + k + 1]);
        cmp(&pred.ex[k], &exs[t0 + k + 1]);
    }
    Ok(worst)
}

pub fn theorem1(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for i in 0..instances {
        let value = random_instance(&mut rng)
            .and_then(|inst| prediction_residual(&inst, &mut rng, 25))
            .unwrap_or(f64::INFINITY);
        checks.push(Check::at_most(format!("instance_{i}"), value, 1e-9));
    }
    SuiteReport::new("theorem1", checks)
}

/// Worst candidate residual and cost-decrease excess over trusted, feasible steps.
pub fn recursive_feasibility(log: &SimLog) -> (f64, f64) {
    let mut resid: f64 = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for r in log.records.iter().filter(|r| r.trusted && r.feasible) {
        if let Some(c) = &r.candidate {
            resid = resid.max(c.eq_residual).max(c.ineq_violation).max(c.pin_mismatch);
            excess = excess.max(r.cost - c.bound);
        }
    }
    (resid, excess)
}

pub fn theorem2() -> Result<SuiteReport> {
    let sc = four_tank_sine().build()?;
    let log = run(&sc)?;
    let (resid, excess) = recursive_feasibility(&log);
    let m = metrics(&log, 0.05);
    Ok(SuiteReport::new(
        "theorem2",
        vec![
            Check::at_most("shifted_candidate_residual", resid, 1e-7),
            Check::at_most("cost_decrease_excess", excess, 1e-5),
            Check::at_most("final_tracking_error", m.final_tracking_error, 1e-2),
        ],
    ))
}

/// Two-state plant with a constant disturbance and a box that never binds.
pub fn velocity_plant() -> Result<(DiscreteLti, DisturbanceChannel)> {
    let plant = DiscreteLti::new(
        Mat::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]),
        Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        1.0,
    )?;
    let gen = SignalGenerator::new(&[], true)?;
    let dist = DisturbanceChannel::new(
        Mat::from_row_slice(2, 1, &[0.3, -0.2]),
        Mat::from_row_slice(1, 1, &[-1.0]),
        Vector::from_element(1, 1.0),
        gen,
        1,
    )?;
    Ok((plant, dist))
}

/// Largest `|u_immpc - u_velocity|` over a closed-loop run.
pub fn velocity_gap(steps: usize) -> Result<f64> {
    let (plant, dist) = velocity_plant()?;
    let big = 1e3;
    let poly = ConstraintPolytope::from_box(&[-big, -big], &[big, big], &[-big], &[big])?;
    let (q, r, qy) = (Mat::identity(2, 2), Mat::identity(1, 1) * 0.5, Mat::identity(1, 1) * 2.0);
    let horizon = 10;
    let cfg = MpcConfig::new(plant.clone(), poly, dist.generator.clone(), horizon)?
        .with_weights(q.clone(), r.clone(), qy.clone())?
        .with_formulation(Formulation::Basic);
    let mut ctl = Controller::new(cfg)?;
    let mut vel = VelocityMpc::new(&plant, &q, &r, &qy, horizon)?;
    let mut x = Vector::zeros(2);
    let w = dist.w0.clone();
    let mut gap: f64 = 0.0;
    for _ in 0..steps {
        let y = &plant.c * &x + &dist.f * &w;
        let u = ctl.step(&x, &y)?.u;
        let uv = vel.control(&x, &y);
        gap = gap.max((&u - &uv).amax());
        x = plant_step(&plant, &dist, &x, &u, &w)?.0;
    }
    Ok(gap)
}

pub fn velocity(steps: usize) -> Result<SuiteReport> {
    Ok(SuiteReport::new("velocity", vec![Check::at_most("input_gap", velocity_gap(steps)?, 1e-8)]))
}

/// Scalar plant `x+ = 0.5 x + u`, `y = x + w`, `w = 1`, `|u| <= 0.3`, `sigma = 0.05`, `P_a = 5`:
/// the best admissible reference saturates `u = -0.25`, giving `y = 0.5` and cost `1.25`.
pub fn scalar_oracle_errors() -> Result<(f64, f64)> {
    let plant = DiscreteLti::new(
        Mat::from_element(1, 1, 0.5),
        Mat::from_element(1, 1, 1.0),
        Mat::from_element(1, 1, 1.0),
        1.0,
    )?;
    let gen = SignalGenerator::new(&[], true)?;
    let poly = ConstraintPolytope::from_box(&[-10.0], &[10.0], &[-0.3], &[0.3])?;
    let pa = build_pa_uniform(&gen, 1, 5.0)?;
    let sigma = Vector::from_element(poly.n_rows(), 0.05);
    let (e, f, s, w) = (Mat::zeros(1, 1), Mat::identity(1, 1), gen.s.clone(), Vector::from_element(1, 1.0));
    let o = optimal_reference(&plant, TrueDisturbance { e: &e, f: &f, s: &s, w: &w }, &gen, &gen, &pa, &poly, &sigma, 32)?;
    Ok(((o.param.theta_y[0] - 0.5).abs().max((o.param.theta_u[0] + 0.25).abs()), (o.objective - 1.25).abs()))
}

pub fn oracle() -> Result<SuiteReport> {
    let (param_err, obj_err) = scalar_oracle_errors()?;
    let sc = four_tank_unreachable().build()?;
    let log = run(&sc)?;
    let m = metrics(&log, 0.05);
    Ok(SuiteReport::new(
        "oracle",
        vec![
            Check::at_most("scalar_parameter_error", param_err, 1e-8),
            Check::at_most("scalar_objective_error", obj_err, 1e-8),
            Check::at_most("unreachable_tracking_error", m.final_tracking_error, 1e-2),
            Check::at_most("unreachable_violation", m.max_violation, 1e-6),
            Check::at_least("unreachable_offset", m.final_reference_offset, 0.1),
        ],
    ))
}
