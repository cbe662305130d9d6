use immpc::config::{four_tank_sine, ScenarioConfig, ScheduleEdit};
use immpc::internal_model::{char_poly, SignalGenerator};
use immpc::linalg::Vector;
use immpc::mpc::Controller;
use immpc::sim::{check_assertions, metrics, run, run_with, RunOptions, SimLog};

fn short(steps: usize) -> ScenarioConfig {
    let mut cfg = four_tank_sine();
    cfg.controller.horizon = 15;
    cfg.sim.steps = steps;
    cfg.sim.oracle = false;
    cfg.schedule = if steps > 30 { vec![ScheduleEdit { t: 30, constants: vec![Some(-0.5), None] }] } else { vec![] };
    cfg
}

fn run_cfg(cfg: &ScenarioConfig) -> SimLog {
    run(&cfg.build().unwrap()).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = short(40);
    cfg.sim.noise = 0.01;
    cfg.sim.seed = 3;
    let (a, b) = (run_cfg(&cfg), run_cfg(&cfg));
    assert!(a.noisy);
    assert_eq!(a.fingerprint(), b.fingerprint());
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    a.write_csv(&mut csv_a, false).unwrap();
    b.write_csv(&mut csv_b, false).unwrap();
    assert_eq!(csv_a, csv_b);
    cfg.sim.seed = 4;
    assert_ne!(run_cfg(&cfg).fingerprint(), a.fingerprint());
}

#[test]
fn future_schedule_edits_do_not_affect_the_past() {
    let base = short(45);
    let mut edited = base.clone();
    edited.schedule.push(ScheduleEdit { t: 40, constants: vec![None, Some(2.0)] });
    let (a, b) = (run_cfg(&base), run_cfg(&edited));
    for (ra, rb) in a.records.iter().zip(&b.records).take(40) {
        assert_eq!((&ra.x, &ra.u, &ra.y, ra.cost), (&rb.x, &rb.u, &rb.y, rb.cost), "step {}", ra.t);
    }
    assert_ne!(a.records[40].y, b.records[40].y);
    assert_eq!(b.changes, vec![30, 40]);
}

#[test]
fn generator_trajectory_is_annihilated_between_edits() {
    let cfg = short(60);
    let log = run_cfg(&cfg);
    let gen = SignalGenerator::new(&cfg.disturbance.frequencies, cfg.disturbance.include_constant).unwrap();
    let p = char_poly(&gen).coeffs;
    let nd = p.len() - 1;
    for t in nd..log.records.len() {
        if log.changes.iter().any(|&c| c > t - nd && c <= t) {
            continue;
        }
        for j in 0..log.records[t].w.len() {
            let s: f64 = p.iter().enumerate().map(|(i, c)| c * log.records[t - i].w[j]).sum();
            assert!(s.abs() < 1e-9, "t = {t}, component {j}: {s}");
        }
    }
}

#[test]
fn zero_disturbance_keeps_the_plant_at_rest() {
    let mut cfg = short(20);
    cfg.disturbance.w0 = vec![0.0; 6];
    cfg.schedule.clear();
    let log = run_cfg(&cfg);
    for r in &log.records {
        assert!(r.u.iter().all(|v| v.abs() < 1e-9), "step {}: {:?}", r.t, r.u);
        assert!(r.x.iter().all(|v| v.abs() < 1e-9));
        assert!(r.feasible);
    }
}

#[test]
fn identical_histories_give_identical_problems() {
    let sc_a = short(1).build().unwrap();
    let mut other = short(1);
    other.disturbance.w0 = vec![-3.0, 0.1, 0.7, 2.0, -0.4, 0.2];
    other.disturbance.f = Some(vec![vec![0.5; 6], vec![-0.25; 6]]);
    let sc_b = other.build().unwrap();
    let mut a = Controller::new(sc_a.mpc.clone()).unwrap();
    let mut b = Controller::new(sc_b.mpc.clone()).unwrap();
    a.request_dump(5);
    b.request_dump(5);
    for t in 0..6 {
        let x = Vector::from_fn(4, |i, _| ((t * 4 + i) as f64 * 0.3).sin());
        let y = Vector::from_fn(2, |i, _| ((t * 2 + i) as f64 * 0.7).cos());
        let (ra, rb) = (a.step(&x, &y).unwrap(), b.step(&x, &y).unwrap());
        assert_eq!(ra.u, rb.u);
    }
    let (da, db) = (a.take_dump().unwrap(), b.take_dump().unwrap());
    assert_eq!(da, db);
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    da.write_dump(&mut ta).unwrap();
    db.write_dump(&mut tb).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn qp_dump_is_captured_at_requested_step() {
    let sc = short(12).build().unwrap();
    let out = run_with(&sc, &RunOptions { dump_qp_at: Some(10) }).unwrap();
    let dump = out.qp_dump.unwrap();
    assert_eq!(dump.names.len(), dump.dim());
    let mut text = Vec::new();
    dump.write_dump(&mut text).unwrap();
    assert!(!text.is_empty());
    assert!(run_with(&sc, &RunOptions { dump_qp_at: Some(50) }).unwrap().qp_dump.is_none());
}

#[test]
fn csv_has_header_and_absolute_values() {
    let sc = short(5).build().unwrap();
    let log = run(&sc).unwrap();
    let mut out = Vec::new();
    log.write_csv(&mut out, true).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(
        lines[0],
        "t,x1,x2,x3,x4,u1,u2,y1,y2,e_x_norm,e_u_norm,cost,feasible,slack,solve_ms"
    );
    let first: Vec<f64> = lines[1].split(',').skip(1).take(4).map(|v| v.parse().unwrap()).collect();
    for (v, (dev, op)) in first.iter().zip(log.records[0].x.iter().zip(&log.x_op)) {
        assert!((v - (dev + op)).abs() < 1e-12);
    }
    let mut untimed = Vec::new();
    log.write_csv(&mut untimed, false).unwrap();
    let untimed = String::from_utf8(untimed).unwrap();
    assert!(untimed.lines().skip(1).all(|l| l.ends_with(",0.0000000000000000e0")));
}

#[test]
fn metrics_separate_softened_steps() {
    let cfg = short(40);
    let sc = cfg.build().unwrap();
    let mut log = run(&sc).unwrap();
    let clean = metrics(&log, 0.05);
    assert_eq!(clean.infeasible_steps, 0);
    assert_eq!(clean.max_softened_violation, 0.0);
    let r = &mut log.records[10];
    r.feasible = false;
    r.slack = 0.2;
    r.violation = 0.2;
    let m = metrics(&log, 0.05);
    assert_eq!(m.infeasible_steps, 1);
    assert_eq!(m.held_steps, 0);
    assert_eq!(m.max_softened_violation, 0.2);
    assert_eq!(m.max_violation, clean.max_violation);
    let checks = check_assertions(&sc, &m);
    let infeasible = checks.iter().find(|c| c.name == "infeasible_steps").unwrap();
    assert!(!infeasible.passed);
    assert_eq!(m.settling.len(), 2);
    assert_eq!(m.settling[1].0, 30);
}

#[test]
fn infeasible_start_falls_back_to_softened_problem() {
    let mut cfg = short(15);
    cfg.schedule.clear();
    // lower tanks 1 cm above their limit: no input brings them back within one step
    cfg.sim.x0 = Some(vec![0.0, 5.0, 0.0, 5.0]);
    let log = run_cfg(&cfg);
    let first = &log.records[0];
    assert!(!first.feasible);
    assert!(!first.held);
    assert!(first.slack > 0.0);
    let m = metrics(&log, 0.05);
    assert!(m.infeasible_steps >= 1);
    assert!(m.max_softened_violation > 0.0);
    // input rows stay hard
    for r in &log.records {
        for (u, op) in r.u.iter().zip(&log.u_op) {
            assert!(u + op >= -1e-6 && u + op <= 16.0 + 1e-6, "step {}: {}", r.t, u + op);
        }
    }
}

#[test]
fn unrecoverable_start_holds_the_input() {
    let mut cfg = short(3);
    // the terminal condition stays hard, so no slack makes this start feasible
    cfg.sim.x0 = Some(vec![40.0; 4]);
    let log = run_cfg(&cfg);
    let first = &log.records[0];
    assert!(first.held && !first.feasible);
    assert!(first.cost.is_nan());
    assert_eq!(first.u, vec![0.0, 0.0]);
    assert_eq!(metrics(&log, 0.05).held_steps, log.records.iter().filter(|r| r.held).count());
}

#[test]
fn lowpass_constraints_run_feasibly() {
    let mut cfg = short(60);
    cfg.controller.lowpass_alpha = Some(0.3);
    let log = run_cfg(&cfg);
    let m = metrics(&log, 0.05);
    assert_eq!(m.infeasible_steps, 0);
    assert!(m.max_kkt <= 1e-7);
    let plain = run_cfg(&short(60));
    assert_ne!(log.fingerprint(), plain.fingerprint());
}
