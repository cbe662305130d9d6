//! JSON scenario files: plant, hidden disturbance, reference schedule, controller settings,
//! simulation options and pass/fail assertions. All matrices are row-major nested arrays and
//! frequencies are in rad/sample.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ImmpcError, Result};
use crate::internal_model::SignalGenerator;
use crate::linalg::{mat_from_rows, Mat, Vector};
use crate::lyapunov::{build_pa, build_pa_uniform};
use crate::model::{discretize_euler, four_tank, ConstraintPolytope, ContinuousLti, DiscreteLti, DisturbanceChannel};
use crate::mpc::{FallbackPolicy, Formulation, MpcConfig};

pub type Rows = Vec<Vec<f64>>;

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ImmpcError::Scenario(msg.into()))
}

fn matrix(rows: &Rows, what: &str) -> Result<Mat> {
    mat_from_rows(rows).ok_or_else(|| ImmpcError::Scenario(format!("{what}: ragged matrix")))
}

/// A weight given as a scalar multiple of the identity, a diagonal, or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Matrix(Rows),
    Diagonal(Vec<f64>),
}

impl Weight {
    pub fn to_matrix(&self, dim: usize, what: &str) -> Result<Mat> {
        let m = match self {
            Weight::Scalar(s) => Mat::identity(dim, dim) * *s,
            Weight::Diagonal(d) => Mat::from_diagonal(&Vector::from_vec(d.clone())),
            Weight::Matrix(r) => matrix(r, what)?,
        };
        if m.shape() != (dim, dim) {
            return cfg_err(format!("{what} must be {dim}x{dim}"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// `"four_tank"` or absent for raw matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    /// Raw matrices are continuous time and get Euler-discretized.
    #[serde(default)]
    pub continuous: bool,
    #[serde(default = "one")]
    pub ts: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintSpec {
    Box { x_lo: Vec<f64>, x_hi: Vec<f64>, u_lo: Vec<f64>, u_hi: Vec<f64> },
    Rows { cbar: Rows, dbar: Rows, rhs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default = "yes")]
    pub include_constant: bool,
    /// Number of independent generator copies stacked in `w`.
    #[serde(default = "one_usize")]
    pub copies: usize,
    /// Zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Rows>,
    pub w0: Vec<f64>,
}

fn yes() -> bool {
    true
}

fn one_usize() -> usize {
    1
}

/// Sets the constant component of each listed copy of `w` at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEdit {
    pub t: usize,
    pub constants: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub horizon: usize,
    #[serde(default = "unit_weight")]
    pub q: Weight,
    #[serde(default = "unit_weight")]
    pub r: Weight,
    #[serde(default = "unit_weight")]
    pub qy: Weight,
    /// Scalar, per-entry diagonal, or full matrix.
    #[serde(default = "unit_weight")]
    pub pa: Weight,
    #[serde(default = "default_sigma")]
    pub sigma: Weight,
    /// Generator known to the controller; defaults to the disturbance generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_constant: Option<bool>,
    /// Number of leading frequencies used by the output reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_frequencies: Option<usize>,
    /// Overrides `p(z)`; normalized to `p_0 = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denominator: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_facets: Option<usize>,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub fallback: FallbackPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowpass_alpha: Option<f64>,
}

fn unit_weight() -> Weight {
    Weight::Scalar(1.0)
}

fn default_sigma() -> Weight {
    Weight::Scalar(0.05)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Amplitude of uniform measurement noise on `x` and `y`; zero disables it.
    #[serde(default)]
    pub noise: f64,
    /// Initial deviation from the operating point; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Evaluate the optimal reachable reference along the run.
    #[serde(default = "yes")]
    pub oracle: bool,
}

fn default_steps() -> usize {
    400
}

impl Default for SimSpec {
    fn default() -> Self {
        Self { steps: default_steps(), seed: 0, noise: 0.0, x0: None, oracle: true }
    }
}

/// Checks evaluated on the metrics of a run; absent entries are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    /// `|y - y*|_inf` threshold used for settling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_tol: Option<f64>,
    /// Steps allowed after each schedule change to settle within `settle_tol`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_violation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_kkt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_infeasible_steps: Option<usize>,
    /// Final `|y - y*|_inf` threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_tracking_tol: Option<f64>,
    /// Require a nonzero final reference offset (unreachable targets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_final_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub plant: PlantSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintSpec>,
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub schedule: Vec<ScheduleEdit>,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub assertions: Assertions,
}

/// Validated scenario with all numeric objects built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: DiscreteLti,
    pub constraints: ConstraintPolytope,
    pub disturbance: DisturbanceChannel,
    pub mpc: MpcConfig,
    /// Operating point added to `x`, `u` in plot output.
    pub x_op: Vec<f64>,
    pub u_op: Vec<f64>,
    pub x0: Vector,
    pub hash: String,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ImmpcError::Scenario(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build(&self) -> Result<Scenario> {
        let (plant, preset_poly, x_op, u_op) = self.build_plant()?;
        let (n, m, p) = (plant.n(), plant.m(), plant.p());
        let constraints = match (&self.constraints, preset_poly) {
            (Some(ConstraintSpec::Box { x_lo, x_hi, u_lo, u_hi }), _) => {
                ConstraintPolytope::from_box(x_lo, x_hi, u_lo, u_hi)?
            }
            (Some(ConstraintSpec::Rows { cbar, dbar, rhs }), _) => ConstraintPolytope::new(
                matrix(cbar, "constraints.cbar")?,
                matrix(dbar, "constraints.dbar")?,
                Vector::from_vec(rhs.clone()),
            )?,
            (None, Some(poly)) => poly,
            (None, None) => return cfg_err("constraints are required for raw plants"),
        };

        let d = &self.disturbance;
        let dgen = SignalGenerator::new(&d.frequencies, d.include_constant)?;
        let q = dgen.q() * d.copies;
        let e = match &d.e {
            Some(r) => matrix(r, "disturbance.e")?,
            None => Mat::zeros(n, q),
        };
        let f = match &d.f {
            Some(r) => matrix(r, "disturbance.f")?,
            None => Mat::zeros(p, q),
        };
        if e.nrows() != n || f.nrows() != p {
            return cfg_err(format!("disturbance E must have {n} rows and F {p} rows"));
        }
        let disturbance = DisturbanceChannel::new(e, f, Vector::from_vec(d.w0.clone()), dgen.clone(), d.copies)?;

        let mut last = None;
        for edit in &self.schedule {
            if last.is_some_and(|l| edit.t <= l) {
                return cfg_err("schedule times must be strictly increasing");
            }
            if edit.t >= self.sim.steps {
                return cfg_err(format!("schedule time {} beyond the {} simulated steps", edit.t, self.sim.steps));
            }
            if edit.constants.len() > d.copies {
                return cfg_err("schedule edit lists more constants than disturbance copies");
            }
            if !d.include_constant && edit.constants.iter().any(Option::is_some) {
                return cfg_err("schedule edits need a constant component in the generator");
            }
            last = Some(edit.t);
        }

        let c = &self.controller;
        let cgen = SignalGenerator::new(
            c.frequencies.as_deref().unwrap_or(&d.frequencies),
            c.include_constant.unwrap_or(d.include_constant),
        )?;
        let mut mpc = MpcConfig::new(plant.clone(), constraints.clone(), cgen, c.horizon)?;
        if let Some(den) = &c.denominator {
            mpc = mpc.with_denominator(den)?;
        }
        mpc = mpc.with_weights(c.q.to_matrix(n, "q")?, c.r.to_matrix(m, "r")?, c.qy.to_matrix(p, "qy")?)?;
        if let Some(nsa) = c.reference_frequencies {
            mpc = mpc.with_reference_frequencies(nsa, 1.0)?;
        }
        let qa = mpc.generator_a.q();
        let pa = match &c.pa {
            Weight::Scalar(s) => build_pa_uniform(&mpc.generator_a, p, *s)?,
            Weight::Diagonal(w) => build_pa(&mpc.generator_a, p, w)?,
            Weight::Matrix(_) => c.pa.to_matrix(p * qa, "pa")?,
        };
        mpc = mpc.with_pa(pa)?;
        let nr = constraints.n_rows();
        let sigma = match &c.sigma {
            Weight::Scalar(s) => Vector::from_element(nr, *s),
            Weight::Diagonal(v) => Vector::from_vec(v.clone()),
            Weight::Matrix(_) => return cfg_err("sigma must be a scalar or a vector"),
        };
        mpc = mpc.with_sigma(sigma)?;
        if let Some(k) = c.min_facets {
            mpc = mpc.with_min_facets(k);
        }
        mpc = mpc.with_formulation(c.formulation).with_fallback(c.fallback).with_lowpass(c.lowpass_alpha)?;

        if !(self.sim.noise >= 0.0) {
            return cfg_err("noise amplitude must be nonnegative");
        }
        let x0 = match &self.sim.x0 {
            Some(v) if v.len() == n => Vector::from_vec(v.clone()),
            Some(_) => return cfg_err(format!("sim.x0 must have {n} entries")),
            None => Vector::zeros(n),
        };
        Ok(Scenario {
            config: self.clone(),
            plant,
            constraints,
            disturbance,
            mpc,
            x_op: x_op.unwrap_or_else(|| vec![0.0; n]),
            u_op: u_op.unwrap_or_else(|| vec![0.0; m]),
            x0,
            hash: self.hash(),
        })
    }

    #[allow(clippy::type_complexity)]
    fn build_plant(&self) -> Result<(DiscreteLti, Option<ConstraintPolytope>, Option<Vec<f64>>, Option<Vec<f64>>)> {
        let ps = &self.plant;
        if !(ps.ts > 0.0) {
            return cfg_err("plant.ts must be positive");
        }
        match ps.preset.as_deref() {
            Some("four_tank") => {
                if ps.a.is_some() || ps.b.is_some() || ps.c.is_some() {
                    return cfg_err("a preset plant takes no matrices");
                }
                let (ct, poly, op) = four_tank();
                Ok((discretize_euler(&ct, ps.ts)?, Some(poly), Some(op.x_lin), Some(op.u_lin)))
            }
            Some(other) => cfg_err(format!("unknown plant preset '{other}'")),
            None => {
                let get = |m: &Option<Rows>, what: &str| -> Result<Mat> {
                    match m {
                        Some(r) => matrix(r, what),
                        None => cfg_err(format!("{what} is required without a preset")),
                    }
                };
                let (a, b, c) = (get(&ps.a, "plant.a")?, get(&ps.b, "plant.b")?, get(&ps.c, "plant.c")?);
                let plant = if ps.continuous {
                    discretize_euler(&ContinuousLti::new(a, b, c)?, ps.ts)?
                } else {
                    DiscreteLti::new(a, b, c, ps.ts)?
                };
                Ok((plant, None, None, None))
            }
        }
    }
}

/// The four-tank tracking scenario: `h2_ref = c + 0.5 cos(2 pi t / 10)`, `h4_ref = c`, with the
/// constant raised to 1.0 at the start and lowered to -1.0 at `t = 200`.
pub fn four_tank_sine() -> ScenarioConfig {
    let w = 2.0 * std::f64::consts::PI / 10.0;
    #[rustfmt::skip]
    let f = vec![
        vec![-1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, -1.0, -1.0, 0.0],
    ];
    ScenarioConfig {
        name: "four_tank_sine".into(),
        plant: PlantSpec { preset: Some("four_tank".into()), a: None, b: None, c: None, continuous: false, ts: 1.0 },
        constraints: None,
        disturbance: DisturbanceSpec {
            frequencies: vec![w],
            include_constant: true,
            copies: 2,
            e: None,
            f: Some(f),
            w0: vec![1.0, 0.5, 0.0, 1.0, 0.0, 0.0],
        },
        schedule: vec![ScheduleEdit { t: 200, constants: vec![Some(-1.0), Some(-1.0)] }],
        controller: ControllerSpec {
            horizon: 40,
            q: Weight::Scalar(0.5),
            r: Weight::Scalar(0.5),
            qy: Weight::Scalar(5.0),
            pa: Weight::Scalar(5.0),
            sigma: Weight::Scalar(0.05),
            frequencies: None,
            include_constant: None,
            reference_frequencies: None,
            denominator: None,
            min_facets: None,
            formulation: Formulation::ArtificialReference,
            fallback: FallbackPolicy::SoftStateConstraints,
            lowpass_alpha: None,
        },
        sim: SimSpec { steps: 400, seed: 0, noise: 0.0, x0: None, oracle: true },
        assertions: Assertions {
            settle_tol: Some(0.05),
            settle_budget: Some(150),
            max_violation: Some(1e-6),
            max_kkt: Some(1e-7),
            max_infeasible_steps: Some(0),
            final_tracking_tol: Some(1e-2),
            min_final_offset: None,
        },
    }
}

/// Same plant with `h2_ref = h4_ref = 5.0`, above the tank limits.
pub fn four_tank_unreachable() -> ScenarioConfig {
    let mut cfg = four_tank_sine();
    cfg.name = "four_tank_unreachable".into();
    cfg.disturbance.w0 = vec![5.0, 0.5, 0.0, 5.0, 0.0, 0.0];
    cfg.schedule.clear();
    cfg.sim.steps = 300;
    cfg.assertions = Assertions {
        settle_tol: None,
        settle_budget: None,
        max_violation: Some(1e-6),
        max_kkt: Some(1e-7),
        max_infeasible_steps: Some(0),
        final_tracking_tol: Some(1e-2),
        min_final_offset: Some(0.1),
    };
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_builds() {
        let sc = four_tank_sine().build().unwrap();
        assert_eq!(sc.mpc.horizon, 40);
        assert_eq!(sc.mpc.denominator().coeffs.len(), 4);
        assert_eq!(sc.disturbance.q(), 6);
        assert_eq!(sc.hash.len(), 64);
    }

    #[test]
    fn json_round_trip() {
        let cfg = four_tank_sine();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn rejects_bad_schedule() {
        let mut cfg = four_tank_sine();
        cfg.schedule.push(ScheduleEdit { t: 100, constants: vec![Some(0.0)] });
        assert!(cfg.build().is_err());
        let mut cfg = four_tank_sine();
        cfg.schedule[0].t = 400;
        assert!(cfg.build().is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_presets() {
        let mut v: serde_json::Value = serde_json::from_str(&four_tank_sine().to_json()).unwrap();
        v["plant"]["bogus"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
        let mut cfg = four_tank_sine();
        cfg.plant.preset = Some("three_tank".into());
        assert!(cfg.build().is_err());
    }

    #[test]
    fn weights_parse_in_all_forms() {
        let w: Weight = serde_json::from_str("2.0").unwrap();
        assert_eq!(w.to_matrix(2, "w").unwrap(), Mat::identity(2, 2) * 2.0);
        let w: Weight = serde_json::from_str("[1.0, 3.0]").unwrap();
        assert_eq!(w.to_matrix(2, "w").unwrap()[(1, 1)], 3.0);
        let w: Weight = serde_json::from_str("[[1.0, 0.5], [0.5, 1.0]]").unwrap();
        assert_eq!(w.to_matrix(2, "w").unwrap()[(0, 1)], 0.5);
        assert!(w.to_matrix(3, "w").is_err());
    }
}
