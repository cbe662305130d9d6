//! Internal-model MPC: the prediction problems over the disturbance-free recursions, the
//! receding-horizon controller, the shifted candidate used to check recursive feasibility,
//! and the unconstrained linear gain.

mod candidate;
mod controller;
mod gain;
mod layout;
mod prediction;
mod problem;
pub mod velocity;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, ImmpcError, Result};
use crate::internal_model::{char_poly, MatrixFractionFilter, Polynomial, SignalGenerator, ROOT_COINCIDENCE_TOL};
use crate::linalg::{min_sym_eigenvalue, Mat, Vector};
use crate::lyapunov::{build_pa_uniform, TerminalCost};
use crate::model::{ConstraintPolytope, DiscreteLti};
use crate::qp::soc::{compatible_facets, DEFAULT_FACETS};

pub use candidate::{check_candidate, shifted_candidate, CandidateReport};
pub use controller::{Controller, History, StepResult};
pub use gain::{unconstrained_gain, UnconstrainedGain};
pub use layout::{Layout, Series, Trajectory};
pub use prediction::{rollout, Rollout};
pub use problem::{ParametricQp, QpRhs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Regulation to `y = 0` with cost over `k = 0..=N`.
    Basic,
    /// Tracking of an optimized artificial reference with terminal ingredients.
    #[default]
    ArtificialReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Re-solve with state rows relaxed by one shared, heavily penalized slack; hold the last
    /// input if that fails too.
    #[default]
    SoftStateConstraints,
    HoldInput,
}

/// Slack penalty relative to `max |Q_y|`.
pub const SOFT_PENALTY: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub plant: DiscreteLti,
    pub constraints: ConstraintPolytope,
    pub horizon: usize,
    pub q: Mat,
    pub r: Mat,
    pub qy: Mat,
    pub pa: Mat,
    pub sigma: Vector,
    pub generator: SignalGenerator,
    pub generator_a: SignalGenerator,
    pub gx: MatrixFractionFilter,
    pub gu: MatrixFractionFilter,
    pub terminal: TerminalCost,
    /// Facet count of the polyhedral norm bounds (already rotation compatible).
    pub facets: usize,
    pub formulation: Formulation,
    pub fallback: FallbackPolicy,
    /// Constraint-side low-pass coefficient; `None` constrains the raw predicted state.
    pub lowpass_alpha: Option<f64>,
}

impl MpcConfig {
    /// Defaults: unit weights, `P_a = I`, `sigma = 0.05`, identity numerators over `p(z)` of the
    /// generator, reference generator equal to the generator, artificial-reference formulation.
    pub fn new(plant: DiscreteLti, constraints: ConstraintPolytope, generator: SignalGenerator, horizon: usize) -> Result<Self> {
        let (n, m, p) = (plant.n(), plant.m(), plant.p());
        if constraints.n() != n || constraints.m() != m {
            return dim_err(format!("constraints are over (n, m) = ({}, {})", constraints.n(), constraints.m()));
        }
        let poly = char_poly(&generator);
        let gx = MatrixFractionFilter::identity(n, poly.clone())?;
        let gu = MatrixFractionFilter::identity(m, poly)?;
        let q = Mat::identity(n, n);
        let r = Mat::identity(m, m);
        let terminal = TerminalCost::design(&gx, &gu, &q, &r)?;
        let pa = build_pa_uniform(&generator, p, 1.0)?;
        let facets = compatible_facets(&generator.frequencies, DEFAULT_FACETS);
        let sigma = Vector::from_element(constraints.n_rows(), 0.05);
        let cfg = Self {
            plant,
            constraints,
            horizon,
            q,
            r,
            qy: Mat::identity(p, p),
            pa,
            sigma,
            generator_a: generator.clone(),
            generator,
            gx,
            gu,
            terminal,
            facets,
            formulation: Formulation::default(),
            fallback: FallbackPolicy::default(),
            lowpass_alpha: None,
        };
        cfg.check_horizon_length()?;
        Ok(cfg)
    }

    fn check_horizon_length(&self) -> Result<()> {
        let need = self.nn().max(self.gx.nd()).max(self.gu.nd()).max(1);
        if self.horizon < need {
            return Err(ImmpcError::InvalidArgument(format!("horizon {} shorter than filter orders ({need})", self.horizon)));
        }
        Ok(())
    }

    pub fn with_weights(mut self, q: Mat, r: Mat, qy: Mat) -> Result<Self> {
        let (n, m, p) = (self.plant.n(), self.plant.m(), self.plant.p());
        if q.shape() != (n, n) || r.shape() != (m, m) || qy.shape() != (p, p) {
            return dim_err("weight matrices do not match the plant");
        }
        if min_sym_eigenvalue(&q) < -1e-12 {
            return Err(ImmpcError::InvalidArgument("Q must be positive semidefinite".into()));
        }
        if min_sym_eigenvalue(&r) <= 0.0 || min_sym_eigenvalue(&qy) <= 0.0 {
            return Err(ImmpcError::InvalidArgument("R and Q_y must be positive definite".into()));
        }
        self.terminal = TerminalCost::design(&self.gx, &self.gu, &q, &r)?;
        self.q = q;
        self.r = r;
        self.qy = qy;
        Ok(self)
    }

    pub fn with_pa(mut self, pa: Mat) -> Result<Self> {
        let d = self.plant.p() * self.generator_a.q();
        if pa.shape() != (d, d) {
            return dim_err(format!("P_a must be {d}x{d}"));
        }
        let s = crate::linalg::blkdiag_repeat(&self.generator_a.s, self.plant.p());
        if (s.transpose() * &pa * &s - &pa).amax() > 1e-10 * pa.amax().max(1.0) {
            return Err(ImmpcError::InvalidArgument("P_a is not invariant under the reference generator".into()));
        }
        if min_sym_eigenvalue(&pa) <= 0.0 {
            return Err(ImmpcError::InvalidArgument("P_a must be positive definite".into()));
        }
        self.pa = pa;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: Vector) -> Result<Self> {
        if sigma.len() != self.constraints.n_rows() || sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(ImmpcError::InvalidArgument("sigma needs one positive entry per constraint row".into()));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Restricts the output reference to the first `n_sa` frequencies; `P_a` is reset to the
    /// identity scaled by `pa_weight`.
    pub fn with_reference_frequencies(mut self, n_sa: usize, pa_weight: f64) -> Result<Self> {
        self.generator_a = self.generator.truncated(n_sa)?;
        self.pa = build_pa_uniform(&self.generator_a, self.plant.p(), pa_weight)?;
        Ok(self)
    }

    /// Replaces both filters; the denominators must agree and annihilate the generator.
    pub fn with_filters(mut self, gx: MatrixFractionFilter, gu: MatrixFractionFilter) -> Result<Self> {
        if gx.dim() != self.plant.n() || gu.dim() != self.plant.m() {
            return dim_err("filter dimensions do not match the plant");
        }
        if gx.denominator != gu.denominator {
            return Err(ImmpcError::InvalidArgument("G_x and G_u must share p(z)".into()));
        }
        let roots = gx.denominator.roots();
        for ev in self.generator.eigenvalues() {
            if !roots.iter().any(|r| (r - ev).norm() < ROOT_COINCIDENCE_TOL) {
                return Err(ImmpcError::InvalidArgument(format!("p(z) does not vanish at generator eigenvalue {ev}")));
            }
        }
        self.terminal = TerminalCost::design(&gx, &gu, &self.q, &self.r)?;
        self.gx = gx;
        self.gu = gu;
        self.check_horizon_length()?;
        Ok(self)
    }

    /// Identity numerators over a user-supplied denominator (normalized to `p_0 = 1`).
    pub fn with_denominator(self, coeffs: &[f64]) -> Result<Self> {
        let p0 = *coeffs.first().ok_or_else(|| ImmpcError::InvalidArgument("empty p(z)".into()))?;
        if p0 == 0.0 {
            return Err(ImmpcError::InvalidArgument("p_0 must be nonzero".into()));
        }
        let poly = Polynomial::new(coeffs.iter().map(|c| c / p0).collect())?;
        let gx = MatrixFractionFilter::identity(self.plant.n(), poly.clone())?;
        let gu = MatrixFractionFilter::identity(self.plant.m(), poly)?;
        self.with_filters(gx, gu)
    }

    /// Sets the minimum facet count; the value is raised to the next rotation-compatible count.
    pub fn with_min_facets(mut self, min_facets: usize) -> Self {
        self.facets = compatible_facets(&self.generator.frequencies, min_facets);
        self
    }

    pub fn with_formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn with_fallback(mut self, f: FallbackPolicy) -> Self {
        self.fallback = f;
        self
    }

    pub fn with_lowpass(mut self, alpha: Option<f64>) -> Result<Self> {
        if let Some(a) = alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(ImmpcError::InvalidArgument("low-pass coefficient must lie in (0, 1]".into()));
            }
        }
        self.lowpass_alpha = alpha;
        Ok(self)
    }

    pub fn nn(&self) -> usize {
        self.gx.nn()
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.gx.denominator
    }

    /// `n + m (n_n + n_du) + n n_dx`; the horizon must exceed it for the convergence result.
    pub fn horizon_bound(&self) -> usize {
        let (n, m) = (self.plant.n(), self.plant.m());
        n + m * (self.nn() + self.gu.nd()) + n * self.gx.nd()
    }

    pub fn horizon_ok(&self) -> bool {
        self.horizon > self.horizon_bound()
    }

    pub fn layout(&self) -> Layout {
        let (n, m, p) = (self.plant.n(), self.plant.m(), self.plant.p());
        let art = match self.formulation {
            Formulation::Basic => None,
            Formulation::ArtificialReference => {
                Some((self.generator.q(), self.generator_a.q(), self.constraints.n_rows() * self.generator.n_freq()))
            }
        };
        Layout::new(n, m, p, self.horizon, self.nn(), self.gx.nd(), self.gu.nd(), art)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{discretize_euler, four_tank};

    pub(crate) fn four_tank_config() -> MpcConfig {
        let (ct, poly, _) = four_tank();
        let plant = discretize_euler(&ct, 1.0).unwrap();
        let gen = SignalGenerator::new(&[2.0 * std::f64::consts::PI / 10.0], true).unwrap();
        MpcConfig::new(plant, poly, gen, 40)
            .unwrap()
            .with_weights(Mat::identity(4, 4) * 0.5, Mat::identity(2, 2) * 0.5, Mat::identity(2, 2) * 5.0)
            .unwrap()
    }

    #[test]
    fn horizon_bound_four_tank() {
        let cfg = four_tank_config();
        assert_eq!(cfg.horizon_bound(), 10);
        assert!(cfg.horizon_ok());
        assert_eq!(cfg.facets, 40);
        assert!(cfg.terminal.is_empty());
    }

    #[test]
    fn denominator_must_annihilate_generator() {
        let cfg = four_tank_config();
        assert!(cfg.clone().with_denominator(&[1.0, -1.0]).is_err());
        // extra stable pole is allowed
        let p = char_poly(&cfg.generator).mul(&Polynomial::new(vec![1.0, -0.5]).unwrap());
        let cfg = cfg.with_denominator(&p.coeffs).unwrap();
        assert_eq!(cfg.nn(), 4);
    }

    #[test]
    fn pa_must_be_invariant() {
        let cfg = four_tank_config();
        let mut pa = Mat::identity(6, 6);
        pa[(1, 1)] = 2.0;
        assert!(cfg.clone().with_pa(pa).is_err());
        assert!(cfg.with_pa(Mat::identity(6, 6) * 5.0).is_ok());
    }
}
