//! Linear feedback of the basic problem without inequality constraints.

use super::layout::Layout;
use super::problem::ParametricQp;
use super::{Formulation, MpcConfig};
use crate::error::{ImmpcError, Result};
use crate::linalg::{Mat, Vector};

/// `u(t) = K h(t)` with `h` the history vector in layout order.
#[derive(Debug, Clone)]
pub struct UnconstrainedGain {
    pub k: Mat,
    pub layout: Layout,
}

impl UnconstrainedGain {
    pub fn apply(&self, h: &Vector) -> Vector {
        &self.k * h
    }
}

/// Solves the equality-constrained problem once per unit history vector.
pub fn unconstrained_gain(cfg: &MpcConfig) -> Result<UnconstrainedGain> {
    let cfg = cfg.clone().with_formulation(Formulation::Basic);
    let qp = ParametricQp::build(&cfg)?;
    let prep = qp.prepare_unconstrained()?;
    let l = qp.layout.clone();
    let (m, np) = (l.m, l.n_pinned());
    let mut k = Mat::zeros(m, np);
    let none = Vector::zeros(0);
    for j in 0..np {
        let mut h = Vector::zeros(np);
        h[j] = 1.0;
        let r = qp.rhs(&h, None);
        let sol = prep.solve(&r.f, &r.beq, &none);
        if !sol.is_optimal() {
            return Err(ImmpcError::Solver(format!("unconstrained problem for history entry {j}: {:?}", sol.status)));
        }
        k.set_column(j, &sol.x.rows(l.u(0), m));
    }
    Ok(UnconstrainedGain { k, layout: l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::tests::four_tank_config;

    #[test]
    fn gain_reproduces_unconstrained_solution() {
        let cfg = four_tank_config();
        let g = unconstrained_gain(&cfg).unwrap();
        assert_eq!(g.k.shape(), (2, g.layout.n_pinned()));
        assert!(g.apply(&Vector::zeros(g.layout.n_pinned())).amax() == 0.0);
        let basic = cfg.with_formulation(Formulation::Basic);
        let qp = ParametricQp::build(&basic).unwrap();
        let prep = qp.prepare_unconstrained().unwrap();
        let h = Vector::from_fn(g.layout.n_pinned(), |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.1);
        let r = qp.rhs(&h, None);
        let sol = prep.solve(&r.f, &r.beq, &Vector::zeros(0));
        let u0 = sol.x.rows(g.layout.u(0), 2).into_owned();
        assert!((g.apply(&h) - u0).amax() < 1e-9);
    }
}
