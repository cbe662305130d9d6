//! Forward evaluation of the disturbance-free recursions from measured histories.

use super::controller::History;
use crate::internal_model::MatrixFractionFilter;
use crate::linalg::Vector;
use crate::model::DiscreteLti;

/// Predicted sequences: `e_x`, `x`, `y` for `k = 1..=H` and `u` for `k = 0..H`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub ex: Vec<Vector>,
    pub x: Vec<Vector>,
    pub y: Vec<Vector>,
    pub u: Vec<Vector>,
}

struct Seq {
    first: isize,
    v: Vec<Vector>,
}

impl Seq {
    fn get(&self, k: isize) -> &Vector {
        &self.v[(k - self.first) as usize]
    }
}

/// Runs the recursions for `eu_future.len()` steps, driven by the filtered inputs
/// `e_u(0), e_u(1), ...`. Needs nothing but the measured histories.
pub fn rollout(
    plant: &DiscreteLti,
    gx: &MatrixFractionFilter,
    gu: &MatrixFractionFilter,
    hist: &History,
    eu_future: &[Vector],
) -> Rollout {
    let horizon = eu_future.len() as isize;
    let (nn, ndx, ndu) = (gx.nn(), gx.nd(), gu.nd());
    let p = &gx.denominator.coeffs;
    let qx = &gx.numerator;
    let qu = &gu.numerator;
    let rev = |d: &std::collections::VecDeque<Vector>, len: usize| -> Vec<Vector> {
        (0..len).rev().map(|i| d[i].clone()).collect()
    };
    let mut ex = Seq { first: -(ndx as isize), v: rev(&hist.ex, ndx + 1) };
    let mut eu = Seq { first: -(ndu as isize), v: rev(&hist.eu, ndu) };
    eu.v.extend(eu_future.iter().cloned());
    let mut x = Seq { first: 1 - nn as isize, v: rev(&hist.x, nn) };
    let mut y = Seq { first: 1 - nn as isize, v: rev(&hist.y, nn) };
    let mut u = Seq { first: -(nn as isize), v: rev(&hist.u, nn) };

    let mut out = Rollout { ex: Vec::new(), x: Vec::new(), y: Vec::new(), u: Vec::new() };
    for k in 0..horizon {
        let mut acc = &qu[0] * eu.get(k);
        for i in 1..qu.len() {
            acc += &qu[i] * eu.get(k - i as isize);
        }
        for i in 1..p.len() {
            acc -= u.get(k - i as isize) * p[i];
        }
        let uk = acc / p[0];
        u.v.push(uk.clone());
        out.u.push(uk);
    }
    for k in 1..=horizon {
        let mut prev = Vector::zeros(plant.n());
        for (i, qi) in qx.iter().enumerate() {
            prev += qi * ex.get(k - 1 - i as isize);
        }
        let mut rhs = &plant.a * prev;
        for (i, qi) in qu.iter().enumerate() {
            rhs += &plant.b * (qi * eu.get(k - 1 - i as isize));
        }
        for i in 1..qx.len() {
            rhs -= &qx[i] * ex.get(k - i as isize);
        }
        let exk = gx.q0_inv() * rhs;
        ex.v.push(exk.clone());

        let mut filt = Vector::zeros(plant.n());
        for (i, qi) in qx.iter().enumerate() {
            filt += qi * ex.get(k - i as isize);
        }
        let mut xk = filt.clone();
        let mut yk = &plant.c * &filt;
        for i in 1..p.len() {
            xk -= x.get(k - i as isize) * p[i];
            yk -= y.get(k - i as isize) * p[i];
        }
        let xk = xk / p[0];
        let yk = yk / p[0];
        x.v.push(xk.clone());
        y.v.push(yk.clone());
        out.ex.push(exk);
        out.x.push(xk);
        out.y.push(yk);
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::verify::{prediction_residual, random_instance};
    use rand::SeedableRng;

    #[test]
    fn recursions_match_random_plants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let inst = random_instance(&mut rng).unwrap();
            assert!(prediction_residual(&inst, &mut rng, 20).unwrap() < 1e-9);
        }
    }
}
