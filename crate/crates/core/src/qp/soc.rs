//! Polyhedral inner approximation of rows `z0'v + sum_j |(a_j'v, b_j'v)| <= bound`.
//!
//! Each norm is bounded by an auxiliary `t_j` through `K` supporting facets
//! `cos(phi_k) a + sin(phi_k) b <= t_j`, `phi_k = 2 pi k / K`. Since the facet maximum is at
//! least `cos(pi/K)` times the norm, the budget `cos(pi/K) z0'v + sum_j t_j <= cos(pi/K) bound`
//! implies the exact row.

use std::f64::consts::PI;

use crate::error::{ImmpcError, Result};
use crate::linalg::{Mat, Vector};

pub const DEFAULT_FACETS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SocRow {
    pub z0: Vector,
    pub pairs: Vec<(Vector, Vector)>,
    pub bound: f64,
}

impl SocRow {
    /// Exact left-hand side minus bound.
    pub fn exact_margin(&self, v: &Vector) -> f64 {
        let lhs = self.z0.dot(v) + self.pairs.iter().map(|(a, b)| a.dot(v).hypot(b.dot(v))).sum::<f64>();
        self.bound - lhs
    }
}

/// Linear rows over `[v; t]` with `t` the auxiliaries in row-then-pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct SocRows {
    pub a: Mat,
    pub b: Vector,
    pub n_aux: usize,
    pub facets: usize,
}

pub fn soc_rows(groups: &[SocRow], d: usize, facets: usize) -> Result<SocRows> {
    if facets < 8 || !facets.is_multiple_of(2) {
        return Err(ImmpcError::InvalidArgument(format!("facet count must be even and >= 8, got {facets}")));
    }
    let n_aux: usize = groups.iter().map(|g| g.pairs.len()).sum();
    let n_rows = groups.len() + n_aux * facets;
    let mut a = Mat::zeros(n_rows, d + n_aux);
    let mut b = Vector::zeros(n_rows);
    let shrink = (PI / facets as f64).cos();
    let mut row = 0;
    let mut aux = 0;
    for g in groups {
        if g.z0.len() != d || g.pairs.iter().any(|(p, q)| p.len() != d || q.len() != d) {
            return Err(ImmpcError::Dimension(format!("SOC row coefficients must have length {d}")));
        }
        let budget = row;
        row += 1;
        for j in 0..d {
            a[(budget, j)] = shrink * g.z0[j];
        }
        b[budget] = shrink * g.bound;
        for (pa, pb) in &g.pairs {
            a[(budget, d + aux)] = 1.0;
            for k in 0..facets {
                let phi = 2.0 * PI * k as f64 / facets as f64;
                let (s, c) = phi.sin_cos();
                for j in 0..d {
                    a[(row, j)] = c * pa[j] + s * pb[j];
                }
                a[(row, d + aux)] = -1.0;
                row += 1;
            }
            aux += 1;
        }
    }
    Ok(SocRows { a, b, n_aux, facets })
}

/// Largest facet value `max_k cos(phi_k) a + sin(phi_k) b`.
pub fn facet_max(a: f64, b: f64, facets: usize) -> f64 {
    (0..facets)
        .map(|k| {
            let (s, c) = (2.0 * PI * k as f64 / facets as f64).sin_cos();
            c * a + s * b
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Whether `v` satisfies the linearized rows with the tightest auxiliaries.
pub fn soc_feasible(groups: &[SocRow], v: &Vector, facets: usize, tol: f64) -> bool {
    let shrink = (PI / facets as f64).cos();
    groups.iter().all(|g| {
        let t: f64 = g.pairs.iter().map(|(a, b)| facet_max(a.dot(v), b.dot(v), facets)).sum();
        shrink * g.z0.dot(v) + t <= shrink * g.bound + tol
    })
}

/// Smallest even facet count `>= min_facets` whose facet set is invariant under rotation by
/// every angle in `frequencies`, so a rotated feasible pair stays feasible. Falls back to
/// `min_facets` (rounded up to even) when no such count exists below 4096.
pub fn compatible_facets(frequencies: &[f64], min_facets: usize) -> usize {
    let start = min_facets.max(8).next_multiple_of(2);
    let fits = |k: usize| {
        frequencies.iter().all(|w| {
            let x = w * k as f64 / (2.0 * PI);
            (x - x.round()).abs() < 1e-9
        })
    };
    (start..4096).step_by(2).find(|&k| fits(k)).unwrap_or(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn boundary_row(z0: f64) -> (SocRow, Vector) {
        // variables v = (c, a, b): row c + |(a, b)| <= 1 - 0.05
        let row = SocRow {
            z0: Vector::from_vec(vec![1.0, 0.0, 0.0]),
            pairs: vec![(Vector::from_vec(vec![0.0, 1.0, 0.0]), Vector::from_vec(vec![0.0, 0.0, 1.0]))],
            bound: 0.95,
        };
        (row, Vector::from_vec(vec![z0, 0.03, 0.04]))
    }

    #[test]
    fn facet_values_bracket_the_norm() {
        let m = facet_max(0.03, 0.04, 64);
        assert!(m <= 0.05 + 1e-15);
        assert!(m >= 0.05 * (PI / 64.0).cos() - 1e-15);
    }

    #[test]
    fn zero_pair_needs_only_nonnegative_aux() {
        let row = SocRow { z0: Vector::zeros(2), pairs: vec![(Vector::zeros(2), Vector::zeros(2))], bound: 1.0 };
        let rows = soc_rows(&[row], 2, 16).unwrap();
        assert_eq!(rows.n_aux, 1);
        assert_eq!(rows.a.nrows(), 17);
        // facet rows read -t <= 0
        for r in 1..17 {
            assert_eq!(rows.a[(r, 2)], -1.0);
            assert_eq!(rows.b[r], 0.0);
        }
        assert_abs_diff_eq!(rows.b[0], (PI / 16.0).cos(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_facet_counts() {
        assert!(soc_rows(&[], 1, 6).is_err());
        assert!(soc_rows(&[], 1, 33).is_err());
    }

    #[test]
    fn boundary_point_rejected_by_coarse_facets() {
        let (row, v) = boundary_row(0.9);
        assert_abs_diff_eq!(row.exact_margin(&v), 0.0, epsilon = 1e-15);
        // the exact boundary is never inside an inner approximation
        assert!(!soc_feasible(std::slice::from_ref(&row), &v, 8, 0.0));
        // slightly inside: K = 64 accepts, K = 8 still rejects
        let (row, v) = boundary_row(0.899);
        assert!(soc_feasible(std::slice::from_ref(&row), &v, 64, 0.0));
        assert!(!soc_feasible(std::slice::from_ref(&row), &v, 8, 0.0));
    }

    #[test]
    fn compatible_counts() {
        assert_eq!(compatible_facets(&[2.0 * PI / 10.0], 32), 40);
        assert_eq!(compatible_facets(&[], 32), 32);
        assert_eq!(compatible_facets(&[PI / 2.0], 32), 32);
        assert_eq!(compatible_facets(&[1.0], 32), 32);
    }

    #[test]
    fn rotation_invariance_with_compatible_count() {
        let w = 2.0 * PI / 10.0;
        let k = compatible_facets(&[w], 32);
        let (a, b) = (0.37, -0.81);
        let m0 = facet_max(a, b, k);
        let (s, c) = w.sin_cos();
        let m1 = facet_max(c * a - s * b, s * a + c * b, k);
        assert_abs_diff_eq!(m0, m1, epsilon = 1e-14);
    }
}
