//! Small dense helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Block-diagonal matrix with `count` copies of `block`.
pub fn blkdiag_repeat(block: &Mat, count: usize) -> Mat {
    let (r, c) = block.shape();
    let mut out = Mat::zeros(r * count, c * count);
    for i in 0..count {
        out.view_mut((i * r, i * c), (r, c)).copy_from(block);
    }
    out
}

/// Block-diagonal matrix from a list of blocks.
pub fn blkdiag(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn vec_max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Numerical rank from singular values, counting those above `tol * max(1, s_max)`.
pub fn rank(m: &Mat, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thresh = tol * smax.max(1.0);
    sv.iter().filter(|s| **s > thresh).count()
}

/// 2-norm condition number; infinite when the smallest singular value vanishes.
pub fn condition_number(m: &Mat) -> f64 {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues via a real Schur form. The unshifted iteration can stall on some inputs, so on
/// failure it is retried on orthogonally similar matrices.
pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let try_schur = |a: Mat| {
        nalgebra::linalg::Schur::try_new(a, f64::EPSILON, SCHUR_MAX_ITER)
            .map(|s| s.complex_eigenvalues().iter().cloned().collect::<Vec<_>>())
    };
    if let Some(ev) = try_schur(m.clone()) {
        return ev;
    }
    let rev = Mat::from_fn(n, n, |i, j| if i + j == n - 1 { 1.0 } else { 0.0 });
    if let Some(ev) = try_schur(&rev * m * &rev) {
        return ev;
    }
    for seed in 1..=8 {
        let v = Vector::from_fn(n, |i, _| ((i + 1) as f64 * seed as f64 * 0.7).sin() + 0.1);
        let v = &v / v.norm();
        let h = Mat::identity(n, n) - &v * v.transpose() * 2.0;
        if let Some(ev) = try_schur(&h * m * &h) {
            return ev;
        }
    }
    vec![Complex::new(f64::NAN, f64::NAN); n]
}

pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Sort complex numbers by (re, im) for pairing two root sets.
pub fn sort_complex(v: &mut [Complex<f64>]) {
    v.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Matrix from row-major nested vectors; rejects ragged input.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return None;
    }
    Some(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Symmetric part `(m + m')/2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Matrix power for small non-negative exponents.
pub fn mat_pow(m: &Mat, k: usize) -> Mat {
    let mut out = Mat::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_of_identities_is_identity() {
        let k = kron(&Mat::identity(2, 2), &Mat::identity(3, 3));
        assert_eq!(k, Mat::identity(6, 6));
    }

    #[test]
    fn blkdiag_places_blocks() {
        let a = Mat::from_element(1, 1, 2.0);
        let b = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let d = blkdiag(&[a, b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(2, 1)], 3.0);
        assert_eq!(d[(0, 2)], 0.0);
    }

    #[test]
    fn rank_detects_deficiency() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&m, 1e-8), 1);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(mat_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_none());
    }
}
