//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, SVector};

use crate::se3::Mat3;

pub type Vec9 = SVector<f64, 9>;

/// Column-major vectorisation of a 3x3 matrix.
///
/// Every z-chain quantity goes through this helper so the ordering stays
/// consistent between the lift, the input blocks and the inverse map.
pub fn vec9(m: &Mat3) -> Vec9 {
    // nalgebra storage is column-major already.
    Vec9::from_column_slice(m.as_slice())
}

/// Inverse of [`vec9`].
pub fn unvec9(v: &[f64]) -> Mat3 {
    Mat3::from_column_slice(&v[..9])
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    // Thin SVD is cheaper on the transposed problem when the matrix is wide.
    let sv = if a.ncols() > a.nrows() {
        a.transpose().singular_values()
    } else {
        a.singular_values()
    };
    let mut out: Vec<f64> = sv.iter().copied().collect();
    out.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    out
}

/// Number of singular values above `rel_tol * σ_max`.
pub fn numerical_rank(sv: &[f64], rel_tol: f64) -> usize {
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Number of rows with at least one nonzero entry.
pub fn nonzero_rows(a: &DMatrix<f64>) -> usize {
    a.row_iter().filter(|r| r.iter().any(|&x| x != 0.0)).count()
}

/// Smallest `q ≥ 1` with `A^q = 0`, or `None` if none up to `A.nrows()`.
pub fn nilpotency_index(a: &DMatrix<f64>) -> Option<usize> {
    let n = a.nrows();
    let mut power = a.clone();
    for q in 1..=n.max(1) {
        if power.iter().all(|&x| x == 0.0) {
            return Some(q);
        }
        power = &power * a;
    }
    None
}

/// `e^{A t}` for nilpotent `A` with `A^nu = 0`, as a finite Taylor sum.
pub fn expm_nilpotent(a: &DMatrix<f64>, t: f64, nu: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for i in 1..nu {
        term = &term * a * (t / i as f64);
        out += &term;
    }
    out
}
