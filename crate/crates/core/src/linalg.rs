//! Small dense helpers shared by the solver modules.

use faer::linalg::solvers::Qr;
use faer::{c64, Mat, MatRef};

use crate::error::{Result, StabError};

/// Frobenius inner product `<X, Y> = trace(X* Y)`.
pub fn frob_inner(x: MatRef<'_, c64>, y: MatRef<'_, c64>) -> c64 {
    debug_assert_eq!(x.nrows(), y.nrows());
    debug_assert_eq!(x.ncols(), y.ncols());
    let mut acc = c64::new(0.0, 0.0);
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            acc += x[(i, j)].conj() * y[(i, j)];
        }
    }
    acc
}

pub fn frob_norm(x: MatRef<'_, c64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            acc += x[(i, j)].norm_sqr();
        }
    }
    acc.sqrt()
}

pub fn ensure_square(a: MatRef<'_, c64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(StabError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Orthonormal basis from a Householder QR, `min(rows, cols)` columns.
///
/// Householder reflectors give orthonormal columns even for a rank-deficient
/// input; the surplus columns then complete the basis deterministically.
pub fn thin_q(m: MatRef<'_, c64>) -> Mat<c64> {
    Qr::new(m).compute_thin_Q()
}

/// Horizontal concatenation `[a, b]`.
pub fn hcat(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Mat<c64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let (n, ka) = (a.nrows(), a.ncols());
    Mat::from_fn(
        n,
        ka + b.ncols(),
        |i, j| {
            if j < ka {
                a[(i, j)]
            } else {
                b[(i, j - ka)]
            }
        },
    )
}

/// `|| Q* Q - I ||_F`.
pub fn orthonormality_defect(q: MatRef<'_, c64>) -> f64 {
    let gram = q.adjoint() * q;
    let k = gram.nrows();
    let mut acc = 0.0;
    for j in 0..k {
        for i in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (gram[(i, j)] - c64::new(target, 0.0)).norm_sqr();
        }
    }
    acc.sqrt()
}

pub fn scale(m: MatRef<'_, c64>, s: f64) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}

pub fn is_real(m: MatRef<'_, c64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].im == 0.0))
}

/// Real matrix lifted to complex storage.
pub fn from_real(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Mat<c64> {
    Mat::from_fn(n, m, |i, j| c64::new(f(i, j), 0.0))
}
