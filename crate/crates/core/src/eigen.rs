//! Eigenvalues with paired unit left/right eigenvectors.
//!
//! Left and right eigenvectors are taken from the same Schur form, so the
//! pairing is exact. Each pair is phase-aligned so that `x* y` is real and
//! non-negative, and the spectrum is sorted by descending real part (ties by
//! descending imaginary part).

use std::cmp::Ordering;

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::{c64, Col, Mat, MatRef, Par};

use crate::error::{Result, StabError};
use crate::linalg::{ensure_square, is_real};

/// Below this value of `|x* y|` an eigenvalue is treated as near-defective.
pub const CONDITION_FLOOR: f64 = 1e-12;

/// One eigenvalue with its unit left and right eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenTriplet {
    pub lambda: c64,
    /// `x`, with `x* A = lambda x*`.
    pub left: Col<c64>,
    /// `y`, with `A y = lambda y`.
    pub right: Col<c64>,
    /// `x* y`, real and non-negative after phase alignment.
    pub condition: f64,
    /// Set when `condition < CONDITION_FLOOR`.
    pub ill_conditioned: bool,
}

/// Sorted eigenvalues plus eigenvector triplets for a leading prefix.
///
/// `triplets[i].lambda == values[i]` for every triplet. A full decomposition
/// has `triplets.len() == values.len()`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<c64>,
    pub triplets: Vec<EigenTriplet>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Spectral abscissa, `max Re(lambda)`.
    pub fn abscissa(&self) -> f64 {
        self.values.first().map_or(f64::NEG_INFINITY, |l| l.re)
    }

    pub fn real_parts(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|l| l.re)
    }
}

/// Number of eigenvalues with `Re(lambda) > -delta`.
pub fn count_delta_unstable(spec: &Spectrum, delta: f64) -> usize {
    debug_assert!(delta >= 0.0);
    spec.values.iter().filter(|l| l.re > -delta).count()
}

/// Full eigendecomposition with left/right triplets for every eigenvalue.
pub fn eig_triplets(a: MatRef<'_, c64>) -> Result<Spectrum> {
    eig_triplets_above(a, f64::NEG_INFINITY)
}

/// Eigenvalues for all of `a`, triplets only for `Re(lambda) > threshold`.
pub fn eig_triplets_above(a: MatRef<'_, c64>, threshold: f64) -> Result<Spectrum> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Spectrum {
            values: Vec::new(),
            triplets: Vec::new(),
        });
    }
    let raw = if is_real(a) { raw_real(a)? } else { raw_complex(a)? };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| descending(raw.values[i], raw.values[j]));

    let values: Vec<c64> = order.iter().map(|&k| raw.values[k]).collect();
    let mut triplets = Vec::new();
    for &k in &order {
        let lambda = raw.values[k];
        if lambda.re <= threshold {
            break;
        }
        triplets.push(build_triplet(lambda, &raw, k));
    }
    Ok(Spectrum { values, triplets })
}

/// Sorted eigenvalues only.
pub fn eigenvalues(a: MatRef<'_, c64>) -> Result<Vec<c64>> {
    ensure_square(a)?;
    let mut vals = a.eigenvalues().map_err(|e| StabError::Eigensolver(format!("{e:?}")))?;
    vals.sort_by(|x, y| descending(*x, *y));
    Ok(vals)
}

fn descending(x: c64, y: c64) -> Ordering {
    y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im))
}

struct RawEvd {
    values: Vec<c64>,
    left: Mat<c64>,
    right: Mat<c64>,
}

fn raw_complex(a: MatRef<'_, c64>) -> Result<RawEvd> {
    let n = a.nrows();
    let par = Par::Seq;
    let mut s = Diag::<c64>::zeros(n);
    let mut left = Mat::<c64>::zeros(n, n);
    let mut right = Mat::<c64>::zeros(n, n);
    let scratch = evd::evd_scratch::<c64>(
        n,
        ComputeEigenvectors::Yes,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    );
    evd::evd_cplx(
        a,
        s.as_mut(),
        Some(left.as_mut()),
        Some(right.as_mut()),
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|e| StabError::Eigensolver(format!("{e:?}")))?;
    let values = (0..n).map(|i| s[i]).collect();
    Ok(RawEvd { values, left, right })
}

/// Real Schur route. Complex pairs come back as `(re, im)` column pairs and
/// are expanded to complex eigenvectors here.
fn raw_real(a: MatRef<'_, c64>) -> Result<RawEvd> {
    let n = a.nrows();
    let par = Par::Seq;
    let ar = Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)].re);
    let mut s_re = Diag::<f64>::zeros(n);
    let mut s_im = Diag::<f64>::zeros(n);
    let mut vl = Mat::<f64>::zeros(n, n);
    let mut vr = Mat::<f64>::zeros(n, n);
    let scratch = evd::evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    );
    evd::evd_real(
        ar.as_ref(),
        s_re.as_mut(),
        s_im.as_mut(),
        Some(vl.as_mut()),
        Some(vr.as_mut()),
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|e| StabError::Eigensolver(format!("{e:?}")))?;

    let mut values = Vec::with_capacity(n);
    let mut left = Mat::<c64>::zeros(n, n);
    let mut right = Mat::<c64>::zeros(n, n);
    let mut j = 0;
    while j < n {
        let im = s_im[j];
        if im == 0.0 || j + 1 == n {
            values.push(c64::new(s_re[j], 0.0));
            for i in 0..n {
                left[(i, j)] = c64::new(vl[(i, j)], 0.0);
                right[(i, j)] = c64::new(vr[(i, j)], 0.0);
            }
            j += 1;
        } else {
            values.push(c64::new(s_re[j], im));
            values.push(c64::new(s_re[j + 1], s_im[j + 1]));
            for i in 0..n {
                let r = c64::new(vr[(i, j)], vr[(i, j + 1)]);
                let l = c64::new(vl[(i, j)], vl[(i, j + 1)]);
                right[(i, j)] = r;
                right[(i, j + 1)] = r.conj();
                left[(i, j)] = l;
                left[(i, j + 1)] = l.conj();
            }
            j += 2;
        }
    }
    Ok(RawEvd { values, left, right })
}

fn build_triplet(lambda: c64, raw: &RawEvd, k: usize) -> EigenTriplet {
    let n = raw.values.len();
    let mut right = Col::<c64>::from_fn(n, |i| raw.right[(i, k)]);
    let mut left = Col::<c64>::from_fn(n, |i| raw.left[(i, k)]);
    normalize(&mut right);
    normalize(&mut left);

    let mut xy = c64::new(0.0, 0.0);
    for i in 0..n {
        xy += left[i].conj() * right[i];
    }
    let modulus = xy.norm();
    if modulus > 0.0 {
        // x <- x * (xy/|xy|) turns x* y into |xy|.
        let phase = xy / modulus;
        for i in 0..n {
            left[i] *= phase;
        }
    }
    EigenTriplet {
        lambda,
        left,
        right,
        condition: modulus,
        ill_conditioned: modulus < CONDITION_FLOOR,
    }
}

fn normalize(v: &mut Col<c64>) {
    let norm = v.norm_l2();
    if norm > 0.0 {
        for i in 0..v.nrows() {
            v[i] /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob_norm;

    fn residuals(a: MatRef<'_, c64>, t: &EigenTriplet) -> (f64, f64) {
        let ay = a * t.right.as_ref();
        let xa = t.left.as_ref().adjoint() * a;
        let n = a.nrows();
        let mut rr = 0.0;
        let mut rl = 0.0;
        for i in 0..n {
            rr += (ay[i] - t.lambda * t.right[i]).norm_sqr();
            rl += (xa[i] - t.lambda * t.left[i].conj()).norm_sqr();
        }
        (rr.sqrt(), rl.sqrt())
    }

    fn check_invariants(a: MatRef<'_, c64>) {
        let spec = eig_triplets(a).unwrap();
        let scale = frob_norm(a).max(1.0);
        for t in &spec.triplets {
            assert!((t.left.norm_l2() - 1.0).abs() < 1e-12);
            assert!((t.right.norm_l2() - 1.0).abs() < 1e-12);
            let (rr, rl) = residuals(a, t);
            assert!(rr <= 1e-8 * scale, "right residual {rr}");
            assert!(rl <= 1e-8 * scale, "left residual {rl}");
            let mut xy = c64::new(0.0, 0.0);
            for i in 0..a.nrows() {
                xy += t.left[i].conj() * t.right[i];
            }
            assert!(xy.im.abs() < 1e-10 && xy.re >= 0.0);
        }
        for w in spec.values.windows(2) {
            assert!(w[0].re >= w[1].re);
        }
    }

    #[test]
    fn identity_triplets() {
        let a = Mat::<c64>::identity(2, 2);
        let spec = eig_triplets(a.as_ref()).unwrap();
        assert_eq!(spec.triplets.len(), 2);
        for t in &spec.triplets {
            assert!((t.lambda - c64::new(1.0, 0.0)).norm() < 1e-14);
            assert!((t.condition - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_ordering() {
        let a = crate::linalg::from_real(2, 2, |i, j| match (i, j) {
            (0, 0) => -1.0,
            (1, 1) => 2.0,
            _ => 0.0,
        });
        let spec = eig_triplets(a.as_ref()).unwrap();
        assert!((spec.values[0].re - 2.0).abs() < 1e-14);
        assert!((spec.values[1].re + 1.0).abs() < 1e-14);
        assert_eq!(count_delta_unstable(&spec, 0.0), 1);
    }

    #[test]
    fn real_route_with_complex_pairs() {
        // rotation block plus a real eigenvalue
        let a = crate::linalg::from_real(3, 3, |i, j| [[0.5, 2.0, 0.3], [-2.0, 0.5, 1.0], [0.0, 0.1, -1.0]][i][j]);
        check_invariants(a.as_ref());
        let spec = eig_triplets(a.as_ref()).unwrap();
        assert!((spec.values[0].im - spec.values[1].im.abs()).abs() < 1e-12);
        assert!(spec.values[0].im > 0.0);
    }

    #[test]
    fn complex_route() {
        let a = Mat::<c64>::from_fn(5, 5, |i, j| {
            c64::new(((3 * i + 5 * j) % 7) as f64 - 3.0, ((i + 2 * j) % 3) as f64 - 1.0)
        });
        check_invariants(a.as_ref());
    }

    #[test]
    fn prefix_only_above_threshold() {
        let a = crate::linalg::from_real(3, 3, |i, j| if i == j { [1.0, -2.0, 0.5][i] } else { 0.0 });
        let spec = eig_triplets_above(a.as_ref(), 0.0).unwrap();
        assert_eq!(spec.values.len(), 3);
        assert_eq!(spec.triplets.len(), 2);
    }

    #[test]
    fn rejects_non_square() {
        let a = Mat::<c64>::zeros(2, 3);
        assert!(matches!(
            eig_triplets(a.as_ref()),
            Err(StabError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn jordan_block_flagged() {
        let a = crate::linalg::from_real(2, 2, |i, j| if i == 0 && j == 1 { 1.0 } else { 0.0 });
        let spec = eig_triplets(a.as_ref()).unwrap();
        assert!(spec.triplets.iter().any(|t| t.ill_conditioned));
    }
}
