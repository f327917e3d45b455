//! Linear structure constraints and the structured low-rank flow.
//!
//! A structured perturbation is written `E = P_S(Y)` with `Y` low rank and
//! `P_S` the Frobenius-orthogonal projection onto the structure subspace. `Y`
//! follows
//!
//! ```text
//! Y' = -P_Y(G) + Re<P_Y(G), P_S(Y)> Y,      G = gradient at E = P_S(Y),
//! ```
//!
//! where `P_Y(M) = M - (I - UU*) M (I - VV*)` projects onto the tangent space
//! of the rank-`r` manifold at `Y = U S V*`.

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StabError};
use crate::functional::Gradient;
use crate::integrator::{FlowField, LowRankFactors};
use crate::linalg::max_abs_diff;

/// Set of admissible entries of an `n x n` perturbation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    n: usize,
    /// Column-major membership bitmap.
    bits: Vec<bool>,
    /// `(row, col)` pairs, column-major order.
    entries: Vec<(usize, usize)>,
}

impl SparsityMask {
    pub fn from_entries(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut bits = vec![false; n * n];
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(StabError::Dimension {
                    expected: n,
                    found: i.max(j) + 1,
                });
            }
            bits[j * n + i] = true;
        }
        let entries = (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .filter(|&(i, j)| bits[j * n + i])
            .collect();
        Ok(Self { n, bits, entries })
    }

    /// Nonzero pattern of `a`.
    pub fn of(a: MatRef<'_, c64>) -> Self {
        let n = a.nrows();
        let pairs = (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .filter(|&(i, j)| a[(i, j)] != c64::new(0.0, 0.0))
            .collect::<Vec<_>>();
        Self::from_entries(n, pairs).expect("indices in range by construction")
    }

    pub fn full(n: usize) -> Self {
        Self::from_entries(n, (0..n).flat_map(|j| (0..n).map(move |i| (i, j)))).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.n + i]
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureKind {
    None,
    Sparsity { mask: SparsityMask },
    Toeplitz,
    RealEntries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructurePattern {
    pub kind: StructureKind,
    pub description: String,
}

impl StructurePattern {
    pub fn none() -> Self {
        Self {
            kind: StructureKind::None,
            description: "unstructured".into(),
        }
    }

    pub fn sparsity(mask: SparsityMask) -> Self {
        let description = format!("sparsity pattern, n = {}, nnz = {}", mask.dim(), mask.nnz());
        Self {
            kind: StructureKind::Sparsity { mask },
            description,
        }
    }

    /// The sparsity pattern of `a` itself.
    pub fn pattern_of(a: MatRef<'_, c64>) -> Self {
        Self::sparsity(SparsityMask::of(a))
    }

    pub fn toeplitz() -> Self {
        Self {
            kind: StructureKind::Toeplitz,
            description: "Toeplitz".into(),
        }
    }

    pub fn real_entries() -> Self {
        Self {
            kind: StructureKind::RealEntries,
            description: "real entries".into(),
        }
    }

    /// Verify that `a` itself lies in the structure subspace.
    pub fn check_contains(&self, a: MatRef<'_, c64>) -> Result<()> {
        let n = a.nrows();
        match &self.kind {
            StructureKind::Sparsity { mask } => {
                if mask.dim() != n {
                    return Err(StabError::Dimension {
                        expected: mask.dim(),
                        found: n,
                    });
                }
                for j in 0..n {
                    for i in 0..n {
                        if a[(i, j)] != c64::new(0.0, 0.0) && !mask.contains(i, j) {
                            return Err(StabError::StructureMismatch(format!(
                                "entry ({}, {}) is nonzero but outside the mask",
                                i + 1,
                                j + 1
                            )));
                        }
                    }
                }
                Ok(())
            }
            StructureKind::None => Ok(()),
            _ => {
                let scale = (0..n)
                    .flat_map(|j| (0..n).map(move |i| (i, j)))
                    .fold(0.0f64, |m, (i, j)| m.max(a[(i, j)].norm()));
                let gap = max_abs_diff(project(self, a)?.as_ref(), a);
                if gap > 1e-12 * scale.max(1.0) {
                    return Err(StabError::StructureMismatch(format!(
                        "matrix is not in the {} subspace (distance {gap:.3e})",
                        self.description
                    )));
                }
                Ok(())
            }
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if let StructureKind::Sparsity { mask } = &self.kind {
            if mask.dim() != n {
                return Err(StabError::Dimension {
                    expected: mask.dim(),
                    found: n,
                });
            }
        }
        Ok(())
    }
}

/// Orthogonal projection onto the structure subspace.
pub fn project(pattern: &StructurePattern, m: MatRef<'_, c64>) -> Result<Mat<c64>> {
    if m.nrows() != m.ncols() {
        return Err(StabError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let n = m.nrows();
    pattern.check_dim(n)?;
    Ok(match &pattern.kind {
        StructureKind::None => m.to_owned(),
        StructureKind::Sparsity { mask } => {
            let mut out = Mat::<c64>::zeros(n, n);
            for &(i, j) in mask.entries() {
                out[(i, j)] = m[(i, j)];
            }
            out
        }
        StructureKind::Toeplitz => {
            // one mean per diagonal d = j - i, indexed by d + n - 1
            let mut sums = vec![c64::new(0.0, 0.0); 2 * n - 1];
            for j in 0..n {
                for i in 0..n {
                    sums[j + n - 1 - i] += m[(i, j)];
                }
            }
            let means: Vec<c64> = sums
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let len = n - (k as isize - (n as isize - 1)).unsigned_abs();
                    *s / len as f64
                })
                .collect();
            Mat::from_fn(n, n, |i, j| means[j + n - 1 - i])
        }
        StructureKind::RealEntries => Mat::from_fn(n, n, |i, j| c64::new(m[(i, j)].re, 0.0)),
    })
}

/// `P_S(U S V*)`; sparsity masks only evaluate the admissible entries.
pub fn project_factors(pattern: &StructurePattern, y: &LowRankFactors) -> Result<Mat<c64>> {
    let n = y.dim();
    pattern.check_dim(n)?;
    match &pattern.kind {
        StructureKind::Sparsity { mask } => {
            let w = &y.u * &y.s;
            let r = y.rank();
            let mut out = Mat::<c64>::zeros(n, n);
            for &(i, j) in mask.entries() {
                let mut acc = c64::new(0.0, 0.0);
                for k in 0..r {
                    acc += w[(i, k)] * y.v[(j, k)].conj();
                }
                out[(i, j)] = acc;
            }
            Ok(out)
        }
        _ => project(pattern, y.to_dense().as_ref()),
    }
}

/// `P_S(G)` for a factored gradient.
pub fn project_gradient(pattern: &StructurePattern, grad: &Gradient) -> Result<Mat<c64>> {
    let n = grad.dim();
    pattern.check_dim(n)?;
    match &pattern.kind {
        StructureKind::Sparsity { mask } => {
            let x = grad.left_vectors();
            let y = grad.right_vectors();
            let coef = grad.coefficients();
            let mut out = Mat::<c64>::zeros(n, n);
            for &(i, j) in mask.entries() {
                let mut acc = c64::new(0.0, 0.0);
                for k in 0..coef.len() {
                    acc += x[(i, k)] * y[(j, k)].conj() * coef[k];
                }
                out[(i, j)] = acc;
            }
            Ok(out)
        }
        _ => project(pattern, grad.to_dense().as_ref()),
    }
}

/// `P_Y(M) = M - (I - UU*) M (I - VV*)`.
pub fn tangent_project(y: &LowRankFactors, m: MatRef<'_, c64>) -> Mat<c64> {
    let u = y.u.as_ref();
    let v = y.v.as_ref();
    let uhm = u.adjoint() * m; // r x n
    let mv = m * v; // n x r
    let uhmv = &uhm * v; // r x r
    let uu_m = u * &uhm;
    let m_vv = &mv * v.adjoint();
    let uu_m_vv = (u * uhmv) * v.adjoint();
    uu_m + m_vv - uu_m_vv
}

/// The structured field `-P_Y(G) + mu Y` at `Y = U S V*`, with
/// `mu = Re<P_Y(G), P_S(Y)>`.
pub struct StructuredField<'a> {
    grad: &'a Gradient,
    point: &'a LowRankFactors,
    gv: Mat<c64>,
    ghu: Mat<c64>,
    uhgv: Mat<c64>,
    mu: f64,
}

impl<'a> StructuredField<'a> {
    /// `e` is the materialized `P_S(Y)`.
    pub fn new(grad: &'a Gradient, point: &'a LowRankFactors, e: MatRef<'_, c64>) -> Self {
        let gv = grad.apply(point.v.as_ref());
        let ghu = grad.apply_adjoint(point.u.as_ref());
        let uhgv = point.u.adjoint() * &gv;
        // P_Y is self-adjoint: <P_Y G, E> = <G, P_Y E>
        let mu = grad.inner_dense(tangent_project(point, e).as_ref()).re;
        Self {
            grad,
            point,
            gv,
            ghu,
            uhgv,
            mu,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Dense `-P_Y(G) + mu Y` (test and diagnostics only).
    pub fn to_dense(&self) -> Mat<c64> {
        let pg = tangent_project(self.point, self.grad.to_dense().as_ref());
        self.point.to_dense() * faer::Scale(c64::new(self.mu, 0.0)) - pg
    }
}

impl FlowField for StructuredField<'_> {
    fn dim(&self) -> usize {
        self.point.dim()
    }

    fn apply(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let (u, s, v) = (&self.point.u, &self.point.s, &self.point.v);
        let vhm = v.adjoint() * m;
        // P_Y(G) M = U U* G M + G V V* M - U (U* G V) V* M
        let gm = self.grad.apply(m);
        let uhgm = u.adjoint() * gm;
        let pgm = u * uhgm + &self.gv * &vhm - u * (&self.uhgv * &vhm);
        let ym = u * (s * &vhm);
        ym * faer::Scale(c64::new(self.mu, 0.0)) - pgm
    }

    fn apply_adjoint(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let (u, s, v) = (&self.point.u, &self.point.s, &self.point.v);
        let uhm = u.adjoint() * m;
        // P_Y(G)* M = G* U U* M + V V* G* M - V (U* G V)* U* M
        let ghm = self.grad.apply_adjoint(m);
        let vhghm = v.adjoint() * ghm;
        let pgm = &self.ghu * &uhm + v * vhghm - v * (self.uhgv.adjoint() * &uhm);
        let yhm = v * (s.adjoint() * &uhm);
        yhm * faer::Scale(c64::new(self.mu, 0.0)) - pgm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob_inner, max_abs_diff};

    fn sample(n: usize, seed: usize) -> Mat<c64> {
        Mat::from_fn(n, n, |i, j| {
            let k = (i * 13 + j * 29 + seed * 11) % 31;
            c64::new(k as f64 / 31.0 - 0.4, ((k * 3) % 7) as f64 / 7.0 - 0.5)
        })
    }

    #[test]
    fn toeplitz_two_by_two() {
        let m = crate::linalg::from_real(2, 2, |i, j| [[1.0, 2.0], [3.0, 5.0]][i][j]);
        let p = project(&StructurePattern::toeplitz(), m.as_ref()).unwrap();
        let expect = crate::linalg::from_real(2, 2, |i, j| [[3.0, 2.0], [3.0, 3.0]][i][j]);
        assert!(max_abs_diff(p.as_ref(), expect.as_ref()) < 1e-15);
    }

    #[test]
    fn full_mask_is_identity() {
        let m = sample(5, 1);
        let p = project(&StructurePattern::sparsity(SparsityMask::full(5)), m.as_ref()).unwrap();
        assert_eq!(max_abs_diff(p.as_ref(), m.as_ref()), 0.0);
    }

    #[test]
    fn sparsity_zeroes_off_pattern_exactly() {
        let m = sample(4, 2);
        let mask = SparsityMask::from_entries(4, [(0, 0), (1, 2), (3, 3)]).unwrap();
        let p = project(&StructurePattern::sparsity(mask.clone()), m.as_ref()).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                if !mask.contains(i, j) {
                    assert_eq!(p[(i, j)], c64::new(0.0, 0.0));
                } else {
                    assert_eq!(p[(i, j)], m[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn factored_projection_matches_dense() {
        let n = 6;
        let y = LowRankFactors::from_dense(sample(n, 3).as_ref(), 2).unwrap();
        let a = sample(n, 4);
        for pattern in [
            StructurePattern::pattern_of(
                crate::linalg::from_real(
                    n,
                    n,
                    |i, j| if (i as isize - j as isize).abs() <= 1 { 1.0 } else { 0.0 },
                )
                .as_ref(),
            ),
            StructurePattern::toeplitz(),
            StructurePattern::real_entries(),
        ] {
            let dense = project(&pattern, y.to_dense().as_ref()).unwrap();
            let fact = project_factors(&pattern, &y).unwrap();
            assert!(max_abs_diff(dense.as_ref(), fact.as_ref()) < 1e-14);
            let _ = &a;
        }
    }

    #[test]
    fn tangent_projection_properties() {
        let n = 7;
        let y = LowRankFactors::from_dense(sample(n, 5).as_ref(), 2).unwrap();
        let m = sample(n, 6);
        let p1 = tangent_project(&y, m.as_ref());
        let p2 = tangent_project(&y, p1.as_ref());
        assert!(max_abs_diff(p1.as_ref(), p2.as_ref()) < 1e-12);

        // U X + W V* is fixed
        let x = Mat::<c64>::from_fn(2, n, |i, j| c64::new((i + j) as f64, 1.0));
        let w = Mat::<c64>::from_fn(n, 2, |i, j| c64::new(i as f64 - j as f64, 0.5));
        let t = &y.u * &x + &w * y.v.adjoint();
        let pt = tangent_project(&y, t.as_ref());
        assert!(max_abs_diff(pt.as_ref(), t.as_ref()) < 1e-12);

        let full = LowRankFactors::from_dense(sample(n, 5).as_ref(), n).unwrap();
        let pf = tangent_project(&full, m.as_ref());
        assert!(max_abs_diff(pf.as_ref(), m.as_ref()) < 1e-12);
    }

    #[test]
    fn self_adjoint_complex_linear_kinds() {
        let n = 6;
        let mask = SparsityMask::of(
            crate::linalg::from_real(n, n, |i, j| if (i + 2 * j) % 3 == 0 { 1.0 } else { 0.0 }).as_ref(),
        );
        for pattern in [StructurePattern::toeplitz(), StructurePattern::sparsity(mask)] {
            let x = sample(n, 7);
            let y = sample(n, 8);
            let lhs = frob_inner(project(&pattern, x.as_ref()).unwrap().as_ref(), y.as_ref());
            let rhs = frob_inner(x.as_ref(), project(&pattern, y.as_ref()).unwrap().as_ref());
            assert!((lhs - rhs).norm() < 1e-12);
        }
        let x = sample(n, 9);
        let y = sample(n, 10);
        let p = StructurePattern::real_entries();
        let lhs = frob_inner(project(&p, x.as_ref()).unwrap().as_ref(), y.as_ref()).re;
        let rhs = frob_inner(x.as_ref(), project(&p, y.as_ref()).unwrap().as_ref()).re;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mask_must_cover_matrix() {
        let a = sample(3, 1);
        let mask = SparsityMask::from_entries(3, [(0, 0)]).unwrap();
        assert!(StructurePattern::sparsity(mask).check_contains(a.as_ref()).is_err());
        assert!(StructurePattern::pattern_of(a.as_ref())
            .check_contains(a.as_ref())
            .is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let mask = SparsityMask::full(3);
        let m = sample(4, 0);
        assert!(project(&StructurePattern::sparsity(mask), m.as_ref()).is_err());
    }
}
