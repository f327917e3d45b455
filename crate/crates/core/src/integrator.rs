//! Rank-adaptive low-rank stepper for matrix ODEs `E' = f(E)`.
//!
//! One step from `E0 = U0 S0 V0*` (rank `r0`):
//!
//! 1. `rho = min(2 r0, n)`.
//! 2. K-step: `K1 = U0 S0 + h f(E0) V0`; `U^` = first `rho` columns of
//!    `qr([K1, U0])`, `M^ = U^* U0`. L-step likewise with `L1 = V0 S0* + h f(E0)* U0`.
//! 3. S-step: `S^1 = M^ S0 N^* + h U^* f(E0) V^`.
//! 4. `S^1 = P Sigma Q*`; keep the smallest `r1` with tail mass `<= tau`.
//! 5. `U1 = U^ P1`, `V1 = V^ Q1`, `S1 = Sigma[..r1]`, rescaled to unit norm.
//!
//! The K, L and S sub-problems each take a single explicit Euler step, so the
//! field is only ever evaluated at `E0` (the S-step start point `U^ S^0 V^*`
//! equals `E0` because the augmented bases contain `U0` and `V0`). Callers
//! therefore hand in the field already evaluated at the current factors.

use faer::linalg::solvers::Svd;
use faer::{c64, Mat, MatRef};

use crate::error::{Result, StabError};
use crate::linalg::{frob_norm, hcat, orthonormality_defect, thin_q};

/// `E = U S V*` with orthonormal `U`, `V` and invertible (not necessarily
/// diagonal) `S`.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    pub u: Mat<c64>,
    pub s: Mat<c64>,
    pub v: Mat<c64>,
}

impl LowRankFactors {
    pub fn new(u: Mat<c64>, s: Mat<c64>, v: Mat<c64>) -> Result<Self> {
        let r = s.nrows();
        if s.ncols() != r || u.ncols() != r || v.ncols() != r {
            return Err(StabError::Dimension {
                expected: r,
                found: u.ncols().max(v.ncols()).max(s.ncols()),
            });
        }
        if u.nrows() != v.nrows() {
            return Err(StabError::Dimension {
                expected: u.nrows(),
                found: v.nrows(),
            });
        }
        Ok(Self { u, s, v })
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let us = &self.u * &self.s;
        us * self.v.adjoint()
    }

    /// `||U S V*||_F`, which equals `||S||_F` for orthonormal factors.
    pub fn frob_norm(&self) -> f64 {
        frob_norm(self.s.as_ref())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for j in 0..self.s.ncols() {
            for i in 0..self.s.nrows() {
                self.s[(i, j)] *= factor;
            }
        }
    }

    /// Largest of `||U*U - I||_F` and `||V*V - I||_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(self.u.as_ref()).max(orthonormality_defect(self.v.as_ref()))
    }

    pub fn smallest_singular_value(&self) -> Result<f64> {
        if self.rank() == 0 {
            return Ok(0.0);
        }
        let sv = self
            .s
            .singular_values()
            .map_err(|e| StabError::Factorization(format!("{e:?}")))?;
        Ok(sv.last().copied().unwrap_or(0.0))
    }

    /// Truncated SVD of a dense matrix, keeping `rank` leading triplets.
    pub fn from_dense(m: MatRef<'_, c64>, rank: usize) -> Result<Self> {
        let svd = Svd::new_thin(m).map_err(|e| StabError::Factorization(format!("{e:?}")))?;
        let r = rank.min(m.nrows()).min(m.ncols());
        let u = svd.U().subcols(0, r).to_owned();
        let v = svd.V().subcols(0, r).to_owned();
        let s = Mat::from_fn(r, r, |i, j| if i == j { svd.S()[i] } else { c64::new(0.0, 0.0) });
        Self::new(u, s, v)
    }

    /// Factors of `X diag(coef) Y*` from possibly non-orthonormal `X`, `Y`
    /// (`n x m`), reduced to numerical rank, at most `max_rank`.
    pub fn from_outer_products(x: MatRef<'_, c64>, coef: &[f64], y: MatRef<'_, c64>, max_rank: usize) -> Result<Self> {
        let n = x.nrows();
        let m = x.ncols();
        if m == 0 {
            return Err(StabError::DegenerateRank);
        }
        let qx = thin_q(x);
        let qy = thin_q(y);
        // core = Qx* X diag(coef) Y* Qy
        let rx = qx.adjoint() * x;
        let ry = qy.adjoint() * y;
        let rx_scaled = Mat::from_fn(rx.nrows(), m, |i, k| rx[(i, k)] * coef[k]);
        let core = rx_scaled * ry.adjoint();
        let svd = Svd::new(core.as_ref()).map_err(|e| StabError::Factorization(format!("{e:?}")))?;
        let sigmas: Vec<f64> = (0..core.nrows().min(core.ncols())).map(|i| svd.S()[i].re).collect();
        let top = sigmas.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return Err(StabError::DegenerateRank);
        }
        let numerical = sigmas.iter().filter(|&&s| s > top * 1e-13).count();
        let r = numerical.min(max_rank.max(1));
        let u = qx.as_ref() * svd.U().subcols(0, r);
        let v = qy.as_ref() * svd.V().subcols(0, r);
        let s = Mat::from_fn(r, r, |i, j| {
            if i == j {
                c64::new(sigmas[i], 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        debug_assert_eq!(u.nrows(), n);
        Self::new(u, s, v)
    }

    /// Adjust to exactly `r` columns: truncate the SVD of `S`, or pad with
    /// orthonormal complement directions carrying weight `pad` relative to
    /// the leading singular value.
    pub fn with_rank(&self, r: usize, pad: f64) -> Result<Self> {
        let n = self.dim();
        if r == 0 || r > n {
            return Err(StabError::Precondition(format!("rank {r} outside 1..={n}")));
        }
        let svd = Svd::new(self.s.as_ref()).map_err(|e| StabError::Factorization(format!("{e:?}")))?;
        let r0 = self.rank();
        let u_rot = &self.u * svd.U();
        let v_rot = &self.v * svd.V();
        let sig: Vec<f64> = (0..r0).map(|i| svd.S()[i].re).collect();
        if r <= r0 {
            let u = u_rot.subcols(0, r).to_owned();
            let v = v_rot.subcols(0, r).to_owned();
            let s = Mat::from_fn(r, r, |i, j| {
                if i == j {
                    c64::new(sig[i], 0.0)
                } else {
                    c64::new(0.0, 0.0)
                }
            });
            return Self::new(u, s, v);
        }
        let eye = Mat::<c64>::identity(n, n);
        let qu = thin_q(hcat(u_rot.as_ref(), eye.as_ref()).as_ref());
        let qv = thin_q(hcat(v_rot.as_ref(), eye.as_ref()).as_ref());
        let u = Mat::from_fn(n, r, |i, j| if j < r0 { u_rot[(i, j)] } else { qu[(i, j)] });
        let v = Mat::from_fn(n, r, |i, j| if j < r0 { v_rot[(i, j)] } else { qv[(i, j)] });
        let floor = pad * sig.first().copied().unwrap_or(1.0);
        let s = Mat::from_fn(r, r, |i, j| {
            if i != j {
                c64::new(0.0, 0.0)
            } else if i < r0 {
                c64::new(sig[i], 0.0)
            } else {
                c64::new(floor, 0.0)
            }
        });
        Self::new(u, s, v)
    }
}

/// Right-hand side `f(E0)` of a matrix ODE, evaluated at the current point
/// and exposed through products only.
pub trait FlowField {
    fn dim(&self) -> usize;
    /// `f(E0) M`.
    fn apply(&self, m: MatRef<'_, c64>) -> Mat<c64>;
    /// `f(E0)* M`.
    fn apply_adjoint(&self, m: MatRef<'_, c64>) -> Mat<c64>;
}

/// A field given by an explicit dense matrix.
#[derive(Debug, Clone)]
pub struct DenseField(pub Mat<c64>);

impl FlowField for DenseField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        &self.0 * m
    }

    fn apply_adjoint(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        self.0.adjoint() * m
    }
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepReport {
    pub rank_before: usize,
    pub rank_augmented: usize,
    pub rank_after: usize,
    /// Root-sum-square of the discarded singular values.
    pub discarded_tail: f64,
    /// Set by the driver once the step passes its acceptance test.
    pub accepted: bool,
    pub step_size: f64,
}

/// Smallest `r` with `sqrt(sum_{i >= r} sigma_i^2) <= tau` (0-based tail).
pub fn truncation_rank(sigmas: &[f64], tau: f64) -> usize {
    let mut tail = 0.0;
    let mut r = sigmas.len();
    while r > 0 {
        let next = tail + sigmas[r - 1] * sigmas[r - 1];
        if next.sqrt() > tau {
            break;
        }
        tail = next;
        r -= 1;
    }
    r
}

struct Augmented {
    u_hat: Mat<c64>,
    v_hat: Mat<c64>,
    s_hat: Mat<c64>,
}

fn augment(factors: &LowRankFactors, field: &dyn FlowField, h: f64) -> Result<Augmented> {
    let n = factors.dim();
    let r0 = factors.rank();
    if field.dim() != n {
        return Err(StabError::Dimension {
            expected: n,
            found: field.dim(),
        });
    }
    if r0 == 0 {
        return Err(StabError::DegenerateRank);
    }
    if !(h > 0.0) {
        return Err(StabError::Precondition(format!("step size must be positive, got {h}")));
    }
    let rho = (2 * r0).min(n);
    let (u0, s0, v0) = (&factors.u, &factors.s, &factors.v);

    // K-step
    let fv = field.apply(v0.as_ref());
    let k1 = u0 * s0 + fv * faer::Scale(c64::new(h, 0.0));
    let qk = thin_q(hcat(k1.as_ref(), u0.as_ref()).as_ref());
    let u_hat = qk.subcols(0, rho).to_owned();
    let m_hat = u_hat.adjoint() * u0;

    // L-step
    let fu = field.apply_adjoint(u0.as_ref());
    let l1 = v0 * s0.adjoint() + fu * faer::Scale(c64::new(h, 0.0));
    let ql = thin_q(hcat(l1.as_ref(), v0.as_ref()).as_ref());
    let v_hat = ql.subcols(0, rho).to_owned();
    let n_hat = v_hat.adjoint() * v0;

    // S-step
    let s_start = m_hat * s0 * n_hat.adjoint();
    let f_vhat = field.apply(v_hat.as_ref());
    let s_hat = s_start + (u_hat.adjoint() * f_vhat) * faer::Scale(c64::new(h, 0.0));

    Ok(Augmented { u_hat, v_hat, s_hat })
}

fn finish(aug: Augmented, r0: usize, h: f64, target: Truncate) -> Result<(LowRankFactors, StepReport)> {
    let rho = aug.s_hat.nrows();
    let svd = Svd::new(aug.s_hat.as_ref()).map_err(|e| StabError::Factorization(format!("{e:?}")))?;
    let sigmas: Vec<f64> = (0..rho).map(|i| svd.S()[i].re).collect();
    let r1 = match target {
        Truncate::Tolerance(tau) => truncation_rank(&sigmas, tau),
        Truncate::Fixed(r) => {
            let r = r.min(rho);
            let top = sigmas.first().copied().unwrap_or(0.0);
            if r == 0 || !(sigmas[r - 1] > top * 1e-15) {
                return Err(StabError::DegenerateRank);
            }
            r
        }
    };
    if r1 == 0 {
        return Err(StabError::DegenerateRank);
    }
    let tail = sigmas[r1..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let kept = sigmas[..r1].iter().map(|s| s * s).sum::<f64>().sqrt();
    if !(kept > 0.0) || !kept.is_finite() {
        return Err(StabError::DegenerateRank);
    }
    let u1 = aug.u_hat.as_ref() * svd.U().subcols(0, r1);
    let v1 = aug.v_hat.as_ref() * svd.V().subcols(0, r1);
    let s1 = Mat::from_fn(r1, r1, |i, j| {
        if i == j {
            c64::new(sigmas[i] / kept, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    let report = StepReport {
        rank_before: r0,
        rank_augmented: rho,
        rank_after: r1,
        discarded_tail: tail,
        accepted: false,
        step_size: h,
    };
    Ok((LowRankFactors::new(u1, s1, v1)?, report))
}

enum Truncate {
    Tolerance(f64),
    Fixed(usize),
}

/// One rank-adaptive step of size `h`; `field` must be evaluated at `factors`.
/// The returned core is rescaled to unit Frobenius norm.
pub fn adaptive_step(
    factors: &LowRankFactors,
    field: &dyn FlowField,
    h: f64,
    tau_rank: f64,
) -> Result<(LowRankFactors, StepReport)> {
    if !(tau_rank > 0.0) {
        return Err(StabError::Precondition(format!(
            "tau_rank must be positive, got {tau_rank}"
        )));
    }
    let aug = augment(factors, field, h)?;
    finish(aug, factors.rank(), h, Truncate::Tolerance(tau_rank))
}

/// Same machinery as [`adaptive_step`] with the rank pinned to `r`.
pub fn fixed_rank_step(
    factors: &LowRankFactors,
    field: &dyn FlowField,
    h: f64,
    r: usize,
) -> Result<(LowRankFactors, StepReport)> {
    if r != factors.rank() {
        return Err(StabError::Precondition(format!(
            "fixed-rank step expects rank {r}, factors have rank {}",
            factors.rank()
        )));
    }
    let aug = augment(factors, field, h)?;
    finish(aug, factors.rank(), h, Truncate::Fixed(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn test_matrix(n: usize, m: usize, seed: usize) -> Mat<c64> {
        Mat::from_fn(n, m, |i, j| {
            let k = (i * 31 + j * 17 + seed * 7) % 23;
            c64::new(k as f64 / 23.0 - 0.5, ((k * 5) % 11) as f64 / 11.0 - 0.5)
        })
    }

    fn unit_factors(n: usize, r: usize) -> LowRankFactors {
        let m = test_matrix(n, n, 1);
        let mut f = LowRankFactors::from_dense(m.as_ref(), r).unwrap();
        let norm = f.frob_norm();
        f.scale_in_place(1.0 / norm);
        f
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(truncation_rank(&[3.0, 4e-9, 3e-9, 0.0], 1e-8), 1);
        assert_eq!(truncation_rank(&[3.0, 2.0, 1.0], 0.5), 3);
        assert_eq!(truncation_rank(&[3.0, 2.0, 1.0], 1.0), 2);
        assert_eq!(truncation_rank(&[1e-9, 1e-9], 1e-8), 0);
        assert_eq!(truncation_rank(&[], 1.0), 0);
    }

    #[test]
    fn zero_field_reproduces_input() {
        let f0 = unit_factors(8, 3);
        let zero = DenseField(Mat::zeros(8, 8));
        let (f1, rep) = adaptive_step(&f0, &zero, 0.1, 1e-10).unwrap();
        assert_eq!(rep.rank_augmented, 6);
        assert!(rep.rank_after <= 6);
        assert!(max_abs_diff(f0.to_dense().as_ref(), f1.to_dense().as_ref()) < 1e-10);
        assert!(f1.orthonormality_defect() < 1e-10);
        assert!((f1.frob_norm() - 1.0).abs() < 1e-14);

        let (f2, rep2) = fixed_rank_step(&f0, &zero, 0.1, 3).unwrap();
        assert_eq!(rep2.rank_after, 3);
        assert!(max_abs_diff(f0.to_dense().as_ref(), f2.to_dense().as_ref()) < 1e-10);
    }

    #[test]
    fn full_rank_matches_dense_euler() {
        let n = 6;
        let f0 = unit_factors(n, n);
        let field = DenseField(test_matrix(n, n, 3));
        let h = 1e-2;
        let (f1, _) = fixed_rank_step(&f0, &field, h, n).unwrap();
        let e0 = f0.to_dense();
        let euler = &e0 + &field.0 * faer::Scale(c64::new(h, 0.0));
        let norm = frob_norm(euler.as_ref());
        let euler = crate::linalg::scale(euler.as_ref(), 1.0 / norm);
        assert!(max_abs_diff(f1.to_dense().as_ref(), euler.as_ref()) < 1e-12);
    }

    #[test]
    fn rank_ceiling() {
        let n = 5;
        let f0 = unit_factors(n, 3);
        let field = DenseField(test_matrix(n, n, 4));
        let (f1, rep) = adaptive_step(&f0, &field, 0.5, 1e-14).unwrap();
        assert_eq!(rep.rank_augmented, 5);
        assert!(f1.rank() <= 5);
    }

    #[test]
    fn fixed_rank_rejects_mismatch() {
        let f0 = unit_factors(6, 2);
        let zero = DenseField(Mat::zeros(6, 6));
        assert!(fixed_rank_step(&f0, &zero, 0.1, 3).is_err());
    }

    #[test]
    fn with_rank_pads_and_truncates() {
        let f0 = unit_factors(7, 2);
        let up = f0.with_rank(4, 1e-6).unwrap();
        assert_eq!(up.rank(), 4);
        assert!(up.orthonormality_defect() < 1e-12);
        assert!(max_abs_diff(up.to_dense().as_ref(), f0.to_dense().as_ref()) < 1e-5);
        let down = up.with_rank(2, 0.0).unwrap();
        assert!(max_abs_diff(down.to_dense().as_ref(), f0.to_dense().as_ref()) < 1e-12);
    }

    #[test]
    fn outer_product_factorization() {
        let n = 6;
        let x = test_matrix(n, 3, 5);
        let y = test_matrix(n, 3, 6);
        let coef = [2.0, 0.5, 1.0];
        let f = LowRankFactors::from_outer_products(x.as_ref(), &coef, y.as_ref(), 3).unwrap();
        let xs = Mat::from_fn(n, 3, |i, k| x[(i, k)] * coef[k]);
        let dense = &xs * y.adjoint();
        assert!(max_abs_diff(f.to_dense().as_ref(), dense.as_ref()) < 1e-12);
        assert!(f.orthonormality_defect() < 1e-12);
    }
}
