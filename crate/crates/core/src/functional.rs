//! Objective functionals on the perturbed spectrum and their gradients.
//!
//! `F` penalises `(Re(lambda) + delta)_+^2`. The Hermite variant `Phi` blends
//! the penalty in with a C^1 cubic `psi` between `-delta2` and `-delta1`.
//! Both gradients are sums of rank-one terms `coef_i x_i y_i*` over the
//! active eigentriplets, kept in factored form.

use faer::{c64, Col, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::eigen::{eig_triplets_above, Spectrum, CONDITION_FLOOR};
use crate::error::{Result, StabError};
use crate::linalg::{ensure_square, frob_norm};

/// Thresholds for strict stability and for the Hermite blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabConfig {
    /// Target: every eigenvalue strictly left of `-delta`.
    pub delta: f64,
    /// `psi == 1` right of `-delta1`.
    pub delta1: f64,
    /// `psi == 0` left of `-delta2`.
    pub delta2: f64,
}

impl Default for StabConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            delta1: 1e-3,
            delta2: 2e-3,
        }
    }
}

impl StabConfig {
    /// Config with `delta1 = delta` and `delta2 = 2 delta`.
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            delta1: delta,
            delta2: 2.0 * delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(StabError::Precondition(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        if !(self.delta1 > 0.0 && self.delta1 < self.delta2) {
            return Err(StabError::Precondition(format!(
                "need 0 < delta1 < delta2, got delta1 = {}, delta2 = {}",
                self.delta1, self.delta2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalKind {
    #[default]
    F,
    Hermite,
}

impl FunctionalKind {
    /// Eigenvalues with real part above this contribute a gradient term.
    pub fn activation_threshold(self, cfg: &StabConfig) -> f64 {
        match self {
            FunctionalKind::F => -cfg.delta,
            FunctionalKind::Hermite => -cfg.delta2,
        }
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Cubic Hermite blend: 0 left of `-delta2`, 1 right of `-delta1`.
pub fn psi(x: f64, cfg: &StabConfig) -> f64 {
    let (d1, d2) = (cfg.delta1, cfg.delta2);
    if x < -d2 {
        0.0
    } else if x > -d1 {
        1.0
    } else {
        (x + d2).powi(2) * (2.0 * x + 3.0 * d1 - d2) / (d1 - d2).powi(3)
    }
}

pub fn psi_prime(x: f64, cfg: &StabConfig) -> f64 {
    let (d1, d2) = (cfg.delta1, cfg.delta2);
    if x < -d2 || x > -d1 {
        0.0
    } else {
        6.0 * (x + d2) * (x + d1) / (d1 - d2).powi(3)
    }
}

/// Value of the chosen functional on a (full) list of eigenvalues.
pub fn functional_value(kind: FunctionalKind, spec: &Spectrum, cfg: &StabConfig) -> f64 {
    match kind {
        FunctionalKind::F => 0.5 * spec.real_parts().map(|r| pos(r + cfg.delta).powi(2)).sum::<f64>(),
        FunctionalKind::Hermite => {
            0.5 * spec
                .real_parts()
                .map(|r| psi(r, cfg) * pos(r + cfg.delta2).powi(2))
                .sum::<f64>()
        }
    }
}

/// Coefficient numerator (before division by `x* y`) for one eigenvalue.
fn coefficient_numerator(kind: FunctionalKind, re: f64, cfg: &StabConfig) -> f64 {
    match kind {
        FunctionalKind::F => pos(re + cfg.delta),
        FunctionalKind::Hermite => {
            let p = pos(re + cfg.delta2);
            0.5 * p * (psi_prime(re, cfg) * p + 2.0 * psi(re, cfg))
        }
    }
}

/// `G = sum_i coef_i x_i y_i*`, stored as `left_scaled = [coef_i x_i]` and
/// `right = [y_i]`, so `G = left_scaled * right^*`.
#[derive(Debug, Clone)]
pub struct Gradient {
    coefficients: Vec<f64>,
    left: Mat<c64>,
    left_scaled: Mat<c64>,
    right: Mat<c64>,
}

impl Gradient {
    pub fn zero(n: usize) -> Self {
        Self {
            coefficients: Vec::new(),
            left: Mat::zeros(n, 0),
            left_scaled: Mat::zeros(n, 0),
            right: Mat::zeros(n, 0),
        }
    }

    pub fn from_terms(n: usize, terms: &[(f64, Col<c64>, Col<c64>)]) -> Self {
        let m = terms.len();
        let left = Mat::from_fn(n, m, |i, k| terms[k].1[i]);
        let right = Mat::from_fn(n, m, |i, k| terms[k].2[i]);
        let coefficients: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let left_scaled = Mat::from_fn(n, m, |i, k| left[(i, k)] * coefficients[k]);
        Self {
            coefficients,
            left,
            left_scaled,
            right,
        }
    }

    pub fn dim(&self) -> usize {
        self.left.nrows()
    }

    /// Number of rank-one terms, an upper bound on the rank.
    pub fn num_terms(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn left_vectors(&self) -> MatRef<'_, c64> {
        self.left.as_ref()
    }

    pub fn right_vectors(&self) -> MatRef<'_, c64> {
        self.right.as_ref()
    }

    /// `(coef, x, y)` per term.
    pub fn terms(&self) -> impl Iterator<Item = (f64, Col<c64>, Col<c64>)> + '_ {
        (0..self.num_terms()).map(move |k| {
            (
                self.coefficients[k],
                self.left.col(k).to_owned(),
                self.right.col(k).to_owned(),
            )
        })
    }

    /// `G M`.
    pub fn apply(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let t = self.right.adjoint() * m;
        &self.left_scaled * t
    }

    /// `G* M`.
    pub fn apply_adjoint(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let t = self.left_scaled.adjoint() * m;
        &self.right * t
    }

    pub fn to_dense(&self) -> Mat<c64> {
        &self.left_scaled * self.right.adjoint()
    }

    pub fn frob_norm(&self) -> f64 {
        // ||X Y*||^2 = trace((X* X)(Y* Y))
        let gx = self.left_scaled.adjoint() * &self.left_scaled;
        let gy = self.right.adjoint() * &self.right;
        let m = self.num_terms();
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                acc += gx[(i, j)] * gy[(j, i)];
            }
        }
        acc.re.max(0.0).sqrt()
    }

    /// `<G, M>` for a dense `M`.
    pub fn inner_dense(&self, m: MatRef<'_, c64>) -> c64 {
        // trace(Y X* M) = sum_k x_k* M y_k * coef_k
        let xm = self.left_scaled.adjoint() * m;
        let mut acc = c64::new(0.0, 0.0);
        for k in 0..self.num_terms() {
            for i in 0..xm.ncols() {
                acc += xm[(k, i)] * self.right[(i, k)];
            }
        }
        acc
    }

    /// `<G, U S V*>` without forming the product.
    pub fn inner_factored(&self, u: MatRef<'_, c64>, s: MatRef<'_, c64>, v: MatRef<'_, c64>) -> c64 {
        let xu = self.left_scaled.adjoint() * u;
        let vy = v.adjoint() * &self.right;
        let core = xu * s * vy;
        let mut acc = c64::new(0.0, 0.0);
        for k in 0..core.nrows() {
            acc += core[(k, k)];
        }
        acc
    }
}

/// Gradient of the chosen functional at the spectrum of `A + eps E`.
///
/// The spectrum must carry triplets for every active eigenvalue.
pub fn gradient(kind: FunctionalKind, spec: &Spectrum, cfg: &StabConfig) -> Result<Gradient> {
    let n = spec.dim();
    let threshold = kind.activation_threshold(cfg);
    let active = spec.values.iter().take_while(|l| l.re > threshold).count();
    if spec.triplets.len() < active {
        return Err(StabError::Precondition(format!(
            "spectrum carries {} triplets but {} eigenvalues are active",
            spec.triplets.len(),
            active
        )));
    }
    let mut terms = Vec::with_capacity(active);
    for (index, t) in spec.triplets.iter().take(active).enumerate() {
        let num = coefficient_numerator(kind, t.lambda.re, cfg);
        if num == 0.0 {
            continue;
        }
        if t.condition < CONDITION_FLOOR {
            return Err(StabError::IllConditioned {
                index,
                condition: t.condition,
            });
        }
        terms.push((num / t.condition, t.left.clone(), t.right.clone()));
    }
    Ok(Gradient::from_terms(n, &terms))
}

/// `A + eps E`.
pub fn perturbed(a: MatRef<'_, c64>, eps: f64, e: MatRef<'_, c64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + e[(i, j)] * eps)
}

fn check_unit(e: MatRef<'_, c64>) -> Result<()> {
    let norm = frob_norm(e);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(StabError::Precondition(format!(
            "perturbation direction must have unit Frobenius norm, got {norm}"
        )));
    }
    Ok(())
}

/// Spectrum of `A + eps E` with triplets for the active eigenvalues of `kind`.
pub fn perturbed_spectrum(
    a: MatRef<'_, c64>,
    eps: f64,
    e: MatRef<'_, c64>,
    kind: FunctionalKind,
    cfg: &StabConfig,
) -> Result<Spectrum> {
    let n = ensure_square(a)?;
    if e.nrows() != n || e.ncols() != n {
        return Err(StabError::Dimension {
            expected: n,
            found: e.nrows(),
        });
    }
    eig_triplets_above(perturbed(a, eps, e).as_ref(), kind.activation_threshold(cfg))
}

/// `F_eps(E)`; `E` must have unit Frobenius norm.
pub fn eval_f(a: MatRef<'_, c64>, eps: f64, e: MatRef<'_, c64>, cfg: &StabConfig) -> Result<f64> {
    check_unit(e)?;
    let spec = perturbed_spectrum(a, eps, e, FunctionalKind::F, cfg)?;
    Ok(functional_value(FunctionalKind::F, &spec, cfg))
}

/// `Phi_eps(E)`; `E` must have unit Frobenius norm.
pub fn eval_phi(a: MatRef<'_, c64>, eps: f64, e: MatRef<'_, c64>, cfg: &StabConfig) -> Result<f64> {
    check_unit(e)?;
    let spec = perturbed_spectrum(a, eps, e, FunctionalKind::Hermite, cfg)?;
    Ok(functional_value(FunctionalKind::Hermite, &spec, cfg))
}

pub fn grad_f(spec: &Spectrum, cfg: &StabConfig) -> Result<Gradient> {
    gradient(FunctionalKind::F, spec, cfg)
}

pub fn grad_phi(spec: &Spectrum, cfg: &StabConfig) -> Result<Gradient> {
    gradient(FunctionalKind::Hermite, spec, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::eig_triplets;
    use crate::linalg::from_real;

    #[test]
    fn stable_matrix_has_zero_value_and_gradient() {
        let a = from_real(3, 3, |i, j| if i == j { -5.0 } else { 0.0 });
        let e = from_real(3, 3, |i, j| if i == 0 && j == 1 { 1.0 } else { 0.0 });
        let cfg = StabConfig::default();
        assert_eq!(eval_f(a.as_ref(), 0.1, e.as_ref(), &cfg).unwrap(), 0.0);
        assert_eq!(eval_phi(a.as_ref(), 0.1, e.as_ref(), &cfg).unwrap(), 0.0);
        let spec = perturbed_spectrum(a.as_ref(), 0.1, e.as_ref(), FunctionalKind::F, &cfg).unwrap();
        let g = grad_f(&spec, &cfg).unwrap();
        assert_eq!(g.num_terms(), 0);
        assert_eq!(g.frob_norm(), 0.0);
    }

    #[test]
    fn scalar_formula() {
        let cfg = StabConfig::default();
        let a = from_real(1, 1, |_, _| 0.3);
        let e = from_real(1, 1, |_, _| 1.0);
        let f = eval_f(a.as_ref(), 0.0, e.as_ref(), &cfg).unwrap();
        assert!((f - 0.5 * (0.3 + 1e-3_f64).powi(2)).abs() < 1e-15);
        // plateau: psi = 1
        let phi = eval_phi(a.as_ref(), 0.0, e.as_ref(), &cfg).unwrap();
        assert!((phi - 0.5 * (0.3 + 2e-3_f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn normal_matrix_gradient() {
        let cfg = StabConfig::default();
        let a = from_real(2, 2, |i, j| if i == j { [1.0, -1.0][i] } else { 0.0 });
        let spec = eig_triplets(a.as_ref()).unwrap();
        let g = grad_f(&spec, &cfg).unwrap();
        assert_eq!(g.num_terms(), 1);
        assert!((g.coefficients()[0] - 1.001).abs() < 1e-12);
        let dense = g.to_dense();
        assert!((dense[(0, 0)].re - 1.001).abs() < 1e-12);
        assert!(dense[(0, 1)].norm() < 1e-14 && dense[(1, 1)].norm() < 1e-14);
        assert!((g.frob_norm() - 1.001).abs() < 1e-12);
    }

    #[test]
    fn hermite_plateau_coefficient() {
        let cfg = StabConfig::default();
        let a = from_real(2, 2, |i, j| if i == j { [0.4, -1.0][i] } else { 0.0 });
        let spec = eig_triplets(a.as_ref()).unwrap();
        let g = grad_phi(&spec, &cfg).unwrap();
        assert_eq!(g.num_terms(), 1);
        assert!((g.coefficients()[0] - (0.4 + cfg.delta2)).abs() < 1e-12);
    }

    #[test]
    fn psi_boundary_values() {
        let cfg = StabConfig::default();
        assert!(psi(-cfg.delta2, &cfg).abs() < 1e-15);
        assert!((psi(-cfg.delta1, &cfg) - 1.0).abs() < 1e-12);
        assert!(psi_prime(-cfg.delta1, &cfg).abs() < 1e-12);
        assert!(psi_prime(-cfg.delta2, &cfg).abs() < 1e-12);
        let mid = -(cfg.delta1 + cfg.delta2) / 2.0;
        assert!((psi(mid, &cfg) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn psi_monotone_and_kappa_nonnegative_on_grid() {
        let cfg = StabConfig::default();
        let lo = -2.0 * cfg.delta2;
        let mut prev = psi(lo, &cfg);
        for k in 0..=1000 {
            let x = lo + (0.0 - lo) * k as f64 / 1000.0;
            let v = psi(x, &cfg);
            assert!(v + 1e-15 >= prev, "psi decreases at {x}");
            prev = v;
            assert!(psi_prime(x, &cfg) >= 0.0);
            assert!(coefficient_numerator(FunctionalKind::Hermite, x, &cfg) >= 0.0);
        }
    }

    #[test]
    fn psi_prime_matches_difference_quotient() {
        let cfg = StabConfig::default();
        let h = 1e-9;
        for k in 1..20 {
            let x = -cfg.delta2 + (cfg.delta2 - cfg.delta1) * k as f64 / 20.0;
            let fd = (psi(x + h, &cfg) - psi(x - h, &cfg)) / (2.0 * h);
            assert!((fd - psi_prime(x, &cfg)).abs() < 1e-4 * psi_prime(x, &cfg).abs().max(1.0));
        }
    }

    #[test]
    fn rejects_non_unit_direction() {
        let cfg = StabConfig::default();
        let a = from_real(2, 2, |_, _| 0.0);
        let e = from_real(2, 2, |_, _| 1.0);
        assert!(matches!(
            eval_f(a.as_ref(), 1.0, e.as_ref(), &cfg),
            Err(StabError::Precondition(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(StabConfig::default().validate().is_ok());
        let bad = StabConfig {
            delta: 1e-3,
            delta1: 2e-3,
            delta2: 1e-3,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn factored_and_dense_inner_products_agree() {
        let cfg = StabConfig::default();
        let a = Mat::<c64>::from_fn(6, 6, |i, j| {
            c64::new(((i * 5 + j * 3) % 7) as f64 - 2.0, ((i + j) % 3) as f64 * 0.2)
        });
        let spec = eig_triplets(a.as_ref()).unwrap();
        let g = grad_f(&spec, &cfg).unwrap();
        let m = Mat::<c64>::from_fn(6, 6, |i, j| {
            c64::new((i as f64 - j as f64) * 0.1, (i * j) as f64 * 0.01)
        });
        let dense = g.to_dense();
        let direct = crate::linalg::frob_inner(dense.as_ref(), m.as_ref());
        assert!((g.inner_dense(m.as_ref()) - direct).norm() < 1e-10);
        assert!((g.frob_norm() - frob_norm(dense.as_ref())).abs() < 1e-10);
        let gm = g.apply(m.as_ref());
        let gm_dense = &dense * &m;
        assert!(crate::linalg::max_abs_diff(gm.as_ref(), gm_dense.as_ref()) < 1e-10);
        let gam = g.apply_adjoint(m.as_ref());
        let gam_dense = dense.adjoint() * &m;
        assert!(crate::linalg::max_abs_diff(gam.as_ref(), gam_dense.as_ref()) < 1e-10);
    }
}
