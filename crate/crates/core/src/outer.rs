//! Outer iteration: locate the smallest `eps` with `phi(eps) = 0` by a
//! Newton-bisection search, warm-starting every inner solve.

use std::fmt;
use std::time::Instant;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::eigen::eigenvalues;
use crate::error::{Result, StabError};
use crate::functional::{perturbed, StabConfig};
use crate::inner::{inner_iteration, ConvergedReason, InnerParams, InnerResult};
use crate::integrator::LowRankFactors;
use crate::linalg::{ensure_square, frob_norm, max_abs_diff};
use crate::structure::{project, StructureKind, StructurePattern};

/// Margin allowed above `-delta` by the stabilization certificate.
pub const CERTIFICATE_MARGIN: f64 = 1e-6;

/// Size increments tried after the bracket closes, doubling from `tol_outer`.
const POLISH_STEPS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterParams {
    pub tol_outer: f64,
    pub maxit: usize,
    /// Initial guess; `(Re lambda_1 + delta) sqrt(n)` when absent.
    pub eps0: Option<f64>,
    /// Largest size tried; `10 ||A||_F` when absent.
    pub eps_max: Option<f64>,
}

impl Default for OuterParams {
    fn default() -> Self {
        Self {
            tol_outer: 1e-9,
            maxit: 300,
            eps0: None,
            eps_max: None,
        }
    }
}

impl OuterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_outer > 0.0) {
            return Err(StabError::Precondition(format!(
                "tol_outer must be positive, got {}",
                self.tol_outer
            )));
        }
        for (name, v) in [("eps0", self.eps0), ("eps_max", self.eps_max)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(StabError::Precondition(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// First evaluation at the initial guess.
    Start,
    /// Doubling while no stabilizing size is known.
    Expand,
    Newton,
    Bisection,
    /// Re-solve at the final size to meet the certificate.
    Polish,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Start => "start",
            Self::Expand => "expand",
            Self::Newton => "newton",
            Self::Bisection => "bisection",
            Self::Polish => "polish",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStep {
    pub eps: f64,
    pub phi: f64,
    pub phi_prime: f64,
    /// The inner solve ended at a stationary point, so `phi_prime` is the derivative.
    pub reliable: bool,
    pub branch: Branch,
    pub inner_reason: ConvergedReason,
    pub rank: usize,
    pub inner_iterations: usize,
    /// Bracket after this evaluation; `hi` is absent until a stabilizing size is found.
    pub lo: f64,
    pub hi: Option<f64>,
}

/// Outcome of the certificate checks on `A + eps* E*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub max_real_part: f64,
    pub stable: bool,
    /// Structured runs only: the perturbation equals its projection.
    pub structure_exact: Option<bool>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.stable && self.structure_exact.unwrap_or(true)
    }
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub eps_star: f64,
    /// Absent when the input is already delta-stable.
    pub factors: Option<LowRankFactors>,
    /// Dense `E*` (zero when the input is already delta-stable).
    pub e: Mat<c64>,
    pub final_value: f64,
    pub rank_at_star: usize,
    pub history: Vec<OuterStep>,
    /// Eigenvalues of `A + eps* E*`.
    pub stabilized_eigenvalues: Vec<c64>,
    pub certificate: Certificate,
    pub converged: bool,
    pub cpu_seconds: f64,
}

impl OuterResult {
    /// `Delta = eps* E*`.
    pub fn delta(&self) -> Mat<c64> {
        Mat::from_fn(self.e.nrows(), self.e.ncols(), |i, j| self.e[(i, j)] * self.eps_star)
    }
}

/// `phi(eps)` with its derivative `-||G||` at the computed minimizer.
#[derive(Debug, Clone)]
pub struct PhiEval {
    pub eps: f64,
    pub phi: f64,
    pub phi_prime: f64,
    pub reliable: bool,
    pub inner: InnerResult,
}

pub fn phi_and_derivative(
    a: MatRef<'_, c64>,
    eps: f64,
    warm: Option<&LowRankFactors>,
    cfg: &StabConfig,
    params: &InnerParams,
    structure: Option<&StructurePattern>,
) -> Result<PhiEval> {
    let inner = inner_iteration(a, eps, warm, cfg, params, structure)?;
    let reliable = inner.converged_reason == ConvergedReason::Stationary || inner.grad_norm == 0.0;
    let phi_prime = if inner.grad_norm == 0.0 { 0.0 } else { -inner.grad_norm };
    Ok(PhiEval {
        eps,
        phi: inner.value,
        phi_prime,
        reliable,
        inner,
    })
}

/// Check `Re lambda < -delta + margin` for `A + eps E` and, for a
/// structured run, that `eps E` lies in the structure.
pub fn certify(
    a: MatRef<'_, c64>,
    eps: f64,
    e: MatRef<'_, c64>,
    cfg: &StabConfig,
    structure: Option<&StructurePattern>,
) -> Result<(Certificate, Vec<c64>)> {
    let mut values = eigenvalues(perturbed(a, eps, e).as_ref())?;
    values.sort_by(|x, y| y.re.total_cmp(&x.re));
    let max_real_part = values.first().map_or(f64::NEG_INFINITY, |z| z.re);
    let structure_exact = match structure.filter(|p| !matches!(p.kind, StructureKind::None)) {
        None => None,
        Some(p) => {
            let delta = Mat::from_fn(e.nrows(), e.ncols(), |i, j| e[(i, j)] * eps);
            let projected = project(p, delta.as_ref())?;
            Some(structure_holds(p, delta.as_ref(), projected.as_ref()))
        }
    };
    let cert = Certificate {
        max_real_part,
        stable: max_real_part < -cfg.delta + CERTIFICATE_MARGIN,
        structure_exact,
    };
    Ok((cert, values))
}

fn structure_holds(p: &StructurePattern, delta: MatRef<'_, c64>, projected: MatRef<'_, c64>) -> bool {
    match &p.kind {
        // off-pattern entries must be exactly zero
        StructureKind::Sparsity { mask } => {
            let n = delta.nrows();
            (0..n).all(|j| (0..n).all(|i| mask.contains(i, j) || delta[(i, j)] == c64::new(0.0, 0.0)))
        }
        _ => max_abs_diff(delta, projected) <= 1e-12 * frob_norm(delta).max(1.0),
    }
}

/// Default initial guess `(Re lambda_1 + delta) sqrt(n)`.
pub fn default_eps0(values: &[c64], delta: f64) -> f64 {
    let abscissa = values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    (abscissa + delta).max(0.0) * (values.len() as f64).sqrt()
}

struct Search<'a> {
    a: MatRef<'a, c64>,
    cfg: &'a StabConfig,
    inner: &'a InnerParams,
    structure: Option<&'a StructurePattern>,
    tol: f64,
    history: Vec<OuterStep>,
    lo: f64,
    hi: Option<PhiEval>,
    warm: Option<LowRankFactors>,
}

impl Search<'_> {
    fn evaluate(&mut self, eps: f64, branch: Branch) -> Result<PhiEval> {
        let ev = phi_and_derivative(self.a, eps, self.warm.as_ref(), self.cfg, self.inner, self.structure)?;
        self.warm = Some(ev.inner.factors.clone());
        if ev.phi <= self.tol {
            if self.hi.as_ref().is_none_or(|h| eps <= h.eps) {
                self.hi = Some(ev.clone());
            }
        } else if eps > self.lo {
            self.lo = eps;
        }
        self.history.push(OuterStep {
            eps,
            phi: ev.phi,
            phi_prime: ev.phi_prime,
            reliable: ev.reliable,
            branch,
            inner_reason: ev.inner.converged_reason,
            rank: ev.inner.rank(),
            inner_iterations: ev.inner.iterations,
            lo: self.lo,
            hi: self.hi.as_ref().map(|h| h.eps),
        });
        Ok(ev)
    }

    fn width_ok(&self, tol_outer: f64) -> bool {
        self.hi
            .as_ref()
            .is_some_and(|h| h.eps - self.lo <= tol_outer * h.eps.max(1.0))
    }
}

/// Newton-bisection search for the smallest stabilizing size.
pub fn outer_iteration(
    a: MatRef<'_, c64>,
    cfg: &StabConfig,
    inner_params: &InnerParams,
    outer_params: &OuterParams,
    structure: Option<&StructurePattern>,
) -> Result<OuterResult> {
    let start = Instant::now();
    let n = ensure_square(a)?;
    cfg.validate()?;
    inner_params.validate()?;
    outer_params.validate()?;
    if let Some(p) = structure.filter(|p| !matches!(p.kind, StructureKind::None)) {
        p.check_contains(a)?;
    }

    let values = eigenvalues(a)?;
    let abscissa = values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if abscissa <= -cfg.delta {
        let mut sorted = values;
        sorted.sort_by(|x, y| y.re.total_cmp(&x.re));
        return Ok(OuterResult {
            eps_star: 0.0,
            factors: None,
            e: Mat::zeros(n, n),
            final_value: 0.0,
            rank_at_star: 0,
            history: Vec::new(),
            stabilized_eigenvalues: sorted,
            certificate: Certificate {
                max_real_part: abscissa,
                stable: true,
                structure_exact: structure.map(|_| true),
            },
            converged: true,
            cpu_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let tol_outer = outer_params.tol_outer;
    let eps_max = outer_params.eps_max.unwrap_or(10.0 * frob_norm(a));
    let eps0 = outer_params
        .eps0
        .unwrap_or_else(|| default_eps0(&values, cfg.delta))
        .min(eps_max);
    let mut s = Search {
        a,
        cfg,
        inner: inner_params,
        structure,
        tol: tol_outer,
        history: Vec::new(),
        lo: 0.0,
        hi: None,
        warm: None,
    };

    let mut last = s.evaluate(eps0, Branch::Start)?;
    let mut converged = false;
    while s.history.len() < outer_params.maxit {
        if s.width_ok(tol_outer) {
            converged = true;
            break;
        }
        let Some(hi) = s.hi.as_ref().map(|h| h.eps) else {
            if last.eps >= eps_max {
                return Err(StabError::Unstabilizable { eps_max });
            }
            last = s.evaluate((2.0 * last.eps).min(eps_max), Branch::Expand)?;
            continue;
        };
        let lo = s.lo;
        let mid = 0.5 * (lo + hi);
        let newton = (last.phi > tol_outer && last.reliable && last.phi_prime < 0.0 && last.eps == lo)
            .then(|| lo - last.phi / last.phi_prime)
            .filter(|&x| x > lo && x < hi);
        last = match newton {
            Some(x) => {
                // never move past the midpoint; a vanishing step is pushed to
                // the termination width so the bracket can close
                let floor = lo + 0.5 * tol_outer * hi.max(1.0);
                s.evaluate(x.min(mid).max(floor), Branch::Newton)?
            }
            None => s.evaluate(mid, Branch::Bisection)?,
        };
    }
    if !converged && s.width_ok(tol_outer) {
        converged = true;
    }

    let Some(best) = s.hi.clone() else {
        return Err(StabError::Unstabilizable { eps_max });
    };
    let mut eps_star = best.eps;
    let mut inner = best.inner;
    let (mut cert, mut spectrum) = certify(a, eps_star, inner.e.as_ref(), cfg, structure)?;

    if !cert.stable {
        // phi <= tol leaves (Re lambda + delta) up to sqrt(2 tol); solve to a
        // tighter tolerance, then grow the size geometrically until certified
        let tight = InnerParams {
            tol_inner: inner_params.tol_inner.min(1e-16),
            ..*inner_params
        };
        let base = eps_star;
        let step = tol_outer * base.max(1.0);
        for k in 0..POLISH_STEPS {
            let eps = if k == 0 {
                base
            } else {
                base + step * 2f64.powi(k as i32 - 1)
            };
            if eps > eps_max {
                break;
            }
            let ev = phi_and_derivative(a, eps, Some(&inner.factors), cfg, &tight, structure)?;
            s.history.push(OuterStep {
                eps,
                phi: ev.phi,
                phi_prime: ev.phi_prime,
                reliable: ev.reliable,
                branch: Branch::Polish,
                inner_reason: ev.inner.converged_reason,
                rank: ev.inner.rank(),
                inner_iterations: ev.inner.iterations,
                lo: s.lo,
                hi: Some(eps),
            });
            let (c, sp) = certify(a, eps, ev.inner.e.as_ref(), cfg, structure)?;
            if ev.phi <= tol_outer {
                eps_star = eps;
                inner = ev.inner;
                cert = c;
                spectrum = sp;
                if cert.stable {
                    break;
                }
            }
        }
    }

    Ok(OuterResult {
        eps_star,
        rank_at_star: inner.rank(),
        final_value: inner.value,
        e: inner.e,
        factors: Some(inner.factors),
        history: s.history,
        stabilized_eigenvalues: spectrum,
        certificate: cert,
        converged,
        cpu_seconds: start.elapsed().as_secs_f64(),
    })
}
