//! Inner iteration: minimize the functional over unit perturbations at a
//! fixed size `eps` by integrating the (possibly structured) gradient flow
//! with the low-rank integrator.

use std::fmt;
use std::str::FromStr;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::eigen::{count_delta_unstable, eig_triplets_above, Spectrum};
use crate::error::{Result, StabError};
use crate::flow::{alignment, UnstructuredField};
use crate::functional::{functional_value, gradient, perturbed_spectrum, FunctionalKind, Gradient, StabConfig};
use crate::integrator::{adaptive_step, fixed_rank_step, FlowField, LowRankFactors, StepReport};
use crate::linalg::{ensure_square, frob_norm, scale};
use crate::structure::{project_factors, project_gradient, StructureKind, StructurePattern, StructuredField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Adaptive,
    Fixed(usize),
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Adaptive => write!(f, "adaptive"),
            Self::Fixed(r) => write!(f, "fixed:{r}"),
        }
    }
}

impl FromStr for RankMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("adaptive") {
            return Ok(Self::Adaptive);
        }
        let r = s
            .strip_prefix("fixed:")
            .ok_or_else(|| format!("expected 'adaptive' or 'fixed:<r>', got '{s}'"))?;
        match r.parse::<usize>() {
            Ok(r) if r > 0 => Ok(Self::Fixed(r)),
            _ => Err(format!("fixed rank must be a positive integer, got '{r}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerParams {
    pub tol_inner: f64,
    pub maxit: usize,
    pub tau_rank: f64,
    pub h0: f64,
    pub h_min: f64,
    pub grow: f64,
    pub shrink: f64,
    /// Upper bound on the step size; `10 h0` when absent.
    pub h_max: Option<f64>,
    pub functional: FunctionalKind,
    pub rank_mode: RankMode,
    /// Alignment threshold for the stationary exit.
    pub stationarity_tol: f64,
    /// Consecutive accepted steps with small relative change required for the stationary exit.
    pub stationary_window: usize,
    /// Length of the non-monotone probe run after a rejected step; 0 disables it.
    pub watchdog: usize,
}

impl Default for InnerParams {
    fn default() -> Self {
        Self {
            tol_inner: 1e-9,
            maxit: 250,
            tau_rank: 1e-8,
            h0: 0.1,
            h_min: 1e-8,
            grow: 1.2,
            shrink: 0.5,
            h_max: None,
            functional: FunctionalKind::F,
            rank_mode: RankMode::Adaptive,
            stationarity_tol: 1e-6,
            stationary_window: 3,
            watchdog: 10,
        }
    }
}

impl InnerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StabError::Precondition(msg));
        if !(self.tol_inner > 0.0) {
            return bad(format!("tol_inner must be positive, got {}", self.tol_inner));
        }
        if !(self.tau_rank > 0.0) {
            return bad(format!("tau_rank must be positive, got {}", self.tau_rank));
        }
        if !(self.h0 > 0.0 && self.h_min > 0.0) {
            return bad("step sizes must be positive".into());
        }
        if !(0.0 < self.shrink && self.shrink < 1.0 && self.grow > 1.0) {
            return bad(format!(
                "need 0 < shrink < 1 < grow, got shrink = {}, grow = {}",
                self.shrink, self.grow
            ));
        }
        if let RankMode::Fixed(0) = self.rank_mode {
            return bad("fixed rank must be positive".into());
        }
        Ok(())
    }

    pub fn h_max(&self) -> f64 {
        self.h_max.unwrap_or(10.0 * self.h0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedReason {
    FunctionalZero,
    Stationary,
    Maxit,
    Stalled,
}

impl fmt::Display for ConvergedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FunctionalZero => "functional_zero",
            Self::Stationary => "stationary",
            Self::Maxit => "maxit",
            Self::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    /// `E*` itself, or the low-rank `Y*` with `E* = P_S(Y*)` in the structured case.
    pub factors: LowRankFactors,
    /// Dense `E*`, unit Frobenius norm.
    pub e: Mat<c64>,
    pub value: f64,
    /// `||G||_F`, or `||P_S(G)||_F` in the structured case.
    pub grad_norm: f64,
    /// `Re<G, E*>`.
    pub mu: f64,
    /// `1 + Re<G, E*> / grad_norm`; absent for a zero gradient.
    pub stationarity: Option<f64>,
    pub gradient: Gradient,
    /// Eigenvalues of `A + eps E*`, sorted by descending real part.
    pub eigenvalues: Vec<c64>,
    pub rank_history: Vec<(usize, usize)>,
    pub value_history: Vec<f64>,
    pub steps: Vec<StepReport>,
    pub max_rank: usize,
    pub iterations: usize,
    pub rejected: usize,
    /// Integrator steps taken inside watchdog probes.
    pub probe_steps: usize,
    pub restarts: usize,
    pub converged_reason: ConvergedReason,
}

impl InnerResult {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }
}

fn active_pattern(structure: Option<&StructurePattern>) -> Option<&StructurePattern> {
    structure.filter(|p| !matches!(p.kind, StructureKind::None))
}

/// `E0 = -G/||G||` at zero perturbation, or in the structured case `Y0`
/// proportional to `-G` so that `P_S(Y0) = -P_S(G)/||P_S(G)||`.
pub fn default_init(
    a: MatRef<'_, c64>,
    cfg: &StabConfig,
    params: &InnerParams,
    structure: Option<&StructurePattern>,
) -> Result<LowRankFactors> {
    ensure_square(a)?;
    let kind = params.functional;
    let spec = eig_triplets_above(a, kind.activation_threshold(cfg))?;
    let grad = gradient(kind, &spec, cfg)?;
    if grad.is_zero() {
        return Err(StabError::StableInput);
    }
    let cap = count_delta_unstable(&spec, cfg.delta).max(2);
    let mut f =
        LowRankFactors::from_outer_products(grad.left_vectors(), grad.coefficients(), grad.right_vectors(), cap)?;
    f.u = scale(f.u.as_ref(), -1.0);
    let f = match params.rank_mode {
        RankMode::Adaptive => f,
        RankMode::Fixed(r) => f.with_rank(r, FIXED_RANK_PAD)?,
    };
    normalize(f, active_pattern(structure))
}

/// Relative weight of the padding directions when a fixed rank exceeds the
/// rank of the starting point.
const FIXED_RANK_PAD: f64 = 1e-3;

/// Rescale so that the materialized perturbation has unit norm.
fn normalize(mut y: LowRankFactors, pattern: Option<&StructurePattern>) -> Result<LowRankFactors> {
    let norm = match pattern {
        None => y.frob_norm(),
        Some(p) => frob_norm(project_factors(p, &y)?.as_ref()),
    };
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(StabError::DegenerateRank);
    }
    y.scale_in_place(1.0 / norm);
    Ok(y)
}

/// Unit starting point used when `A` gives no descent direction.
fn fallback_direction(n: usize, pattern: Option<&StructurePattern>) -> Result<LowRankFactors> {
    let (i, j) = match pattern.map(|p| &p.kind) {
        Some(StructureKind::Sparsity { mask }) => *mask
            .entries()
            .first()
            .ok_or_else(|| StabError::Precondition("empty sparsity mask".into()))?,
        _ => (0, 0),
    };
    let u = Mat::from_fn(n, 1, |k, _| c64::new(if k == i { 1.0 } else { 0.0 }, 0.0));
    let v = Mat::from_fn(n, 1, |k, _| c64::new(if k == j { 1.0 } else { 0.0 }, 0.0));
    let y = LowRankFactors::new(u, Mat::from_fn(1, 1, |_, _| c64::new(1.0, 0.0)), v)?;
    normalize(y, pattern)
}

struct Point {
    y: LowRankFactors,
    e: Mat<c64>,
    spec: Spectrum,
    value: f64,
}

struct Problem<'a> {
    a: MatRef<'a, c64>,
    eps: f64,
    cfg: &'a StabConfig,
    params: &'a InnerParams,
    pattern: Option<&'a StructurePattern>,
}

impl Problem<'_> {
    fn materialize(&self, y: &LowRankFactors) -> Result<Mat<c64>> {
        match self.pattern {
            None => Ok(y.to_dense()),
            Some(p) => project_factors(p, y),
        }
    }

    fn evaluate(&self, y: LowRankFactors) -> Result<Point> {
        let y = normalize(y, self.pattern)?;
        let e = self.materialize(&y)?;
        let kind = self.params.functional;
        let spec = perturbed_spectrum(self.a, self.eps, e.as_ref(), kind, self.cfg)?;
        let value = functional_value(kind, &spec, self.cfg);
        Ok(Point { y, e, spec, value })
    }

    /// `(grad_norm, mu)` in the geometry of the active structure.
    fn alignment_data(&self, grad: &Gradient, p: &Point) -> Result<(f64, f64)> {
        if grad.is_zero() {
            return Ok((0.0, 0.0));
        }
        let mu = grad.inner_dense(p.e.as_ref()).re;
        let norm = match self.pattern {
            None => grad.frob_norm(),
            Some(s) => frob_norm(project_gradient(s, grad)?.as_ref()),
        };
        Ok((norm, mu))
    }

    fn step(&self, p: &Point, grad: &Gradient, h: f64) -> Result<(LowRankFactors, StepReport)> {
        let field: Box<dyn FlowField + '_> = match self.pattern {
            None => Box::new(UnstructuredField::new(grad, &p.y)),
            Some(_) => Box::new(StructuredField::new(grad, &p.y, p.e.as_ref())),
        };
        match self.params.rank_mode {
            RankMode::Adaptive => adaptive_step(&p.y, field.as_ref(), h, self.params.tau_rank),
            RankMode::Fixed(r) => fixed_rank_step(&p.y, field.as_ref(), h, r),
        }
    }

    /// Continue from a rejected point with fixed steps, returning the first
    /// point whose value does not exceed `target`. Failures inside the probe
    /// end it quietly.
    fn watchdog(&self, from: Point, target: f64, h: f64, count: &mut usize) -> Option<(Point, StepReport)> {
        let mut p = from;
        for _ in 0..self.params.watchdog {
            let grad = gradient(self.params.functional, &p.spec, self.cfg).ok()?;
            if grad.is_zero() {
                return None;
            }
            let (y, report) = self.step(&p, &grad, h).ok()?;
            *count += 1;
            p = self.evaluate(y).ok()?;
            if p.value <= target {
                return Some((p, report));
            }
        }
        None
    }

    fn prepare_start(&self, y: &LowRankFactors) -> Result<LowRankFactors> {
        let n = self.a.nrows();
        if y.dim() != n {
            return Err(StabError::Dimension {
                expected: n,
                found: y.dim(),
            });
        }
        let y = match self.params.rank_mode {
            RankMode::Fixed(r) if r != y.rank() => y.with_rank(r, FIXED_RANK_PAD)?,
            _ => y.clone(),
        };
        normalize(y, self.pattern)
    }

    fn fresh_start(&self) -> Result<LowRankFactors> {
        match default_init(self.a, self.cfg, self.params, self.pattern) {
            Err(StabError::StableInput) => {
                let y = fallback_direction(self.a.nrows(), self.pattern)?;
                self.prepare_start(&y)
            }
            other => other,
        }
    }

    fn run(&self, start: LowRankFactors, restarts: usize) -> Result<InnerResult> {
        let params = self.params;
        let kind = params.functional;
        let mut cur = self.evaluate(start)?;
        let mut grad = gradient(kind, &cur.spec, self.cfg)?;

        let mut rank_history = vec![(0, cur.y.rank())];
        let mut value_history = vec![cur.value];
        let mut steps = Vec::new();
        let mut h = params.h0;
        let h_max = params.h_max();
        let mut streak = 0usize;
        let mut iterations = 0usize;
        let mut rejected = 0usize;
        let mut probe_steps = 0usize;

        let reason = loop {
            if cur.value <= params.tol_inner {
                break ConvergedReason::FunctionalZero;
            }
            if streak >= params.stationary_window {
                let (norm, mu) = self.alignment_data(&grad, &cur)?;
                if alignment(mu, norm).is_ok_and(|m| m <= params.stationarity_tol) {
                    break ConvergedReason::Stationary;
                }
            }
            if iterations >= params.maxit {
                break ConvergedReason::Maxit;
            }
            let accepted = loop {
                if h < params.h_min {
                    break None;
                }
                let (y, report) = self.step(&cur, &grad, h)?;
                let cand = self.evaluate(y)?;
                if cand.value <= cur.value {
                    break Some((cand, report));
                }
                rejected += 1;
                if let Some(found) = self.watchdog(cand, cur.value, h, &mut probe_steps) {
                    break Some(found);
                }
                h *= params.shrink;
            };
            let Some((cand, mut report)) = accepted else {
                break ConvergedReason::Stalled;
            };
            report.accepted = true;
            iterations += 1;
            let change = (cur.value - cand.value) / cur.value;
            streak = if change <= params.tol_inner { streak + 1 } else { 0 };
            cur = cand;
            grad = gradient(kind, &cur.spec, self.cfg)?;
            rank_history.push((iterations, cur.y.rank()));
            value_history.push(cur.value);
            steps.push(report);
            h = (h * params.grow).min(h_max);
        };

        let (grad_norm, mu) = self.alignment_data(&grad, &cur)?;
        let stationarity = alignment(mu, grad_norm).ok();
        let max_rank = rank_history.iter().map(|&(_, r)| r).max().unwrap_or(0);
        Ok(InnerResult {
            eigenvalues: cur.spec.values.clone(),
            factors: cur.y,
            e: cur.e,
            value: cur.value,
            grad_norm,
            mu,
            stationarity,
            gradient: grad,
            rank_history,
            value_history,
            steps,
            max_rank,
            iterations,
            rejected,
            probe_steps,
            restarts,
            converged_reason: reason,
        })
    }
}

/// Run the inner iteration at size `eps` from `e0` (or the default start).
///
/// With a structure other than `None`, `e0` is the low-rank `Y` whose
/// projection is the perturbation.
pub fn inner_iteration(
    a: MatRef<'_, c64>,
    eps: f64,
    e0: Option<&LowRankFactors>,
    cfg: &StabConfig,
    params: &InnerParams,
    structure: Option<&StructurePattern>,
) -> Result<InnerResult> {
    ensure_square(a)?;
    cfg.validate()?;
    params.validate()?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(StabError::Precondition(format!("eps must be positive, got {eps}")));
    }
    let pattern = active_pattern(structure);
    if let Some(p) = pattern {
        p.check_contains(a)?;
    }
    let problem = Problem {
        a,
        eps,
        cfg,
        params,
        pattern,
    };
    let start = match e0 {
        Some(y) => problem.prepare_start(y)?,
        None => problem.fresh_start()?,
    };
    match problem.run(start, 0) {
        Err(StabError::DegenerateRank) => problem.run(problem.fresh_start()?, 1),
        other => other,
    }
}
