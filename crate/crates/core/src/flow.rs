//! Norm-preserving gradient flow `E' = -G + Re<G, E> E` on the unit sphere.

use faer::{c64, Mat, MatRef};

use crate::error::{Result, StabError};
use crate::functional::Gradient;
use crate::integrator::{FlowField, LowRankFactors};

/// A point on the unit sphere together with its functional data.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub e: Mat<c64>,
    pub value: f64,
    pub grad: Gradient,
    /// `Re<G, E>`.
    pub mu: f64,
}

impl FlowState {
    pub fn new(e: Mat<c64>, value: f64, grad: Gradient) -> Self {
        let mu = grad.inner_dense(e.as_ref()).re;
        Self { e, value, grad, mu }
    }
}

/// Dense right-hand side `-G + Re<G, E> E`.
pub fn rhs(e: MatRef<'_, c64>, grad: &Gradient) -> Mat<c64> {
    let n = e.nrows();
    if grad.num_terms() == 0 {
        return Mat::zeros(n, n);
    }
    let mu = grad.inner_dense(e).re;
    let g = grad.to_dense();
    Mat::from_fn(n, n, |i, j| e[(i, j)] * mu - g[(i, j)])
}

/// `1 + Re<G, E> / ||G||_F`; zero exactly when `E = -G / ||G||_F`.
pub fn stationarity_measure(state: &FlowState) -> Result<f64> {
    alignment(state.mu, state.grad.frob_norm())
}

/// Alignment measure from `Re<G, E>` and `||G||_F`.
pub fn alignment(mu: f64, grad_norm: f64) -> Result<f64> {
    if !(grad_norm > 0.0) {
        return Err(StabError::UndefinedMeasure);
    }
    Ok((1.0 + mu / grad_norm).max(0.0))
}

/// The unstructured field `f(E) = -G + mu E` at `E = U S V*`, applied via
/// the factored gradient.
pub struct UnstructuredField<'a> {
    grad: &'a Gradient,
    point: &'a LowRankFactors,
    mu: f64,
}

impl<'a> UnstructuredField<'a> {
    pub fn new(grad: &'a Gradient, point: &'a LowRankFactors) -> Self {
        let mu = grad
            .inner_factored(point.u.as_ref(), point.s.as_ref(), point.v.as_ref())
            .re;
        Self { grad, point, mu }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl FlowField for UnstructuredField<'_> {
    fn dim(&self) -> usize {
        self.point.dim()
    }

    fn apply(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let gm = self.grad.apply(m);
        let vm = self.point.v.adjoint() * m;
        let em = &self.point.u * (&self.point.s * vm);
        em * faer::Scale(c64::new(self.mu, 0.0)) - gm
    }

    fn apply_adjoint(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let gm = self.grad.apply_adjoint(m);
        let um = self.point.u.adjoint() * m;
        let em = &self.point.v * (self.point.s.adjoint() * um);
        em * faer::Scale(c64::new(self.mu, 0.0)) - gm
    }
}
