//! Synthetic potentials with known third-derivative behavior.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::potential::{Domain, Potential};
use crate::error::{check_dim, Error, Result};
use crate::metric::MetricContext;

/// `f(θ) = |θ|²/2 + |θ|³/6`, minimized at 0 with `H = I` and `δ₃ ≡ 1`.
#[derive(Debug, Clone)]
pub struct CubicRadial {
    pub d: usize,
    pub n: f64,
}

pub fn make_cubic_radial(d: usize, n: f64) -> CubicRadial {
    CubicRadial { d, n }
}

impl Potential for CubicRadial {
    fn dim(&self) -> usize {
        self.d
    }
    fn scale(&self) -> f64 {
        self.n
    }
    fn name(&self) -> String {
        "cubic_radial".into()
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn value(&self, t: &DVector<f64>) -> f64 {
        let r = t.norm();
        r * r / 2.0 + r * r * r / 6.0
    }
    fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        t * (1.0 + t.norm() / 2.0)
    }
    fn hessian(&self, t: &DVector<f64>) -> DMatrix<f64> {
        let r = t.norm();
        let mut h = DMatrix::identity(self.d, self.d) * (1.0 + r / 2.0);
        if r > 0.0 {
            h += t * t.transpose() / (2.0 * r);
        }
        h
    }
    fn third_contraction(&self, t: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        let r = t.norm();
        if r == 0.0 {
            // Hessian is only Lipschitz at the origin; the one-sided limit is not unique
            return Some(DVector::zeros(self.d));
        }
        let tu = t.dot(u);
        let uu = u.dot(u);
        Some(t * (0.5 * uu / r - 0.5 * tu * tu / (r * r * r)) + u * (tu / r))
    }
    fn analytic_delta3(&self, _mode: &DVector<f64>, _h: &MetricContext, _r: f64) -> Option<f64> {
        Some(1.0)
    }
}

/// `f(θ) = |θ|²/2 + |𝟙ᵀθ|³/6`, with `δ₃ ≡ d^{3/2}`.
#[derive(Debug, Clone)]
pub struct OnesCubic {
    pub d: usize,
    pub n: f64,
}

pub fn make_ones_cubic(d: usize, n: f64) -> OnesCubic {
    OnesCubic { d, n }
}

impl Potential for OnesCubic {
    fn dim(&self) -> usize {
        self.d
    }
    fn scale(&self) -> f64 {
        self.n
    }
    fn name(&self) -> String {
        "ones_cubic".into()
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn value(&self, t: &DVector<f64>) -> f64 {
        let s = t.sum().abs();
        t.norm_squared() / 2.0 + s * s * s / 6.0
    }
    fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        let s = t.sum();
        t + DVector::from_element(self.d, s * s.abs() / 2.0)
    }
    fn hessian(&self, t: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d) + DMatrix::from_element(self.d, self.d, t.sum().abs())
    }
    fn third_contraction(&self, t: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        let s = t.sum();
        let sign = if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        };
        let su = u.sum();
        Some(DVector::from_element(self.d, sign * su * su))
    }
    fn analytic_delta3(&self, _mode: &DVector<f64>, _h: &MetricContext, _r: f64) -> Option<f64> {
        Some((self.d as f64).powf(1.5))
    }
}

/// `f(θ) = ½ (θ - a)ᵀ Q (θ - a)`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub center: DVector<f64>,
    pub q: DMatrix<f64>,
    pub n: f64,
}

impl Quadratic {
    pub fn new(center: DVector<f64>, q: DMatrix<f64>, n: f64) -> Result<Self> {
        check_dim(center.len(), q.nrows())?;
        MetricContext::new(q.clone())?;
        Ok(Quadratic { center, q, n })
    }

    pub fn isotropic(center: DVector<f64>, n: f64) -> Self {
        let d = center.len();
        Quadratic {
            center,
            q: DMatrix::identity(d, d),
            n,
        }
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn scale(&self) -> f64 {
        self.n
    }
    fn name(&self) -> String {
        "quadratic".into()
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn value(&self, t: &DVector<f64>) -> f64 {
        let e = t - &self.center;
        0.5 * e.dot(&(&self.q * &e))
    }
    fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        &self.q * (t - &self.center)
    }
    fn hessian(&self, _t: &DVector<f64>) -> DMatrix<f64> {
        self.q.clone()
    }
    fn third_contraction(&self, _t: &DVector<f64>, _u: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.dim()))
    }
    fn analytic_delta3(&self, _mode: &DVector<f64>, _h: &MetricContext, _r: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// `f(θ) = Σ_i (θ_i⁴ - θ_i²)`, a nonconvex double well.
#[derive(Debug, Clone)]
pub struct NonconvexQuartic {
    pub d: usize,
    pub n: f64,
}

impl Potential for NonconvexQuartic {
    fn dim(&self) -> usize {
        self.d
    }
    fn scale(&self) -> f64 {
        self.n
    }
    fn name(&self) -> String {
        "nonconvex_quartic".into()
    }
    fn is_convex(&self) -> bool {
        false
    }
    fn value(&self, t: &DVector<f64>) -> f64 {
        t.iter().map(|x| x.powi(4) - x * x).sum()
    }
    fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        t.map(|x| 4.0 * x.powi(3) - 2.0 * x)
    }
    fn hessian(&self, t: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&t.map(|x| 12.0 * x * x - 2.0))
    }
    fn third_contraction(&self, t: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        Some(t.zip_map(u, |x, v| 24.0 * x * v * v))
    }
    fn default_start(&self) -> DVector<f64> {
        DVector::from_element(self.d, 0.8)
    }
}

/// `g(η) = f(Aη + b)` for invertible `A`.
#[derive(Clone)]
pub struct AffinePullback {
    pub inner: Arc<dyn Potential>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    a_inv: DMatrix<f64>,
}

impl AffinePullback {
    pub fn new(inner: Arc<dyn Potential>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = inner.dim();
        check_dim(d, a.nrows())?;
        check_dim(d, a.ncols())?;
        check_dim(d, b.len())?;
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("affine map is not invertible".into()))?;
        Ok(AffinePullback { inner, a, b, a_inv })
    }

    pub fn forward(&self, eta: &DVector<f64>) -> DVector<f64> {
        &self.a * eta + &self.b
    }

    pub fn backward(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a_inv * (theta - &self.b)
    }
}

impl Potential for AffinePullback {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn scale(&self) -> f64 {
        self.inner.scale()
    }
    fn name(&self) -> String {
        format!("affine({})", self.inner.name())
    }
    fn domain(&self) -> Domain {
        match self.inner.domain() {
            Domain::Whole => Domain::Whole,
            Domain::Polyhedron { normals, offsets } => Domain::Polyhedron {
                offsets: offsets - &normals * &self.b,
                normals: normals * &self.a,
            },
        }
    }
    fn in_domain(&self, eta: &DVector<f64>) -> bool {
        self.inner.in_domain(&self.forward(eta))
    }
    fn is_convex(&self) -> bool {
        self.inner.is_convex()
    }
    fn value(&self, eta: &DVector<f64>) -> f64 {
        self.inner.value(&self.forward(eta))
    }
    fn gradient(&self, eta: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * self.inner.gradient(&self.forward(eta))
    }
    fn hessian(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        self.a.transpose() * self.inner.hessian(&self.forward(eta)) * &self.a
    }
    fn third_contraction(&self, eta: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        let c = self.inner.third_contraction(&self.forward(eta), &(&self.a * u))?;
        Some(self.a.transpose() * c)
    }
    fn analytic_delta3(&self, mode: &DVector<f64>, h: &MetricContext, r: f64) -> Option<f64> {
        let h_inner = self.a_inv.transpose() * h.matrix() * &self.a_inv;
        let ctx = MetricContext::new((&h_inner + h_inner.transpose()) * 0.5).ok()?;
        self.inner.analytic_delta3(&self.forward(mode), &ctx, r)
    }
    fn excess(&self, eta: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        self.inner.excess(&self.forward(eta), &self.forward(anchor))
    }
    fn default_start(&self) -> DVector<f64> {
        self.backward(&self.inner.default_start())
    }
}
