//! Priors `ϖ = e^{-ρ}` and the posterior potential `ℓ + ρ/n`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::potential::{Domain, Potential};
use crate::error::{check_dim, Error, Result};
use crate::metric::{weighted_dual_norm, weighted_matrix_norm, weighted_vec_norm, MetricContext};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Flat,
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    StudentT { nu: f64, mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

/// A validated prior with cached precision matrix.
#[derive(Debug, Clone)]
pub enum Prior {
    Flat,
    Gaussian { mean: DVector<f64>, precision: DMatrix<f64> },
    StudentT { nu: f64, mean: DVector<f64>, precision: DMatrix<f64> },
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    check_dim(d, rows.len())?;
    for r in rows {
        check_dim(d, r.len())?;
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl PriorSpec {
    pub fn build(&self, d: usize) -> Result<Prior> {
        let precision = |mean: &[f64], cov: &[Vec<f64>]| -> Result<(DVector<f64>, DMatrix<f64>)> {
            check_dim(d, mean.len())?;
            let c = matrix_from_rows(cov, d)?;
            let ctx = MetricContext::new(c)?;
            let p = ctx.inverse();
            Ok((DVector::from_column_slice(mean), (&p + p.transpose()) * 0.5))
        };
        match self {
            PriorSpec::Flat => Ok(Prior::Flat),
            PriorSpec::Gaussian { mean, cov } => {
                let (mean, precision) = precision(mean, cov)?;
                Ok(Prior::Gaussian { mean, precision })
            }
            PriorSpec::StudentT { nu, mean, cov } => {
                if !(*nu > 0.0) {
                    return Err(Error::Config("Student-t degrees of freedom must be positive".into()));
                }
                let (mean, precision) = precision(mean, cov)?;
                Ok(Prior::StudentT {
                    nu: *nu,
                    mean,
                    precision,
                })
            }
        }
    }
}

impl Prior {
    /// `ρ(θ) = -log ϖ(θ)` up to an additive constant.
    pub fn neg_log(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Prior::Flat => 0.0,
            Prior::Gaussian { mean, precision } => {
                let e = theta - mean;
                0.5 * e.dot(&(precision * &e))
            }
            Prior::StudentT { nu, mean, precision } => {
                let e = theta - mean;
                let q = e.dot(&(precision * &e));
                let d = theta.len() as f64;
                0.5 * (nu + d) * (q / nu).ln_1p()
            }
        }
    }

    /// `∇ρ = -∇ log ϖ`, exact.
    pub fn neg_log_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            Prior::Flat => DVector::zeros(theta.len()),
            Prior::Gaussian { mean, precision } => precision * (theta - mean),
            Prior::StudentT { nu, mean, precision } => {
                let e = theta - mean;
                let pe = precision * e;
                let q = (theta - mean).dot(&pe);
                let d = theta.len() as f64;
                pe * ((nu + d) / (nu + q))
            }
        }
    }

    pub fn neg_log_hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = theta.len();
        match self {
            Prior::Flat => DMatrix::zeros(d, d),
            Prior::Gaussian { precision, .. } => precision.clone(),
            Prior::StudentT { nu, mean, precision } => {
                let e = theta - mean;
                let pe = precision * e;
                let q = (theta - mean).dot(&pe);
                let c = nu + d as f64;
                precision * (c / (nu + q)) - &pe * pe.transpose() * (2.0 * c / ((nu + q) * (nu + q)))
            }
        }
    }

    /// `∇³ρ[u, u, ·]` (zero except for Student-t).
    pub fn neg_log_third_contraction(&self, theta: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Prior::StudentT { nu, mean, precision } => {
                let e = theta - mean;
                let pe = precision * &e;
                let q = e.dot(&pe);
                let c = nu + theta.len() as f64;
                let a = nu + q;
                let pu = precision * u;
                let upe = u.dot(&pe);
                let upu = u.dot(&pu);
                // derivative of c/a·P - 2c/a²·(Pe)(Pe)ᵀ along u, contracted with u
                pe * (-2.0 * c / (a * a) * upu + 8.0 * c / (a * a * a) * upe * upe)
                    + pu * (-4.0 * c / (a * a) * upe)
            }
            _ => DVector::zeros(theta.len()),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Prior::Flat)
    }

    /// Whether `ρ` is convex (Student-t is not).
    pub fn is_convex(&self) -> bool {
        !matches!(self, Prior::StudentT { .. })
    }
}

/// `M₀*` and `δ*₀₁(s)` for a prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorQuantities {
    pub m0: f64,
    pub delta01: f64,
}

/// Closed-form upper bounds: flat `(0, 0)`; Gaussian
/// `M₀* ≤ ‖Σ⁻¹‖_{F*} |μ-θ*|²_{F*} / (2d)`, `δ*₀₁(s) ≤ ‖Σ⁻¹‖_{F*} (|μ-θ*|_{F*} + s sqrt(d/n))`;
/// Student-t multiplies both by `(ν+d)/ν`.
pub fn prior_quantities(
    prior: &Prior,
    fisher: &MetricContext,
    theta_star: &DVector<f64>,
    s: f64,
    n: f64,
) -> Result<PriorQuantities> {
    let d = fisher.dim();
    check_dim(d, theta_star.len())?;
    let (factor, mean, precision) = match prior {
        Prior::Flat => return Ok(PriorQuantities { m0: 0.0, delta01: 0.0 }),
        Prior::Gaussian { mean, precision } => (1.0, mean, precision),
        Prior::StudentT { nu, mean, precision } => ((nu + d as f64) / nu, mean, precision),
    };
    let p_norm = weighted_matrix_norm(precision, fisher)?;
    let offset = weighted_vec_norm(&(mean - theta_star), fisher)?;
    let dd = d as f64;
    Ok(PriorQuantities {
        m0: factor * p_norm * offset * offset / (2.0 * dd),
        delta01: factor * p_norm * (offset + s * (dd / n).sqrt()),
    })
}

/// Exact `M₀* = d⁻¹ log sup ϖ / ϖ(θ*)`.
pub fn prior_m0_exact(prior: &Prior, theta_star: &DVector<f64>) -> f64 {
    let d = theta_star.len() as f64;
    match prior {
        Prior::Flat => 0.0,
        // sup is attained at the mean, where ρ = 0
        _ => prior.neg_log(theta_star) / d,
    }
}

/// Numeric `δ*₀₁(s) = sup_{U*(s)} ‖∇ log ϖ‖_{F*}` by sampling the ball plus
/// projected ascent from the best points. A lower estimate of the sup.
pub fn prior_delta01_numeric(
    prior: &Prior,
    fisher: &MetricContext,
    theta_star: &DVector<f64>,
    s: f64,
    n: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let d = fisher.dim();
    check_dim(d, theta_star.len())?;
    if prior.is_flat() {
        return Ok(0.0);
    }
    let radius = s * (d as f64 / n).sqrt();
    let obj = |w: &DVector<f64>| -> f64 {
        let theta = theta_star + fisher.inv_sqrt() * w;
        weighted_dual_norm(&prior.neg_log_gradient(&theta), fisher).unwrap_or(0.0)
    };
    let mut r = rng::stream(seed, "prior-delta01", 0);
    let mut pts: Vec<(f64, DVector<f64>)> = (0..samples.max(1))
        .map(|_| {
            let w = rng::unit_ball(&mut r, d) * radius;
            (obj(&w), w)
        })
        .collect();
    pts.push((obj(&DVector::zeros(d)), DVector::zeros(d)));
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = pts[0].0;
    for (v0, w0) in pts.iter().take(5) {
        let (mut v, mut w) = (*v0, w0.clone());
        let mut step = 0.25 * radius;
        while step > 1e-10 * radius.max(1e-300) {
            let mut improved = false;
            for i in 0..d {
                for sgn in [1.0, -1.0] {
                    let mut c = w.clone();
                    c[i] += sgn * step;
                    let nrm = c.norm();
                    if nrm > radius {
                        c *= radius / nrm;
                    }
                    let cv = obj(&c);
                    if cv > v {
                        v = cv;
                        w = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.max(v);
    }
    Ok(best)
}

/// Posterior potential `f = ℓ + ρ/n`.
#[derive(Clone)]
pub struct Posterior {
    pub likelihood: Arc<dyn Potential>,
    pub prior: Prior,
}

impl Posterior {
    pub fn new(likelihood: Arc<dyn Potential>, prior: Prior) -> Self {
        Posterior { likelihood, prior }
    }
}

impl Potential for Posterior {
    fn dim(&self) -> usize {
        self.likelihood.dim()
    }
    fn scale(&self) -> f64 {
        self.likelihood.scale()
    }
    fn name(&self) -> String {
        self.likelihood.name()
    }
    fn domain(&self) -> Domain {
        self.likelihood.domain()
    }
    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        self.likelihood.in_domain(theta)
    }
    fn is_convex(&self) -> bool {
        self.likelihood.is_convex() && self.prior.is_convex()
    }
    fn value(&self, theta: &DVector<f64>) -> f64 {
        self.likelihood.value(theta) + self.prior.neg_log(theta) / self.scale()
    }
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.likelihood.gradient(theta) + self.prior.neg_log_gradient(theta) / self.scale()
    }
    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        self.likelihood.hessian(theta) + self.prior.neg_log_hessian(theta) / self.scale()
    }
    fn third_contraction(&self, theta: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        let l = self.likelihood.third_contraction(theta, u)?;
        Some(l + self.prior.neg_log_third_contraction(theta, u) / self.scale())
    }
    fn analytic_delta3(&self, mode: &DVector<f64>, h: &MetricContext, r: f64) -> Option<f64> {
        match self.prior {
            Prior::Flat => self.likelihood.analytic_delta3(mode, h, r),
            _ => None,
        }
    }
    fn excess(&self, theta: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        self.likelihood.excess(theta, anchor)
            + (self.prior.neg_log(theta) - self.prior.neg_log(anchor)) / self.scale()
    }
    fn default_start(&self) -> DVector<f64> {
        self.likelihood.default_start()
    }
}
