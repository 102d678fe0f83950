//! The potential interface: `f` on a convex domain, scale `n`, target density
//! `π ∝ exp(-n f)`.

use nalgebra::{DMatrix, DVector};

use crate::metric::{MetricContext, SymmetricKForm};

/// Convex parameter domain.
#[derive(Debug, Clone)]
pub enum Domain {
    Whole,
    /// Open polyhedron `{θ : a_iᵀθ < b_i}`, rows of `normals` are `a_iᵀ`.
    Polyhedron { normals: DMatrix<f64>, offsets: DVector<f64> },
}

impl Domain {
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        match self {
            Domain::Whole => theta.iter().all(|x| x.is_finite()),
            Domain::Polyhedron { normals, offsets } => {
                let v = normals * theta;
                v.iter().zip(offsets.iter()).all(|(a, b)| a < b)
            }
        }
    }

    /// Whether the ellipsoid `{θ : |θ - c|_H ≤ radius}` lies inside the domain.
    /// Exact: `sup aᵀθ = aᵀc + radius·|H^{-1/2} a|`.
    pub fn contains_ellipsoid(&self, center: &DVector<f64>, h: &MetricContext, radius: f64) -> bool {
        match self {
            Domain::Whole => center.iter().all(|x| x.is_finite()) && radius.is_finite(),
            Domain::Polyhedron { normals, offsets } => {
                let centers = normals * center;
                let whitened = normals * h.inv_sqrt();
                (0..normals.nrows()).all(|i| {
                    let reach = centers[i] + radius * whitened.row(i).norm();
                    reach < offsets[i]
                })
            }
        }
    }

    /// Largest `t ∈ (0, 1]` with `θ + t·step` strictly inside, shrunk by `safety`.
    pub fn max_step(&self, theta: &DVector<f64>, step: &DVector<f64>, safety: f64) -> f64 {
        match self {
            Domain::Whole => 1.0,
            Domain::Polyhedron { normals, offsets } => {
                let a_theta = normals * theta;
                let a_step = normals * step;
                let mut t = 1.0_f64;
                for i in 0..normals.nrows() {
                    if a_step[i] > 0.0 {
                        let gap = offsets[i] - a_theta[i];
                        t = t.min(safety * gap / a_step[i]);
                    }
                }
                t.max(0.0)
            }
        }
    }
}

/// A twice (and mostly thrice) differentiable potential `f` with scale `n`.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn scale(&self) -> f64;
    fn name(&self) -> String;

    fn domain(&self) -> Domain {
        Domain::Whole
    }

    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        self.domain().contains(theta)
    }

    fn is_convex(&self) -> bool;

    fn value(&self, theta: &DVector<f64>) -> f64;
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64>;

    /// `∇³f(θ)[u, u, ·]`.
    fn third_contraction(&self, _theta: &DVector<f64>, _u: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// `⟨∇³f(θ), u^{⊗3}⟩`.
    fn third_directional(&self, theta: &DVector<f64>, u: &DVector<f64>) -> Option<f64> {
        self.third_contraction(theta, u).map(|c| c.dot(u))
    }

    /// Dense `∇³f(θ)` rebuilt by polarization of the contraction.
    fn third_form(&self, theta: &DVector<f64>) -> Option<SymmetricKForm> {
        let d = self.dim();
        let mut cols: Vec<Vec<DVector<f64>>> = vec![vec![DVector::zeros(d); d]; d];
        for i in 0..d {
            for j in i..d {
                let mut p = DVector::zeros(d);
                let mut m = DVector::zeros(d);
                p[i] += 1.0;
                p[j] += 1.0;
                m[i] += 1.0;
                m[j] -= 1.0;
                let tp = self.third_contraction(theta, &p)?;
                let tm = self.third_contraction(theta, &m)?;
                let t = (tp - tm) * 0.25;
                cols[i][j] = t.clone();
                cols[j][i] = t;
            }
        }
        let mut coeffs = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for l in 0..d {
                    // average over the orbit to remove rounding asymmetry
                    let v = (cols[i][j][l] + cols[i][l][j] + cols[j][l][i]) / 3.0;
                    coeffs[(i * d + j) * d + l] = v;
                }
            }
        }
        let mut sym = coeffs.clone();
        for i in 0..d {
            for j in 0..d {
                for l in 0..d {
                    let mut idx = [i, j, l];
                    idx.sort_unstable();
                    sym[(i * d + j) * d + l] = coeffs[(idx[0] * d + idx[1]) * d + idx[2]];
                }
            }
        }
        Some(SymmetricKForm::Dense { k: 3, d, coeffs: sym })
    }

    /// Certified upper bound on the Hessian Lipschitz ratio over
    /// `{θ : |θ - mode|_H ≤ r·sqrt(d/n)}`, when the model provides one.
    fn analytic_delta3(&self, _mode: &DVector<f64>, _h: &MetricContext, _r: f64) -> Option<f64> {
        None
    }

    /// `f(θ) - f(anchor)`; models override this when cancellation matters.
    fn excess(&self, theta: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        self.value(theta) - self.value(anchor)
    }

    /// Default Newton start.
    fn default_start(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }
}

/// Central finite differences, used by tests and by the growth checker.
pub mod fd {
    use super::*;

    pub fn gradient<P: Potential + ?Sized>(f: &P, theta: &DVector<f64>) -> DVector<f64> {
        let h = 1e-5 * (1.0 + theta.norm());
        DVector::from_iterator(
            theta.len(),
            (0..theta.len()).map(|i| {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[i] += h;
                m[i] -= h;
                (f.value(&p) - f.value(&m)) / (2.0 * h)
            }),
        )
    }

    pub fn hessian<P: Potential + ?Sized>(f: &P, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = theta.len();
        let h = 1e-5 * (1.0 + theta.norm());
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            let col = (f.gradient(&p) - f.gradient(&m)) / (2.0 * h);
            out.set_column(i, &col);
        }
        out
    }

    /// Finite-difference `⟨∇³f, u^{⊗3}⟩` from Hessians along `u`.
    pub fn third_directional<P: Potential + ?Sized>(f: &P, theta: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let h = 1e-4 * (1.0 + theta.norm()) / u.norm().max(1e-300);
        let hp = f.hessian(&(theta + u * h));
        let hm = f.hessian(&(theta - u * h));
        let dh = (hp - hm) / (2.0 * h);
        (u.transpose() * dh * u)[(0, 0)]
    }
}
