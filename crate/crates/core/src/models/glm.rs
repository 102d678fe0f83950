//! Generalized linear models `Y_i | X_i ~ exp(ωᵀy - ψ(ω))` at `ω = X_iᵀθ`.
//!
//! The normalized negative log-likelihood is
//! `ℓ(θ) = (1/n) Σ [ψ(X_iᵀθ) - Y_iᵀX_iᵀθ]`. Its Hessian does not depend on the
//! labels. Designs are stored stacked: block `i` of the `(n·k) × d` matrix `z`
//! is `X_iᵀ`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal, Poisson};

use super::potential::{Domain, Potential};
use crate::error::{check_dim, Error, Result};
use crate::metric::{weighted_matrix_norm, MetricContext};
use crate::rng;

/// `sup_t |ψ'''(t)|` for the logistic cumulant, attained at `σ(t) = 1/2 ± 1/(2√3)`.
pub const LOGISTIC_THIRD_SUP: f64 = 0.096_225_044_864_937_63; // 1/(6√3)

/// A user-supplied log-partition function on `Ω ⊆ ℝ^k`.
pub trait Cumulant: Send + Sync {
    fn k(&self) -> usize;
    fn in_omega(&self, omega: &DVector<f64>) -> bool;
    fn value(&self, omega: &DVector<f64>) -> f64;
    fn gradient(&self, omega: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, omega: &DVector<f64>) -> DMatrix<f64>;
    /// `∇³ψ(ω)[v, v, ·]`.
    fn third_contraction(&self, omega: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
}

#[derive(Clone)]
pub enum LinkFamily {
    Logistic,
    Poisson,
    Gaussian,
    /// `ψ(ω) = -log(-ω)` on `Ω = (-∞, 0)`.
    Exponential,
    Custom(Arc<dyn Cumulant>),
}

impl fmt::Debug for LinkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LinkFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LinkFamily::Logistic => "logistic",
            LinkFamily::Poisson => "poisson",
            LinkFamily::Gaussian => "gaussian",
            LinkFamily::Exponential => "exponential",
            LinkFamily::Custom(_) => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "logistic" => Ok(LinkFamily::Logistic),
            "poisson" => Ok(LinkFamily::Poisson),
            "gaussian" => Ok(LinkFamily::Gaussian),
            "exponential" => Ok(LinkFamily::Exponential),
            other => Err(Error::Config(format!("unknown link family '{other}'"))),
        }
    }

    /// Scalar `(ψ, ψ', ψ'', ψ''')` for the built-in families.
    pub fn scalar(&self, t: f64) -> Option<[f64; 4]> {
        match self {
            LinkFamily::Logistic => {
                let s = sigmoid(t);
                let v = s * (1.0 - s);
                Some([softplus(t), s, v, v * (1.0 - 2.0 * s)])
            }
            LinkFamily::Poisson => {
                let e = t.exp();
                Some([e, e, e, e])
            }
            LinkFamily::Gaussian => Some([t * t / 2.0, t, 1.0, 0.0]),
            LinkFamily::Exponential => {
                if t < 0.0 {
                    Some([-(-t).ln(), -1.0 / t, 1.0 / (t * t), -2.0 / (t * t * t)])
                } else {
                    Some([f64::INFINITY, f64::NAN, f64::NAN, f64::NAN])
                }
            }
            LinkFamily::Custom(_) => None,
        }
    }

    /// One entry of [`LinkFamily::scalar`], skipping the others.
    pub fn scalar_order(&self, t: f64, order: usize) -> Option<f64> {
        match (self, order) {
            (LinkFamily::Logistic, 0) => Some(softplus(t)),
            (LinkFamily::Logistic, 1) => Some(sigmoid(t)),
            _ => self.scalar(t).map(|v| v[order]),
        }
    }

    pub fn scalar_in_omega(&self, t: f64) -> bool {
        match self {
            LinkFamily::Exponential => t < 0.0,
            _ => t.is_finite(),
        }
    }

    /// `sup_Ω |ψ'''|` where finite.
    pub fn third_sup(&self) -> Option<f64> {
        match self {
            LinkFamily::Logistic => Some(LOGISTIC_THIRD_SUP),
            LinkFamily::Gaussian => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GlmModel {
    pub link: LinkFamily,
    pub d: usize,
    pub k: usize,
    pub n_obs: usize,
    /// Stacked `X_iᵀ` blocks, `(n·k) × d`.
    pub z: DMatrix<f64>,
    /// Stacked labels, length `n·k`.
    pub y: DVector<f64>,
    pub theta_star: DVector<f64>,
    /// Whether the design spans ℝ^d.
    pub full_rank: bool,
    /// Distinct rows of `z` and their multiplicities; the cumulant sums of
    /// built-in links only depend on these.
    rows: DMatrix<f64>,
    weights: DVector<f64>,
    /// `(1/n) zᵀy`, the only way the labels enter.
    ybar: DVector<f64>,
}

fn unique_rows(z: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for i in 0..z.nrows() {
        let key: Vec<u64> = z.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
        match index.get(&key) {
            Some(&g) => counts[g] += 1.0,
            None => {
                index.insert(key, order.len());
                order.push(i);
                counts.push(1.0);
            }
        }
    }
    let rows = DMatrix::from_fn(order.len(), z.ncols(), |g, j| z[(order[g], j)]);
    (rows, DVector::from_vec(counts))
}

impl GlmModel {
    pub fn new(
        link: LinkFamily,
        k: usize,
        z: DMatrix<f64>,
        y: DVector<f64>,
        theta_star: DVector<f64>,
    ) -> Result<Self> {
        if k == 0 || z.nrows() % k != 0 || z.nrows() == 0 {
            return Err(Error::Config("design rows must be a positive multiple of k".into()));
        }
        check_dim(z.nrows(), y.len())?;
        check_dim(z.ncols(), theta_star.len())?;
        if let LinkFamily::Custom(c) = &link {
            check_dim(c.k(), k)?;
        }
        let d = z.ncols();
        let n_obs = z.nrows() / k;
        let (rows, weights) = unique_rows(&z);
        let rank = rows.clone().svd(false, false).rank(1e-10 * rows.norm().max(1e-300));
        let ybar = z.transpose() * &y / n_obs as f64;
        let model = GlmModel {
            link,
            d,
            k,
            n_obs,
            z,
            y,
            theta_star,
            full_rank: rank == d,
            rows,
            weights,
            ybar,
        };
        if !model.in_theta(&model.theta_star) {
            return Err(Error::Domain("some X_iᵀθ* lies outside Ω".into()));
        }
        Ok(model)
    }

    /// Scalar-response model with design rows `x_iᵀ`.
    pub fn from_rows(link: LinkFamily, x: DMatrix<f64>, y: DVector<f64>, theta_star: DVector<f64>) -> Result<Self> {
        Self::new(link, 1, x, y, theta_star)
    }

    /// `X_i = I_d`: the i.i.d. exponential family with separable cumulant.
    pub fn identity_design(link: LinkFamily, n: usize, y: DVector<f64>, theta_star: DVector<f64>) -> Result<Self> {
        let d = theta_star.len();
        let mut z = DMatrix::zeros(n * d, d);
        for i in 0..n {
            for j in 0..d {
                z[(i * d + j, j)] = 1.0;
            }
        }
        Self::new(link, d, z, y, theta_star)
    }

    pub fn with_labels(&self, y: DVector<f64>) -> Result<Self> {
        check_dim(self.z.nrows(), y.len())?;
        let mut m = self.clone();
        m.ybar = m.z.transpose() * &y / m.n_obs as f64;
        m.y = y;
        Ok(m)
    }

    fn block(&self, v: &DVector<f64>, i: usize) -> DVector<f64> {
        v.rows(i * self.k, self.k).into_owned()
    }

    pub fn in_theta(&self, theta: &DVector<f64>) -> bool {
        if theta.len() != self.d {
            return false;
        }
        match &self.link {
            LinkFamily::Custom(c) => {
                let omega = &self.z * theta;
                (0..self.n_obs).all(|i| c.in_omega(&self.block(&omega, i)))
            }
            l => (&self.rows * theta).iter().all(|&t| l.scalar_in_omega(t)),
        }
    }

    /// Built-in links: `Σ_g w_g φ(ω_g)` over distinct rows for the chosen
    /// derivative order of ψ, returned as the weighted stacked vector.
    fn weighted_scalar(&self, l: &LinkFamily, omega: &DVector<f64>, order: usize) -> DVector<f64> {
        omega.zip_map(&self.weights, |t, w| w * l.scalar_order(t, order).expect("built-in"))
    }

    pub fn nll_value(&self, theta: &DVector<f64>) -> f64 {
        if !self.in_theta(theta) {
            return f64::INFINITY;
        }
        let n = self.n_obs as f64;
        match &self.link {
            LinkFamily::Custom(c) => {
                let omega = &self.z * theta;
                let psi: f64 = (0..self.n_obs).map(|i| c.value(&self.block(&omega, i))).sum();
                psi / n - self.ybar.dot(theta)
            }
            l => {
                let omega = &self.rows * theta;
                self.weighted_scalar(l, &omega, 0).sum() / n - self.ybar.dot(theta)
            }
        }
    }

    pub fn nll_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let n = self.n_obs as f64;
        match &self.link {
            LinkFamily::Custom(c) => {
                let omega = &self.z * theta;
                let mut g = DVector::zeros(omega.len());
                for i in 0..self.n_obs {
                    g.rows_mut(i * self.k, self.k).copy_from(&c.gradient(&self.block(&omega, i)));
                }
                self.z.transpose() * g / n - &self.ybar
            }
            l => {
                let omega = &self.rows * theta;
                self.rows.transpose() * self.weighted_scalar(l, &omega, 1) / n - &self.ybar
            }
        }
    }

    /// `(1/n) Σ X_i ∇²ψ(X_iᵀθ) X_iᵀ`; independent of the labels.
    pub fn nll_hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n_obs as f64;
        match &self.link {
            LinkFamily::Custom(c) => {
                let omega = &self.z * theta;
                let mut h = DMatrix::zeros(self.d, self.d);
                for i in 0..self.n_obs {
                    let b = self.block(&omega, i);
                    let xi = self.z.rows(i * self.k, self.k);
                    h += xi.transpose() * c.hessian(&b) * xi;
                }
                h / n
            }
            l => {
                let omega = &self.rows * theta;
                let w = self.weighted_scalar(l, &omega, 2);
                let mut xw = self.rows.clone();
                for (i, mut row) in xw.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                let h = self.rows.transpose() * xw / n;
                (&h + h.transpose()) * 0.5
            }
        }
    }

    /// `∇³ℓ(θ)[u, u, ·]`.
    pub fn nll_third_contraction(&self, theta: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n_obs as f64;
        match &self.link {
            LinkFamily::Custom(c) => {
                let omega = &self.z * theta;
                let v = &self.z * u;
                let mut stacked = DVector::zeros(omega.len());
                for i in 0..self.n_obs {
                    let t = c.third_contraction(&self.block(&omega, i), &self.block(&v, i));
                    stacked.rows_mut(i * self.k, self.k).copy_from(&t);
                }
                self.z.transpose() * stacked / n
            }
            l => {
                let omega = &self.rows * theta;
                let v = &self.rows * u;
                let w3 = self.weighted_scalar(l, &omega, 3);
                self.rows.transpose() * w3.component_mul(&v).component_mul(&v) / n
            }
        }
    }

    /// Distinct design rows and their multiplicities.
    pub fn distinct_rows(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.rows, &self.weights)
    }

    /// Polyhedral domain for the exponential family, whole space otherwise.
    pub fn theta_domain(&self) -> Domain {
        match self.link {
            LinkFamily::Exponential => Domain::Polyhedron {
                normals: self.z.clone(),
                offsets: DVector::zeros(self.z.nrows()),
            },
            _ => Domain::Whole,
        }
    }

    /// Certified bound on `sup_θ ‖∇³ℓ(θ)‖_A` for links with bounded `ψ'''`
    /// (k = 1): `sup|ψ'''| · max_i |A^{-1/2} x_i| · ‖(1/n) Σ x_i x_iᵀ‖_A`.
    pub fn third_sup_bound(&self, a: &MetricContext) -> Option<f64> {
        if self.k != 1 {
            return None;
        }
        let c = self.link.third_sup()?;
        if c == 0.0 {
            return Some(0.0);
        }
        let w = &self.rows * a.inv_sqrt();
        let max_row = w.row_iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
        let mut xw = self.rows.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= self.weights[i];
        }
        let gram = self.rows.transpose() * xw / self.n_obs as f64;
        let op = weighted_matrix_norm(&gram, a).ok()?;
        Some(c * max_row * op)
    }

    /// `sup|ψ'''| · λ^{-3/2} · sup_{|u|=1} (1/n) Σ |x_iᵀu|³` with `λ = λ_min(A)`;
    /// the inner sup is estimated by multistart ascent so this is a reference
    /// value rather than a certified bound.
    pub fn third_moment_bound(&self, a: &MetricContext, restarts: usize, seed: u64) -> Option<f64> {
        if self.k != 1 {
            return None;
        }
        let c = self.link.third_sup()?;
        let m3 = weighted_third_moment(&self.rows, &self.weights, restarts, seed);
        Some(c * a.min_eigenvalue().powf(-1.5) * m3)
    }
}

/// `sup_{|u|=1} (1/n) Σ |x_iᵀu|³` by projected ascent from random starts.
pub fn design_third_moment(x: &DMatrix<f64>, restarts: usize, seed: u64) -> f64 {
    weighted_third_moment(x, &DVector::from_element(x.nrows(), 1.0), restarts, seed)
}

/// `sup_{|u|=1} Σ w_i |x_iᵀu|³ / Σ w_i`.
pub fn weighted_third_moment(x: &DMatrix<f64>, w: &DVector<f64>, restarts: usize, seed: u64) -> f64 {
    let d = x.ncols();
    let n = w.sum();
    let eval = |u: &DVector<f64>| -> (f64, DVector<f64>) {
        let v = x * u;
        let val = v.zip_fold(w, 0.0, |acc, t, wi| acc + wi * t.abs().powi(3)) / n;
        let g = x.transpose() * v.zip_map(w, |t, wi| 3.0 * wi * t * t.abs()) / n;
        (val, g)
    };
    let mut best = 0.0_f64;
    for i in 0..restarts.max(1) {
        let mut r = rng::stream(seed, "third-moment", i as u64);
        let mut u = rng::unit_sphere(&mut r, d);
        let (mut val, mut g) = eval(&u);
        for _ in 0..500 {
            // fixed-point step of the homogeneous power method
            let cand = &g / g.norm().max(1e-300);
            let (cv, cg) = eval(&cand);
            if cv <= val * (1.0 + 1e-13) {
                break;
            }
            u = cand;
            val = cv;
            g = cg;
        }
        let _ = &u;
        best = best.max(val);
    }
    best
}

impl Potential for GlmModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn scale(&self) -> f64 {
        self.n_obs as f64
    }
    fn name(&self) -> String {
        self.link.name().into()
    }
    fn domain(&self) -> Domain {
        self.theta_domain()
    }
    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        self.in_theta(theta)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn value(&self, theta: &DVector<f64>) -> f64 {
        self.nll_value(theta)
    }
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.nll_gradient(theta)
    }
    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        self.nll_hessian(theta)
    }
    fn third_contraction(&self, theta: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.nll_third_contraction(theta, u))
    }
    fn analytic_delta3(&self, _mode: &DVector<f64>, h: &MetricContext, _r: f64) -> Option<f64> {
        // Lipschitz ratio ≤ sup ‖∇³ℓ‖_H by the mean value theorem
        self.third_sup_bound(h)
    }
    fn default_start(&self) -> DVector<f64> {
        self.theta_star.clone()
    }
}

/// Value, gradient, Hessian and the third-derivative contraction `∇³ℓ[u,u,·]`.
pub type Derivs = (f64, DVector<f64>, DMatrix<f64>, DVector<f64>);

pub fn glm_nll(model: &GlmModel, theta: &DVector<f64>, u: &DVector<f64>) -> Result<Derivs> {
    check_dim(model.d, theta.len())?;
    check_dim(model.d, u.len())?;
    if !model.in_theta(theta) {
        return Err(Error::Domain("some X_iᵀθ lies outside Ω".into()));
    }
    Ok((
        model.nll_value(theta),
        model.nll_gradient(theta),
        model.nll_hessian(theta),
        model.nll_third_contraction(theta, u),
    ))
}

/// `F* = ∇²ℓ(θ*)`.
pub fn glm_fisher(model: &GlmModel) -> Result<DMatrix<f64>> {
    let f = model.nll_hessian(&model.theta_star);
    if !model.full_rank {
        return Err(Error::NotPositiveDefinite(
            "design does not span ℝ^d; Fisher matrix is singular".into(),
        ));
    }
    Ok(f)
}

/// Draw labels `Y_i ~ p(· | X_iᵀθ*)`.
pub fn glm_sample(
    link: &LinkFamily,
    z: &DMatrix<f64>,
    theta_star: &DVector<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    check_dim(z.ncols(), theta_star.len())?;
    let omega = z * theta_star;
    let mut r = rng::stream(seed, "glm-labels", 0);
    let mut y = DVector::zeros(omega.len());
    for (i, &t) in omega.iter().enumerate() {
        if !link.scalar_in_omega(t) {
            return Err(Error::Domain(format!("X_iᵀθ* = {t} outside Ω")));
        }
        y[i] = match link {
            LinkFamily::Logistic => {
                let b = Bernoulli::new(sigmoid(t)).map_err(|e| Error::Domain(e.to_string()))?;
                if b.sample(&mut r) {
                    1.0
                } else {
                    0.0
                }
            }
            LinkFamily::Poisson => {
                let p = Poisson::new(t.exp()).map_err(|e| Error::Domain(e.to_string()))?;
                p.sample(&mut r)
            }
            LinkFamily::Gaussian => {
                let nrm = Normal::new(t, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
                nrm.sample(&mut r)
            }
            LinkFamily::Exponential => {
                let e = Exp::new(-t).map_err(|e| Error::Domain(e.to_string()))?;
                e.sample(&mut r)
            }
            LinkFamily::Custom(_) => {
                return Err(Error::Unsupported(
                    "sampling for a custom cumulant; supply labels directly".into(),
                ))
            }
        };
    }
    Ok(y)
}

/// `n × d` design with i.i.d. standard normal entries.
pub fn gaussian_design(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, "gaussian-design", 0);
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = r.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    x
}

/// `n × d` design with i.i.d. ±1 entries; at most `2^d` distinct rows.
pub fn rademacher_design(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, "rademacher-design", 0);
    DMatrix::from_fn(n, d, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::potential::fd;
    use approx::assert_relative_eq;

    fn logistic_instance(n: usize, d: usize, seed: u64) -> GlmModel {
        let x = gaussian_design(n, d, seed);
        let ts = DVector::from_fn(d, |i, _| 0.3 * (i as f64) - 0.2);
        let y = glm_sample(&LinkFamily::Logistic, &x, &ts, seed).unwrap();
        GlmModel::from_rows(LinkFamily::Logistic, x, y, ts).unwrap()
    }

    #[test]
    fn single_point_logistic() {
        let m = GlmModel::from_rows(
            LinkFamily::Logistic,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        let z = DVector::from_element(1, 0.0);
        let (v, g, h, _) = glm_nll(&m, &z, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(v, 2.0_f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(h[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn logistic_derivatives_match_finite_differences() {
        let m = logistic_instance(50, 5, 3);
        let mut r = rng::stream(1, "glm-fd", 0);
        for _ in 0..20 {
            let t = rng::standard_normal_vec(&mut r, 5) * 0.5;
            let g = m.gradient(&t);
            let gfd = fd::gradient(&m, &t);
            assert!((&g - &gfd).norm() <= 1e-5 * g.norm().max(1e-3));
            let h = m.hessian(&t);
            assert!((&h - fd::hessian(&m, &t)).norm() <= 1e-5 * h.norm());
            let u = rng::unit_sphere(&mut r, 5);
            let a = m.third_directional(&t, &u).unwrap();
            let b = fd::third_directional(&m, &t, &u);
            assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn other_links_match_finite_differences() {
        let x = gaussian_design(40, 3, 9) * 0.3;
        for link in [LinkFamily::Poisson, LinkFamily::Gaussian] {
            let ts = DVector::from_column_slice(&[0.2, -0.1, 0.3]);
            let y = glm_sample(&link, &x, &ts, 4).unwrap();
            let m = GlmModel::from_rows(link, x.clone(), y, ts.clone()).unwrap();
            let g = m.gradient(&ts);
            assert!((&g - fd::gradient(&m, &ts)).norm() <= 1e-5 * g.norm().max(1e-3));
            let u = DVector::from_column_slice(&[0.6, 0.0, -0.8]);
            let a = m.third_directional(&ts, &u).unwrap();
            assert!((a - fd::third_directional(&m, &ts, &u)).abs() <= 1e-4 * (1.0 + a.abs()));
        }
        // exponential needs X_iᵀθ < 0: use positive design with negative θ*
        let xp = x.map(|v| v.abs() + 0.1);
        let ts = DVector::from_column_slice(&[-1.0, -0.5, -0.7]);
        let y = glm_sample(&LinkFamily::Exponential, &xp, &ts, 5).unwrap();
        let m = GlmModel::from_rows(LinkFamily::Exponential, xp, y, ts.clone()).unwrap();
        let g = m.gradient(&ts);
        assert!((&g - fd::gradient(&m, &ts)).norm() <= 1e-5 * g.norm().max(1e-3));
        assert!(!m.in_domain(&DVector::from_column_slice(&[1.0, 1.0, 1.0])));
    }

    #[test]
    fn identity_design_is_iid_family() {
        let d = 3;
        let n = 20;
        let ts = DVector::from_column_slice(&[0.1, -0.3, 0.5]);
        let z = GlmModel::identity_design(LinkFamily::Poisson, n, DVector::zeros(n * d), ts.clone())
            .unwrap()
            .z;
        let y = glm_sample(&LinkFamily::Poisson, &z, &ts, 1).unwrap();
        let m = GlmModel::identity_design(LinkFamily::Poisson, n, y.clone(), ts.clone()).unwrap();
        let mut ybar = DVector::zeros(d);
        for i in 0..n {
            ybar += y.rows(i * d, d);
        }
        ybar /= n as f64;
        let t = DVector::from_column_slice(&[0.3, 0.2, -0.4]);
        let expect: f64 = t.iter().map(|v: &f64| v.exp()).sum::<f64>() - ybar.dot(&t);
        assert_relative_eq!(m.value(&t), expect, epsilon = 1e-12);
        let f = glm_fisher(&m).unwrap();
        assert!((f - DMatrix::from_diagonal(&ts.map(f64::exp))).norm() < 1e-12);
    }

    #[test]
    fn fisher_examples() {
        let m = GlmModel::from_rows(
            LinkFamily::Logistic,
            DMatrix::from_element(10, 1, 1.0),
            DVector::zeros(10),
            DVector::zeros(1),
        )
        .unwrap();
        assert_relative_eq!(glm_fisher(&m).unwrap()[(0, 0)], 0.25, epsilon = 1e-15);

        let x = gaussian_design(500, 3, 2);
        let m = GlmModel::from_rows(LinkFamily::Logistic, x.clone(), DVector::zeros(500), DVector::zeros(3)).unwrap();
        let f = glm_fisher(&m).unwrap();
        let mut oracle = DMatrix::zeros(3, 3);
        for i in 0..500 {
            let r = x.row(i).transpose();
            oracle += &r * r.transpose();
        }
        oracle *= 0.25 / 500.0;
        assert!((f - oracle).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_flagged() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let m = GlmModel::from_rows(LinkFamily::Logistic, x, DVector::zeros(3), DVector::zeros(2)).unwrap();
        assert!(!m.full_rank);
        assert!(glm_fisher(&m).is_err());
    }

    #[test]
    fn hessian_ignores_labels() {
        let m = logistic_instance(100, 3, 11);
        let y2 = glm_sample(&LinkFamily::Logistic, &m.z, &m.theta_star, 999).unwrap();
        let m2 = m.with_labels(y2).unwrap();
        let t = DVector::from_column_slice(&[0.1, 0.2, 0.3]);
        assert_eq!(m.hessian(&t), m2.hessian(&t));
    }

    #[test]
    fn logistic_third_sup_value() {
        let mut best = 0.0_f64;
        for i in 0..200_001 {
            let t = -10.0 + 20.0 * i as f64 / 200_000.0;
            best = best.max(LinkFamily::Logistic.scalar(t).unwrap()[3].abs());
        }
        assert_relative_eq!(best, 1.0 / (6.0 * 3.0_f64.sqrt()), epsilon = 1e-9);
        assert_relative_eq!(LOGISTIC_THIRD_SUP, 1.0 / (6.0 * 3.0_f64.sqrt()), epsilon = 1e-16);
    }

    #[test]
    fn sampler_means() {
        let n = 100_000;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = glm_sample(&LinkFamily::Logistic, &x, &DVector::zeros(1), 5).unwrap();
        let mean = y.mean();
        assert!((mean - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
        let y = glm_sample(&LinkFamily::Poisson, &x, &DVector::zeros(1), 6).unwrap();
        assert!((y.mean() - 1.0).abs() < 4.0 / (n as f64).sqrt());
        let y = glm_sample(&LinkFamily::Exponential, &x, &DVector::from_element(1, -2.0), 7).unwrap();
        assert!((y.mean() - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn custom_link_sampling_unsupported() {
        struct Quad;
        impl Cumulant for Quad {
            fn k(&self) -> usize {
                1
            }
            fn in_omega(&self, _: &DVector<f64>) -> bool {
                true
            }
            fn value(&self, w: &DVector<f64>) -> f64 {
                w.norm_squared() / 2.0
            }
            fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
                w.clone()
            }
            fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::identity(w.len(), w.len())
            }
            fn third_contraction(&self, w: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(w.len())
            }
        }
        let link = LinkFamily::Custom(Arc::new(Quad));
        let x = gaussian_design(10, 2, 1);
        assert!(matches!(
            glm_sample(&link, &x, &DVector::zeros(2), 0),
            Err(Error::Unsupported(_))
        ));
        let m = GlmModel::from_rows(link, x.clone(), DVector::from_element(10, 0.3), DVector::zeros(2)).unwrap();
        let g = GlmModel::from_rows(LinkFamily::Gaussian, x, DVector::from_element(10, 0.3), DVector::zeros(2)).unwrap();
        let t = DVector::from_column_slice(&[0.4, -0.2]);
        assert_relative_eq!(m.value(&t), g.value(&t), epsilon = 1e-13);
        assert!((m.hessian(&t) - g.hessian(&t)).norm() < 1e-13);
    }

    #[test]
    fn design_is_deterministic_and_near_isotropic() {
        let a = gaussian_design(10_000, 5, 42);
        let b = gaussian_design(10_000, 5, 42);
        assert_eq!(a, b);
        let cov = a.transpose() * &a / 10_000.0;
        let dev = (cov - DMatrix::identity(5, 5)).singular_values().max();
        assert!(dev <= 5.0 / 100.0);
    }

    #[test]
    fn grouped_rows_match_direct_sums() {
        let x = rademacher_design(3000, 2, 4);
        let ts = DVector::from_column_slice(&[0.5, -0.5]);
        let y = glm_sample(&LinkFamily::Logistic, &x, &ts, 8).unwrap();
        let m = GlmModel::from_rows(LinkFamily::Logistic, x.clone(), y.clone(), ts).unwrap();
        assert!(m.distinct_rows().0.nrows() <= 4);
        assert_eq!(m.distinct_rows().1.sum(), 3000.0);
        let t = DVector::from_column_slice(&[0.2, 0.7]);
        let direct: f64 = (0..3000)
            .map(|i| {
                let w = x.row(i).transpose().dot(&t);
                (1.0 + w.exp()).ln() - y[i] * w
            })
            .sum::<f64>()
            / 3000.0;
        assert_relative_eq!(m.value(&t), direct, max_relative = 1e-12);
        let g = fd::gradient(&m, &t);
        assert!((m.gradient(&t) - g).norm() < 1e-6);
    }
}
