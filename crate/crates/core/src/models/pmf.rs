//! Multinomial model in the free coordinates `θ = (θ_1, …, θ_d)`, with
//! `θ_0 = 1 - Σ θ_j`. The negative log-likelihood is `ℓ(θ) = -Σ_j N̄_j log θ_j`
//! over `j = 0..=d`, with `N̄ = N / n`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::potential::{Domain, Potential};
use crate::error::{check_dim, Error, Result};
use crate::metric::MetricContext;
use crate::rng;

#[derive(Debug, Clone)]
pub struct PmfModel {
    pub d: usize,
    pub n: u64,
    /// `(N_0, …, N_d)`.
    pub counts: Vec<u64>,
    /// `(θ*_0, …, θ*_d)`.
    pub theta_star_full: Vec<f64>,
    /// Some count is zero, so the MLE sits on the simplex boundary.
    pub boundary_mle: bool,
}

impl PmfModel {
    pub fn new(counts: Vec<u64>, theta_star_full: Vec<f64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Config("need at least two categories".into()));
        }
        check_dim(counts.len(), theta_star_full.len())?;
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::Config("counts sum to zero".into()));
        }
        let total: f64 = theta_star_full.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("θ* sums to {total}, expected 1")));
        }
        if theta_star_full.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Domain("θ* must be strictly positive".into()));
        }
        Ok(PmfModel {
            d: counts.len() - 1,
            n,
            boundary_mle: counts.iter().any(|&c| c == 0),
            counts,
            theta_star_full,
        })
    }

    pub fn nbar_full(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// Free coordinates of `N̄`, the MLE when all counts are positive.
    pub fn nbar(&self) -> DVector<f64> {
        let nb = self.nbar_full();
        DVector::from_iterator(self.d, nb[1..].iter().copied())
    }

    pub fn theta_star(&self) -> DVector<f64> {
        DVector::from_iterator(self.d, self.theta_star_full[1..].iter().copied())
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_star_full.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self> {
        PmfModel::new(counts, self.theta_star_full.clone())
    }

    fn theta0(theta: &DVector<f64>) -> f64 {
        // 1 - Σθ_j with pairwise summation kept simple: d is small
        1.0 - theta.sum()
    }

    pub fn in_simplex(theta: &DVector<f64>) -> bool {
        theta.iter().all(|&t| t > 0.0) && Self::theta0(theta) > 0.0
    }
}

fn full_vector(theta: &DVector<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(theta.len() + 1);
    v.push(1.0 - theta.sum());
    v.extend(theta.iter().copied());
    v
}

/// Pearson `χ²(ω ‖ θ) = Σ_j (ω_j - θ_j)² / θ_j` over full pmfs.
pub fn chi2(omega: &[f64], theta: &[f64]) -> f64 {
    omega
        .iter()
        .zip(theta)
        .map(|(w, t)| (w - t) * (w - t) / t)
        .sum()
}

impl Potential for PmfModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn scale(&self) -> f64 {
        self.n as f64
    }
    fn name(&self) -> String {
        "pmf".into()
    }
    fn domain(&self) -> Domain {
        let d = self.d;
        let mut normals = DMatrix::zeros(d + 1, d);
        let mut offsets = DVector::zeros(d + 1);
        for j in 0..d {
            normals[(j, j)] = -1.0;
        }
        for j in 0..d {
            normals[(d, j)] = 1.0;
        }
        offsets[d] = 1.0;
        Domain::Polyhedron { normals, offsets }
    }
    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.d && Self::in_simplex(theta)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn value(&self, theta: &DVector<f64>) -> f64 {
        if !Self::in_simplex(theta) {
            return f64::INFINITY;
        }
        let full = full_vector(theta);
        self.nbar_full()
            .iter()
            .zip(&full)
            .map(|(&nb, &t)| if nb == 0.0 { 0.0 } else { -nb * t.ln() })
            .sum()
    }
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let nb = self.nbar_full();
        let t0 = Self::theta0(theta);
        DVector::from_fn(self.d, |j, _| -nb[j + 1] / theta[j] + nb[0] / t0)
    }
    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let nb = self.nbar_full();
        let t0 = Self::theta0(theta);
        let mut h = DMatrix::from_element(self.d, self.d, nb[0] / (t0 * t0));
        for j in 0..self.d {
            h[(j, j)] += nb[j + 1] / (theta[j] * theta[j]);
        }
        h
    }
    fn third_contraction(&self, theta: &DVector<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
        let nb = self.nbar_full();
        let t0 = Self::theta0(theta);
        let su = u.sum();
        let common = 2.0 * nb[0] / (t0 * t0 * t0) * su * su;
        Some(DVector::from_fn(self.d, |j, _| {
            -2.0 * nb[j + 1] * u[j] * u[j] / theta[j].powi(3) + common
        }))
    }
    /// For `f = ℓ` with mode `N̄` and `H = ∇²ℓ(N̄)`: on `U(r)` each
    /// `θ_j ≥ N̄_j (1 - ρ)` with `ρ = r sqrt(d / (n N̄_min))`, and
    /// `|⟨∇³ℓ(θ), u³⟩| ≤ 2 max_j |u_j| / (N̄_j (1-ρ)³)` with `|u_j| ≤ sqrt(N̄_j)`.
    fn analytic_delta3(&self, mode: &DVector<f64>, h: &MetricContext, r: f64) -> Option<f64> {
        if self.boundary_mle {
            return None;
        }
        // the bound relies on the anchor being N̄ with its own Hessian
        let nbar = self.nbar();
        if (mode - &nbar).amax() > 1e-9 || (h.matrix() - self.hessian(&nbar)).amax() > 1e-6 * h.matrix().amax() {
            return None;
        }
        let nmin = self.nbar_full().into_iter().fold(f64::INFINITY, f64::min);
        let rho = r * (self.d as f64 / (self.n as f64 * nmin)).sqrt();
        if rho >= 1.0 {
            return None;
        }
        Some(2.0 / (nmin.sqrt() * (1.0 - rho).powi(3)))
    }
    fn excess(&self, theta: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        if !Self::in_simplex(theta) {
            return f64::INFINITY;
        }
        let t = full_vector(theta);
        let a = full_vector(anchor);
        let nb = self.nbar_full();
        let mut s = 0.0;
        for j in 0..=self.d {
            if nb[j] > 0.0 {
                s -= nb[j] * ((t[j] - a[j]) / a[j]).ln_1p();
            }
        }
        s
    }
    fn default_start(&self) -> DVector<f64> {
        self.nbar()
    }
}

/// Value, gradient, Hessian and `∇³ℓ[u, u, ·]` at θ.
pub fn pmf_nll(model: &PmfModel, theta: &DVector<f64>, u: &DVector<f64>) -> Result<super::glm::Derivs> {
    check_dim(model.d, theta.len())?;
    check_dim(model.d, u.len())?;
    if !PmfModel::in_simplex(theta) {
        return Err(Error::Domain("θ outside the open simplex".into()));
    }
    Ok((
        model.value(theta),
        model.gradient(theta),
        model.hessian(theta),
        model.third_contraction(theta, u).expect("closed form"),
    ))
}

/// `F* = diag(1/θ*_j) + (1/θ*_0) 𝟙𝟙ᵀ`.
pub fn pmf_fisher(theta_star_full: &[f64]) -> Result<DMatrix<f64>> {
    if theta_star_full.len() < 2 || theta_star_full.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("θ* must be strictly positive".into()));
    }
    let d = theta_star_full.len() - 1;
    let mut f = DMatrix::from_element(d, d, 1.0 / theta_star_full[0]);
    for j in 0..d {
        f[(j, j)] += 1.0 / theta_star_full[j + 1];
    }
    Ok(f)
}

/// `⟨∇³ℓ(θ), ·⟩` as a dense form, exact from the closed form.
pub fn pmf_third_form(model: &PmfModel, theta: &DVector<f64>) -> crate::metric::SymmetricKForm {
    let nb = model.nbar_full();
    let full = full_vector(theta);
    let d = model.d;
    let mut terms = Vec::with_capacity(d + 1);
    terms.push((2.0 * nb[0] / full[0].powi(3), DVector::from_element(d, 1.0)));
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        terms.push((-2.0 * nb[j + 1] / full[j + 1].powi(3), e));
    }
    crate::metric::SymmetricKForm::sum_of_cubes(d, &terms)
}

/// `‖∇³ℓ(θ*)‖_{F*}` at `N̄ = θ*`: `2 (1 - 2θ_min) / sqrt(θ_min (1 - θ_min))`.
pub fn pmf_third_norm_closed_form(theta_min: f64) -> f64 {
    2.0 * (1.0 - 2.0 * theta_min) / (theta_min * (1.0 - theta_min)).sqrt()
}

/// Multinomial counts by sequential conditional binomials.
pub fn pmf_sample(theta_star_full: &[f64], n: u64, seed: u64) -> Result<Vec<u64>> {
    if theta_star_full.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Domain("probabilities must be nonnegative".into()));
    }
    let total: f64 = theta_star_full.iter().sum();
    let mut r = rng::stream(seed, "pmf-counts", 0);
    let mut remaining = n;
    let mut mass = total;
    let mut out = vec![0u64; theta_star_full.len()];
    let last = theta_star_full.len() - 1;
    for (j, &p) in theta_star_full.iter().enumerate() {
        if j == last || remaining == 0 {
            out[j] = if j == last { remaining } else { 0 };
            continue;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(remaining, q)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(&mut r);
        out[j] = c;
        remaining -= c;
        mass -= p;
    }
    Ok(out)
}

/// A uniformly random interior pmf with all entries at least `floor`.
pub fn random_pmf<R: Rng + ?Sized>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    let free = 1.0 - floor * len as f64;
    w.iter().map(|x| floor + free * x / s).collect()
}
