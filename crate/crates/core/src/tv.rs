//! Total variation between `π ∝ exp(-n f)` and a Gaussian: tensor Simpson
//! quadrature for d ≤ 3, importance-sampled Monte Carlo for any d, and the
//! Gaussian-vs-Gaussian comparison bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{check_dim, Error, Result};
use crate::metric::MetricContext;
use crate::models::potential::Potential;
use crate::rng;

/// `N(mean, precision⁻¹)`.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    ctx: MetricContext,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), precision.nrows())?;
        let ctx = MetricContext::new(precision.clone())?;
        Ok(Gaussian { mean, precision: ctx.matrix().clone(), ctx })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardized coordinates `z = P^{1/2}(θ - μ)`.
    pub fn whiten(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.ctx.sqrt() * (theta - &self.mean)
    }

    pub fn unwhiten(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + self.ctx.inv_sqrt() * z
    }

    pub fn log_pdf(&self, theta: &DVector<f64>) -> f64 {
        let d = self.dim() as f64;
        let z = self.whiten(theta);
        -0.5 * z.norm_squared() - 0.5 * d * (2.0 * std::f64::consts::PI).ln() + 0.5 * self.ctx.log_det()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.unwhiten(&rng::standard_normal_vec(rng, self.dim()))
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.ctx.inverse()
    }

    pub fn metric(&self) -> &MetricContext {
        &self.ctx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TvMethod {
    Quadrature,
    Mc,
}

#[derive(Debug, Clone, Serialize)]
pub struct TvEstimate {
    pub value: f64,
    pub method: TvMethod,
    /// Quadrature: grid-refinement difference plus truncation bound.
    /// MC: jackknife standard error.
    pub error: f64,
    /// Grid points or samples.
    pub size: usize,
    /// MC only: effective sample size of the importance weights.
    pub ess: Option<f64>,
    /// MC only: ESS above the reliability threshold.
    pub reliable: bool,
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    /// Box half-width in standard deviations of the Gaussian.
    pub radius_mult: f64,
    /// Points per axis; rounded up to `4k + 1` so the half grid is also Simpson.
    pub points: Option<usize>,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { radius_mult: 12.0, points: None }
    }
}

fn default_points(d: usize) -> usize {
    match d {
        1 => 2001,
        2 => 321,
        _ => 97,
    }
}

fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let w = if i == 0 || i == m - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// `½ ∫ |π_f - γ|` on a tensor Simpson grid in γ-standardized coordinates.
pub fn tv_quadrature<P: Potential + ?Sized>(f: &P, g: &Gaussian, opts: QuadOptions) -> Result<TvEstimate> {
    let d = f.dim();
    check_dim(d, g.dim())?;
    if d > 3 {
        return Err(Error::Unsupported(format!("quadrature for d = {d} > 3")));
    }
    if !f.in_domain(&g.mean) {
        return Err(Error::Domain("Gaussian mean outside the potential's domain".into()));
    }
    let mut m = opts.points.unwrap_or_else(|| default_points(d)).max(5);
    while m % 4 != 1 {
        m += 1;
    }
    let a = opts.radius_mult;
    let h = 2.0 * a / (m - 1) as f64;
    let n = f.scale();
    let coord = |i: usize| -a + h * i as f64;
    let total = m.pow(d as u32);
    // log of the unnormalized π in z coordinates, anchored at the Gaussian mean
    let logp: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut z = DVector::zeros(d);
            let mut rem = idx;
            for k in 0..d {
                z[k] = coord(rem % m);
                rem /= m;
            }
            let theta = g.unwhiten(&z);
            if !f.in_domain(&theta) {
                return f64::NEG_INFINITY;
            }
            -n * f.excess(&theta, &g.mean)
        })
        .collect();
    if logp.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite("integrand on the quadrature grid".into()));
    }
    let shift = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NonFinite("potential is infinite on the whole grid".into()));
    }
    let tv_on = |stride: usize| -> f64 {
        let mm = (m - 1) / stride + 1;
        let w = simpson_weights(mm, h * stride as f64);
        let mut zp = Kahan::default();
        let mut zg = Kahan::default();
        let mut pts: Vec<(f64, f64, f64)> = Vec::with_capacity(mm.pow(d as u32));
        for idx in 0..mm.pow(d as u32) {
            let mut rem = idx;
            let mut full = 0usize;
            let mut mult = 1usize;
            let mut weight = 1.0;
            let mut r2 = 0.0;
            for _ in 0..d {
                let j = rem % mm;
                rem /= mm;
                weight *= w[j];
                full += j * stride * mult;
                mult *= m;
                let c = coord(j * stride);
                r2 += c * c;
            }
            let p = (logp[full] - shift).exp();
            let q = (-0.5 * r2).exp();
            zp.add(weight * p);
            zg.add(weight * q);
            pts.push((weight, p, q));
        }
        let mut acc = Kahan::default();
        for (w, p, q) in pts {
            acc.add(w * (p / zp.sum - q / zg.sum).abs());
        }
        0.5 * acc.sum
    };
    let fine = tv_on(1);
    let coarse = tv_on(2);
    let gauss_tail = (2.0 * d as f64 * normal_cdf(-a)).min(1.0);
    let pi_tail = pi_truncation_bound(f, g, a, &logp, shift, m, h, d);
    let value = fine.clamp(0.0, 1.0);
    Ok(TvEstimate {
        value,
        method: TvMethod::Quadrature,
        error: (fine - coarse).abs() + gauss_tail + pi_tail,
        size: total,
        ess: None,
        reliable: true,
    })
}

/// Mass of π outside the ball of radius `a` (z coordinates), from convexity:
/// with `φ = n·excess` and `m_b = min_{|z|=b} φ`, `φ(z) ≥ (|z|/b) m_b` for
/// `|z| ≥ b`, so the outside mass is at most
/// `S_{d-1} Γ(d, κa) / κ^d` with `κ = m_b / b`, relative to the grid mass.
#[allow(clippy::too_many_arguments)]
fn pi_truncation_bound<P: Potential + ?Sized>(
    f: &P,
    g: &Gaussian,
    a: f64,
    logp: &[f64],
    shift: f64,
    m: usize,
    h: f64,
    d: usize,
) -> f64 {
    if !f.is_convex() {
        return f64::INFINITY;
    }
    let n = f.scale();
    let b = a / 2.0;
    let mut sr = rng::stream(17, "truncation-sphere", d as u64);
    let dirs = if d == 1 { 2 } else { 4000 };
    let mut m_b = f64::INFINITY;
    for i in 0..dirs {
        let u = if d == 1 {
            DVector::from_element(1, if i == 0 { 1.0 } else { -1.0 })
        } else {
            rng::unit_sphere(&mut sr, d)
        };
        let theta = g.unwhiten(&(u * b));
        let phi = if f.in_domain(&theta) { n * f.excess(&theta, &g.mean) } else { f64::INFINITY };
        m_b = m_b.min(phi);
    }
    // sampled minimum overestimates the true one; keep a margin
    let m_b = 0.9 * m_b;
    if !(m_b > 0.0) {
        return f64::INFINITY;
    }
    let kappa = m_b / b;
    let dd = d as f64;
    let log_surface = std::f64::consts::LN_2 + 0.5 * dd * std::f64::consts::PI.ln() - ln_gamma(dd / 2.0);
    let log_tail = log_surface + ln_gamma(dd) + gamma_ur(dd, kappa * a).max(1e-300).ln() - dd * kappa.ln();
    // grid estimate of ∫ exp(φ) over the box in the same units (exp(-shift) scaling)
    let w = simpson_weights(m, h);
    let mut z = Kahan::default();
    for (idx, lp) in logp.iter().enumerate() {
        let mut rem = idx;
        let mut weight = 1.0;
        for _ in 0..d {
            weight *= w[rem % m];
            rem /= m;
        }
        z.add(weight * (lp - shift).exp());
    }
    ((log_tail + shift).exp() / z.sum).min(1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    pub ess_threshold: f64,
    pub jackknife_blocks: usize,
}

impl McOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        McOptions { samples, seed, ess_threshold: 100.0, jackknife_blocks: 20 }
    }
}

/// Importance-sampled TV with the Gaussian as proposal:
/// `½ E_g |w / Z - 1|`, `w = exp(-n f) / g`.
pub fn tv_mc<P: Potential + ?Sized>(f: &P, g: &Gaussian, opts: McOptions) -> Result<TvEstimate> {
    let d = f.dim();
    check_dim(d, g.dim())?;
    if !f.in_domain(&g.mean) {
        return Err(Error::Domain("Gaussian mean outside the potential's domain".into()));
    }
    let n = f.scale();
    let samples = opts.samples.max(opts.jackknife_blocks.max(2));
    const BLOCK: usize = 4096;
    let nblocks = samples.div_ceil(BLOCK);
    let logw: Vec<f64> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(opts.seed, "tv-mc", b as u64);
            let count = BLOCK.min(samples - b * BLOCK);
            (0..count)
                .map(|_| {
                    let z = rng::standard_normal_vec(&mut r, d);
                    let theta = g.unwhiten(&z);
                    if !f.in_domain(&theta) {
                        return f64::NEG_INFINITY;
                    }
                    -n * f.excess(&theta, &g.mean) + 0.5 * z.norm_squared()
                })
                .collect::<Vec<f64>>()
        })
        .flatten()
        .collect();
    if logw.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("importance weight".into()));
    }
    let shift = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::DegenerateMc("all importance weights vanish".into()));
    }
    let w: Vec<f64> = logw.iter().map(|x| (x - shift).exp()).collect();
    let blocks = opts.jackknife_blocks.max(2);
    let per = w.len() / blocks;
    let mut bsum = vec![Kahan::default(); blocks];
    let mut bcnt = vec![0usize; blocks];
    for (i, &x) in w.iter().enumerate() {
        let b = (i / per.max(1)).min(blocks - 1);
        bsum[b].add(x);
        bcnt[b] += 1;
    }
    let estimate = |skip: Option<usize>| -> f64 {
        let mut s = Kahan::default();
        let mut c = 0usize;
        for b in 0..blocks {
            if Some(b) != skip {
                s.add(bsum[b].sum);
                c += bcnt[b];
            }
        }
        let z = s.sum / c as f64;
        let mut acc = Kahan::default();
        for (i, &x) in w.iter().enumerate() {
            let b = (i / per.max(1)).min(blocks - 1);
            if Some(b) != skip {
                acc.add((x / z - 1.0).abs());
            }
        }
        0.5 * acc.sum / c as f64
    };
    let full = estimate(None);
    let loo: Vec<f64> = (0..blocks).map(|b| estimate(Some(b))).collect();
    let mean_loo = loo.iter().sum::<f64>() / blocks as f64;
    let var = loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>() * (blocks - 1) as f64 / blocks as f64;
    let s1: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    let ess = s1 * s1 / s2;
    Ok(TvEstimate {
        value: full.clamp(0.0, 1.0),
        method: TvMethod::Mc,
        error: var.sqrt(),
        size: w.len(),
        ess: Some(ess),
        reliable: ess >= opts.ess_threshold,
    })
}

/// `min(1, 2 (ε/τ) sqrt(d))` with `τ = λ_min(P₁^{-1/2} P₂ P₁^{-1/2})` and
/// `ε = ‖P₂ - P₁‖_{P₁}`, for two Gaussians with equal means and precisions
/// `P₁ = Σ₁⁻¹`, `P₂ = Σ₂⁻¹`.
pub fn tv_gaussian_bound(p1: &DMatrix<f64>, p2: &DMatrix<f64>) -> Result<f64> {
    let c1 = MetricContext::new(p1.clone())?;
    MetricContext::new(p2.clone())?;
    check_dim(c1.dim(), p2.nrows())?;
    let tau = SymmetricEigen::new(c1.whiten_matrix(p2)).eigenvalues.min();
    let eps = SymmetricEigen::new(c1.whiten_matrix(&(p2 - p1))).eigenvalues.amax();
    let d = c1.dim() as f64;
    Ok((2.0 * eps / tau * d.sqrt()).min(1.0))
}

/// `2 ‖Σ₁^{-1/2} Σ₂ Σ₁^{-1/2} - I‖_F` from precisions.
pub fn tv_gaussian_frobenius_bound(p1: &DMatrix<f64>, p2: &DMatrix<f64>) -> Result<f64> {
    let c1 = MetricContext::new(p1.clone())?;
    let c2 = MetricContext::new(p2.clone())?;
    // Σ₁^{-1/2} = P₁^{1/2}
    let m = c1.sqrt() * c2.inverse() * c1.sqrt();
    let d = c1.dim();
    Ok(2.0 * (m - DMatrix::identity(d, d)).norm())
}

/// Exact TV between `N(μ₁, σ₁²)` and `N(μ₂, σ₂²)` from the density crossings.
pub fn tv_gaussian_exact_1d(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0) || !(s2 > 0.0) {
        return Err(Error::Domain("standard deviations must be positive".into()));
    }
    // log p1 - log p2 = A x² + B x + C
    let a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let b = mu1 / (s1 * s1) - mu2 / (s2 * s2);
    let c = mu2 * mu2 / (2.0 * s2 * s2) - mu1 * mu1 / (2.0 * s1 * s1) + (s2 / s1).ln();
    let mut roots: Vec<f64> = Vec::new();
    if a.abs() < 1e-14 * (0.5 / (s1 * s1)) {
        if b.abs() > 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc > 0.0 {
            let sq = disc.sqrt();
            // stable quadratic roots
            let q = -0.5 * (b + b.signum() * sq);
            let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (-b / (2.0 * a), -b / (2.0 * a)) };
            roots.push(r1.min(r2));
            roots.push(r1.max(r2));
        }
    }
    let cdf1 = |x: f64| normal_cdf((x - mu1) / s1);
    let cdf2 = |x: f64| normal_cdf((x - mu2) / s2);
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(roots);
    edges.push(f64::INFINITY);
    let mut tv = 0.0;
    for w in edges.windows(2) {
        let m1 = cdf1(w[1]) - cdf1(w[0]);
        let m2 = cdf2(w[1]) - cdf2(w[0]);
        tv += (m1 - m2).abs();
    }
    Ok((0.5 * tv).clamp(0.0, 1.0))
}
