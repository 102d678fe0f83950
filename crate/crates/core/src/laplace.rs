//! Laplace approximation and its total-variation certificate.
//!
//! For `π ∝ exp(-n f)` with strict minimizer `θ̂` and `H = ∇²f(θ̂)`, let
//! `U(r) = {|θ - θ̂|_H ≤ r sqrt(d/n)}` and `δ₃(r)` the Lipschitz ratio
//! `sup_{U(r)} ‖∇²f(θ) - H‖_H / |θ - θ̂|_H`. If `f` is convex, `r ≥ 6`,
//! `U(r) ⊆ Θ` and `r δ₃(r) sqrt(d/n) ≤ 1/2`, then
//! `TV(π, N(θ̂, (nH)⁻¹)) ≤ δ₃(r) d / sqrt(2n) + 3 exp(-d r² / 9)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::metric::{weighted_dual_norm, weighted_matrix_norm, weighted_vec_norm, MetricContext};
use crate::models::potential::Potential;
use crate::rng;
use crate::tv::Gaussian;

#[derive(Debug, Clone, Copy)]
pub struct ModeOptions {
    pub max_iter: usize,
    /// Tolerance on `|H^{-1/2} ∇f|`; defaults to `1e-10 sqrt(d)`.
    pub tol: Option<f64>,
}

impl Default for ModeOptions {
    fn default() -> Self {
        ModeOptions { max_iter: 200, tol: None }
    }
}

#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub mode: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub h: MetricContext,
    pub n: f64,
    pub iterations: usize,
    /// `|∇f(θ̂)|` (Euclidean).
    pub grad_norm: f64,
    /// `|∇f(θ₀)|` at the start point.
    pub initial_grad_norm: f64,
}

impl LaplaceFit {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    /// Radius of `U(r)` in the H-norm, `r sqrt(d/n)`.
    pub fn radius(&self, r: f64) -> f64 {
        r * (self.dim() as f64 / self.n).sqrt()
    }

    /// `N(θ̂, (nH)⁻¹)`.
    pub fn gaussian(&self) -> Gaussian {
        Gaussian::new(self.mode.clone(), &self.hessian * self.n).expect("H is SPD at an accepted fit")
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.h.inverse() / self.n
    }

    /// Build a fit at a known mode without running Newton.
    pub fn at_point<P: Potential + ?Sized>(f: &P, mode: DVector<f64>) -> Result<Self> {
        check_dim(f.dim(), mode.len())?;
        let hessian = f.hessian(&mode);
        let h = MetricContext::new(hessian.clone())?;
        let g = f.gradient(&mode).norm();
        Ok(LaplaceFit {
            mode,
            hessian,
            h,
            n: f.scale(),
            iterations: 0,
            grad_norm: g,
            initial_grad_norm: g,
        })
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let d = h.nrows();
    let scale = h.diagonal().amax().max(1e-300);
    let mut shift = 0.0;
    for _ in 0..40 {
        let m = h + DMatrix::identity(d, d) * shift;
        if let Some(ch) = Cholesky::new(m) {
            let l = ch.l();
            let min_diag = l.diagonal().iter().fold(f64::INFINITY, |a, x| a.min(x * x));
            if min_diag > 1e-13 * scale {
                return Some(-ch.solve(g));
            }
        }
        shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
    }
    None
}

/// Damped Newton with backtracking and a Levenberg shift; iterates stay
/// strictly inside the domain by shrinking the step.
pub fn find_mode<P: Potential + ?Sized>(f: &P, start: &DVector<f64>, opts: ModeOptions) -> Result<LaplaceFit> {
    let d = f.dim();
    check_dim(d, start.len())?;
    if !f.in_domain(start) {
        return Err(Error::Domain("Newton start point outside the domain".into()));
    }
    let tol = opts.tol.unwrap_or(1e-10 * (d as f64).sqrt());
    let domain = f.domain();
    let mut theta = start.clone();
    let mut g = f.gradient(&theta);
    let g0 = g.norm();
    let mut h = f.hessian(&theta);
    let h0_scale = SymmetricEigen::new(h.clone()).eigenvalues.amax();
    for iter in 0..=opts.max_iter {
        if h.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("derivatives at Newton iterate {iter}")));
        }
        let h_scale = SymmetricEigen::new(h.clone()).eigenvalues.amax();
        if h0_scale > 0.0 && h_scale < 1e-8 * h0_scale {
            // curvature vanishing along the path: the infimum is not attained
            return Err(Error::NonConvergence { iterations: iter, grad_norm: g.norm() });
        }
        let p = newton_direction(&h, &g);
        let dual = p.as_ref().map(|p| (-g.dot(p)).max(0.0).sqrt()).unwrap_or(f64::INFINITY);
        let fallback_ok = g.norm() <= 1e-8 * (1.0 + g0);
        if dual <= tol || (iter == opts.max_iter && fallback_ok) {
            let h_ctx = MetricContext::new(h.clone())?;
            return Ok(LaplaceFit {
                mode: theta,
                hessian: h,
                h: h_ctx,
                n: f.scale(),
                iterations: iter,
                grad_norm: g.norm(),
                initial_grad_norm: g0,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let p = p.unwrap_or_else(|| -&g);
        let slope = g.dot(&p);
        let mut t = domain.max_step(&theta, &p, 0.99).min(1.0);
        let mut accepted = false;
        for _ in 0..80 {
            let cand = &theta + &p * t;
            if f.in_domain(&cand) {
                let dec = f.excess(&cand, &theta);
                if dec.is_finite() && dec <= 1e-4 * t * slope {
                    theta = cand;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if fallback_ok {
                let h_ctx = MetricContext::new(h.clone())?;
                return Ok(LaplaceFit {
                    mode: theta,
                    hessian: h,
                    h: h_ctx,
                    n: f.scale(),
                    iterations: iter,
                    grad_norm: g.norm(),
                    initial_grad_norm: g0,
                });
            }
            return Err(Error::NonConvergence { iterations: iter, grad_norm: g.norm() });
        }
        if theta.norm() > 1e8 * (1.0 + start.norm()) {
            return Err(Error::NonConvergence { iterations: iter, grad_norm: g.norm() });
        }
        g = f.gradient(&theta);
        h = f.hessian(&theta);
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, grad_norm: g.norm() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Delta3Mode {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, Copy)]
pub struct Delta3Options {
    pub budget: usize,
    pub seed: u64,
    /// Skip the analytic bound even when available.
    pub force_empirical: bool,
}

impl Default for Delta3Options {
    fn default() -> Self {
        Delta3Options { budget: 2048, seed: 0, force_empirical: false }
    }
}

#[derive(Debug, Clone)]
pub struct Delta3Report {
    pub r: f64,
    pub mode: Delta3Mode,
    pub value: f64,
    pub witness_point: Option<DVector<f64>>,
    pub witness_direction: Option<DVector<f64>>,
    pub samples: usize,
}

/// `‖∇²f(θ) - H‖_H / |θ - θ̂|_H`.
pub fn lipschitz_ratio<P: Potential + ?Sized>(f: &P, fit: &LaplaceFit, theta: &DVector<f64>) -> f64 {
    let dist = weighted_vec_norm(&(theta - &fit.mode), &fit.h).unwrap_or(0.0);
    if dist == 0.0 {
        return 0.0;
    }
    let diff = f.hessian(theta) - &fit.hessian;
    weighted_matrix_norm(&diff, &fit.h).unwrap_or(f64::NAN) / dist
}

/// `δ₃(r)`: analytic bound if the model has one, else a sampled-and-refined
/// lower estimate of the sup.
pub fn estimate_delta3<P: Potential + ?Sized>(
    f: &P,
    fit: &LaplaceFit,
    r: f64,
    opts: Delta3Options,
) -> Result<Delta3Report> {
    let d = fit.dim();
    let radius = fit.radius(r);
    if !f.domain().contains_ellipsoid(&fit.mode, &fit.h, radius) {
        return Err(Error::Domain(format!("U(r) with r = {r} is not contained in the domain")));
    }
    if !opts.force_empirical {
        if let Some(v) = f.analytic_delta3(&fit.mode, &fit.h, r) {
            return Ok(Delta3Report {
                r,
                mode: Delta3Mode::Analytic,
                value: v,
                witness_point: None,
                witness_direction: None,
                samples: 0,
            });
        }
    }
    let to_theta = |w: &DVector<f64>| &fit.mode + fit.h.inv_sqrt() * w;
    let obj = |w: &DVector<f64>| -> f64 {
        if w.norm() < 1e-9 * radius {
            return 0.0;
        }
        let v = lipschitz_ratio(f, fit, &to_theta(w));
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut halton = rng::ShiftedHalton::new(d + 1, opts.seed);
    let budget = opts.budget.max(8);
    let pts: Vec<DVector<f64>> = (0..budget)
        .map(|_| rng::cube_to_ball(&halton.next_point(), d) * radius)
        .collect();
    let mut scored: Vec<(f64, DVector<f64>)> = pts.into_par_iter().map(|w| (obj(&w), w)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut dir_rng = rng::stream(opts.seed, "delta3-refine", 0);
    let extra_dirs: Vec<DVector<f64>> = (0..2 * d).map(|_| rng::unit_sphere(&mut dir_rng, d)).collect();
    let refined: Vec<(f64, DVector<f64>)> = scored
        .iter()
        .take(5)
        .cloned()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(v, w)| pattern_ascent(&obj, v, w, radius, &extra_dirs))
        .collect();
    let (mut best_v, mut best_w) = scored[0].clone();
    for (v, w) in refined {
        if v > best_v {
            best_v = v;
            best_w = w;
        }
    }
    let theta = to_theta(&best_w);
    let diff = f.hessian(&theta) - &fit.hessian;
    let eig = SymmetricEigen::new(fit.h.whiten_matrix(&diff));
    let (mut idx, mut mag) = (0, -1.0);
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > mag {
            mag = l.abs();
            idx = i;
        }
    }
    let dir = fit.h.inv_sqrt() * eig.eigenvectors.column(idx).into_owned();
    let value = lipschitz_ratio(f, fit, &theta);
    Ok(Delta3Report {
        r,
        mode: Delta3Mode::Empirical,
        value,
        witness_point: Some(theta),
        witness_direction: Some(dir),
        samples: budget,
    })
}

/// Compass search inside the ball of the given radius.
pub(crate) fn pattern_ascent<F: Fn(&DVector<f64>) -> f64>(
    obj: &F,
    mut v: f64,
    mut w: DVector<f64>,
    radius: f64,
    extra_dirs: &[DVector<f64>],
) -> (f64, DVector<f64>) {
    let d = w.len();
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(2 * d + 2 * extra_dirs.len());
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        dirs.push(e.clone());
        dirs.push(-e);
    }
    for e in extra_dirs {
        dirs.push(e.clone());
        dirs.push(-e);
    }
    let mut step = 0.25 * radius;
    let mut evals = 0usize;
    while step > 1e-7 * radius && evals < 20_000 {
        let mut improved = false;
        for e in &dirs {
            let mut c = &w + e * step;
            let nrm = c.norm();
            if nrm > radius {
                c *= radius / nrm;
            }
            let cv = obj(&c);
            evals += 1;
            if cv > v {
                v = cv;
                w = c;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (v, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Soundness {
    Certified,
    Heuristic,
    Invalid,
}

impl Soundness {
    pub fn as_str(&self) -> &'static str {
        match self {
            Soundness::Certified => "certified",
            Soundness::Heuristic => "heuristic",
            Soundness::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateFlags {
    pub r_at_least_6: bool,
    pub neighborhood_in_domain: bool,
    pub small_lipschitz: bool,
    pub convex: bool,
}

impl CertificateFlags {
    pub fn preconditions_pass(&self) -> bool {
        self.r_at_least_6 && self.neighborhood_in_domain && self.small_lipschitz
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub laplace_term: f64,
    pub tail_term: f64,
    pub total: f64,
    pub r: f64,
    pub delta3: f64,
    pub delta3_mode: Delta3Mode,
    pub flags: CertificateFlags,
    pub soundness: Soundness,
}

pub fn laplace_term(delta3: f64, d: usize, n: f64) -> f64 {
    delta3 * d as f64 / (2.0 * n).sqrt()
}

pub fn tail_term(d: usize, r: f64) -> f64 {
    3.0 * (-(d as f64) * r * r / 9.0).exp()
}

/// Evaluate the two terms and check the three preconditions.
pub fn certify<P: Potential + ?Sized>(f: &P, fit: &LaplaceFit, r: f64, delta3: &Delta3Report) -> Certificate {
    let d = fit.dim();
    let n = fit.n;
    let lt = laplace_term(delta3.value, d, n);
    let tt = tail_term(d, r);
    let flags = CertificateFlags {
        r_at_least_6: r >= 6.0,
        neighborhood_in_domain: f.domain().contains_ellipsoid(&fit.mode, &fit.h, fit.radius(r)),
        small_lipschitz: r * delta3.value * (d as f64 / n).sqrt() <= 0.5,
        convex: f.is_convex(),
    };
    let soundness = if !flags.preconditions_pass() {
        Soundness::Invalid
    } else if flags.convex && delta3.mode == Delta3Mode::Analytic {
        Soundness::Certified
    } else {
        Soundness::Heuristic
    };
    Certificate {
        laplace_term: lt,
        tail_term: tt,
        total: (lt + tt).min(1.0),
        r,
        delta3: delta3.value,
        delta3_mode: delta3.mode,
        flags,
        soundness,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RStrategy {
    Fixed(f64),
    /// `r = sqrt(n/d) / (2M)`, feasible when `n/d ≥ (12M)²`.
    UniformBound(f64),
    Scan(Vec<f64>),
}

/// Radius selection. The scan prefers grid points whose preconditions pass,
/// then the smallest total, ties to the smaller r.
pub fn choose_r<P: Potential + ?Sized>(
    f: &P,
    fit: &LaplaceFit,
    strategy: &RStrategy,
    opts: Delta3Options,
) -> Result<f64> {
    let d = fit.dim() as f64;
    match strategy {
        RStrategy::Fixed(r) => Ok(*r),
        RStrategy::UniformBound(m) => {
            if !(*m > 0.0) {
                return Err(Error::Config("uniform bound M must be positive".into()));
            }
            if fit.n / d < (12.0 * m).powi(2) {
                return Err(Error::Infeasible(format!(
                    "n/d = {} below (12M)² = {}",
                    fit.n / d,
                    (12.0 * m).powi(2)
                )));
            }
            Ok((fit.n / d).sqrt() / (2.0 * m))
        }
        RStrategy::Scan(grid) => {
            if grid.is_empty() {
                return Err(Error::Config("empty r grid".into()));
            }
            let mut sorted = grid.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let mut best: Option<(bool, f64, f64)> = None;
            for &r in &sorted {
                let cert = match estimate_delta3(f, fit, r, opts) {
                    Ok(rep) => certify(f, fit, r, &rep),
                    Err(_) => continue,
                };
                let valid = cert.soundness != Soundness::Invalid;
                let better = match best {
                    None => true,
                    Some((bv, bt, _)) => (valid && !bv) || (valid == bv && cert.total < bt),
                };
                if better {
                    best = Some((valid, cert.total, r));
                }
            }
            best.map(|b| b.2)
                .ok_or_else(|| Error::Infeasible("no grid radius keeps U(r) inside the domain".into()))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalCertificate {
    pub local_term: f64,
    pub local_se: f64,
    pub tail_term: f64,
    pub total: f64,
    pub accepted: usize,
    pub samples: usize,
}

/// Data-driven bound: `sqrt(n/2) · E_{γ|U}[‖∇f(θ) - H(θ-θ̂)‖²_H]^{1/2}` estimated
/// by Monte Carlo, plus the explicit tail term `3 exp(-d r²/9)`.
pub fn empirical_certificate<P: Potential + ?Sized>(
    f: &P,
    fit: &LaplaceFit,
    r: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EmpiricalCertificate> {
    let d = fit.dim();
    let n = fit.n;
    let z_radius = r * (d as f64).sqrt();
    const BLOCK: usize = 1024;
    let blocks = mc_samples.div_ceil(BLOCK).max(1);
    let partial: Vec<(usize, f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut g = rng::stream(seed, "empcert", b as u64);
            let count = BLOCK.min(mc_samples.saturating_sub(b * BLOCK));
            let (mut acc, mut s1, mut s2) = (0usize, 0.0, 0.0);
            for _ in 0..count {
                let z = rng::standard_normal_vec(&mut g, d);
                if z.norm() > z_radius {
                    continue;
                }
                let delta = fit.h.inv_sqrt() * &z / n.sqrt();
                let theta = &fit.mode + &delta;
                if !f.in_domain(&theta) {
                    continue;
                }
                let resid = f.gradient(&theta) - &fit.hessian * &delta;
                let q = weighted_dual_norm(&resid, &fit.h).unwrap_or(f64::NAN).powi(2);
                acc += 1;
                s1 += q;
                s2 += q * q;
            }
            (acc, s1, s2)
        })
        .collect();
    let (mut acc, mut s1, mut s2) = (0usize, 0.0, 0.0);
    for (a, x, y) in partial {
        acc += a;
        s1 += x;
        s2 += y;
    }
    if acc < 2 {
        return Err(Error::DegenerateMc("no Gaussian samples landed in U(r)".into()));
    }
    let m = s1 / acc as f64;
    let var = ((s2 / acc as f64) - m * m).max(0.0) * acc as f64 / (acc - 1) as f64;
    let se_m = (var / acc as f64).sqrt();
    let c = (n / 2.0).sqrt();
    let local = c * m.sqrt();
    let local_se = if m > 0.0 { c * se_m / (2.0 * m.sqrt()) } else { 0.0 };
    let tt = tail_term(d, r);
    Ok(EmpiricalCertificate {
        local_term: local,
        local_se,
        tail_term: tt,
        total: (local + tt).min(1.0),
        accepted: acc,
        samples: mc_samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub probes: usize,
    pub violations: usize,
    /// Smallest observed `(f(θ) - f(θ̂)) / ((r/4) sqrt(d/n) |θ-θ̂|_H)`.
    pub min_slack_ratio: f64,
    pub hessian_probes: usize,
    pub hessian_violations: usize,
    /// Smallest eigenvalue of `H^{-1/2} ∇²f H^{-1/2}` seen inside `U(r)`.
    pub min_hessian_ratio: f64,
}

/// Probe `f(θ) - f(θ̂) ≥ (r/4) sqrt(d/n) |θ - θ̂|_H` outside `U(r)` along
/// random rays out to `10 r sqrt(d/n)`, and `∇²f ⪰ H/2` inside `U(r)`.
pub fn check_growth_bound<P: Potential + ?Sized>(
    f: &P,
    fit: &LaplaceFit,
    r: f64,
    probes: usize,
    seed: u64,
) -> GrowthReport {
    let d = fit.dim();
    let radius = fit.radius(r);
    let slope = r / 4.0 * (d as f64 / fit.n).sqrt();
    let mut g = rng::stream(seed, "growth", 0);
    let mut report = GrowthReport {
        probes: 0,
        violations: 0,
        min_slack_ratio: f64::INFINITY,
        hessian_probes: 0,
        hessian_violations: 0,
        min_hessian_ratio: f64::INFINITY,
    };
    const RADII: usize = 24;
    for p in 0..probes.max(1) {
        let w = if d == 1 {
            DVector::from_element(1, if p % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            rng::unit_sphere(&mut g, d)
        };
        let dir = fit.h.inv_sqrt() * &w;
        for k in 0..RADII {
            // geometric grid on (radius, 10·radius]
            let rho = radius * 10f64.powf((k + 1) as f64 / RADII as f64);
            let theta = &fit.mode + &dir * rho;
            report.probes += 1;
            if !f.in_domain(&theta) {
                continue;
            }
            let lhs = f.excess(&theta, &fit.mode);
            let ratio = lhs / (slope * rho);
            report.min_slack_ratio = report.min_slack_ratio.min(ratio);
            if lhs < slope * rho {
                report.violations += 1;
            }
        }
        for k in 0..4 {
            let rho = radius * (k + 1) as f64 / 4.0 * g_unit(&mut g);
            let theta = &fit.mode + &dir * rho;
            if !f.in_domain(&theta) {
                continue;
            }
            report.hessian_probes += 1;
            let w = fit.h.whiten_matrix(&f.hessian(&theta));
            let lmin = SymmetricEigen::new(w).eigenvalues.min();
            report.min_hessian_ratio = report.min_hessian_ratio.min(lmin);
            if lmin < 0.5 {
                report.hessian_violations += 1;
            }
        }
    }
    report
}

fn g_unit<R: rand::Rng>(g: &mut R) -> f64 {
    g.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::pmf::PmfModel;
    use crate::models::synthetic::{make_cubic_radial, make_ones_cubic, NonconvexQuartic, Quadratic};
    use approx::assert_relative_eq;

    #[test]
    fn cubic_radial_mode_is_origin() {
        for d in 1..5 {
            let f = make_cubic_radial(d, 100.0);
            let start = DVector::from_element(d, 0.7);
            let fit = find_mode(&f, &start, ModeOptions::default()).unwrap();
            assert!(fit.mode.norm() < 1e-9);
            assert!((&fit.hessian - DMatrix::identity(d, d)).norm() < 1e-8);
            assert!(fit.grad_norm <= 1e-8 * (1.0 + fit.initial_grad_norm));
        }
    }

    #[test]
    fn quadratic_one_newton_step() {
        let a = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let f = Quadratic::isotropic(a.clone(), 10.0);
        let fit = find_mode(&f, &DVector::zeros(3), ModeOptions::default()).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!((fit.mode - a).norm() < 1e-14);
    }

    #[test]
    fn pmf_mode_is_nbar() {
        let m = PmfModel::new(vec![30, 50, 20], vec![0.3, 0.3, 0.4]).unwrap();
        let fit = find_mode(&m, &DVector::from_column_slice(&[0.3, 0.4]), ModeOptions::default()).unwrap();
        assert!((fit.mode - m.nbar()).amax() < 1e-10);
    }

    #[test]
    fn start_outside_domain_rejected() {
        let m = PmfModel::new(vec![30, 50, 20], vec![0.3, 0.3, 0.4]).unwrap();
        assert!(matches!(
            find_mode(&m, &DVector::from_column_slice(&[0.8, 0.4]), ModeOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn delta3_examples() {
        let f = make_cubic_radial(2, 1e4);
        let fit = find_mode(&f, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let rep = estimate_delta3(&f, &fit, 6.0, Delta3Options::default()).unwrap();
        assert_eq!(rep.mode, Delta3Mode::Analytic);
        assert_eq!(rep.value, 1.0);
        let emp = estimate_delta3(&f, &fit, 6.0, Delta3Options { force_empirical: true, ..Default::default() }).unwrap();
        assert!((emp.value - 1.0).abs() < 1e-2);

        let g = make_ones_cubic(2, 1e4);
        let fit = find_mode(&g, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let emp = estimate_delta3(&g, &fit, 6.0, Delta3Options { force_empirical: true, ..Default::default() }).unwrap();
        assert!((emp.value / 8f64.sqrt() - 1.0).abs() < 1e-2);
        let w = emp.witness_point.clone().unwrap();
        assert_relative_eq!(lipschitz_ratio(&g, &fit, &w), emp.value, max_relative = 1e-6);

        let q = Quadratic::isotropic(DVector::zeros(2), 100.0);
        let fit = find_mode(&q, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let emp = estimate_delta3(&q, &fit, 6.0, Delta3Options { force_empirical: true, ..Default::default() }).unwrap();
        assert_eq!(emp.value, 0.0);
    }

    #[test]
    fn certificate_examples() {
        let q = Quadratic::isotropic(DVector::zeros(2), 100.0);
        let fit = find_mode(&q, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let rep = estimate_delta3(&q, &fit, 6.0, Delta3Options::default()).unwrap();
        let c = certify(&q, &fit, 6.0, &rep);
        assert_relative_eq!(c.total, 3.0 * (-8.0_f64).exp(), max_relative = 1e-14);
        assert_eq!(c.soundness, Soundness::Certified);

        let c5 = certify(&q, &fit, 5.0, &estimate_delta3(&q, &fit, 5.0, Delta3Options::default()).unwrap());
        assert_eq!(c5.soundness, Soundness::Invalid);
        assert!(!c5.flags.r_at_least_6);

        let f = make_cubic_radial(2, 1e4);
        let fit = find_mode(&f, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let r = choose_r(&f, &fit, &RStrategy::UniformBound(1.0), Delta3Options::default()).unwrap();
        let c = certify(&f, &fit, r, &estimate_delta3(&f, &fit, r, Delta3Options::default()).unwrap());
        let expect = 2.0 / (2e4_f64).sqrt() + 3.0 * (-1e4_f64 / 36.0).exp();
        assert_relative_eq!(c.total, expect, max_relative = 1e-12);
        assert!(c.total <= 2.0 / 2e4_f64.sqrt() + 0.09);
        assert_eq!(c.soundness, Soundness::Certified);
    }

    #[test]
    fn choose_r_examples() {
        let f = make_cubic_radial(1, 14400.0);
        let fit = find_mode(&f, &DVector::zeros(1), ModeOptions::default()).unwrap();
        let r = choose_r(&f, &fit, &RStrategy::UniformBound(1.0), Delta3Options::default()).unwrap();
        assert_relative_eq!(r, 60.0, epsilon = 1e-12);
        let f = make_cubic_radial(1, 100.0);
        let fit = find_mode(&f, &DVector::zeros(1), ModeOptions::default()).unwrap();
        assert!(matches!(
            choose_r(&f, &fit, &RStrategy::UniformBound(1.0), Delta3Options::default()),
            Err(Error::Infeasible(_))
        ));
        let f = make_cubic_radial(2, 1e4);
        let fit = find_mode(&f, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let r = choose_r(&f, &fit, &RStrategy::Scan(vec![12.0, 6.0, 8.0]), Delta3Options::default()).unwrap();
        let totals: Vec<f64> = [6.0, 8.0, 12.0]
            .iter()
            .map(|&r| certify(&f, &fit, r, &estimate_delta3(&f, &fit, r, Delta3Options::default()).unwrap()).total)
            .collect();
        let best = [6.0, 8.0, 12.0][totals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0];
        assert_eq!(r, best);
    }

    #[test]
    fn empirical_certificate_examples() {
        let q = Quadratic::isotropic(DVector::zeros(2), 100.0);
        let fit = find_mode(&q, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let e = empirical_certificate(&q, &fit, 6.0, 2000, 1).unwrap();
        assert!(e.local_term.abs() < 1e-12);
        assert_eq!(e.local_se, 0.0);

        let f = make_cubic_radial(2, 1e4);
        let fit = find_mode(&f, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let e = empirical_certificate(&f, &fit, 6.0, 20_000, 1).unwrap();
        assert!(e.local_term <= 2.0 / 2e4_f64.sqrt());
        let e2 = empirical_certificate(&f, &fit, 6.0, 20_000, 2).unwrap();
        assert!((e.local_term - e2.local_term).abs() <= 3.0 * (e.local_se + e2.local_se));
    }

    #[test]
    fn growth_checker() {
        let f = make_cubic_radial(2, 1e4);
        let fit = find_mode(&f, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let rep = check_growth_bound(&f, &fit, 6.0, 50, 1);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.hessian_violations, 0);

        let nc = NonconvexQuartic { d: 1, n: 100.0 };
        let fit = find_mode(&nc, &nc.default_start(), ModeOptions::default()).unwrap();
        assert_relative_eq!(fit.mode[0], 0.5_f64.sqrt(), epsilon = 1e-9);
        let rep = check_growth_bound(&nc, &fit, 6.0, 4, 1);
        assert!(rep.violations > 0);

        let q = Quadratic::isotropic(DVector::zeros(2), 100.0);
        let fit = find_mode(&q, &DVector::zeros(2), ModeOptions::default()).unwrap();
        let r = 6.0;
        let rho = 2.0 * fit.radius(r);
        let lhs = rho * rho / 2.0;
        let rhs = r / 4.0 * (2.0 / 100.0_f64).sqrt() * rho;
        assert!(lhs / rhs >= 2.0);
        let rep = check_growth_bound(&q, &fit, r, 20, 3);
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn tail_term_decreasing_in_r() {
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let t = tail_term(3, 1.0 + k as f64 * 0.5);
            assert!(t < prev);
            prev = t;
        }
    }
}
