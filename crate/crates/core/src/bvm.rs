//! Bernstein–von Mises quantities: Fisher matrix, MLE, the events
//! E₁/E₂/E₃, model-specific δ*₃ and prior terms, and the explicit-constant
//! bound on `TV(π_ϖ, γ*)`.
//!
//! Neighborhoods are `U*(s) = {θ : |θ - θ*|_{F*} ≤ s sqrt(d/n)}`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::laplace::{find_mode, pattern_ascent, LaplaceFit, ModeOptions};
use crate::metric::{tensor_op_norm, weighted_dual_norm, weighted_matrix_norm, weighted_vec_norm, MetricContext, NormMode};
use crate::models::glm::{GlmModel, LinkFamily};
use crate::models::pmf::{chi2, pmf_fisher, pmf_third_norm_closed_form, PmfModel};
use crate::models::potential::Potential;
use crate::models::prior::{prior_quantities, Prior, PriorQuantities};
use crate::models::spec::ModelInstance;
use crate::rng;
use crate::tv::Gaussian;

/// Radius of `U*(s)` in the F*-norm.
pub fn star_radius(s: f64, d: usize, n: f64) -> f64 {
    s * (d as f64 / n).sqrt()
}

/// Maximum likelihood estimate with `∇²ℓ(θ̂)`. The pmf MLE is `N̄` exactly.
pub fn compute_mle(model: &ModelInstance) -> Result<LaplaceFit> {
    match model {
        ModelInstance::Pmf(m) => {
            if m.boundary_mle {
                return Err(Error::DegenerateMode("MLE on boundary: some count is zero".into()));
            }
            LaplaceFit::at_point(m, m.nbar())
        }
        ModelInstance::Glm(m) => find_mode(m, &m.theta_star, ModeOptions::default()),
        ModelInstance::Synthetic(p) => find_mode(p.as_ref(), &p.default_start(), ModeOptions::default()),
    }
}

/// `γ* = N(θ̂, (nF*)⁻¹)`.
pub fn bvm_gaussian_target(theta_hat: &DVector<f64>, fisher: &DMatrix<f64>, n: f64) -> Result<Gaussian> {
    Gaussian::new(theta_hat.clone(), fisher * n)
}

/// `γ_ℓ = N(θ̂, (n∇²ℓ(θ̂))⁻¹)`.
pub fn bvm_gaussian_ell(fit: &LaplaceFit) -> Result<Gaussian> {
    Gaussian::new(fit.mode.clone(), &fit.hessian * fit.n)
}

#[derive(Debug, Clone, Serialize)]
pub struct Delta3Star {
    /// Value entering the bound.
    pub value: f64,
    /// Whether `value` is a proven upper bound.
    pub certified: bool,
    /// Largest `‖∇³ℓ(θ)‖_{F*}` over sampled `θ ∈ U*(s)`.
    pub sampled: f64,
    /// Logistic: `‖ψ'''‖_∞ λ^{-3/2} sup_u (1/n) Σ |X_iᵀu|³`, `λ = λ_min(F*)`.
    pub third_moment: Option<f64>,
    /// At-θ* closed form (pmf with `N̄ = θ*`), a lower reference.
    pub closed_form: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StarOptions {
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for StarOptions {
    fn default() -> Self {
        StarOptions { budget: 64, restarts: 16, seed: 0 }
    }
}

/// Points of `U*(s)` inside the domain: the center, then Halton ball samples.
fn ball_points<P: Potential + ?Sized>(
    f: &P,
    fisher: &MetricContext,
    center: &DVector<f64>,
    s: f64,
    n: f64,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let d = center.len();
    let radius = star_radius(s, d, n);
    let mut halton = rng::ShiftedHalton::new(d + 1, seed);
    let mut pts = vec![center.clone()];
    for _ in 0..count {
        let w = rng::cube_to_ball(&halton.next_point(), d) * radius;
        let theta = center + fisher.inv_sqrt() * w;
        if f.in_domain(&theta) {
            pts.push(theta);
        }
    }
    pts
}

/// `δ*₃(s) = sup_{θ ∈ U*(s)} ‖∇³ℓ(θ)‖_{F*}` for a GLM.
pub fn delta3_star_glm(model: &GlmModel, fisher: &MetricContext, s: f64, opts: StarOptions) -> Result<Delta3Star> {
    check_dim(model.d, fisher.dim())?;
    let n = model.n_obs as f64;
    let radius = star_radius(s, model.d, n);
    if !model.theta_domain().contains_ellipsoid(&model.theta_star, fisher, radius) {
        return Err(Error::Domain(format!("U*(s) with s = {s} leaves the parameter domain")));
    }
    let exact_zero = matches!(model.link, LinkFamily::Gaussian);
    let mut sampled = 0.0_f64;
    if !exact_zero {
        let pts = ball_points(model, fisher, &model.theta_star, s, n, opts.budget, opts.seed);
        for (i, theta) in pts.iter().enumerate() {
            let form = model.third_form(theta).expect("GLM third derivative");
            let mode = NormMode::Multistart {
                restarts: opts.restarts,
                seed: rng::derive_seed(opts.seed, "delta3-star", i as u64),
            };
            sampled = sampled.max(tensor_op_norm(&form, fisher, mode)?.value);
        }
    }
    let third_moment = match model.link {
        LinkFamily::Logistic if model.k == 1 => model.third_moment_bound(fisher, 32, opts.seed),
        _ => None,
    };
    let (value, certified) = if exact_zero {
        (0.0, true)
    } else if let Some(b) = third_moment {
        (b, true)
    } else {
        (sampled, false)
    };
    Ok(Delta3Star { value, certified, sampled, third_moment, closed_form: None })
}

/// pmf: `16 max_j N̄_j / (θ*_j)^{3/2}`, valid on `U*(2s)` whenever
/// `(2s)² d/n ≤ θ*_min/4` (then `θ_j ≥ θ*_j/2` there).
pub fn delta3_star_pmf(model: &PmfModel, s: f64) -> Result<Delta3Star> {
    let d = model.d as f64;
    let n = model.n as f64;
    let tmin = model.theta_min();
    if (2.0 * s).powi(2) * d / n > tmin / 4.0 {
        return Err(Error::Infeasible(format!(
            "(2s)² d/n = {} exceeds θ*_min/4 = {}",
            (2.0 * s).powi(2) * d / n,
            tmin / 4.0
        )));
    }
    let nbar = model.nbar_full();
    let value = nbar
        .iter()
        .zip(&model.theta_star_full)
        .map(|(nb, t)| 16.0 * nb / t.powf(1.5))
        .fold(0.0_f64, f64::max);
    Ok(Delta3Star {
        value,
        certified: true,
        sampled: f64::NAN,
        third_moment: None,
        closed_form: Some(pmf_third_norm_closed_form(tmin)),
    })
}

/// `δ*₂(s) = sup_{θ ∈ U*(s)} ‖∇²ℓ(θ)‖_{F*}` by sampling plus pattern ascent
/// (a lower estimate of the sup; exact at `s = 0`).
pub fn delta2_star<P: Potential + ?Sized>(
    f: &P,
    fisher: &MetricContext,
    theta_star: &DVector<f64>,
    s: f64,
    opts: StarOptions,
) -> Result<f64> {
    let d = f.dim();
    check_dim(d, theta_star.len())?;
    let n = f.scale();
    let radius = star_radius(s, d, n);
    let obj = |w: &DVector<f64>| -> f64 {
        let theta = theta_star + fisher.inv_sqrt() * w;
        if !f.in_domain(&theta) {
            return 0.0;
        }
        weighted_matrix_norm(&f.hessian(&theta), fisher).unwrap_or(0.0)
    };
    let center = obj(&DVector::zeros(d));
    if radius == 0.0 {
        return Ok(center);
    }
    let mut halton = rng::ShiftedHalton::new(d + 1, opts.seed);
    let mut pts: Vec<(f64, DVector<f64>)> = (0..opts.budget)
        .map(|_| {
            let w = rng::cube_to_ball(&halton.next_point(), d) * radius;
            (obj(&w), w)
        })
        .collect();
    pts.push((center, DVector::zeros(d)));
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = pts[0].0;
    for (v, w) in pts.into_iter().take(3) {
        best = best.max(pattern_ascent(&obj, v, w, radius, &[]).0);
    }
    Ok(best)
}

/// Everything the bound needs, fixed before looking at the data (except the
/// pmf δ*₃, which uses `N̄`).
#[derive(Debug, Clone, Serialize)]
pub struct BvmContext {
    pub d: usize,
    pub n: f64,
    pub theta_star: Vec<f64>,
    #[serde(skip)]
    pub fisher: Option<MetricContext>,
    pub s: f64,
    pub eps2: f64,
    /// `δ*₃(2s)` and `δ*₃(s)`.
    pub delta3_2s: f64,
    pub delta3_s: f64,
    pub delta3_certified: bool,
    pub prior: PriorQuantitiesRecord,
    /// `U*(2s) ⊆ Θ`.
    pub neighborhood_in_domain: bool,
    /// GLM Hessians do not depend on the labels, so the E₃ statistic can be
    /// computed once and reused across replications.
    pub lipschitz_cache: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PriorQuantitiesRecord {
    pub m0: f64,
    /// `δ*₀₁(2s)`.
    pub delta01_2s: f64,
}

impl From<PriorQuantities> for PriorQuantitiesRecord {
    fn from(q: PriorQuantities) -> Self {
        PriorQuantitiesRecord { m0: q.m0, delta01_2s: q.delta01 }
    }
}

impl BvmContext {
    pub fn fisher(&self) -> &MetricContext {
        self.fisher.as_ref().expect("context built with a Fisher matrix")
    }

    pub fn theta_star_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_star)
    }

    /// GLM context: `ε₂ = 0`, label-independent δ*₃.
    pub fn glm(model: &GlmModel, prior: &Prior, s: f64, opts: StarOptions) -> Result<Self> {
        let fisher = MetricContext::new(crate::models::glm::glm_fisher(model)?)?;
        let n = model.n_obs as f64;
        let d = model.d;
        let in_domain = model
            .theta_domain()
            .contains_ellipsoid(&model.theta_star, &fisher, star_radius(2.0 * s, d, n));
        let (d3_2s, d3_s) = if in_domain {
            let a = delta3_star_glm(model, &fisher, 2.0 * s, opts)?;
            let b = delta3_star_glm(model, &fisher, s, opts)?;
            (a, b)
        } else {
            let nan = Delta3Star { value: f64::NAN, certified: false, sampled: f64::NAN, third_moment: None, closed_form: None };
            (nan.clone(), nan)
        };
        let q = prior_quantities(prior, &fisher, &model.theta_star, 2.0 * s, n)?;
        Ok(BvmContext {
            d,
            n,
            theta_star: model.theta_star.iter().copied().collect(),
            fisher: Some(fisher),
            s,
            eps2: 0.0,
            delta3_2s: d3_2s.value,
            delta3_s: d3_s.value,
            delta3_certified: d3_2s.certified && d3_s.certified,
            prior: q.into(),
            neighborhood_in_domain: in_domain,
            lipschitz_cache: None,
        })
    }

    /// Fill the E₃ statistic once for a label-independent Hessian.
    pub fn cache_lipschitz(&mut self, model: &GlmModel, pair_budget: usize, seed: u64) {
        if self.neighborhood_in_domain {
            let c = sampled_lipschitz(model, self.fisher(), &model.theta_star, 2.0 * self.s, pair_budget, seed);
            self.lipschitz_cache = Some(c);
        }
    }

    /// pmf context: `ε₂ = sqrt(s² d / (n θ*_min))`, certified δ*₃ from `N̄`.
    /// When the containment precondition fails δ*₃ is reported as NaN and the
    /// bound is flagged.
    pub fn pmf(model: &PmfModel, prior: &Prior, s: f64) -> Result<Self> {
        let fisher = MetricContext::new(pmf_fisher(&model.theta_star_full)?)?;
        let n = model.n as f64;
        let d = model.d;
        let theta_star = model.theta_star();
        let in_domain = model.domain().contains_ellipsoid(&theta_star, &fisher, star_radius(2.0 * s, d, n));
        let (d3, certified) = match delta3_star_pmf(model, s) {
            Ok(r) => (r.value, true),
            Err(_) => (f64::NAN, false),
        };
        let q = prior_quantities(prior, &fisher, &theta_star, 2.0 * s, n)?;
        Ok(BvmContext {
            d,
            n,
            theta_star: theta_star.iter().copied().collect(),
            fisher: Some(fisher),
            s,
            eps2: (s * s * d as f64 / (n * model.theta_min())).sqrt(),
            delta3_2s: d3,
            delta3_s: d3,
            delta3_certified: certified,
            prior: q.into(),
            neighborhood_in_domain: in_domain,
            lipschitz_cache: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BvmFlags {
    pub s_at_least_12: bool,
    pub neighborhood_in_domain: bool,
    /// `2s δ*₃(2s) sqrt(d/n) ≤ 1/4`.
    pub small_lipschitz: bool,
    pub eps2_small: bool,
    /// `δ*₀₁(2s) ≤ sqrt(nd)/6`.
    pub prior_gradient_small: bool,
    /// Log-concave path only: `δ*₂(2s) ≤ 3/2`.
    pub delta2_small: Option<bool>,
}

impl BvmFlags {
    pub fn all_pass(&self) -> bool {
        self.s_at_least_12
            && self.neighborhood_in_domain
            && self.small_lipschitz
            && self.eps2_small
            && self.prior_gradient_small
            && self.delta2_small.unwrap_or(true)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BvmBound {
    /// `8 δ*₃(2s) d / sqrt(2n) + 3 exp(-d s²/36)`.
    pub laplace: f64,
    /// `δ*₀₁(2s)/sqrt(n) + 4 exp(d [M₀* - s²/144])`.
    pub prior: f64,
    /// `8 sqrt(d) (s δ*₃(s) sqrt(d/n) + ε₂)`.
    pub gauss: f64,
    pub total: f64,
    pub flags: BvmFlags,
    pub soundness: crate::laplace::Soundness,
}

fn assemble(ctx: &BvmContext, d3_2s: f64, d3_s: f64, flags: BvmFlags, certified: bool) -> BvmBound {
    let d = ctx.d as f64;
    let n = ctx.n;
    let s = ctx.s;
    // Laplace approximation at r = s/2, with δ₃(s/2) ≤ 8 δ*₃(2s) since U(s/2) ⊆ U*(2s)
    let laplace = 8.0 * d3_2s * d / (2.0 * n).sqrt() + 3.0 * (-d * s * s / 36.0).exp();
    // prior: gradient of log ϖ in U*(2s), and the mass of π_ℓ outside it
    let prior = ctx.prior.delta01_2s / n.sqrt() + 4.0 * (d * (ctx.prior.m0 - s * s / 144.0)).exp();
    // γ_ℓ versus γ*: Gaussian comparison with τ = 1/4 and ε ≤ s δ*₃(s) sqrt(d/n) + ε₂
    let gauss = 8.0 * d.sqrt() * (s * d3_s * (d / n).sqrt() + ctx.eps2);
    let sum = laplace + prior + gauss;
    let total = if sum.is_nan() { 1.0 } else { sum.min(1.0) };
    let soundness = if !flags.all_pass() {
        crate::laplace::Soundness::Invalid
    } else if certified {
        crate::laplace::Soundness::Certified
    } else {
        crate::laplace::Soundness::Heuristic
    };
    BvmBound { laplace, prior, gauss, total, flags, soundness }
}

fn base_flags(ctx: &BvmContext, d3_2s: f64) -> BvmFlags {
    let d = ctx.d as f64;
    BvmFlags {
        s_at_least_12: ctx.s >= 12.0,
        neighborhood_in_domain: ctx.neighborhood_in_domain,
        small_lipschitz: 2.0 * ctx.s * d3_2s * (d / ctx.n).sqrt() <= 0.25,
        eps2_small: ctx.eps2 <= 0.5,
        prior_gradient_small: ctx.prior.delta01_2s <= (ctx.n * d).sqrt() / 6.0,
        delta2_small: None,
    }
}

/// The explicit three-term bound on `TV(π_ϖ, γ*)`.
pub fn bvm_bound(ctx: &BvmContext) -> BvmBound {
    let flags = base_flags(ctx, ctx.delta3_2s);
    assemble(ctx, ctx.delta3_2s, ctx.delta3_s, flags, ctx.delta3_certified)
}

/// Log-concave exponential families: `δ*₃ ≤ C₂₃ δ*₂^{3/2} ≤ 2 C₂₃` once
/// `δ*₂(2s) ≤ 3/2`. `C₂₃` is supplied by the caller and not verified, so the
/// result is at most heuristic.
pub fn bvm_bound_logconcave(ctx: &BvmContext, c23: f64, delta2_2s: f64) -> Result<BvmBound> {
    if !(c23 > 0.0) {
        return Err(Error::Config("C23 must be positive".into()));
    }
    let cap = 2.0 * c23;
    let d = ctx.d as f64;
    let mut flags = base_flags(ctx, cap);
    flags.small_lipschitz = ctx.s * (d / ctx.n).sqrt() <= 1.0 / (16.0 * c23);
    flags.delta2_small = Some(delta2_2s <= 1.5);
    Ok(assemble(ctx, cap, cap, flags, false))
}

#[derive(Debug, Clone, Serialize)]
pub struct EventReport {
    pub replication: u64,
    pub seed: u64,
    /// `‖∇ℓ(θ*)‖_{F*}`.
    pub grad_norm: f64,
    /// `‖∇²ℓ(θ*) - F*‖_{F*}`.
    pub hess_dev: f64,
    /// Largest sampled `‖∇²ℓ(θ₁) - ∇²ℓ(θ₂)‖_{F*} / |θ₁ - θ₂|_{F*}` in `U*(2s)`.
    pub lipschitz_ratio: f64,
    pub e1: bool,
    pub e2: bool,
    pub e3: bool,
    /// pmf only: `χ²(N̄ ‖ θ*) ≤ s² d/n`.
    pub e0: Option<bool>,
    pub mle_found: bool,
    pub mle_dist: Option<f64>,
}

impl EventReport {
    pub fn all_events(&self) -> bool {
        self.e1 && self.e2 && self.e3
    }
}

/// Evaluate E₁(s), E₂(ε₂), E₃(s) for one data set. The E₃ statistic is a
/// sampled lower estimate of the pairwise Lipschitz sup.
pub fn check_events(
    model: &ModelInstance,
    ctx: &BvmContext,
    pair_budget: usize,
    replication: u64,
    seed: u64,
) -> Result<EventReport> {
    check_events_with_mle(model, ctx, pair_budget, replication, seed).map(|(r, _)| r)
}

/// As [`check_events`], also returning the MLE fit when it exists.
pub fn check_events_with_mle(
    model: &ModelInstance,
    ctx: &BvmContext,
    pair_budget: usize,
    replication: u64,
    seed: u64,
) -> Result<(EventReport, Option<LaplaceFit>)> {
    let ell = model.likelihood();
    let fisher = ctx.fisher();
    let theta_star = ctx.theta_star_vec();
    let d = ctx.d;
    let n = ctx.n;
    if !ctx.neighborhood_in_domain {
        return Err(Error::Domain("U*(2s) leaves the parameter domain".into()));
    }
    let thr = star_radius(ctx.s, d, n);
    let grad_norm = weighted_dual_norm(&ell.gradient(&theta_star), fisher)?;
    let hess_dev = weighted_matrix_norm(&(ell.hessian(&theta_star) - fisher.matrix()), fisher)?;
    let lipschitz_ratio = match ctx.lipschitz_cache {
        Some(c) => c,
        None => sampled_lipschitz(ell.as_ref(), fisher, &theta_star, 2.0 * ctx.s, pair_budget, seed),
    };
    let e0 = match model {
        ModelInstance::Pmf(m) => Some(chi2(&m.nbar_full(), &m.theta_star_full) <= ctx.s * ctx.s * d as f64 / n),
        _ => None,
    };
    let fit = compute_mle(model).ok();
    let mle_dist = match &fit {
        Some(f) => Some(weighted_vec_norm(&(&f.mode - &theta_star), fisher)?),
        None => None,
    };
    let report = EventReport {
        replication,
        seed,
        grad_norm,
        hess_dev,
        lipschitz_ratio,
        e1: grad_norm <= thr,
        e2: hess_dev <= ctx.eps2,
        e3: lipschitz_ratio <= ctx.delta3_2s,
        e0,
        mle_found: fit.is_some(),
        mle_dist,
    };
    Ok((report, fit))
}

/// Pairs from a Halton sequence in `U*(s)²` refined by pattern ascent on the
/// concatenated whitened coordinates.
fn sampled_lipschitz<P: Potential + ?Sized>(
    f: &P,
    fisher: &MetricContext,
    center: &DVector<f64>,
    s: f64,
    budget: usize,
    seed: u64,
) -> f64 {
    let d = center.len();
    let radius = star_radius(s, d, f.scale());
    if budget == 0 || radius == 0.0 {
        return 0.0;
    }
    let split = |w: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let a = w.rows(0, d).into_owned();
        let b = w.rows(d, d).into_owned();
        (a, b)
    };
    let obj = |w: &DVector<f64>| -> f64 {
        let (a, b) = split(w);
        if a.norm() > radius * (1.0 + 1e-12) || b.norm() > radius * (1.0 + 1e-12) {
            return 0.0;
        }
        let dist = (&a - &b).norm();
        if dist < 1e-9 * radius {
            return 0.0;
        }
        let ta = center + fisher.inv_sqrt() * a;
        let tb = center + fisher.inv_sqrt() * b;
        if !f.in_domain(&ta) || !f.in_domain(&tb) {
            return 0.0;
        }
        let diff = f.hessian(&ta) - f.hessian(&tb);
        let v = weighted_matrix_norm(&diff, fisher).unwrap_or(0.0) / dist;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut halton = rng::ShiftedHalton::new((2 * d + 2).min(16), seed);
    let mut pts: Vec<(f64, DVector<f64>)> = Vec::with_capacity(budget);
    for _ in 0..budget {
        let p = halton.next_point();
        let mut w = DVector::zeros(2 * d);
        if 2 * d + 2 <= 16 {
            w.rows_mut(0, d).copy_from(&(rng::cube_to_ball(&p[..d + 1], d) * radius));
            w.rows_mut(d, d).copy_from(&(rng::cube_to_ball(&p[d + 1..2 * d + 2], d) * radius));
        } else {
            let mut r = rng::stream(seed, "lipschitz-pairs", pts.len() as u64);
            w.rows_mut(0, d).copy_from(&(rng::unit_ball(&mut r, d) * radius));
            w.rows_mut(d, d).copy_from(&(rng::unit_ball(&mut r, d) * radius));
        }
        pts.push((obj(&w), w));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = pts[0].0;
    // ascent keeps each half inside its ball by the objective's zero outside
    if let Some((v, w)) = pts.into_iter().next() {
        best = best.max(pattern_ascent(&obj, v, w, 2.0 * radius, &[]).0);
    }
    best
}

/// pmf: `χ²(N̄ ‖ θ*)`.
pub fn pmf_chi2(model: &PmfModel) -> f64 {
    chi2(&model.nbar_full(), &model.theta_star_full)
}
