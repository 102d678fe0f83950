//! Replication loops for the five experiments. Replications run in parallel
//! on the current rayon pool; output order is by `run_id`.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, TvPolicy};
use super::record::{median, ols_slope, wilson, Frequency, RunRecord, Slope, Summary};
use crate::bvm::{
    bvm_bound, bvm_bound_logconcave, bvm_gaussian_target, check_events_with_mle, delta2_star, BvmContext,
    StarOptions,
};
use crate::error::{Error, Result};
use crate::laplace::{certify, choose_r, estimate_delta3, find_mode, Delta3Options, ModeOptions, Soundness};
use crate::models::potential::Potential;
use crate::models::spec::{ModelInstance, ModelSpec};
use crate::rng::derive_seed;
use crate::tv::{tv_mc, tv_quadrature, Gaussian, McOptions, QuadOptions, TvMethod};

#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub axis: String,
    pub fixed: String,
    pub column: String,
    /// `(ln x, ln median y)`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    pub series: Vec<Series>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.kind()? {
        ExperimentKind::Certify => run_certify(cfg),
        ExperimentKind::Bvm => run_bvm(cfg),
        ExperimentKind::Events => run_events(cfg),
        ExperimentKind::Sweep => run_sweep(cfg),
        ExperimentKind::Tv => run_tv(cfg),
    }
}

fn data_seed(cfg: &ExperimentConfig, rep: u64) -> u64 {
    derive_seed(cfg.seed, "replication", rep)
}

fn finish(records: Vec<RunRecord>) -> RunOutput {
    let summary = Summary {
        violations: records.iter().filter(|r| r.violation).count(),
        errors: records.iter().filter(|r| r.is_error()).count(),
        ..Summary::default()
    };
    RunOutput { records, summary, series: Vec::new() }
}

/// Measured TV and its error allowance (quadrature error bar, or three
/// jackknife standard errors for Monte Carlo).
fn measure_tv(cfg: &ExperimentConfig, f: &dyn Potential, g: &Gaussian, seed: u64, policy: TvPolicy) -> Result<Option<(f64, f64, TvMethod, bool)>> {
    let quad = QuadOptions { radius_mult: cfg.budgets.quad_radius, points: cfg.budgets.quad_points };
    let use_quad = match policy {
        TvPolicy::None => return Ok(None),
        TvPolicy::Quadrature => true,
        TvPolicy::Mc => false,
        TvPolicy::Auto => f.dim() <= 3,
    };
    if use_quad {
        let t = tv_quadrature(f, g, quad)?;
        Ok(Some((t.value, t.error, t.method, t.reliable)))
    } else {
        let t = tv_mc(f, g, McOptions::new(cfg.budgets.mc, derive_seed(seed, "tv", 0)))?;
        Ok(Some((t.value, 3.0 * t.error, t.method, t.reliable)))
    }
}

fn timed<F: FnOnce(&mut RunRecord) -> Result<()>>(mut rec: RunRecord, body: F) -> RunRecord {
    let t0 = Instant::now();
    if let Err(e) = body(&mut rec) {
        rec.mark_error(&e);
        rec.violation = false;
    }
    rec.elapsed_ms = t0.elapsed().as_millis() as u64;
    rec
}

fn certify_one(cfg: &ExperimentConfig, spec: &ModelSpec, run_id: u64, rep: u64) -> RunRecord {
    let seed = data_seed(cfg, rep);
    let rec = RunRecord::new(run_id, &spec.model, spec.d, spec.n, seed);
    timed(rec, |rec| {
        let inst = spec.instantiate(seed)?;
        let f = inst.posterior(&spec.prior()?);
        let fit = find_mode(f.as_ref(), &f.default_start(), ModeOptions::default())?;
        let opts = Delta3Options {
            budget: cfg.budgets.delta3,
            seed: derive_seed(seed, "delta3", 0),
            force_empirical: cfg.empirical_delta3,
        };
        let r = choose_r(f.as_ref(), &fit, &cfg.r_strategy(), opts)?;
        rec.s = Some(r);
        let report = estimate_delta3(f.as_ref(), &fit, r, opts)?;
        let cert = certify(f.as_ref(), &fit, r, &report);
        rec.bound_laplace = Some(cert.laplace_term + cert.tail_term);
        rec.bound_prior = Some(0.0);
        rec.bound_gauss = Some(0.0);
        rec.bound_total = Some(cert.total);
        rec.soundness = cert.soundness.as_str().into();
        if let Some((tv, err, _, _)) = measure_tv(cfg, f.as_ref(), &fit.gaussian(), seed, cfg.tv)? {
            rec.tv_measured = Some(tv);
            rec.tv_err = Some(err);
            rec.violation = cert.soundness == Soundness::Certified && tv - err > cert.total;
        }
        Ok(())
    })
}

pub fn run_certify(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.model.validate()?;
    let records = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| certify_one(cfg, &cfg.model, rep, rep))
        .collect();
    Ok(finish(records))
}

/// Context shared by all replications when it does not depend on the data.
fn shared_context(cfg: &ExperimentConfig, spec: &ModelSpec) -> Result<Option<BvmContext>> {
    let inst = spec.instantiate(data_seed(cfg, 0))?;
    match inst {
        ModelInstance::Glm(m) => {
            let opts = StarOptions { budget: cfg.budgets.star, restarts: cfg.budgets.restarts, seed: cfg.seed };
            let mut ctx = BvmContext::glm(&m, &spec.prior()?, cfg.s(), opts)?;
            if let Some(e) = cfg.eps2_override()? {
                ctx.eps2 = e;
            }
            ctx.cache_lipschitz(&m, cfg.budgets.pairs, derive_seed(cfg.seed, "pairs", 0));
            Ok(Some(ctx))
        }
        ModelInstance::Pmf(_) => Ok(None),
        ModelInstance::Synthetic(_) => Err(Error::Config(format!(
            "model '{}' has no data-generating process; BvM experiments need a GLM or pmf",
            spec.model
        ))),
    }
}

fn bvm_one(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    shared: Option<&BvmContext>,
    run_id: u64,
    rep: u64,
    policy: TvPolicy,
) -> RunRecord {
    let seed = data_seed(cfg, rep);
    let rec = RunRecord::new(run_id, &spec.model, spec.d, spec.n, seed);
    timed(rec, |rec| {
        let s = cfg.s();
        rec.s = Some(s);
        let inst = spec.instantiate(seed)?;
        let prior = spec.prior()?;
        let ctx = match (&inst, shared) {
            (_, Some(c)) => c.clone(),
            (ModelInstance::Pmf(m), None) => {
                let mut c = BvmContext::pmf(m, &prior, s)?;
                if let Some(e) = cfg.eps2_override()? {
                    c.eps2 = e;
                }
                c
            }
            _ => return Err(Error::Unsupported("BvM context for this model".into())),
        };
        let (events, fit) = check_events_with_mle(&inst, &ctx, cfg.budgets.pairs, rep, seed)?;
        rec.e1 = Some(events.e1);
        rec.e2 = Some(events.e2);
        rec.e3 = Some(events.e3);
        rec.e0 = events.e0;
        rec.mle_dist_fstar = events.mle_dist;
        let bound = match cfg.c23 {
            Some(c23) => {
                let opts = StarOptions { budget: cfg.budgets.star, restarts: cfg.budgets.restarts, seed };
                let ell = inst.likelihood();
                let d2 = delta2_star(ell.as_ref(), ctx.fisher(), &ctx.theta_star_vec(), 2.0 * s, opts)?;
                bvm_bound_logconcave(&ctx, c23, d2)?
            }
            None => bvm_bound(&ctx),
        };
        rec.bound_laplace = Some(bound.laplace);
        rec.bound_prior = Some(bound.prior);
        rec.bound_gauss = Some(bound.gauss);
        rec.bound_total = Some(bound.total);
        rec.soundness = bound.soundness.as_str().into();
        if policy == TvPolicy::None {
            return Ok(());
        }
        let fit = fit.ok_or(Error::NonConvergence { iterations: 0, grad_norm: f64::NAN })?;
        let post = inst.posterior(&prior);
        let gamma = bvm_gaussian_target(&fit.mode, ctx.fisher().matrix(), ctx.n)?;
        if let Some((tv, err, _, _)) = measure_tv(cfg, post.as_ref(), &gamma, seed, policy)? {
            rec.tv_measured = Some(tv);
            rec.tv_err = Some(err);
            rec.violation = events.all_events()
                && bound.soundness == Soundness::Certified
                && bound.total < 1.0
                && tv - err > bound.total;
        }
        Ok(())
    })
}

fn replicate_bvm(cfg: &ExperimentConfig, spec: &ModelSpec, first_id: u64, policy: TvPolicy) -> Result<Vec<RunRecord>> {
    let shared = shared_context(cfg, spec)?;
    Ok((0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| bvm_one(cfg, spec, shared.as_ref(), first_id + rep, rep, policy))
        .collect())
}

pub fn run_bvm(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.model.validate()?;
    let records = replicate_bvm(cfg, &cfg.model, 0, cfg.tv)?;
    let mut out = finish(records);
    out.summary.frequencies = frequencies(cfg, &cfg.model, &out.records);
    Ok(out)
}

pub fn run_events(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.model.validate()?;
    let records = replicate_bvm(cfg, &cfg.model, 0, TvPolicy::None)?;
    let mut out = finish(records);
    out.summary.frequencies = frequencies(cfg, &cfg.model, &out.records);
    Ok(out)
}

fn is_glm(model: &str) -> bool {
    matches!(model, "logistic" | "poisson" | "gaussian" | "exponential")
}

/// Event frequencies over non-error rows, with Wilson intervals.
pub fn frequencies(cfg: &ExperimentConfig, spec: &ModelSpec, records: &[RunRecord]) -> Vec<Frequency> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| !r.is_error()).collect();
    let total = ok.len();
    let s = cfg.s();
    let d = spec.d as f64;
    let mut out = Vec::new();
    let mut push = |name: &str, count: usize, floor: Option<f64>, exponent: bool| {
        let (lo, hi) = wilson(count, total);
        let (fitted, conservative) = if exponent && total > 0 {
            let fail = 1.0 - count as f64 / total as f64;
            let fail_hi = 1.0 - lo;
            let c = |p: f64| if p > 0.0 && p < 1.0 { Some(-p.ln() / (s * s * d)) } else { None };
            (c(fail), c(fail_hi))
        } else {
            (None, None)
        };
        out.push(Frequency {
            event: name.into(),
            d: spec.d,
            n: spec.n,
            s,
            count,
            total,
            freq: if total > 0 { count as f64 / total as f64 } else { f64::NAN },
            wilson_lo: lo,
            wilson_hi: hi,
            floor,
            fitted_exponent: fitted,
            fitted_exponent_conservative: conservative,
        });
    };
    let count = |f: &dyn Fn(&RunRecord) -> bool| ok.iter().filter(|r| f(r)).count();
    let e1_floor = if is_glm(&spec.model) { Some(1.0 - (-s * s * d / 10.0).exp()) } else { None };
    push("E1", count(&|r| r.e1 == Some(true)), e1_floor, false);
    push("E2", count(&|r| r.e2 == Some(true)), None, false);
    push("E3", count(&|r| r.e3 == Some(true)), None, false);
    push(
        "all",
        count(&|r| r.e1 == Some(true) && r.e2 == Some(true) && r.e3 == Some(true)),
        None,
        false,
    );
    if spec.model == "pmf" {
        push("E0", count(&|r| r.e0 == Some(true)), None, true);
    }
    out
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid.as_ref().ok_or_else(|| Error::Config("sweep needs a grid".into()))?;
    let ds = if grid.d.is_empty() { vec![cfg.model.d] } else { grid.d.clone() };
    let ns = if grid.n.is_empty() { vec![cfg.model.n] } else { grid.n.clone() };
    if ds.len() < 3 && ns.len() < 3 {
        return Err(Error::Config("sweep needs at least 3 grid points along d or n".into()));
    }
    let mut records = Vec::new();
    let mut frequencies_all = Vec::new();
    let mut next_id = 0u64;
    for &d in &ds {
        for &n in &ns {
            let mut spec = cfg.model.clone();
            if d != cfg.model.d {
                spec.theta_star = None;
                spec.center = None;
            }
            spec.d = d;
            spec.n = n;
            let batch: Vec<RunRecord> = match grid.of {
                ExperimentKind::Certify => (0..cfg.replications as u64)
                    .into_par_iter()
                    .map(|rep| certify_one(cfg, &spec, next_id + rep, rep))
                    .collect(),
                ExperimentKind::Bvm => replicate_bvm(cfg, &spec, next_id, cfg.tv)?,
                ExperimentKind::Events => {
                    let b = replicate_bvm(cfg, &spec, next_id, TvPolicy::None)?;
                    frequencies_all.extend(frequencies(cfg, &spec, &b));
                    b
                }
                _ => return Err(Error::Config("sweep runs certify, bvm or events".into())),
            };
            next_id += batch.len() as u64;
            records.extend(batch);
        }
    }
    let mut out = finish(records);
    let (slopes, series) = sweep_slopes(&out.records);
    out.summary.slopes = slopes;
    out.summary.frequencies = frequencies_all;
    out.series = series;
    Ok(out)
}

/// Log-log slopes of the median `tv_measured` and `bound_total` against n
/// (fixed d) and against d (fixed n), for every axis with ≥ 3 usable points.
pub fn sweep_slopes(records: &[RunRecord]) -> (Vec<Slope>, Vec<Series>) {
    type Key = (usize, u64);
    let mut cells: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_error()) {
        let e = cells.entry((r.d, r.n.to_bits())).or_default();
        if let Some(t) = r.tv_measured {
            e.0.push(t);
        }
        if let Some(b) = r.bound_total {
            e.1.push(b);
        }
    }
    let medians: BTreeMap<Key, (Option<f64>, Option<f64>)> = cells
        .into_iter()
        .map(|(k, (mut t, mut b))| (k, (median(&mut t), median(&mut b))))
        .collect();
    let mut slopes = Vec::new();
    let mut series = Vec::new();
    let mut fit = |axis: &str, fixed: String, column: &str, pts: Vec<(f64, f64)>| {
        let pts: Vec<(f64, f64)> = pts.into_iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let Some((slope, se)) = ols_slope(&xs, &ys) {
            slopes.push(Slope { axis: axis.into(), fixed: fixed.clone(), column: column.into(), slope, se, points: xs.len() });
            series.push(Series { axis: axis.into(), fixed, column: column.into(), points: pts });
        }
    };
    let ds: Vec<usize> = {
        let mut v: Vec<usize> = medians.keys().map(|k| k.0).collect();
        v.dedup();
        v
    };
    let mut ns: Vec<u64> = medians.keys().map(|k| k.1).collect();
    ns.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    ns.dedup();
    for &d in &ds {
        for (col, pick) in [("tv_measured", 0usize), ("bound_total", 1)] {
            let pts: Vec<(f64, f64)> = ns
                .iter()
                .filter_map(|&n| {
                    let m = medians.get(&(d, n))?;
                    let v = if pick == 0 { m.0 } else { m.1 }?;
                    Some((f64::from_bits(n), v))
                })
                .collect();
            fit("n", format!("d={d}"), col, pts);
        }
    }
    for &n in &ns {
        for (col, pick) in [("tv_measured", 0usize), ("bound_total", 1)] {
            let pts: Vec<(f64, f64)> = ds
                .iter()
                .filter_map(|&d| {
                    let m = medians.get(&(d, n))?;
                    let v = if pick == 0 { m.0 } else { m.1 }?;
                    Some((d as f64, v))
                })
                .collect();
            fit("d", format!("n={}", f64::from_bits(n)), col, pts);
        }
    }
    (slopes, series)
}

fn configured_gaussian(cfg: &ExperimentConfig, d: usize) -> Result<Option<Gaussian>> {
    match &cfg.gaussian {
        None => Ok(None),
        Some(g) => {
            if g.mean.len() != d || g.precision.len() != d || g.precision.iter().any(|r| r.len() != d) {
                return Err(Error::Config("gaussian mean/precision must match d".into()));
            }
            let p = DMatrix::from_fn(d, d, |i, j| g.precision[i][j]);
            Ok(Some(Gaussian::new(DVector::from_column_slice(&g.mean), p)?))
        }
    }
}

pub fn run_tv(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.model.validate()?;
    let spec = &cfg.model;
    let fixed = configured_gaussian(cfg, spec.d)?;
    let policy = match cfg.tv {
        TvPolicy::None => TvPolicy::Auto,
        p => p,
    };
    let records = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = data_seed(cfg, rep);
            let rec = RunRecord::new(rep, &spec.model, spec.d, spec.n, seed);
            timed(rec, |rec| {
                let inst = spec.instantiate(seed)?;
                let f = inst.posterior(&spec.prior()?);
                let g = match &fixed {
                    Some(g) => g.clone(),
                    None => find_mode(f.as_ref(), &f.default_start(), ModeOptions::default())?.gaussian(),
                };
                if let Some((tv, err, method, reliable)) = measure_tv(cfg, f.as_ref(), &g, seed, policy)? {
                    rec.tv_measured = Some(tv);
                    rec.tv_err = Some(err);
                    rec.soundness = match (method, reliable) {
                        (TvMethod::Quadrature, _) => "tv:quadrature".into(),
                        (TvMethod::Mc, true) => "tv:mc".into(),
                        (TvMethod::Mc, false) => "tv:mc-unreliable".into(),
                    };
                }
                Ok(())
            })
        })
        .collect();
    Ok(finish(records))
}
