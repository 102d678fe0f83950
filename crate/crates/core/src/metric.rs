//! Weighted norms of vectors, matrices and symmetric 3-forms.
//!
//! For an SPD matrix `A`, `|u|_A = |A^{1/2} u|` and a symmetric k-linear form
//! `S` has norm `‖S‖_A = sup_{|u|_A = 1} ⟨S, u^{⊗k}⟩`. For k = 1 this is the
//! dual norm `|A^{-1/2} S|`, for k = 2 the operator norm of
//! `A^{-1/2} S A^{-1/2}`. The k = 3 case is nonconvex and is estimated by
//! multistart ascent on the whitened sphere; the returned value is always
//! achieved by the returned witness, hence a certified lower bound.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::rng;

const SYMMETRY_TOL: f64 = 1e-10;
const CONDITION_FLOOR: f64 = 1e-12;

/// An SPD weighting matrix with cached symmetric square roots.
#[derive(Debug, Clone)]
pub struct MetricContext {
    a: DMatrix<f64>,
    sqrt_a: DMatrix<f64>,
    inv_sqrt_a: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl MetricContext {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::NotPositiveDefinite(format!(
                "expected a nonempty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("weighting matrix".into()));
        }
        let scale = spectral_norm_sym(&((&a + a.transpose()) * 0.5)).max(f64::MIN_POSITIVE);
        let asym = spectral_norm_sym_abs(&(&a - a.transpose()));
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "matrix not symmetric (relative asymmetry {:e})",
                asym / scale
            )));
        }
        let sym = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        if !(lmax > 0.0) || lmin <= CONDITION_FLOOR * lmax {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue range [{lmin:e}, {lmax:e}] below condition floor"
            )));
        }
        let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
        let q = &eig.eigenvectors;
        let sqrt_a = q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose();
        let inv_sqrt_a = q * DMatrix::from_diagonal(&sqrt_vals.map(|x| 1.0 / x)) * q.transpose();
        let sqrt_a = (&sqrt_a + sqrt_a.transpose()) * 0.5;
        let inv_sqrt_a = (&inv_sqrt_a + inv_sqrt_a.transpose()) * 0.5;
        Ok(MetricContext {
            a: sym,
            sqrt_a,
            inv_sqrt_a,
            eigenvalues: eig.eigenvalues,
        })
    }

    pub fn identity(d: usize) -> Self {
        MetricContext::new(DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt_a
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt_a
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        &self.inv_sqrt_a * &self.inv_sqrt_a
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.max()
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|x| x.ln()).sum()
    }

    /// `A^{-1/2} M A^{-1/2}`, symmetrized.
    pub fn whiten_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let w = &self.inv_sqrt_a * m * &self.inv_sqrt_a;
        (&w + w.transpose()) * 0.5
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.inv_sqrt_a * (&self.inv_sqrt_a * b)
    }
}

fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn spectral_norm_sym_abs(m: &DMatrix<f64>) -> f64 {
    // works for antisymmetric input too: ‖M‖ = sqrt(‖MᵀM‖)
    spectral_norm_sym(&(m.transpose() * m)).sqrt()
}

/// `|A^{1/2} u|`.
pub fn weighted_vec_norm(u: &DVector<f64>, ctx: &MetricContext) -> Result<f64> {
    check_dim(ctx.dim(), u.len())?;
    Ok((ctx.sqrt() * u).norm())
}

/// `|A^{-1/2} v|`, the norm of a 1-form.
pub fn weighted_dual_norm(v: &DVector<f64>, ctx: &MetricContext) -> Result<f64> {
    check_dim(ctx.dim(), v.len())?;
    Ok((ctx.inv_sqrt() * v).norm())
}

/// Operator norm of a symmetric matrix in the A-geometry.
pub fn weighted_matrix_norm(m: &DMatrix<f64>, ctx: &MetricContext) -> Result<f64> {
    check_dim(ctx.dim(), m.nrows())?;
    check_dim(ctx.dim(), m.ncols())?;
    Ok(spectral_norm_sym(&ctx.whiten_matrix(m)))
}

type FormFn = dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync;

/// A symmetric k-linear form, k ∈ {1, 2, 3}.
#[derive(Clone)]
pub enum SymmetricKForm {
    /// Coefficients in row-major order over `d^k` multi-indices.
    Dense { k: usize, d: usize, coeffs: Vec<f64> },
    /// `u ↦ (⟨S, u^{⊗k}⟩, ∇_u ⟨S, u^{⊗k}⟩)`.
    Callable { k: usize, d: usize, eval: Arc<FormFn> },
}

impl fmt::Debug for SymmetricKForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymmetricKForm::Dense { k, d, coeffs } => f
                .debug_struct("Dense")
                .field("k", k)
                .field("d", d)
                .field("coeffs", coeffs)
                .finish(),
            SymmetricKForm::Callable { k, d, .. } => {
                f.debug_struct("Callable").field("k", k).field("d", d).finish()
            }
        }
    }
}

impl SymmetricKForm {
    pub fn from_vector(v: &DVector<f64>) -> Self {
        SymmetricKForm::Dense {
            k: 1,
            d: v.len(),
            coeffs: v.iter().copied().collect(),
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        check_dim(d, m.ncols())?;
        let mut coeffs = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                coeffs[i * d + j] = m[(i, j)];
            }
        }
        Self::dense(2, d, coeffs)
    }

    /// Dense form with a symmetry check over all index permutations.
    pub fn dense(k: usize, d: usize, coeffs: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&k) {
            return Err(Error::Unsupported(format!("forms of order {k}")));
        }
        check_dim(d.pow(k as u32), coeffs.len())?;
        let scale = coeffs.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(1.0);
        let tol = 1e-10 * scale;
        let idx = |i: usize, j: usize, l: usize| match k {
            2 => i * d + j,
            3 => (i * d + j) * d + l,
            _ => i,
        };
        if k >= 2 {
            for i in 0..d {
                for j in 0..d {
                    let ls = if k == 3 { d } else { 1 };
                    for l in 0..ls {
                        let base = coeffs[idx(i, j, l)];
                        let perms: &[(usize, usize, usize)] = if k == 3 {
                            &[(j, i, l), (i, l, j), (l, j, i), (j, l, i), (l, i, j)]
                        } else {
                            &[(j, i, 0)]
                        };
                        for &(a, b, c) in perms {
                            if (coeffs[idx(a, b, c)] - base).abs() > tol {
                                return Err(Error::Unsupported(
                                    "dense form is not symmetric".into(),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(SymmetricKForm::Dense { k, d, coeffs })
    }

    /// `Σ_m w_m v_m^{⊗3}`.
    pub fn sum_of_cubes(d: usize, terms: &[(f64, DVector<f64>)]) -> Self {
        let mut coeffs = vec![0.0; d * d * d];
        for (w, v) in terms {
            for i in 0..d {
                for j in 0..d {
                    for l in 0..d {
                        coeffs[(i * d + j) * d + l] += w * v[i] * v[j] * v[l];
                    }
                }
            }
        }
        SymmetricKForm::Dense { k: 3, d, coeffs }
    }

    pub fn callable<F>(k: usize, d: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync + 'static,
    {
        SymmetricKForm::Callable {
            k,
            d,
            eval: Arc::new(f),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            SymmetricKForm::Dense { k, .. } | SymmetricKForm::Callable { k, .. } => *k,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymmetricKForm::Dense { d, .. } | SymmetricKForm::Callable { d, .. } => *d,
        }
    }

    /// `(⟨S, u^{⊗k}⟩, gradient in u)`.
    pub fn evaluate(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        match self {
            SymmetricKForm::Callable { eval, .. } => eval(u),
            SymmetricKForm::Dense { k, d, coeffs } => {
                let d = *d;
                match k {
                    1 => {
                        let v = DVector::from_column_slice(coeffs);
                        (v.dot(u), v)
                    }
                    2 => {
                        let m = DMatrix::from_row_slice(d, d, coeffs);
                        let mu = &m * u;
                        (u.dot(&mu), mu * 2.0)
                    }
                    _ => {
                        // contraction S(·, u, u)
                        let mut g = DVector::zeros(d);
                        for i in 0..d {
                            let mut acc = 0.0;
                            for j in 0..d {
                                let row = (i * d + j) * d;
                                let mut inner = 0.0;
                                for l in 0..d {
                                    inner += coeffs[row + l] * u[l];
                                }
                                acc += inner * u[j];
                            }
                            g[i] = acc;
                        }
                        (g.dot(u), g * 3.0)
                    }
                }
            }
        }
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        self.evaluate(u).0
    }

    /// Dense matrix of a 2-form, reconstructed from gradients if callable.
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        if self.order() != 2 {
            return None;
        }
        let d = self.dim();
        match self {
            SymmetricKForm::Dense { coeffs, .. } => Some(DMatrix::from_row_slice(d, d, coeffs)),
            SymmetricKForm::Callable { eval, .. } => {
                let mut m = DMatrix::zeros(d, d);
                for j in 0..d {
                    let mut e = DVector::zeros(d);
                    e[j] = 1.0;
                    let (_, g) = eval(&e);
                    m.set_column(j, &(g * 0.5));
                }
                Some((&m + m.transpose()) * 0.5)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    Exact,
    Multistart { restarts: usize, seed: u64 },
}

impl NormMode {
    pub fn multistart(seed: u64) -> Self {
        NormMode::Multistart { restarts: 32, seed }
    }
}

#[derive(Debug, Clone)]
pub struct NormResult {
    pub value: f64,
    /// Unit vector in the A-geometry with `|⟨S, u^{⊗k}⟩| = value`.
    pub witness: DVector<f64>,
    pub converged: bool,
}

const ASCENT_MAX_ITERS: usize = 2000;

/// Operator norm of `S` in the A-geometry, with a witness achieving it.
pub fn tensor_op_norm(
    form: &SymmetricKForm,
    ctx: &MetricContext,
    mode: NormMode,
) -> Result<NormResult> {
    let d = ctx.dim();
    check_dim(d, form.dim())?;
    match form.order() {
        1 => {
            let (_, v) = form.evaluate(&DVector::zeros(d));
            let w = ctx.inv_sqrt() * &v;
            let value = w.norm();
            let witness = if value > 0.0 {
                ctx.inv_sqrt() * (w / value)
            } else {
                ctx.inv_sqrt().column(0).into_owned()
            };
            Ok(NormResult {
                value,
                witness,
                converged: true,
            })
        }
        2 => {
            let m = form.to_matrix().expect("order 2");
            let eig = SymmetricEigen::new(ctx.whiten_matrix(&m));
            let (mut best, mut val) = (0, 0.0_f64);
            for (i, l) in eig.eigenvalues.iter().enumerate() {
                if l.abs() > val {
                    val = l.abs();
                    best = i;
                }
            }
            let w = eig.eigenvectors.column(best).into_owned();
            let witness = ctx.inv_sqrt() * w;
            let value = form.value(&witness).abs();
            Ok(NormResult {
                value,
                witness,
                converged: true,
            })
        }
        3 => match mode {
            NormMode::Exact if d == 1 => {
                let w = DVector::from_element(1, 1.0);
                let u = ctx.inv_sqrt() * w;
                let v = form.value(&u);
                let witness = if v < 0.0 { -u } else { u };
                Ok(NormResult {
                    value: v.abs(),
                    witness,
                    converged: true,
                })
            }
            NormMode::Exact => Err(Error::Unsupported(
                "exact 3-form norm for d > 1; use multistart".into(),
            )),
            NormMode::Multistart { restarts, seed } => {
                multistart_cubic(form, ctx, restarts.max(1), seed)
            }
        },
        k => Err(Error::Unsupported(format!("forms of order {k}"))),
    }
}

/// Value and Euclidean gradient of `w ↦ ⟨S, (A^{-1/2} w)^{⊗3}⟩`.
fn whitened_eval(form: &SymmetricKForm, ctx: &MetricContext, w: &DVector<f64>) -> (f64, DVector<f64>) {
    let u = ctx.inv_sqrt() * w;
    let (v, g) = form.evaluate(&u);
    (v, ctx.inv_sqrt() * g)
}

fn sphere_ascent(
    form: &SymmetricKForm,
    ctx: &MetricContext,
    start: DVector<f64>,
) -> (f64, DVector<f64>, bool) {
    let mut w = start;
    let (mut val, mut grad) = whitened_eval(form, ctx, &w);
    let mut step = 1.0 / (1.0 + grad.norm());
    for _ in 0..ASCENT_MAX_ITERS {
        let tangent = &grad - &w * grad.dot(&w);
        let tnorm = tangent.norm();
        if tnorm <= 1e-12 * (1.0 + val.abs()) {
            return (val, w, true);
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &w + &tangent * step;
            let cand = &cand / cand.norm();
            let (cv, cg) = whitened_eval(form, ctx, &cand);
            if cv >= val + 1e-4 * step * tnorm * tnorm {
                w = cand;
                val = cv;
                grad = cg;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no ascent possible at machine precision: stationary up to rounding
            return (val, w, tnorm <= 1e-6 * (1.0 + val.abs()));
        }
    }
    (val, w, false)
}

fn multistart_cubic(
    form: &SymmetricKForm,
    ctx: &MetricContext,
    restarts: usize,
    seed: u64,
) -> Result<NormResult> {
    let d = ctx.dim();
    let results: Vec<(f64, DVector<f64>, bool)> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "tensor-norm", i as u64);
            let start = rng::unit_sphere(&mut r, d);
            sphere_ascent(form, ctx, start)
        })
        .collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }
    let (_, w, converged) = results[best].clone();
    let mut witness = ctx.inv_sqrt() * w;
    let mut value = form.value(&witness);
    if value < 0.0 {
        witness = -witness;
        value = -value;
    }
    Ok(NormResult {
        value,
        witness,
        converged,
    })
}

fn angles_to_sphere(angles: &[f64], d: usize) -> DVector<f64> {
    let mut w = DVector::zeros(d);
    if d == 1 {
        w[0] = if angles[0] < 0.5 { 1.0 } else { -1.0 };
        return w;
    }
    let mut sin_prod = 1.0;
    for i in 0..d - 1 {
        w[i] = sin_prod * angles[i].cos();
        sin_prod *= angles[i].sin();
    }
    w[d - 1] = sin_prod;
    w
}

/// Grid search for `sup_{|u|_A=1} |⟨S, u^{⊗k}⟩|` over hyperspherical angles,
/// followed by nested zoom refinement around the best cell. Test oracle only.
pub fn tensor_op_norm_bruteforce(
    form: &SymmetricKForm,
    ctx: &MetricContext,
    grid_resolution: usize,
) -> Result<f64> {
    let d = ctx.dim();
    check_dim(d, form.dim())?;
    if d > 4 {
        return Err(Error::Unsupported(format!("brute-force norm for d = {d} > 4")));
    }
    let eval = |angles: &[f64]| -> f64 {
        let w = angles_to_sphere(angles, d);
        form.value(&(ctx.inv_sqrt() * w)).abs()
    };
    if d == 1 {
        return Ok(eval(&[0.0]).max(eval(&[1.0])));
    }
    let m = grid_resolution.max(4);
    let na = d - 1;
    // angle ranges: polar angles in [0, π], the last one in [0, 2π)
    let ranges: Vec<f64> = (0..na)
        .map(|i| if i == na - 1 { 2.0 * std::f64::consts::PI } else { std::f64::consts::PI })
        .collect();
    let mut best_val = -1.0;
    let mut best_pt = vec![0.0; na];
    let total = m.pow(na as u32);
    let mut pt = vec![0.0; na];
    for idx in 0..total {
        let mut rem = idx;
        for i in 0..na {
            let j = rem % m;
            rem /= m;
            pt[i] = ranges[i] * j as f64 / if i == na - 1 { m as f64 } else { (m - 1) as f64 };
        }
        let v = eval(&pt);
        if v > best_val {
            best_val = v;
            best_pt.clone_from(&pt);
        }
    }
    // zoom refinement
    let mut half: Vec<f64> = ranges.iter().map(|r| r / m as f64).collect();
    let sub = 9usize;
    for _ in 0..40 {
        let center = best_pt.clone();
        let subtotal = sub.pow(na as u32);
        for idx in 0..subtotal {
            let mut rem = idx;
            for i in 0..na {
                let j = rem % sub;
                rem /= sub;
                pt[i] = center[i] + half[i] * (2.0 * j as f64 / (sub - 1) as f64 - 1.0);
            }
            let v = eval(&pt);
            if v > best_val {
                best_val = v;
                best_pt.clone_from(&pt);
            }
        }
        for h in half.iter_mut() {
            *h *= 0.5;
        }
    }
    Ok(best_val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn diag(x: &[f64]) -> MetricContext {
        MetricContext::new(DMatrix::from_diagonal(&dv(x))).unwrap()
    }

    #[test]
    fn vector_norm_examples() {
        let i3 = MetricContext::identity(3);
        assert_eq!(weighted_vec_norm(&DVector::zeros(3), &i3).unwrap(), 0.0);
        assert_relative_eq!(weighted_vec_norm(&dv(&[1.0, 2.0, 2.0]), &i3).unwrap(), 3.0);
        let a = diag(&[4.0, 1.0]);
        assert_relative_eq!(
            weighted_vec_norm(&dv(&[1.0, 1.0]), &a).unwrap(),
            5.0_f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn dual_norm_examples() {
        let i2 = MetricContext::identity(2);
        assert_eq!(weighted_dual_norm(&DVector::zeros(2), &i2).unwrap(), 0.0);
        assert_relative_eq!(weighted_dual_norm(&dv(&[3.0, 4.0]), &i2).unwrap(), 5.0);
        let a = diag(&[4.0, 1.0]);
        assert_relative_eq!(weighted_dual_norm(&dv(&[2.0, 0.0]), &a).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let i2 = MetricContext::identity(2);
        assert!(matches!(
            weighted_vec_norm(&dv(&[1.0]), &i2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_spd_and_asymmetric() {
        assert!(MetricContext::new(DMatrix::from_diagonal(&dv(&[1.0, 0.0]))).is_err());
        assert!(MetricContext::new(DMatrix::from_diagonal(&dv(&[1.0, 1e-13]))).is_err());
        assert!(MetricContext::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])).is_err());
        assert!(MetricContext::new(DMatrix::from_diagonal(&dv(&[1.0, -1.0]))).is_err());
    }

    #[test]
    fn sqrt_reproduces_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let ctx = MetricContext::new(a.clone()).unwrap();
        let rel = (ctx.sqrt() * ctx.sqrt() - &a).norm() / a.norm();
        assert!(rel < 1e-8);
        let id = ctx.sqrt() * ctx.inv_sqrt();
        assert!((id - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn two_form_examples() {
        let i3 = MetricContext::identity(3);
        let s = SymmetricKForm::from_matrix(&DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(tensor_op_norm(&s, &i3, NormMode::Exact).unwrap().value, 1.0, epsilon = 1e-12);
        let ones = SymmetricKForm::from_matrix(&DMatrix::from_element(3, 3, 1.0)).unwrap();
        let r = tensor_op_norm(&ones, &i3, NormMode::Exact).unwrap();
        assert_relative_eq!(r.value, 3.0, epsilon = 1e-12);
        assert_relative_eq!(weighted_vec_norm(&r.witness, &i3).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn two_form_negative_eigenvalue_counts() {
        let ctx = MetricContext::identity(2);
        let s = SymmetricKForm::from_matrix(&DMatrix::from_diagonal(&dv(&[1.0, -3.0]))).unwrap();
        let r = tensor_op_norm(&s, &ctx, NormMode::Exact).unwrap();
        assert_relative_eq!(r.value, 3.0, epsilon = 1e-12);
        assert_relative_eq!(s.value(&r.witness).abs(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn one_form_delegates_to_dual_norm() {
        let a = diag(&[4.0, 1.0]);
        let s = SymmetricKForm::from_vector(&dv(&[2.0, 3.0]));
        let r = tensor_op_norm(&s, &a, NormMode::Exact).unwrap();
        assert_relative_eq!(r.value, weighted_dual_norm(&dv(&[2.0, 3.0]), &a).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(s.value(&r.witness), r.value, epsilon = 1e-12);
        assert_relative_eq!(weighted_vec_norm(&r.witness, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cube_of_basis_vector() {
        let ctx = MetricContext::identity(2);
        let s = SymmetricKForm::sum_of_cubes(2, &[(1.0, dv(&[1.0, 0.0]))]);
        let r = tensor_op_norm(&s, &ctx, NormMode::multistart(1)).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-9);
        assert_relative_eq!(tensor_op_norm_bruteforce(&s, &ctx, 40).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn bruteforce_diag_two_form() {
        let ctx = MetricContext::identity(2);
        let s = SymmetricKForm::from_matrix(&DMatrix::from_diagonal(&dv(&[1.0, 5.0]))).unwrap();
        assert_relative_eq!(tensor_op_norm_bruteforce(&s, &ctx, 30).unwrap(), 5.0, epsilon = 1e-8);
    }

    #[test]
    fn exact_three_form_requires_d1() {
        let ctx = MetricContext::identity(2);
        let s = SymmetricKForm::sum_of_cubes(2, &[(1.0, dv(&[1.0, 0.0]))]);
        assert!(matches!(tensor_op_norm(&s, &ctx, NormMode::Exact), Err(Error::Unsupported(_))));
        let c1 = diag(&[4.0]);
        let s1 = SymmetricKForm::sum_of_cubes(1, &[(-2.0, dv(&[1.0]))]);
        let r = tensor_op_norm(&s1, &c1, NormMode::Exact).unwrap();
        assert_relative_eq!(r.value, 2.0 / 8.0, epsilon = 1e-14);
    }

    #[test]
    fn asymmetric_dense_form_rejected() {
        let mut c = vec![0.0; 8];
        c[1] = 1.0; // (0,0,1) without its permutations
        assert!(SymmetricKForm::dense(3, 2, c).is_err());
        assert!(SymmetricKForm::dense(4, 1, vec![1.0]).is_err());
    }

    #[test]
    fn callable_matches_dense() {
        let v = dv(&[0.3, -1.2, 0.5]);
        let dense = SymmetricKForm::sum_of_cubes(3, &[(2.0, v.clone())]);
        let vc = v.clone();
        let call = SymmetricKForm::callable(3, 3, move |u| {
            let t = vc.dot(u);
            (2.0 * t.powi(3), &vc * (6.0 * t * t))
        });
        let u = dv(&[0.1, 0.7, -0.4]);
        let (a, ga) = dense.evaluate(&u);
        let (b, gb) = call.evaluate(&u);
        assert_relative_eq!(a, b, epsilon = 1e-13);
        assert!((ga - gb).norm() < 1e-12);
    }

    fn random_sym3(d: usize, seed: u64) -> SymmetricKForm {
        let mut r = rng::stream(seed, "rand-form", 0);
        let terms: Vec<(f64, DVector<f64>)> = (0..4)
            .map(|_| (r.random::<f64>() * 2.0 - 1.0, rng::standard_normal_vec(&mut r, d)))
            .collect();
        SymmetricKForm::sum_of_cubes(d, &terms)
    }

    #[test]
    fn multistart_matches_bruteforce_on_random_forms() {
        for seed in 0..10 {
            let s = random_sym3(3, seed);
            let ctx = MetricContext::identity(3);
            let ms = tensor_op_norm(&s, &ctx, NormMode::Multistart { restarts: 20, seed }).unwrap();
            let bf = tensor_op_norm_bruteforce(&s, &ctx, 60).unwrap();
            assert!((ms.value - bf).abs() <= 1e-3 * (1.0 + bf), "seed {seed}: {} vs {}", ms.value, bf);
        }
    }

    proptest! {
        #[test]
        fn homogeneity(c in -10.0..10.0f64, a in -5.0..5.0f64, b in -5.0..5.0f64) {
            let ctx = MetricContext::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
            let u = dv(&[a, b]);
            let lhs = weighted_vec_norm(&(&u * c), &ctx).unwrap();
            let rhs = c.abs() * weighted_vec_norm(&u, &ctx).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn triangle_inequality(x in proptest::collection::vec(-5.0..5.0f64, 6)) {
            let ctx = MetricContext::new(DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.0, 0.5, 2.0, 0.1, 0.0, 0.1, 1.0])).unwrap();
            let u = dv(&x[..3]);
            let v = dv(&x[3..]);
            let s = weighted_vec_norm(&(&u + &v), &ctx).unwrap();
            prop_assert!(s <= weighted_vec_norm(&u, &ctx).unwrap() + weighted_vec_norm(&v, &ctx).unwrap() + 1e-12);
        }

        #[test]
        fn witness_achieves_value(seed in 0u64..1000, a in 0.5..3.0f64) {
            let s = random_sym3(3, seed);
            let ctx = MetricContext::new(DMatrix::from_row_slice(3, 3, &[a, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 2.0])).unwrap();
            let r = tensor_op_norm(&s, &ctx, NormMode::Multistart { restarts: 8, seed }).unwrap();
            prop_assert!((weighted_vec_norm(&r.witness, &ctx).unwrap() - 1.0).abs() < 1e-8);
            prop_assert!((s.value(&r.witness) - r.value).abs() <= 1e-8 * (1.0 + r.value));
        }

        #[test]
        fn two_form_equals_whitened_operator_norm(x in proptest::collection::vec(-3.0..3.0f64, 6)) {
            let m = DMatrix::from_row_slice(3, 3, &[x[0], x[1], x[2], x[1], x[3], x[4], x[2], x[4], x[5]]);
            let ctx = MetricContext::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.0, 0.4, 1.0, 0.0, 0.0, 0.0, 0.5])).unwrap();
            let s = SymmetricKForm::from_matrix(&m).unwrap();
            let r = tensor_op_norm(&s, &ctx, NormMode::Exact).unwrap();
            let w = ctx.inv_sqrt() * &m * ctx.inv_sqrt();
            let op = w.singular_values().max();
            prop_assert!((r.value - op).abs() <= 1e-10 * (1.0 + op));
        }
    }
}
