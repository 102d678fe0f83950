//! One CSV row per run, plus the JSON summary.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 18] = [
    "run_id",
    "model",
    "d",
    "n",
    "s",
    "seed",
    "e1",
    "e2",
    "e3",
    "mle_dist_Fstar",
    "tv_measured",
    "tv_err",
    "bound_laplace",
    "bound_prior",
    "bound_gauss",
    "bound_total",
    "soundness",
    "elapsed_ms",
];

/// Certificate rows put the whole Laplace certificate (local plus tail term)
/// in `bound_laplace` and the radius `r` in the `s` column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub model: String,
    pub d: usize,
    pub n: f64,
    pub s: Option<f64>,
    pub seed: u64,
    pub e1: Option<bool>,
    pub e2: Option<bool>,
    pub e3: Option<bool>,
    pub mle_dist_fstar: Option<f64>,
    pub tv_measured: Option<f64>,
    pub tv_err: Option<f64>,
    pub bound_laplace: Option<f64>,
    pub bound_prior: Option<f64>,
    pub bound_gauss: Option<f64>,
    pub bound_total: Option<f64>,
    pub soundness: String,
    pub elapsed_ms: u64,
    /// Not written to CSV.
    #[serde(skip)]
    pub e0: Option<bool>,
    #[serde(skip)]
    pub violation: bool,
}

impl RunRecord {
    pub fn new(run_id: u64, model: &str, d: usize, n: f64, seed: u64) -> Self {
        RunRecord {
            run_id,
            model: model.to_string(),
            d,
            n,
            s: None,
            seed,
            e1: None,
            e2: None,
            e3: None,
            mle_dist_fstar: None,
            tv_measured: None,
            tv_err: None,
            bound_laplace: None,
            bound_prior: None,
            bound_gauss: None,
            bound_total: None,
            soundness: String::new(),
            elapsed_ms: 0,
            e0: None,
            violation: false,
        }
    }

    pub fn mark_error(&mut self, e: &Error) {
        self.soundness = format!("error:{}", e.kind());
    }

    pub fn is_error(&self) -> bool {
        self.soundness.starts_with("error:")
    }

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.run_id.to_string(),
            self.model.clone(),
            self.d.to_string(),
            fmt_f64(self.n),
            opt_f64(self.s),
            self.seed.to_string(),
            opt_bool(self.e1),
            opt_bool(self.e2),
            opt_bool(self.e3),
            opt_f64(self.mle_dist_fstar),
            opt_f64(self.tv_measured),
            opt_f64(self.tv_err),
            opt_f64(self.bound_laplace),
            opt_f64(self.bound_prior),
            opt_f64(self.bound_gauss),
            opt_f64(self.bound_total),
            self.soundness.clone(),
            self.elapsed_ms.to_string(),
        ]
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn opt_bool(x: Option<bool>) -> String {
    x.map(|b| b.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Slope {
    /// Regressor: `"n"` or `"d"`.
    pub axis: String,
    /// The value held fixed, e.g. `d=2`.
    pub fixed: String,
    /// `tv_measured` or `bound_total`.
    pub column: String,
    pub slope: f64,
    pub se: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Frequency {
    pub event: String,
    pub d: usize,
    pub n: f64,
    pub s: f64,
    pub count: usize,
    pub total: usize,
    pub freq: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Closed-form lower bound on the probability, where one is known.
    pub floor: Option<f64>,
    /// pmf: `C` in `P(E₀ᶜ) ≤ exp(-C s² d)` from the observed failure rate,
    /// with the Wilson upper end giving a conservative value.
    pub fitted_exponent: Option<f64>,
    pub fitted_exponent_conservative: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct Summary {
    pub slopes: Vec<Slope>,
    pub frequencies: Vec<Frequency>,
    pub violations: usize,
    pub errors: usize,
}

/// Wilson score interval at 95%.
pub fn wilson(count: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = total as f64;
    let p = count as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Ordinary least squares slope and its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (rss / (n - 2) as f64 / sxx).sqrt();
    Some((slope, se))
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
