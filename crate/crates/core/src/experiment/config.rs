//! Experiment configuration: a model spec plus replication, radius, budget
//! and TV settings, read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::RStrategy;
use crate::models::spec::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Certify,
    Bvm,
    Events,
    Sweep,
    Tv,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "certify" => Ok(ExperimentKind::Certify),
            "bvm" => Ok(ExperimentKind::Bvm),
            "events" => Ok(ExperimentKind::Events),
            "sweep" => Ok(ExperimentKind::Sweep),
            "tv" => Ok(ExperimentKind::Tv),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

/// `"r": 8`, `"r": {"strategy": "scan", "grid": [...]}` or
/// `"r": {"strategy": "uniform_bound", "m": 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RSpec {
    Fixed(f64),
    Strategy(RStrategySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum RStrategySpec {
    Fixed { r: f64 },
    Scan { grid: Vec<f64> },
    UniformBound { m: f64 },
}

pub const DEFAULT_R_GRID: [f64; 10] = [6.0, 7.0, 8.0, 10.0, 12.0, 15.0, 20.0, 25.0, 30.0, 40.0];

impl RSpec {
    pub fn strategy(&self) -> RStrategy {
        match self {
            RSpec::Fixed(r) | RSpec::Strategy(RStrategySpec::Fixed { r }) => RStrategy::Fixed(*r),
            RSpec::Strategy(RStrategySpec::Scan { grid }) => RStrategy::Scan(grid.clone()),
            RSpec::Strategy(RStrategySpec::UniformBound { m }) => RStrategy::UniformBound(*m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TvPolicy {
    /// Quadrature for d ≤ 3, otherwise none.
    #[default]
    Auto,
    Quadrature,
    Mc,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Eps2Spec {
    /// `"auto"`: 0 for GLMs, `sqrt(s² d / (n θ*_min))` for pmf.
    Named(String),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Empirical δ₃ evaluations.
    pub delta3: usize,
    /// Sampled pairs for the E₃ statistic.
    pub pairs: usize,
    /// Sample points and restarts for δ*₃ / δ*₂ sups.
    pub star: usize,
    pub restarts: usize,
    /// Monte Carlo TV samples.
    pub mc: usize,
    /// Quadrature points per axis (default depends on d).
    pub quad_points: Option<usize>,
    /// Quadrature box half-width in standard deviations.
    pub quad_radius: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            delta3: 2048,
            pairs: 64,
            star: 64,
            restarts: 16,
            mc: 20_000,
            quad_points: None,
            quad_radius: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub precision: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub d: Vec<usize>,
    #[serde(default)]
    pub n: Vec<f64>,
    /// Which per-point experiment the sweep runs.
    #[serde(default = "default_sweep_of")]
    pub of: ExperimentKind,
}

fn default_sweep_of() -> ExperimentKind {
    ExperimentKind::Certify
}

fn default_replications() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(flatten)]
    pub model: ModelSpec,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub r: Option<RSpec>,
    #[serde(default)]
    pub eps2: Option<Eps2Spec>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub tv: TvPolicy,
    /// Use the sampled δ₃ even when an analytic bound exists.
    #[serde(default)]
    pub empirical_delta3: bool,
    /// Log-concave BvM path: caller-supplied third-vs-second moment constant.
    #[serde(default)]
    pub c23: Option<f64>,
    /// `tv` experiment: explicit Gaussian; defaults to the Laplace fit.
    #[serde(default)]
    pub gaussian: Option<GaussianSpec>,
    #[serde(default)]
    pub grid: Option<SweepGrid>,
    #[serde(default)]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // the design seed follows the experiment seed unless given explicitly
        if cfg.model.seed.is_none() {
            cfg.model.seed = Some(cfg.seed);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment
            .ok_or_else(|| Error::Config("experiment kind missing (config field or CLI subcommand)".into()))
    }

    pub fn s(&self) -> f64 {
        self.s.unwrap_or(12.0)
    }

    pub fn r_strategy(&self) -> RStrategy {
        self.r
            .as_ref()
            .map(|r| r.strategy())
            .unwrap_or_else(|| RStrategy::Scan(DEFAULT_R_GRID.to_vec()))
    }

    /// `None` means the model default.
    pub fn eps2_override(&self) -> Result<Option<f64>> {
        match &self.eps2 {
            None => Ok(None),
            Some(Eps2Spec::Named(s)) if s == "auto" => Ok(None),
            Some(Eps2Spec::Named(s)) => Err(Error::Config(format!("unknown eps2 policy '{s}'"))),
            Some(Eps2Spec::Value(v)) if *v >= 0.0 => Ok(Some(*v)),
            Some(Eps2Spec::Value(v)) => Err(Error::Config(format!("eps2 = {v} must be nonnegative"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if let Some(s) = self.s {
            if !(s >= 0.0) {
                return Err(Error::Config("s must be nonnegative".into()));
            }
        }
        if let Some(c) = self.c23 {
            if !(c > 0.0) {
                return Err(Error::Config("c23 must be positive".into()));
            }
        }
        self.eps2_override()?;
        match self.kind()? {
            ExperimentKind::Sweep => {
                let g = self.grid.as_ref().ok_or_else(|| Error::Config("sweep needs a grid".into()))?;
                if g.d.len().max(1) * g.n.len().max(1) < 3 || (g.d.len() < 3 && g.n.len() < 3) {
                    return Err(Error::Config("sweep needs at least 3 grid points along d or n".into()));
                }
                if matches!(g.of, ExperimentKind::Sweep | ExperimentKind::Tv) {
                    return Err(Error::Config("sweep runs certify, bvm or events at each grid point".into()));
                }
                for &d in &g.d {
                    let mut m = self.model.clone();
                    m.d = d;
                    m.theta_star = None;
                    m.center = None;
                    m.validate()?;
                }
                Ok(())
            }
            _ => self.model.validate(),
        }
    }
}
