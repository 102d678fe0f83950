//! JSON model specification and instantiation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::{gaussian_design, glm_fisher, glm_sample, rademacher_design, GlmModel, LinkFamily};
use super::pmf::{pmf_fisher, pmf_sample, PmfModel};
use super::potential::Potential;
use super::prior::{Posterior, Prior, PriorSpec};
use super::synthetic::{make_cubic_radial, make_ones_cubic, Quadratic};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignSpec {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: String,
    pub d: usize,
    /// Scale `n`: observations for GLMs, trials for pmf, free scale otherwise.
    pub n: f64,
    /// GLM: `d` entries. pmf: `d + 1` entries `(θ*_0, …, θ*_d)`, uniform
    /// when omitted.
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default)]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    /// Seed for the design; data seeds come from the experiment.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Quadratic center.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

#[derive(Clone)]
pub enum ModelInstance {
    Synthetic(Arc<dyn Potential>),
    Glm(GlmModel),
    Pmf(PmfModel),
}

impl ModelInstance {
    pub fn likelihood(&self) -> Arc<dyn Potential> {
        match self {
            ModelInstance::Synthetic(p) => p.clone(),
            ModelInstance::Glm(m) => Arc::new(m.clone()),
            ModelInstance::Pmf(m) => Arc::new(m.clone()),
        }
    }

    pub fn posterior(&self, prior: &Prior) -> Arc<dyn Potential> {
        if prior.is_flat() {
            self.likelihood()
        } else {
            Arc::new(Posterior::new(self.likelihood(), prior.clone()))
        }
    }

    pub fn fisher(&self) -> Result<DMatrix<f64>> {
        match self {
            ModelInstance::Synthetic(_) => Err(Error::Unsupported("Fisher matrix of a synthetic potential".into())),
            ModelInstance::Glm(m) => glm_fisher(m),
            ModelInstance::Pmf(m) => pmf_fisher(&m.theta_star_full),
        }
    }

    pub fn theta_star(&self) -> Option<DVector<f64>> {
        match self {
            ModelInstance::Synthetic(_) => None,
            ModelInstance::Glm(m) => Some(m.theta_star.clone()),
            ModelInstance::Pmf(m) => Some(m.theta_star()),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if !(self.n > 0.0) || !self.n.is_finite() {
            return Err(Error::Config("n must be positive".into()));
        }
        match self.model.as_str() {
            "cubic_radial" | "ones_cubic" => Ok(()),
            "quadratic" => {
                if let Some(c) = &self.center {
                    if c.len() != self.d {
                        return Err(Error::Config("quadratic center length must equal d".into()));
                    }
                }
                Ok(())
            }
            "pmf" => {
                let ts = self.pmf_theta_star();
                if ts.len() != self.d + 1 {
                    return Err(Error::Config("pmf theta_star must have d + 1 entries".into()));
                }
                if self.n.fract() != 0.0 {
                    return Err(Error::Config("pmf n must be an integer".into()));
                }
                pmf_fisher(&ts).map(|_| ())
            }
            "logistic" | "poisson" | "gaussian" | "exponential" => {
                if let Some(ts) = &self.theta_star {
                    if ts.len() != self.d {
                        return Err(Error::Config("theta_star must have d entries".into()));
                    }
                }
                if self.n.fract() != 0.0 {
                    return Err(Error::Config("GLM n must be an integer".into()));
                }
                match &self.design {
                    None => Ok(()),
                    Some(DesignSpec::Named(s)) if ["gaussian", "identity", "rademacher"].contains(&s.as_str()) => Ok(()),
                    Some(DesignSpec::Named(s)) => Err(Error::Config(format!("unknown design '{s}'"))),
                    Some(DesignSpec::Explicit(rows)) => {
                        if rows.len() != self.n as usize || rows.iter().any(|r| r.len() != self.d) {
                            return Err(Error::Config("explicit design must be n rows of length d".into()));
                        }
                        Ok(())
                    }
                }
            }
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }

    fn pmf_theta_star(&self) -> Vec<f64> {
        self.theta_star.clone().unwrap_or_else(|| vec![1.0 / (self.d + 1) as f64; self.d + 1])
    }

    pub fn prior(&self) -> Result<Prior> {
        self.prior.clone().unwrap_or(PriorSpec::Flat).build(self.d)
    }

    fn glm_design(&self, link: &LinkFamily) -> (usize, DMatrix<f64>) {
        let n = self.n as usize;
        let d = self.d;
        let named = match &self.design {
            Some(DesignSpec::Explicit(rows)) => return (1, DMatrix::from_fn(n, d, |i, j| rows[i][j])),
            Some(DesignSpec::Named(s)) => s.as_str(),
            // X_iᵀθ < 0 for all i is only natural for the identity design
            None if matches!(link, LinkFamily::Exponential) => "identity",
            None => "gaussian",
        };
        let seed = rng::derive_seed(self.seed.unwrap_or(0), "design", 0);
        match named {
            "identity" => (d, identity_stack(n, d)),
            "rademacher" => (1, rademacher_design(n, d, seed)),
            _ => (1, gaussian_design(n, d, seed)),
        }
    }

    /// Build the model; sampled data (labels or counts) use `data_seed`.
    pub fn instantiate(&self, data_seed: u64) -> Result<ModelInstance> {
        self.validate()?;
        let d = self.d;
        match self.model.as_str() {
            "cubic_radial" => Ok(ModelInstance::Synthetic(Arc::new(make_cubic_radial(d, self.n)))),
            "ones_cubic" => Ok(ModelInstance::Synthetic(Arc::new(make_ones_cubic(d, self.n)))),
            "quadratic" => {
                let c = self.center.clone().unwrap_or_else(|| vec![0.0; d]);
                Ok(ModelInstance::Synthetic(Arc::new(Quadratic::isotropic(
                    DVector::from_vec(c),
                    self.n,
                ))))
            }
            "pmf" => {
                let ts = self.pmf_theta_star();
                let counts = pmf_sample(&ts, self.n as u64, data_seed)?;
                Ok(ModelInstance::Pmf(PmfModel::new(counts, ts)?))
            }
            name => {
                let link = LinkFamily::parse(name)?;
                let default_ts = if matches!(link, LinkFamily::Exponential) { -1.0 } else { 0.0 };
                let ts = DVector::from_vec(self.theta_star.clone().unwrap_or_else(|| vec![default_ts; d]));
                let (k, z) = self.glm_design(&link);
                let y = glm_sample(&link, &z, &ts, data_seed)?;
                Ok(ModelInstance::Glm(GlmModel::new(link, k, z, y, ts)?))
            }
        }
    }
}

fn identity_stack(n: usize, d: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n * d, d);
    for i in 0..n {
        for j in 0..d {
            z[(i * d + j, j)] = 1.0;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_instantiates() {
        let json = r#"{"model":"logistic","d":2,"n":100,"theta_star":[0.5,-0.5],"design":"gaussian","prior":{"kind":"flat"},"seed":3}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        let m = spec.instantiate(1).unwrap();
        assert!(matches!(m, ModelInstance::Glm(_)));
        let a = spec.instantiate(1).unwrap().likelihood();
        let t = DVector::from_column_slice(&[0.1, 0.2]);
        assert_eq!(a.value(&t), m.likelihood().value(&t));

        let pmf: ModelSpec =
            serde_json::from_str(r#"{"model":"pmf","d":2,"n":1000,"theta_star":[0.3,0.3,0.4]}"#).unwrap();
        assert!(matches!(pmf.instantiate(0).unwrap(), ModelInstance::Pmf(_)));

        let explicit: ModelSpec =
            serde_json::from_str(r#"{"model":"poisson","d":1,"n":3,"design":[[1.0],[0.5],[2.0]]}"#).unwrap();
        assert!(explicit.instantiate(0).is_ok());

        let exp: ModelSpec = serde_json::from_str(r#"{"model":"exponential","d":2,"n":50}"#).unwrap();
        let m = exp.instantiate(0).unwrap();
        if let ModelInstance::Glm(g) = m {
            assert_eq!(g.k, 2);
        } else {
            panic!("expected GLM");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for json in [
            r#"{"model":"nope","d":1,"n":10}"#,
            r#"{"model":"pmf","d":2,"n":10,"theta_star":[0.5,0.5]}"#,
            r#"{"model":"logistic","d":2,"n":10,"theta_star":[0.5]}"#,
            r#"{"model":"cubic_radial","d":0,"n":10}"#,
            r#"{"model":"logistic","d":1,"n":2,"design":[[1.0]]}"#,
        ] {
            let spec: ModelSpec = serde_json::from_str(json).unwrap();
            assert!(matches!(spec.validate(), Err(Error::Config(_)) | Err(Error::Domain(_))), "{json}");
        }
    }
}
