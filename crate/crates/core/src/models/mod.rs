//! Target potentials: synthetic test functions, GLMs, the multinomial model
//! and priors.

pub mod glm;
pub mod pmf;
pub mod potential;
pub mod prior;
pub mod spec;
pub mod synthetic;

pub use glm::{
    gaussian_design, glm_fisher, glm_nll, glm_sample, rademacher_design, Cumulant, GlmModel, LinkFamily,
};
pub use pmf::{chi2, pmf_fisher, pmf_nll, pmf_sample, PmfModel};
pub use potential::{Domain, Potential};
pub use prior::{prior_quantities, Posterior, Prior, PriorQuantities, PriorSpec};
pub use spec::{DesignSpec, ModelInstance, ModelSpec};
pub use synthetic::{make_cubic_radial, make_ones_cubic, AffinePullback, CubicRadial, NonconvexQuartic, OnesCubic, Quadratic};
