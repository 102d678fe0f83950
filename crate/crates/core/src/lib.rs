//! Certified Laplace approximation bounds, total-variation metrology and
//! Bernstein–von Mises finite-sample checks.

pub mod error;
pub mod experiment;
pub mod bvm;
pub mod laplace;
pub mod metric;
pub mod models;
pub mod rng;
pub mod tv;

pub use error::{Error, Result};
