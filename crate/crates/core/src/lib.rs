//! Bivariate dynamic contagion processes: a pair of counting processes whose
//! intensities combine external shot-noise input (Poisson arrivals with
//! random upward marks, exponential decay) with mutual excitation (each event
//! simultaneously bumps both intensities with random marks).
//!
//! The crate provides
//! - [`model`]: parameter and mark-distribution types with validation;
//! - [`stationarity`]: the excitation-matrix stability condition and closed
//!   forms for the stationary mean, variance, cross moment and correlation;
//! - [`laplace`]: the recursive forward ODE system giving finite-horizon and
//!   limiting Laplace transforms of the intensity, plus a stationarity
//!   residual check;
//! - [`simulate`]: two independent exact path generators (thinning and the
//!   cluster/branching construction) with exact intensity evaluation;
//! - [`analysis`]: seeded parallel Monte Carlo estimators and
//!   analytic-versus-empirical verification reports.

pub mod analysis;
pub mod error;
pub mod laplace;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod stationarity;

pub use error::{Error, Result};
pub use model::{MarkDistribution, ModelParams, ValidationReport};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::model::{MarkDistribution, ModelParams};

    /// Symmetric cross-exciting benchmark: decay 2, exponential marks with
    /// internal mean 1/2 and external mean 1, unit external rates. Spectral
    /// radius 0.5, stationary mean (1, 1).
    pub fn benchmark() -> ModelParams {
        ModelParams {
            delta1: 2.0,
            delta2: 2.0,
            rho1: 1.0,
            rho2: 1.0,
            lambda0: [1.0, 1.0],
            h1: MarkDistribution::Exponential { rate: 1.0 },
            h2: MarkDistribution::Exponential { rate: 1.0 },
            g11: MarkDistribution::Exponential { rate: 2.0 },
            g12: MarkDistribution::Exponential { rate: 2.0 },
            g21: MarkDistribution::Exponential { rate: 2.0 },
            g22: MarkDistribution::Exponential { rate: 2.0 },
        }
    }
}
