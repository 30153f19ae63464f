//! Large-deviation laboratory for empirical measures of random points on
//! scaled `ℓ^p` spheres.
//!
//! The crate is organized bottom-up:
//!
//! - [`analytic`]: exact densities, moments, entropies and regime thresholds.
//! - [`sampling`]: generalized Gaussian, cone-measure and surface-measure samplers.
//! - [`measures`]: empirical measures, moment maps and distances on the line.
//! - [`entropy_rate`]: the rate function, its two evaluation routes and entropy estimators.
//! - [`maxent`]: the moment-constrained maximum-entropy solver.
//! - [`rare_event`]: importance sampling and conditional MCMC for `m_q` events.
//!
//! All randomness flows through [`rng::RngStream`], so every result is a
//! deterministic function of `(seed, stream_id)`.

pub mod analytic;
pub mod entropy_rate;
pub mod error;
pub mod maxent;
pub mod measures;
pub mod quadrature;
pub mod rare_event;
pub mod rng;
pub mod sampling;
pub mod special;

pub use analytic::{AnalyticDensity, PExponent, RegimeThresholds};
pub use error::{Error, Result};
pub use measures::{EmpiricalMeasure, Interval};
pub use rng::RngStream;
pub use sampling::SpherePoint;
