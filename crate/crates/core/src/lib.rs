//! Antithetic multilevel Monte Carlo for nonlinear functionals of
//! probability-measure flows.
//!
//! The crate estimates `Φ(μ_T)` for McKean-Vlasov SDEs through interacting
//! particle systems, and `Φ(μ)` for i.i.d. samples, with single-level
//! ensembles, standard MLMC, and the antithetic MLMC estimator in which each
//! level's fine system is paired with two half-size sub-systems that share
//! its initial conditions and Brownian drivers.
//!
//! Module map:
//!
//! * [`measure`]: empirical measures, functionals, exact W₂ for small clouds.
//! * [`models`]: drift/diffusion definitions and closed-form reference laws.
//! * [`paths`]: counter-based random streams and Brownian increment tables.
//! * [`simulate`]: Euler and exact particle simulation, antithetic triples.
//! * [`mlmc`]: estimators, level schedules, interaction-cost accounting.
//! * [`harness`]: rate experiments, config files, CSV output.

pub mod error;
pub mod harness;
pub mod measure;
pub mod mlmc;
pub mod models;
pub mod paths;
pub mod simulate;

pub use error::{Error, Result};
pub use measure::{EmpiricalMeasure, Functional};
pub use mlmc::{EstimatorKind, EstimatorReport, LevelSchedule};
pub use models::{InitialLaw, ModelSpec};
pub use paths::{CloudKey, SeedKey};
