//! Approximate Bayesian inference for linear regression with spike-and-slab
//! priors.
//!
//! Two solvers target the same Gaussian approximation of the posterior:
//!
//! * [`r_ep`] — damped sequential EP, which is fast but may fail to converge
//!   when the training set is very small;
//! * [`pc_ep`] — a double-loop solver that provably decreases a bounded
//!   energy at every outer iteration and therefore always terminates.
//!
//! [`oracle`] computes the exact posterior by enumerating all spike/slab
//! configurations at small dimension, and [`experiment`] is a seeded
//! benchmark harness comparing the solvers over a damping sweep. Shared
//! numeric types live in [`model`].

pub mod energy;
pub mod error;
pub mod experiment;
pub mod math;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod pc_ep;
pub mod r_ep;
pub mod tilted;
pub mod validate;

pub use energy::{lower_bound, EnergyBreakdown};
pub use error::{Result, SsepError};
pub use experiment::ExperimentConfig;
pub use model::{ModelInstance, NaturalTuple, PosteriorMoments};
pub use oracle::ExactPosterior;
pub use pc_ep::{InnerSolution, Multipliers, PcepOptions, PcepRun};
pub use r_ep::{EPResult, RepOptions};
pub use tilted::TiltedMoments;
