//! Budget-constrained measurement selection driven by value of information,
//! with optional selective recomputation of stale VOI estimates.

pub mod belief;
pub mod bench;
pub mod cli;
pub mod error;
pub mod metareasoning;
pub mod policy;
pub mod quadrature;
pub mod voi;

pub use belief::{GaussianBelief, MeasurementType, Problem, ProblemParams, UtilityFn};
pub use bench::{ExperimentConfig, ExperimentStats, ProblemSpec, Selector};
pub use error::{Error, Result};
pub use policy::{run_greedy, run_random, run_rational, Trace};
pub use voi::{Candidate, Scheme, VoiEstimate};
