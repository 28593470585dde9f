//! Explicit tamed and sine Euler schemes for SDEs driven by Brownian motion
//! and a compensated Poisson random measure with finitely many marks.
//!
//! The crate is organised as
//!
//! - [`measure`]: finite atomic mark measures,
//! - [`problem`]: coefficient traits and problem descriptions,
//! - [`noise`]: reproducible, coupled Brownian and jump noise,
//! - [`schemes`]: Euler–Maruyama, tamed and sine one-step maps,
//! - [`analysis`]: strong errors, moments and local orders,
//! - [`assumptions`]: sampled estimates of structural constants,
//! - [`models`]: built-in benchmark problems.

pub mod analysis;
pub mod assumptions;
mod error;
pub mod measure;
pub mod models;
pub mod noise;
pub mod problem;
pub mod schemes;

pub use analysis::{
    estimate_local_orders, estimate_moments, estimate_strong_error, fit_order, ErrorMode, ErrorRow, ErrorTable,
    LocalOrderConfig, LocalOrderReport, LocalReference, MomentConfig, MomentEstimates, OrderFit, OverflowPolicy,
    Reference, StudyConfig,
};
pub use assumptions::{AssumptionReport, Condition, DerivativeSource, GridSpec};
pub use error::{Error, Result};
pub use measure::{Atom, MarkMeasure};
pub use models::{ModelEntry, ModelRegistry, Params};
pub use noise::{BrownianGrid, JumpEvent, JumpStream, NoiseRealization};
pub use problem::{Coefficients, ExactSolution, FnCoefficients, InitialState, JumpDiffusionProblem};
pub use schemes::{simulate_path, simulate_reference, DiscretePath, Scheme};
