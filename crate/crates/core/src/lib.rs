//! Fault detection and isolation for printer ink channels.
//!
//! The crate covers the full diagnosis chain for the self-sensing signals of
//! piezo-actuated ink channels:
//!
//! - [`model`]: lumped-parameter channel dynamics and the structured fault
//!   matrices for the six operational fault variants,
//! - [`sim`]: exact LTI simulation of the sensing phase and labeled dataset
//!   generation,
//! - [`sysid`]: grey-box estimation of the healthy model from sensing signals,
//! - [`fd`]: synthesis of the null-space residual filter, residual generation
//!   and the energy-threshold detection decision,
//! - [`fi`]: fault isolation via simplex-constrained regression on averaged
//!   residual templates or nearest-neighbor classification,
//! - [`metrics`]: detection/isolation scoring (detection rate, false alarms,
//!   confusion matrices, macro-F1).

pub mod error;
pub mod fd;
pub mod fi;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod spectrum;
pub mod sysid;
#[doc(hidden)]
pub mod testkit;

pub use error::Error;
pub use fd::{
    DaeMatrices, DetectionResult, FilterConfig, FilterPolynomials, ResidualFilter,
};
pub use fi::{IsolationResult, TemplateMatrix};
pub use model::{ChannelParams, FaultSpec, FaultVariant, SystemMatrices};
pub use sim::{GenerationConfig, LabeledDataset, Signal};
pub use sysid::IdentifiedModel;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
