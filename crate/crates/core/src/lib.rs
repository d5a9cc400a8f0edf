//! Multitask scaling laws: fitting, effective capacity and trade-off frontiers.
//!
//! The crate is organised in layers:
//!
//! - [`lawcore`] holds the value types and closed-form evaluation of every law
//!   form (no fitting, no I/O).
//! - [`fitting`] is the nonlinear least-squares engine and the estimation
//!   procedures built on top of it (per-weighting, joint, fraction-curve,
//!   learning-curve extrapolation, parametric bootstrap).
//! - [`dataio`] ingests experiment records, ships the reference size table and
//!   persists fitted [`dataio::LawBundle`]s.
//! - [`synthlab`] generates records from known ground-truth laws.
//! - [`analysis`] composes the above into end-to-end pipelines.

pub mod analysis;
pub mod dataio;
pub mod fitting;
pub mod lawcore;
pub mod synthlab;

pub use lawcore::{
    BivariateLawParams, FractionCurve, FractionFit, FractionForm, JointLaw, LawError,
    MetricDirection, ModelSize, PowerLawParams, TaskId, WeightKey, WeightVector,
};
