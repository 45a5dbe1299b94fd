//! Sequential posterior simulation with group-structured particles.
//!
//! The library implements a sequential Monte Carlo sampler over a static
//! parameter space. Particles are organized into J independent groups of N;
//! the group structure yields numerical standard errors from the dispersion
//! of group means. A run is a sequence of cycles, each consisting of a
//! correction phase (importance reweighting over a block of observations),
//! a selection phase (within-group resampling), and a mutation phase
//! (Metropolis sweeps targeting the current posterior).
//!
//! Entry points live in [`engine`]: `run_adaptive`, `run_nonadaptive`, and
//! `run_hybrid`. Models implement the [`model::Model`] trait; see
//! [`models`] for the bundled ones.

pub mod design;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod exec;
pub mod model;
pub mod models;
pub mod mutation;
pub mod particle;
pub mod report;
pub mod resample;
pub mod rng;

pub use engine::{run_adaptive, run_hybrid, run_nonadaptive, DesignRecord, EngineConfig};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use model::Model;
