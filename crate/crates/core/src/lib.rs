//! Deployment planning for phase-split LLM serving on heterogeneous GPU
//! clusters.
//!
//! The upper level ([`scheduler`]) searches over GPU groupings and
//! prefill/decode designations. For each candidate the lower level derives
//! a parallel layout per group ([`parallel`]), estimates costs
//! ([`cost`]), routes requests between phases ([`orchestrator`]) and
//! scores the result analytically or with the event simulator
//! ([`simulator`]).

pub mod cost;
pub mod domain;
pub mod error;
pub mod fixtures;
pub mod orchestrator;
pub mod parallel;
pub mod plan;
pub mod scheduler;
pub mod simulator;

pub use error::{Error, Result};
