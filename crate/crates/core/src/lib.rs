//! Simulation and bound verification for distributed subgradient methods
//! running over time-varying networks of agents.
//!
//! Each agent `i` holds an estimate `x_i(k)` of a minimizer of `f = Σ f_i`
//! and repeatedly mixes it with its neighbours' estimates through a doubly
//! stochastic weight matrix `A(k)` before taking a local subgradient step.
//! The quantized variant stores and exchanges estimates on a `1/Q` grid.
//!
//! Modules:
//! - [`objectives`]: convex per-agent objectives, subgradient oracles and
//!   closed-form optimal sets.
//! - [`network`]: weight matrices, schedules, connectivity validation and
//!   transition products.
//! - [`consensus`]: pure averaging dynamics and the disagreement function.
//! - [`dynamics`]: the real-valued method, running averages and its
//!   convergence-gap bound.
//! - [`quantized`]: the grid-valued method, error bookkeeping, the
//!   centralized limit sequence and the quantized bounds.
//! - [`harness`]: configuration, CSV traces, summaries and parameter sweeps.

pub mod consensus;
pub mod dynamics;
mod error;
pub mod harness;
pub mod network;
pub mod objectives;
pub mod quantized;
mod report;
pub(crate) mod vecops;

pub use error::{Error, Result};
pub use report::{Check, VerificationReport, Violation};
