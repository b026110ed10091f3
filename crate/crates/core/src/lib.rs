//! Successor features with multi-timescale synaptic consolidation.
//!
//! The crate bundles everything needed to study fast/slow successor-feature
//! learning in a continually drifting environment:
//!
//! - [`consolidation`]: the K-variable consolidation chain (Euler update,
//!   RK4 reference integrator, analytic steady state).
//! - [`optim`]: SGD, Adam and the timescale-ratio probe.
//! - [`drift`]: noisy sine, non-periodic sine and Ornstein–Uhlenbeck drift.
//! - [`gridworld`]: the slippery four-rooms environment.
//! - [`nn`]: small dense networks with hand-written gradients.
//! - [`agents`]: double DQN, successor-feature agents, consolidation and the
//!   EWC / plasticity-injection / continual-backprop wrappers.
//! - [`attention`]: cross-attention readout over consolidation variables.
//! - [`harness`]: configs, seeded runs, metrics and log files.
//! - [`gradcheck`]: finite-difference validation of every architecture.

pub mod agents;
pub mod attention;
pub mod consolidation;
pub mod drift;
pub mod error;
pub mod gradcheck;
pub mod gridworld;
pub mod harness;
pub mod nn;
pub mod optim;
pub(crate) mod rng;

pub use error::{Error, Result};
