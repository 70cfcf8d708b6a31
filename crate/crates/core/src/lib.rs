//! Multi-mode sampling-period selection for an anti-lock braking loop.
//!
//! The crate models a quarter-car braking plant, analyses the discretized
//! closed loop as a function of the sampling period, switches between three
//! sampling modes with a supervisory automaton, and measures the processor
//! bandwidth a multi-mode controller saves over a fixed fast-rate one.

// Range checks are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod discretization;
pub mod plant;
pub mod profile;
pub mod scheduler;
pub mod simulator;
pub mod stability;
pub mod supervisor;
