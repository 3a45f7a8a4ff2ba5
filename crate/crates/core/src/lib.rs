//! Koopman/EDMD lifted linear models of a planar single-rigid-body quadruped,
//! used inside a condensed-QP linear MPC to trot, bound, and switch between
//! the two gaits in closed-loop simulation.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gait;
pub mod harness;
pub mod koopman;
pub mod leg;
pub mod lmpc;
pub mod srb;
pub mod terrain;

pub use error::{Error, Result};
