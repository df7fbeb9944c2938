//! Simulation and design toolkit for an underactuated two-joint finger
//! exoskeleton driven by one linear actuator.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod controlsim;
pub mod differential;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod linkopt;
pub mod rendering;

pub use error::{Error, Result};
