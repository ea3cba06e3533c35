//! Adaptive sensorimotor control for robots with unknown action-to-perception
//! maps: saturated set-point servo laws built on pseudo-inverse solutions of a
//! quadratic cost, three families of online Jacobian estimators (structured,
//! instantaneous, distributed), synthetic plants, and a CLI experiment
//! harness.

pub mod distributed;
pub mod error;
pub mod harness;
pub mod instant;
pub mod plants;
pub mod servo;
pub mod structured;
pub mod types;

pub use error::{Error, Result};
