//! Measurement-only phase alignment for reconfigurable intelligent surfaces.
//!
//! The surface is tuned element by element using nothing but received-power
//! readings. See the README for the experiment harness and CLI.

pub mod alignment;
pub mod config;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod scenario;
pub mod signal;
pub mod special;

pub use error::{Error, Result};
