//! Cross-target and zero-shot stance classification with adversarial topic
//! confusion, policy-description conditioning, and a graph-convolutional
//! region encoder.
//!
//! The crate is organized around the pipeline:
//! [`data`] -> [`encoder`] -> [`model`] -> [`training`] -> [`evaluation`],
//! with [`harness`] providing the self-contained synthetic acceptance
//! experiments and [`config`] the run-configuration surface shared with the
//! CLI.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod model;
pub mod training;

pub use error::{Error, Result};
