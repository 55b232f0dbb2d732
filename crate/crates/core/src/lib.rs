//! Lane perception and topology reasoning over synthetic road scenes.
//!
//! The crate is organized bottom-up: [`numerics`] provides tensors with
//! reverse-mode differentiation, [`geometry`] the curve and camera math,
//! [`attention`] and [`topology`] the learned blocks, [`model`] the decoder
//! stack, [`training`] the matching, losses and optimizer loop,
//! [`evaluation`] the detection/topology metrics, [`scenes`] the synthetic
//! data, and [`cli`] the command-line front end.

pub mod error;
pub mod evaluation;
pub mod attention;
pub mod cli;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod scenes;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
