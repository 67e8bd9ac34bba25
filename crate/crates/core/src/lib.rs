//! Simulated in-hand haptic object recognition.
//!
//! A two-finger precision grasp is stabilized by hierarchical force control
//! and a Gaussian-mixture stable-grasp model, the object is squeezed and
//! wrapped, and the resulting 45-dimensional encoder + tactile vector is
//! classified with RBF kernel regularized least squares.

pub mod bench;
pub mod config;
pub mod control;
pub mod error;
pub mod explore;
pub mod geometry;
pub mod grasp_model;
pub mod learn;
pub mod par;
pub mod seed;
pub mod sim;
pub mod tactile;

pub use config::Config;
pub use error::{Error, Result};
