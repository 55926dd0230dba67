//! Online multi-object tracking engine built around appearance-based
//! detection-to-track association.
//!
//! The crate provides four association strategies (cascade matching, k-nearest
//! neighbors, exponential-moving-average features, and a hybrid cost that fuses
//! the current-frame appearance distance with the cumulative probability of an
//! incrementally estimated Gaussian mixture over each track's historical
//! distance records), a constant-velocity Kalman filter for motion gating, a
//! rectangular Hungarian assignment solver, MOTChallenge-format I/O, a
//! synthetic scenario generator, and a CLEAR-MOT / identity metrics evaluator.

pub mod appearance;
pub mod association;
pub mod error;
pub mod igmm;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
