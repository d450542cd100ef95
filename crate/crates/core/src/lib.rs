//! Stimulation-pattern discovery for FES cycling.
//!
//! A model-based pattern is learned with soft actor-critic against a planar
//! cycling simulator, then refined offline with conservative Q-learning on
//! sessions logged from perturbed conventional patterns.

pub mod biomech;
pub mod env;
pub mod error;
pub mod fmt;
pub mod offline;
pub mod pattern;
pub mod rl;
pub mod train;

pub use error::{Error, Result};
