//! Slot-value decoders for dialogue state tracking with context-sensitive
//! decoder inputs, plus a controlled OOV-injection lab, training loop and
//! evaluation suite.

pub mod corpus;
pub mod csg;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod oov;
pub mod runner;
pub mod train;
pub mod vocab;

pub use error::{CsgError, Result};
