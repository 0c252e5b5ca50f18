//! Few-shot bioacoustic event detection.
//!
//! The pipeline turns field recordings into PCEN mel patches, trains a
//! single-layer linear or logistic embedding with the prototypical loss,
//! detects events in a new recording from its first five annotated calls and
//! scores the detections with IoU-thresholded bipartite matching.

pub mod corpus;
pub mod detector;
pub mod embedding;
pub mod error;
pub mod evaluator;
pub mod frontend;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
