//! Relationship-free social bot detection.
//!
//! Users are featurized from pooled tweet embeddings and profile counts,
//! linked by thresholded cosine similarity, and classified with a GraphSAGE
//! layer followed by an MLP head.

pub mod cache;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod linalg;
pub mod sage;
pub mod synthetic;

pub use error::{Error, Result};
