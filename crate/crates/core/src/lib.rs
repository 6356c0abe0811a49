//! Automatic labeling of static-analysis alerts from test-suite metadata,
//! checker-to-CWE mapping inference, and alert classifiers trained on the
//! labeled archives.
//!
//! The pipeline runs `ingest` → `suite` → `mapping` → `fuse` → `features`
//! → `learn`. `synth` produces corpora with known ground truth for
//! end-to-end checks.

pub mod error;
pub mod features;
pub mod fuse;
pub mod ingest;
pub mod learn;
pub mod mapping;
pub mod pipeline;
pub mod suite;
pub mod synth;

pub use error::{Error, Result};
