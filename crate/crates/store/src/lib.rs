//! On-disk artifact bundles and the read-only HTTP API that serves them.
//!
//! A bundle is a directory:
//!
//! ```text
//! manifest.json
//! images/clean.bin
//! models/<name>.advxnet
//! artifacts/<model>/<attack>/<eps>/{noise.f32, pred.json, conf.f32, coords.f32, cube.json, accuracy.json}
//! ```
//!
//! Binary files are little-endian: an 8-byte magic, a `u32` element count,
//! then the elements. Every file other than the manifest is listed in the
//! manifest with its SHA-256 digest.

pub mod api;
mod bundle;
mod error;
pub mod format;
pub mod image;

pub use bundle::{
    artifact_from_level, epsilon_dir, read_bundle, write_bundle, AccuracyRecord, Artifact, AttackRun,
    Bundle, ClassInfo, GroupEntry, Manifest, ModelEntry, ModelInfo, Predictions, RunInfo, BUNDLE_FORMAT,
    PALETTE,
};
pub use error::{Result, StoreError};
