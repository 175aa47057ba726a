//! Core numerics for the adversarial-example workbench.
//!
//! * [`tensornet`]: a small CPU convolutional network with forward inference,
//!   backpropagation to the input and SGD training.
//! * [`attacks`]: FGSM and ZOO evasion attacks and ε sweeps.
//! * [`projection`]: PCA, exact t-SNE and Procrustes averaging of 2-D layouts.
//! * [`cube`]: multi-resolution binned aggregation over projected coordinates.
//! * [`dataset`]: CIFAR-10 binary ingestion and a synthetic fixture generator.

pub mod attacks;
pub mod cube;
pub mod dataset;
mod error;
pub mod projection;
pub mod tensornet;

pub use error::{Error, Result};
