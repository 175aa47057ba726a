//! Slow, straightforward reference implementations used as test oracles.
//!
//! Nothing here shares code with the optimized kernels: the forward pass is a
//! direct loop nest in `f64`, and cube bins are found by scanning intervals.

pub mod cube;
pub mod reference;
