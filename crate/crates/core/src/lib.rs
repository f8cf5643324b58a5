//! Core algorithms for training physics-informed networks as multi-objective
//! problems.
//!
//! The crate is `no_std` compatible (it needs `alloc`). The default `std`
//! feature only switches on faster math and SIMD kernel detection.
//!
//! * [`autodiff`]: batched input-derivative jets through an MLP plus a scalar
//!   reverse-mode tape for loss heads.
//! * [`network`]: architecture, initialization and Net2Net widening.
//! * [`multiobjective`]: annealed weights, gradient surgery, weighted sums.
//! * [`optimizer`]: Adam and reduce-on-plateau scheduling.
//! * [`problems`]: the benchmark boundary-value problems and their losses.
//! * [`labels`]: coarse auxiliary label sources.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod labels;
pub mod linalg;
pub mod math;
pub mod multiobjective;
pub mod network;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod trainable;

pub use error::{Error, Result};
pub use trainable::TrainableVector;
