//! Differentiable tensor kernels and the frequency-filtered selective
//! state-space forecaster built from them.
//!
//! Everything in this crate is pure computation over heap buffers: tensors,
//! a reverse-mode op tape, FFT/filtering, RBF smoothing, the selective-scan
//! encoders, the damped-cosine prediction head, the optimizer, metrics, and
//! dataset/windowing/synthesis utilities. File formats, CSV parsing and the
//! command-line driver live in the companion `fldmamba-cli` crate.
//!
//! The crate builds without `std` (an allocator is required); transcendental
//! functions fall back to `libm` when the `std` feature is disabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod fmamba;
pub mod graph;
mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod smoothing;
pub mod spectral;
pub mod ssm;
pub mod tensor;

pub use error::{CoreError, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
