//! Simulation core for cognitive semantic satellite links.
//!
//! Everything in this crate is pure computation over `alloc` collections:
//! LEO geometry and link budget, complex-baseband fading channels, PSK/APSK
//! modulation, a small dense neural-network substrate, the discrete
//! codebook-based semantic coding pipeline, and the covariance-augmented
//! meta-training loop with its federated-averaging baseline.
//!
//! File formats, configuration parsing, parallel experiment orchestration
//! and the command line live in the `semcom` companion crate.

#![no_std]
// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod channel;
pub mod csa;
pub mod dataset;
pub mod dtjscc;
mod error;
pub mod geometry;
mod math;
pub mod modem;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64 as ComplexSample;
