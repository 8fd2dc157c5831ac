//! Tensor-output Gaussian processes and Bayesian optimization.
//!
//! This crate implements surrogate models for black-box functions whose
//! outputs are multi-mode tensors, together with two sequential
//! optimization loops built on them:
//!
//! - [`togp`] — a tensor-output Gaussian process (TOGP) with separable and
//!   non-separable covariance structure over the tensor entries, exact
//!   posterior inference, marginal-likelihood fitting, rank selection and
//!   a Nyström-accelerated posterior.
//! - [`ptogp`] — the partially observed variant (PTOGP), conditioning on a
//!   `k`-subset of tensor entries per observation.
//! - [`tobo`] — UCB-based query selection over the TOGP surrogate.
//! - [`tocbbo`] — combinatorial-bandit query selection: each round picks an
//!   input *and* a size-`k` super-arm of tensor entries.
//! - [`bench`] — synthetic problem generators, ground-truth oracles and the
//!   evaluation metrics used by the benchmark CLI.
//! - [`oracle`] — brute-force reference implementations (joint-Gaussian
//!   conditioning, exhaustive enumeration, dense grid search) kept
//!   independent of the fast paths they validate.
//!
//! The crate is `no_std`-compatible (with `alloc`); the companion CLI crate
//! carries all IO, file formats and experiment plumbing.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bench;
pub mod error;
mod gp;
pub mod kernels;
pub mod linalg;
pub mod opt;
pub mod oracle;
pub mod ptogp;
pub mod sample;
pub mod tensor;
pub mod tobo;
pub mod tocbbo;
pub mod togp;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
