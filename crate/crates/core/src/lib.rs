//! Inference of cooperative gating in ensembles of ion channels.
//!
//! Only the summed conductance of `L` channels is observable, through a
//! low-pass filter and non-Gaussian noise. The analysis runs in three stages:
//!
//! 1. [`idealise`]: multiscale quantile segmentation of the noisy recording
//!    into a piecewise-constant conductance.
//! 2. [`discretise`]: equal-spacing clustering of the idealised levels into
//!    open-channel counts `0..=L`.
//! 3. [`infer`]: minimum-distance fit of a vector-norm-dependent Markov chain
//!    to the transition frequencies of the count process, followed by a
//!    cooperativity verdict.
//!
//! [`vnd`] and [`signal`] provide the forward model used for simulation,
//! [`diagnostics`] the Markov-property test and dwell-time fits, and
//! [`pipeline`] / [`studies`] wire the stages together.

// `!(x > 0.0)` is the NaN-rejecting form throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod discretise;
pub mod error;
pub mod idealise;
pub mod infer;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod studies;
pub mod vnd;

pub use error::{Error, Result};
