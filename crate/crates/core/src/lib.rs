//! Look-ahead active learning with learnable data augmentation.
//!
//! The engine scores *pairs* of unlabeled instances by the predictive entropy
//! of each instance plus the expected entropy of their mixed virtual
//! instance. The mixing concentration comes from a small policy network that
//! is trained, through implicit reparameterization of Beta samples, to make
//! the virtual instance as uncertain as possible for the current classifier.
//!
//! Module map:
//!
//! - [`autodiff`]: tensors and the reverse-mode tape
//! - [`classifier`]: layered MLP with split forward passes and MC dropout
//! - [`beta`]: symmetric Beta sampling, CDF, inverse CDF and `dλ/dτ`
//! - [`acquisition`]: entropy, variation ratio, BALD, pair scores, selection
//! - [`policy`]: the concentration generator and its training loop
//! - [`stn`]: differentiable affine warps trained for entropy
//! - [`data`]: two-moons, IDX and CSV datasets, splitting into pools
//! - [`engine`]: the acquisition round state machine
//! - [`config`], [`experiment`]: run configuration, CSV/manifest output
//! - [`service`]: HTTP session API with a human oracle
//! - [`verify`]: oracle suites exposed by `lada verify`

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod acquisition;
pub mod autodiff;
pub mod beta;
pub mod classifier;
pub mod config;
pub mod data;
pub mod engine;
mod error;
pub mod experiment;
pub mod policy;
pub mod rng;
pub mod service;
pub mod stn;
pub mod verify;

pub use error::{Error, Result};
