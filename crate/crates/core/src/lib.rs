//! Mixture of spectral Gaussian processes on regular lattices.

pub mod dataset;
pub mod error;
pub mod kernels;
pub mod mixture;
pub mod predict;
pub mod sampler;
pub mod simdata;
pub mod spectral;
pub mod summary;

pub use error::{MsgpError, Result};
