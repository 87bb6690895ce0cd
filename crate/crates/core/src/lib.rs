// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod experiment;
pub(crate) mod io;
pub mod metrics;
pub mod prior;
pub mod reference;
pub mod schedule;

pub use error::{Error, Result};
