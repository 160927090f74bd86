//! Diagonal neural networks on a Fourier embedding of `[-1, 1]`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod model;
pub mod spectral;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
