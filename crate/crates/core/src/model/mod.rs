//! Forward and gradient evaluation for the two-layer diagonal network and its
//! deep variants.

mod checkpoint;
mod deep;
mod diag;

use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use deep::{
    forward_batch, forward_deep, grad_batch, grad_deep_sample, init_glorot, init_glorot_diagonal,
    DeepGrad, DeepNetParams, DenseLayer, DEFAULT_HIDDEN_WIDTH,
};
pub use diag::{
    forward_diag, forward_diag_slice, grad_diag_sample, h_vector, init_symmetric_c,
    init_symmetric_c_doubled, population_grad_w, DiagGrad, DiagNetParams,
};

/// Pointwise nonlinearity of the diagonal layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with `σ'(0) = 0` for ReLU.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
