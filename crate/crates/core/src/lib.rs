// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod layers;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases used by the pipeline and the command line.
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Seq2SeqModel = models::Seq2SeqModel<f64>;
pub type LinearModel = baselines::LinearModel<f64>;
pub type ARModel = baselines::ARModel<f64>;
