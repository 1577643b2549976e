//! Hybrid GAN: a transformer generator trained against a spectrally-normalized
//! convolutional discriminator, with FID/IS metrics and azimuthal power-spectrum
//! analysis of generated images.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dataio;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod spectrum;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};
