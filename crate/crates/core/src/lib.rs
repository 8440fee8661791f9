//! Ship-chip recognition with selective feature discrimination and a
//! multi-feature-center cosine classifier, built on a small reverse-mode
//! tensor core.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what training, checkpoints
//! and the gradient checks use.

pub mod data;
pub mod error;
pub mod extractor;
pub mod mfcc;
pub mod numcore;
pub mod rng;
pub mod scalar;
pub mod sfd;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type Tape = numcore::Tape<f64>;
pub type Extractor = extractor::Extractor<f64>;
pub type CenterBank = mfcc::CenterBank<f64>;
pub type ClassProbs = mfcc::ClassProbs<f64>;
pub type MinedPairs = sfd::MinedPairs<f64>;
pub type Dataset = data::Dataset<f64>;
pub type Sample = data::Sample<f64>;
pub type Model = trainer::Model<f64>;
