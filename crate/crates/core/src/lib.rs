//! Residual cosine/Euclidean ("R-Codean") autoencoders and a patch-based
//! facial attribute prediction pipeline built on them.
//!
//! The numeric core ([`tensor`], [`layers`], [`net`], [`optim`], [`train`])
//! is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix it to
//! `f64`, which is what the pipeline and the bundle format use.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = tensor::Mat<f64>;
pub type Mat32 = tensor::Mat<f32>;
pub type DenseLayer64 = layers::DenseLayer<f64>;
pub type RCodeanNet64 = net::RCodeanNet<f64>;
pub type RCodeanNet32 = net::RCodeanNet<f32>;
