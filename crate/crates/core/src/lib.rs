//! Self-supervised transformer tracking at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), box
//! geometry and cropping ([`geometry`]), a joint-attention tracker
//! ([`model`]), tracking and instance contrastive objectives ([`losses`]),
//! view augmentation ([`augment`]), a synthetic video generator
//! ([`synth`]), the forward/backward cycle training pipeline ([`pipeline`])
//! and evaluation ([`eval`]).

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod selftest;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
