//! Deep clustering of audio clips with a depthwise separable convolutional
//! autoencoder.
//!
//! The pipeline turns clips into 128x156 log-mel features ([`audio`]),
//! learns 10-dimensional embeddings with an autoencoder ([`model`]), and
//! refines a student-t clustering layer jointly with the autoencoder
//! ([`cluster`]). [`metrics`] scores the result against reference labels.
//! Everything runs on the small autodiff engine in [`tensor`].

pub mod audio;
pub mod cluster;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
