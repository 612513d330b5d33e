//! Unsupervised MRI super-resolution with a learned k-space consistency
//! prior.
//!
//! The crate contains a small reverse-mode autodiff engine ([`autodiff`]),
//! Fourier-domain and Sinc degradation operators ([`kspace`]), the `f` and
//! `g` networks ([`models`]), the training objectives ([`losses`]), synthetic
//! data tooling ([`data`]) and the training and evaluation drivers
//! ([`train`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kspace;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, FormatError, Result};
pub use models::{Checkpoint, GNet, ModelConfig, Network, SrNet};
pub use tensor::{DType, Scalar, Tensor};
