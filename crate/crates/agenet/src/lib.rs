//! Convolutional age estimation from face images.
//!
//! The crate covers the whole pipeline: dense tensors and a deterministic
//! PRNG ([`tensor`], [`rng`]), the layer zoo ([`nn`]), categorical
//! cross-entropy and optimizers ([`loss`], [`optim`]), network assembly and
//! serialization ([`model`]), the image/label pipeline ([`data`]), and
//! training, evaluation, and hyperparameter search ([`train`]).
//!
//! Everything random takes an explicit seed; two runs with the same seed and
//! inputs produce bit-identical outputs.

pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
