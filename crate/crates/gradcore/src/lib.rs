//! Minimal reverse-mode autodiff for small convolutional classifiers.
//!
//! The crate provides exactly what a semi-supervised training loop needs:
//! dense [`Tensor`]s, a recording [`Graph`] with conv/normalization/pooling/
//! affine/cross-entropy ops, a [`Model`] with an EMA shadow, momentum
//! [`Sgd`], and a binary checkpoint format.

pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use error::{GradError, Result};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use model::{Architecture, Forward, Layer, Mode, Model, Weights};
pub use optim::Sgd;
pub use scalar::Scalar;
pub use tensor::Tensor;
