//! Dense prediction for snowy street scenes: an FCN-8 network built on
//! hand-written CPU tensor kernels, a class-ID dataset loader, confusion-matrix
//! IoU evaluation and a minibatch SGD trainer.

pub mod dataset;
pub mod error;
pub mod label;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use label::LabelMap;
pub use model::{ModelConfig, NetworkGraph, ParamSet};
pub use tensor::{Shape, Tensor};
