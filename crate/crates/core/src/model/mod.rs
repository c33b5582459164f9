//! The FCN-8 network: graph construction, parameter initialization,
//! forward/backward execution and parameter files.

mod config;
mod exec;
mod graph;
mod io;
mod params;

pub use config::{
    ModelConfig, WidthScale, INPUT_MULTIPLE, MAX_CLASSES, VGG16_BLOCK_DEPTHS, VGG16_WIDTHS,
};
pub use exec::{backward, forward, forward_trace, predict_labels, Trace};
pub use graph::{build_fcn8, Layer, LayerId, LayerKind, NetworkGraph, ParamKind, ParamSpec};
pub use io::{load_params, read_params, save_params, write_params, MAGIC};
pub use params::{bilinear_kernel, bilinear_profile, init_parameters, ParamSet};
