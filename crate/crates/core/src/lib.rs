//! Deconvolution accelerator modelling toolkit.
//!
//! The crate rewrites stride-`S` transposed convolutions as `S²` sparse
//! convolutions whose outputs interleave into the upscaled map, schedules the
//! resulting nonzero MACs onto a modelled PE array, estimates cycles and FPGA
//! resources, and runs a fixed-point super-resolution pipeline that can be
//! checked against brute-force floating-point references.

pub mod dataflow;
pub mod error;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod presets;
pub mod quant;
pub mod reference;
pub mod scheduler;
pub mod tdc;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    build_fsrcnn, ConvLayerSpec, DeconvLayerSpec, FsrcnnConfig, Layer, NetworkSpec, Tensor3,
};
