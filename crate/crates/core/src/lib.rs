//! Frame interpolation from codec motion vectors.
//!
//! Block vectors exported by a video decoder are densified and smoothed into a
//! flow field, both neighbouring frames are warped to the temporal midpoint,
//! and a small residual network restricted to integer-friendly operators
//! corrects the blend. The crate also carries a W8A8 quantization simulator,
//! quality metrics, synthetic ground-truth sequences and an operator
//! microbenchmark harness.

pub mod bench;
pub mod error;
pub mod metrics;
pub mod mv;
pub mod nnet;
pub mod prealign;
pub mod quant;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{FloatImage, FlowField, Image, Tensor};
