//! Inference engine restricted to conv 3×3 (stride 1/2), transposed conv 2×2,
//! ReLU, Add, a 1×1 head and (pre-fusion) batch norm.

pub mod fuse;
pub mod graph;
pub mod int8;
pub mod interp;
pub mod kernels;
pub mod unet;
pub mod weights;

pub use fuse::fuse_bn;
pub use graph::{ExecHook, Graph, NoHook, OpClass, OpKind, OpNode, Param, ParamMap, Src};
pub use int8::{conv2d_int8, QTensor, QWeights};
pub use interp::{interpolate, Interpolated};
pub use unet::{build_unet, build_unet_random, UNetConfig};
pub use weights::{load_weights, save_weights};
