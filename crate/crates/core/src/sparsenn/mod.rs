//! Sparse voxel tensors and forward inference for the SE-residual detector.
//!
//! All arithmetic is f64; weight files store f32. Every reduction runs in a
//! fixed order (kernel offsets, then canonical coordinates), so outputs do
//! not depend on hash iteration order, row order or thread count.

mod attention;
pub mod constructed;
mod conv;
mod network;
mod tensor;
mod weights;

use thiserror::Error;

pub use attention::{global_avg_pool, se_forward, se_res_block, sigmoid, SeResBlock, SeWeights};
pub use conv::{
    add_union, block2_offsets, center_offset, cube3_offsets, downsample_conv, prune, relu, sparse_conv,
    submanifold_conv, transposed_conv, SparseKernel,
};
pub use network::{
    backbone_forward, decode_detections, detect, head_forward, neck_forward, DecodeParams, DetectParams,
    HeadOutput, Network, NetworkConfig, Stage, LEVELS, PRUNE_THRESHOLD,
};
pub use tensor::{build_sparse_tensor, Coord, SparseTensor};
pub use weights::{load_weights, save_weights, NetworkWeights, WeightTensor, WEIGHT_FORMAT_VERSION, WEIGHT_MAGIC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("layer {layer}: {msg}")]
    ShapeMismatch { layer: String, msg: String },
    #[error("missing layer {0}")]
    MissingLayer(String),
    #[error("score count {got} does not match {expected} sites")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("weights built for '{found}', network expects '{expected}'")]
    Fingerprint { expected: String, found: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}
