//! Point-cloud toolkit for locating fruit picking points.
//!
//! The pipeline runs hand-eye calibration ([`geometry`]), multi-view stitching
//! ([`stitch`]), color/statistical filtering and voxel downsampling
//! ([`preprocess`]), a sparse-convolutional detector with channel attention
//! ([`sparsenn`]) and detection scoring ([`eval`]). [`synth`] produces
//! scenes, views and calibration runs with exact ground truth.

pub mod geometry;
pub mod pointcloud;
pub mod preprocess;
pub mod stitch;
pub mod synth;
pub mod eval;
pub mod sparsenn;
pub mod cli;

pub use geometry::{CalibrationSample, GeometryError, RigidTransform};
pub use pointcloud::{ColoredPoint, ColoredPointCloud};
