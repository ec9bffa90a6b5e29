//! Color filter, statistical outlier filter and voxel-grid downsampling.

mod kdtree;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{ColoredPoint, ColoredPointCloud};

pub use kdtree::{squared_distance, KdTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("insufficient points for k-NN statistics: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("empty cloud")]
    EmptyCloud,
    #[error("invalid parameter {name}: {msg}")]
    InvalidParam { name: &'static str, msg: String },
}

fn invalid(name: &'static str, msg: impl Into<String>) -> PreprocessError {
    PreprocessError::InvalidParam {
        name,
        msg: msg.into(),
    }
}

/// Red/green channel thresholds. A point survives when `red > sigma1` and
/// `green <= sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorFilterParams {
    pub sigma1: u8,
    pub sigma2: u8,
}

impl Default for ColorFilterParams {
    fn default() -> Self {
        Self {
            sigma1: 100,
            sigma2: 150,
        }
    }
}

impl ColorFilterParams {
    pub fn new(sigma1: i64, sigma2: i64) -> Result<Self, PreprocessError> {
        let check = |name, v: i64| {
            u8::try_from(v).map_err(|_| invalid(name, format!("{v} outside [0, 255]")))
        };
        Ok(Self {
            sigma1: check("sigma1", sigma1)?,
            sigma2: check("sigma2", sigma2)?,
        })
    }

    #[inline]
    pub fn keeps(&self, p: &ColoredPoint) -> bool {
        p.red() > self.sigma1 && p.green() <= self.sigma2
    }
}

/// Neighbor count and interval half-width multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatFilterParams {
    pub k: usize,
    pub alpha_v: f64,
}

impl Default for StatFilterParams {
    fn default() -> Self {
        Self { k: 20, alpha_v: 2.0 }
    }
}

impl StatFilterParams {
    pub fn new(k: usize, alpha_v: f64) -> Result<Self, PreprocessError> {
        if k < 1 {
            return Err(invalid("knn", "must be at least 1"));
        }
        if !(alpha_v > 0.0 && alpha_v < 3.0) {
            return Err(invalid("alpha-v", format!("{alpha_v} outside (0, 3)")));
        }
        Ok(Self { k, alpha_v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelParams {
    pub voxel_size: f64,
}

impl Default for VoxelParams {
    fn default() -> Self {
        Self { voxel_size: 0.01 }
    }
}

impl VoxelParams {
    pub fn new(voxel_size: f64) -> Result<Self, PreprocessError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(invalid("voxel-size", format!("{voxel_size} is not a positive length")));
        }
        Ok(Self { voxel_size })
    }
}

pub fn color_filter(cloud: &ColoredPointCloud, params: &ColorFilterParams) -> ColoredPointCloud {
    cloud.select(|_, p| params.keeps(p))
}

/// Mean distance from every point to its `k` nearest neighbors (self excluded).
pub fn mean_knn_distances(cloud: &ColoredPointCloud, k: usize) -> Vec<f64> {
    let positions: Vec<[f64; 3]> = cloud.points().iter().map(|p| p.position).collect();
    let tree = KdTree::build(&positions);
    positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let d2 = tree.knn_squared(p, k, Some(i));
            // ascending order; ties carry identical values so the sum is order-stable
            d2.iter().map(|v| v.sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Keeps points whose mean k-NN distance lies in `[μ − α·σ, μ + α·σ]`.
pub fn statistical_filter(
    cloud: &ColoredPointCloud,
    params: &StatFilterParams,
) -> Result<ColoredPointCloud, PreprocessError> {
    let needed = params.k + 1;
    if cloud.len() < needed {
        return Err(PreprocessError::InsufficientPoints {
            needed,
            got: cloud.len(),
        });
    }
    let d = mean_knn_distances(cloud, params.k);
    let (mu, sigma) = mean_and_std(&d);
    let lo = mu - params.alpha_v * sigma;
    let hi = mu + params.alpha_v * sigma;
    Ok(cloud.select(|i, _| d[i] >= lo && d[i] <= hi))
}

/// Integer voxel index of `p` for a grid anchored at `origin`.
#[inline]
pub fn voxel_index(p: &[f64; 3], origin: &[f64; 3], voxel_size: f64) -> [i64; 3] {
    [0, 1, 2].map(|a| ((p[a] - origin[a]) / voxel_size).floor() as i64)
}

#[derive(Default, Clone, Copy)]
struct VoxelAccum {
    sum: [f64; 3],
    color: [u64; 3],
    count: u64,
}

/// Centroid downsampling with the grid anchored at the cloud's minimum bound.
pub fn voxel_downsample(
    cloud: &ColoredPointCloud,
    params: &VoxelParams,
) -> Result<ColoredPointCloud, PreprocessError> {
    let (origin, _) = cloud.bounds().ok_or(PreprocessError::EmptyCloud)?;
    voxel_downsample_with_origin(cloud, params, origin)
}

/// Centroid downsampling on a grid anchored at `origin`. One output point per
/// occupied voxel, sorted by voxel index; colors are rounded channel means.
pub fn voxel_downsample_with_origin(
    cloud: &ColoredPointCloud,
    params: &VoxelParams,
    origin: [f64; 3],
) -> Result<ColoredPointCloud, PreprocessError> {
    if cloud.is_empty() {
        return Err(PreprocessError::EmptyCloud);
    }
    let mut voxels: HashMap<[i64; 3], VoxelAccum> = HashMap::new();
    for p in cloud.points() {
        let acc = voxels
            .entry(voxel_index(&p.position, &origin, params.voxel_size))
            .or_default();
        for a in 0..3 {
            acc.sum[a] += p.position[a];
            acc.color[a] += u64::from(p.color[a]);
        }
        acc.count += 1;
    }
    let mut cells: Vec<([i64; 3], VoxelAccum)> = voxels.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    let points = cells
        .into_iter()
        .map(|(_, acc)| {
            let n = acc.count as f64;
            ColoredPoint {
                position: acc.sum.map(|s| s / n),
                color: acc.color.map(|c| ((c + acc.count / 2) / acc.count) as u8),
            }
        })
        .collect();
    Ok(ColoredPointCloud::new(
        points,
        cloud.frame_label().map(str::to_owned),
    ))
}
