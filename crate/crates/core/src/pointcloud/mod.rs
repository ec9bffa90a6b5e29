//! Colored point clouds and their file formats.

mod pcd;
mod ply;

use std::path::Path;

use thiserror::Error;

pub use pcd::read_pcd;
pub use ply::{read_ply, write_ply, write_ply_to};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported property: {0}")]
    UnsupportedProperty(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated data: expected {expected} points, read {read}")]
    Truncated { expected: usize, read: usize },
    #[error("invalid point {index}: {msg}")]
    InvalidPoint { index: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CloudError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CloudError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A 3D point in meters with an 8-bit RGB color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f64; 3],
    pub color: [u8; 3],
}

impl ColoredPoint {
    /// Fails on non-finite coordinates.
    pub fn new(position: [f64; 3], color: [u8; 3]) -> Result<Self, CloudError> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(CloudError::InvalidPoint {
                index: 0,
                msg: format!("non-finite coordinate {position:?}"),
            });
        }
        Ok(Self { position, color })
    }

    #[inline]
    pub fn with_position(&self, position: [f64; 3]) -> Self {
        Self {
            position,
            color: self.color,
        }
    }

    #[inline]
    pub fn red(&self) -> u8 {
        self.color[0]
    }

    #[inline]
    pub fn green(&self) -> u8 {
        self.color[1]
    }

    #[inline]
    pub fn blue(&self) -> u8 {
        self.color[2]
    }
}

/// Ordered point sequence with an optional frame tag such as `"camera:A"` or `"base"`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointCloud {
    points: Vec<ColoredPoint>,
    frame_label: Option<String>,
}

impl ColoredPointCloud {
    pub fn new(points: Vec<ColoredPoint>, frame_label: Option<String>) -> Self {
        debug_assert!(points
            .iter()
            .all(|p| p.position.iter().all(|v| v.is_finite())));
        Self {
            points,
            frame_label,
        }
    }

    /// Callers guarantee finite coordinates (e.g. rigid maps of a valid cloud).
    pub(crate) fn from_points_unchecked(
        points: Vec<ColoredPoint>,
        frame_label: Option<String>,
    ) -> Self {
        Self {
            points,
            frame_label,
        }
    }

    /// Checks every coordinate.
    pub fn try_new(
        points: Vec<ColoredPoint>,
        frame_label: Option<String>,
    ) -> Result<Self, CloudError> {
        if let Some(index) = points
            .iter()
            .position(|p| p.position.iter().any(|v| !v.is_finite()))
        {
            return Err(CloudError::InvalidPoint {
                index,
                msg: "non-finite coordinate".into(),
            });
        }
        Ok(Self {
            points,
            frame_label,
        })
    }

    pub fn points(&self) -> &[ColoredPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<ColoredPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame_label(&self) -> Option<&str> {
        self.frame_label.as_deref()
    }

    pub fn with_frame_label(mut self, label: impl Into<String>) -> Self {
        self.frame_label = Some(label.into());
        self
    }

    /// Keeps the points for which `keep` holds, in order.
    pub fn select(&self, mut keep: impl FnMut(usize, &ColoredPoint) -> bool) -> Self {
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, p)| keep(*i, p))
            .map(|(_, p)| *p)
            .collect();
        Self {
            points,
            frame_label: self.frame_label.clone(),
        }
    }

    /// Per-axis (min, max); `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.points.first()?.position;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p.position[a]);
                hi[a] = hi[a].max(p.position[a]);
            }
        }
        Some((lo, hi))
    }

    /// Positions rounded through f32, the precision stored in PLY files.
    pub fn quantized_f32(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| p.with_position(p.position.map(|v| f64::from(v as f32))))
            .collect();
        Self {
            points,
            frame_label: self.frame_label.clone(),
        }
    }
}

/// Block concatenation; the label of the first labelled input is kept.
pub fn concat(clouds: &[ColoredPointCloud]) -> ColoredPointCloud {
    let total = clouds.iter().map(ColoredPointCloud::len).sum();
    let mut points = Vec::with_capacity(total);
    for c in clouds {
        points.extend_from_slice(&c.points);
    }
    let frame_label = clouds.iter().find_map(|c| c.frame_label.clone());
    ColoredPointCloud {
        points,
        frame_label,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Pcd,
}

impl CloudFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("ply") => Some(CloudFormat::Ply),
            Some("pcd") => Some(CloudFormat::Pcd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<ColoredPointCloud, CloudError> {
    match format {
        CloudFormat::Ply => read_ply(path),
        CloudFormat::Pcd => read_pcd(path),
    }
}

pub fn write_cloud(
    cloud: &ColoredPointCloud,
    path: &Path,
    encoding: PlyEncoding,
) -> Result<(), CloudError> {
    write_ply(cloud, path, encoding)
}
