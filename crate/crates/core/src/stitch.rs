//! Multi-view stitching through calibrated arm kinematics.
//!
//! Every camera-frame view is mapped to the robot base with
//! `flange_in_base · hand_eye` and the results are concatenated in view
//! order. No registration refinement happens here and overlapping regions are
//! left duplicated for the downsampler.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, HandEyeFile, RigidTransform};
use crate::pointcloud::{self, CloudError, CloudFormat, ColoredPointCloud};

pub const BASE_FRAME: &str = "base";

#[derive(Debug, Error)]
pub enum StitchError {
    #[error("no views")]
    NoViews,
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("view {label}: {source}")]
    Transform {
        label: String,
        #[source]
        source: GeometryError,
    },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// One capture: a camera-frame cloud plus the arm pose it was taken at.
#[derive(Debug, Clone)]
pub struct ViewCapture {
    pub cloud: ColoredPointCloud,
    pub flange_in_base: RigidTransform,
    pub view_label: String,
}

/// Maps every view into the base frame and concatenates them in input order.
pub fn stitch_views(
    views: &[ViewCapture],
    hand_eye: &RigidTransform,
) -> Result<ColoredPointCloud, StitchError> {
    if views.is_empty() {
        return Err(StitchError::NoViews);
    }
    let mapped: Vec<ColoredPointCloud> = views
        .par_iter()
        .map(|v| v.flange_in_base.compose(hand_eye).apply(&v.cloud))
        .collect();
    Ok(pointcloud::concat(&mapped).with_frame_label(BASE_FRAME))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestView {
    pub label: String,
    /// Cloud path, relative to the manifest's directory unless absolute.
    pub cloud: String,
    pub flange_in_base: Vec<f64>,
}

/// View-set manifest. Exactly one of `hand_eye` / `hand_eye_file` is given;
/// the file form points at a calibration output (`{"hand_eye": [...]}`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewManifest {
    /// Ground-truth scene id of the captured scene, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_eye: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_eye_file: Option<String>,
    pub views: Vec<ManifestView>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a manifest together with every referenced cloud.
pub fn read_manifest(path: &Path) -> Result<ViewManifest, StitchError> {
    let bad = |msg: String| StitchError::Manifest {
        path: path.display().to_string(),
        msg,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
}

pub fn load_manifest(path: &Path) -> Result<(Vec<ViewCapture>, RigidTransform), StitchError> {
    let bad = |msg: String| StitchError::Manifest {
        path: path.display().to_string(),
        msg,
    };
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let hand_eye_values = match (&manifest.hand_eye, &manifest.hand_eye_file) {
        (Some(v), None) => v.clone(),
        (None, Some(file)) => {
            let p = resolve(dir, file);
            let text = fs::read_to_string(&p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
            let he: HandEyeFile = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?;
            he.hand_eye
        }
        _ => return Err(bad("exactly one of hand_eye / hand_eye_file is required".into())),
    };
    let hand_eye = RigidTransform::try_from_row_major(&hand_eye_values).map_err(|source| StitchError::Transform {
        label: "hand_eye".into(),
        source,
    })?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for v in &manifest.views {
        let flange_in_base =
            RigidTransform::try_from_row_major(&v.flange_in_base).map_err(|source| StitchError::Transform {
                label: v.label.clone(),
                source,
            })?;
        let cloud_path = resolve(dir, &v.cloud);
        let format = CloudFormat::from_path(&cloud_path)
            .ok_or_else(|| bad(format!("unknown cloud format for {}", cloud_path.display())))?;
        let cloud = pointcloud::read_cloud(&cloud_path, format)?;
        views.push(ViewCapture {
            cloud,
            flange_in_base,
            view_label: v.label.clone(),
        });
    }
    Ok((views, hand_eye))
}
