//! Rigid transforms in SE(3) and closed-loop hand-eye calibration.
//!
//! Transforms use the column-vector convention: `T * p` maps a point from the
//! source frame of `T` into its target frame, and `a.compose(&b)` applies `b`
//! first.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::ColoredPointCloud;

/// Orthonormality / determinant tolerance accepted for a rotation block.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no calibration samples")]
    NoSamples,
    #[error("degenerate rotation average")]
    DegenerateRotation,
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("pose_index must be >= 1 (got {0})")]
    BadPoseIndex(i64),
}

/// An element of SE(3) stored as a 4x4 homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    /// Builds a transform from a rotation and a translation in meters.
    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        let mut matrix = Matrix4::identity();
        matrix
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(rotation.matrix());
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(Rotation3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about an axis through the origin, angle in radians.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let rot = Rotation3::from_scaled_axis(axis.normalize() * angle);
        Self::from_parts(rot, Vector3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), angle)
    }

    /// Validates a homogeneous matrix against the SE(3) invariants.
    pub fn try_from_matrix(matrix: Matrix4<f64>) -> Result<Self, GeometryError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite entry".into()));
        }
        let bottom = [matrix[(3, 0)], matrix[(3, 1)], matrix[(3, 2)], matrix[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidTransform(format!(
                "bottom row must be (0, 0, 0, 1), got {bottom:?}"
            )));
        }
        let r: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        let det = r.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation block not in SO(3): |R^T R - I|max = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self { matrix })
    }

    /// Parses 16 row-major numbers.
    pub fn try_from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 16 {
            return Err(GeometryError::InvalidTransform(format!(
                "expected 16 numbers, got {}",
                values.len()
            )));
        }
        Self::try_from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// `self · other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut matrix = self.matrix * other.matrix;
        // the product of two exact bottom rows is exact, but keep it literal
        matrix[(3, 0)] = 0.0;
        matrix[(3, 1)] = 0.0;
        matrix[(3, 2)] = 0.0;
        matrix[(3, 3)] = 1.0;
        RigidTransform { matrix }
    }

    /// Closed-form inverse `[Rᵀ, −Rᵀp]`.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        RigidTransform { matrix }
    }

    #[inline]
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)] * p[2] + m[(0, 3)],
            m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)] * p[2] + m[(1, 3)],
            m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)] * p[2] + m[(2, 3)],
        ]
    }

    /// Maps every position of `cloud`; colors, order and frame label are kept.
    pub fn apply(&self, cloud: &ColoredPointCloud) -> ColoredPointCloud {
        let points = cloud
            .points()
            .iter()
            .map(|p| p.with_position(self.transform_point(p.position)))
            .collect();
        ColoredPointCloud::from_points_unchecked(points, cloud.frame_label().map(str::to_owned))
    }
}

/// Chordal rotation distance ‖R₁ − R₂‖_F.
pub fn chordal_distance(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.rotation() - b.rotation()).norm()
}

/// Rotation angle (radians) corresponding to a chordal distance.
pub fn chordal_to_angle(chordal: f64) -> f64 {
    2.0 * (chordal / (2.0 * std::f64::consts::SQRT_2)).min(1.0).asin()
}

pub fn translation_distance(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.translation() - b.translation()).norm()
}

/// Projects a 4x4 matrix onto SE(3): the rotation block is replaced by the
/// closest rotation in the Frobenius sense (SVD, det forced to +1), the
/// translation column is copied and the bottom row reset.
pub fn project_to_se3(m: &Matrix4<f64>) -> Result<RigidTransform, GeometryError> {
    let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let det = block.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(GeometryError::DegenerateRotation);
    }
    let svd = block.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateRotation),
    };
    let sign = (u * v_t).determinant().signum();
    let rot = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    let mut matrix = Matrix4::identity();
    matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    matrix
        .fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&m.fixed_view::<3, 1>(0, 3));
    Ok(RigidTransform { matrix })
}

/// One robot pose of the calibration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub pose_index: u32,
    /// Board pose measured by the camera (maps board coordinates to camera coordinates).
    pub board_to_camera: RigidTransform,
    /// Flange pose from forward kinematics (maps flange coordinates to base coordinates).
    pub flange_in_base: RigidTransform,
}

/// Closed-loop hand-eye estimate of the camera pose in the flange frame.
///
/// Averages `(board_to_camera · base_to_board · flange_in_base)⁻¹` over all
/// samples, then projects the arithmetic mean back onto SE(3).
/// `base_to_board` is the fixed board/base relation, the same for every sample.
pub fn estimate_hand_eye(
    samples: &[CalibrationSample],
    base_to_board: &RigidTransform,
) -> Result<RigidTransform, GeometryError> {
    if samples.is_empty() {
        return Err(GeometryError::NoSamples);
    }
    let mut sum = Matrix4::zeros();
    for s in samples {
        let chain = s
            .board_to_camera
            .compose(base_to_board)
            .compose(&s.flange_in_base);
        sum += chain.inverse().matrix;
    }
    let mean = sum / samples.len() as f64;
    project_to_se3(&mean)
}

/// On-disk shape of a calibration sample set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    /// Fixed base-to-board transform, 16 row-major numbers.
    pub board_in_base: Vec<f64>,
    #[serde(default)]
    pub samples: Vec<CalibrationSampleRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSampleRecord {
    pub pose_index: i64,
    pub board_to_camera: Vec<f64>,
    pub flange_in_base: Vec<f64>,
}

impl CalibrationFile {
    pub fn new(samples: &[CalibrationSample], base_to_board: &RigidTransform) -> Self {
        Self {
            board_in_base: base_to_board.to_row_major().to_vec(),
            samples: samples
                .iter()
                .map(|s| CalibrationSampleRecord {
                    pose_index: i64::from(s.pose_index),
                    board_to_camera: s.board_to_camera.to_row_major().to_vec(),
                    flange_in_base: s.flange_in_base.to_row_major().to_vec(),
                })
                .collect(),
        }
    }

    /// Validates every transform and returns `(samples, base_to_board)`.
    pub fn decode(&self) -> Result<(Vec<CalibrationSample>, RigidTransform), GeometryError> {
        let board = RigidTransform::try_from_row_major(&self.board_in_base)?;
        let samples = self
            .samples
            .iter()
            .map(|r| {
                if r.pose_index < 1 || r.pose_index > i64::from(u32::MAX) {
                    return Err(GeometryError::BadPoseIndex(r.pose_index));
                }
                Ok(CalibrationSample {
                    pose_index: r.pose_index as u32,
                    board_to_camera: RigidTransform::try_from_row_major(&r.board_to_camera)?,
                    flange_in_base: RigidTransform::try_from_row_major(&r.flange_in_base)?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((samples, board))
    }
}

/// Serializable wrapper for a single transform (the calibration output).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandEyeFile {
    pub hand_eye: Vec<f64>,
}
