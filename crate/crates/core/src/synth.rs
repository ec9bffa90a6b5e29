//! Deterministic synthetic orchard scenes, depth-camera views and
//! calibration runs with exact ground truth.
//!
//! World frame is z-up with the robot base at the origin. A horizontal brown
//! branch carries `n_clusters` vertical stems, each above a cluster of red
//! spheres; green leaf patches sit behind the branch. Occluding leaves, when
//! requested, are drawn from a separate random stream and appended after the
//! base scene, so the base scene is identical across occlusion levels.
//!
//! Cameras use the optical convention: +z along the view ray, +x right,
//! +y down.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::BoundingBox3D;
use crate::geometry::{CalibrationSample, RigidTransform};
use crate::pointcloud::{ColoredPoint, ColoredPointCloud};
use crate::stitch::ViewCapture;

pub const FRUIT_RADIUS: f64 = 0.015;
pub const FRUITS_PER_CLUSTER: usize = 5;
pub const BRANCH_RADIUS: f64 = 0.008;
pub const BRANCH_HEIGHT: f64 = 0.14;
pub const CLUSTER_SPACING: f64 = 0.10;
pub const GT_BOX_SIDE: f64 = 0.03;
pub const STEM_COLOR: [u8; 3] = [160, 130, 60];
pub const FRUIT_COLOR: [u8; 3] = [190, 40, 45];
pub const BRANCH_COLOR: [u8; 3] = [115, 75, 40];
pub const LEAF_COLOR: [u8; 3] = [55, 135, 45];
/// Per-channel uniform color jitter amplitude.
pub const COLOR_JITTER: i32 = 10;
pub const IMAGE_SIZE: usize = 512;
pub const HALF_FOV: f64 = PI / 6.0;
pub const MAX_RANGE: f64 = 2.0;
/// Depth slack of the splatted visibility test, meters.
const VISIBILITY_EPS: f64 = 0.005;
const MAX_SPLAT_RADIUS: i64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionLevel {
    #[default]
    None,
    Slight,
    Severe,
}

impl FromStr for OcclusionLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "slight" => Ok(Self::Slight),
            "severe" => Ok(Self::Severe),
            other => Err(format!("unknown occlusion level '{other}' (none, slight, severe)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_clusters: usize,
    /// Radius of the ball the fruit centers of one cluster are drawn in.
    pub cluster_radius: f64,
    pub stem_length: f64,
    pub stem_radius: f64,
    pub leaf_count: usize,
    /// Spacing of the jittered sampling grid laid over every surface.
    pub sampling_pitch: f64,
    pub occlusion_level: OcclusionLevel,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_clusters: 3,
            cluster_radius: 0.035,
            stem_length: 0.04,
            stem_radius: 0.004,
            leaf_count: 130,
            sampling_pitch: 0.0015,
            occlusion_level: OcclusionLevel::None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("cluster_radius", self.cluster_radius),
            ("stem_length", self.stem_length),
            ("stem_radius", self.stem_radius),
            ("sampling_pitch", self.sampling_pitch),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_clusters == 0 {
            return Err(SynthError::InvalidSpec("n_clusters must be at least 1".into()));
        }
        if self.cluster_radius < FRUIT_RADIUS {
            return Err(SynthError::InvalidSpec(format!(
                "cluster_radius must be at least the fruit radius {FRUIT_RADIUS}"
            )));
        }
        Ok(())
    }

    /// Length of the branch spanning all clusters.
    pub fn branch_length(&self) -> f64 {
        self.n_clusters as f64 * CLUSTER_SPACING + 0.06
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Branch,
    Stem,
    Fruit,
    Leaf,
    Occluder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cloud: ColoredPointCloud,
    /// Part of every cloud point, row-aligned with `cloud`.
    pub labels: Vec<PartKind>,
    /// One box per stem, centered on the stem midpoint.
    pub gt_boxes: Vec<BoundingBox3D>,
    /// Noise-free samples of stem and fruit surfaces at half the pitch.
    pub surface_samples: Vec<[f64; 3]>,
    pub fruit_spheres: Vec<([f64; 3], f64)>,
}

impl SyntheticScene {
    /// Number of fruit points in a cloud row-aligned with `labels`.
    pub fn count_kind(&self, kind: PartKind) -> usize {
        self.labels.iter().filter(|k| **k == kind).count()
    }

    /// Center of the scene's bounding volume used for aiming cameras.
    pub fn focus(&self) -> [f64; 3] {
        [0.0, 0.0, 0.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub depth_sigma: f64,
    pub dropout_rate: f64,
    /// Degrees, per rotation-vector axis.
    pub pose_rot_sigma: f64,
    pub pose_trans_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma: 0.001,
            dropout_rate: 0.02,
            pose_rot_sigma: 0.1,
            pose_trans_sigma: 0.001,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            depth_sigma: 0.0,
            dropout_rate: 0.0,
            pose_rot_sigma: 0.0,
            pose_trans_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fields = [
            ("depth_sigma", self.depth_sigma),
            ("pose_rot_sigma", self.pose_rot_sigma),
            ("pose_trans_sigma", self.pose_trans_sigma),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::InvalidNoise(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(SynthError::InvalidNoise(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3]) -> [u8; 3] {
    base.map(|c| (i32::from(c) + rng.random_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0, 255) as u8)
}

fn orthonormal_pair(n: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Jittered `nu × nv` grid over the unit square, row-major.
fn stratified(rng: &mut ChaCha8Rng, nu: usize, nv: usize) -> Vec<(f64, f64)> {
    let (nu, nv) = (nu.max(1), nv.max(1));
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let s = (i as f64 + rng.random::<f64>()) / nu as f64;
            let t = (j as f64 + rng.random::<f64>()) / nv as f64;
            out.push((s, t));
        }
    }
    out
}

fn cells(length: f64, pitch: f64) -> usize {
    ((length / pitch).round() as usize).max(1)
}

/// Area-uniform stratified samples over a sphere, via the (z, φ) cylinder map.
fn sphere_samples(rng: &mut ChaCha8Rng, c: [f64; 3], r: f64, pitch: f64) -> Vec<[f64; 3]> {
    stratified(rng, cells(2.0 * r, pitch), cells(TAU * r, pitch))
        .into_iter()
        .map(|(s, t)| {
            let z = 2.0 * s - 1.0;
            let phi = TAU * t;
            let q = (1.0 - z * z).sqrt();
            [c[0] + r * q * phi.cos(), c[1] + r * q * phi.sin(), c[2] + r * z]
        })
        .collect()
}

/// Stratified samples over the side of the cylinder from `a` to `b`.
fn cylinder_samples(rng: &mut ChaCha8Rng, a: [f64; 3], b: [f64; 3], r: f64, pitch: f64) -> Vec<[f64; 3]> {
    let axis = Vector3::from(b) - Vector3::from(a);
    let (u, v) = orthonormal_pair(axis.normalize());
    stratified(rng, cells(axis.norm(), pitch), cells(TAU * r, pitch))
        .into_iter()
        .map(|(s, t)| {
            let phi = TAU * t;
            let p = Vector3::from(a) + axis * s + (u * phi.cos() + v * phi.sin()) * r;
            [p.x, p.y, p.z]
        })
        .collect()
}

/// Flat elliptical patch with semi-axes `(a, b)` along `(u, v)`.
#[derive(Debug, Clone, Copy)]
struct Patch {
    center: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    a: f64,
    b: f64,
}

impl Patch {
    /// Patch facing `normal`, with the major axis turned by `spin` in-plane.
    fn new(center: [f64; 3], normal: Vector3<f64>, spin: f64, a: f64, b: f64) -> Self {
        let (u0, v0) = orthonormal_pair(normal.normalize());
        let u = u0 * spin.cos() + v0 * spin.sin();
        let v = normal.normalize().cross(&u);
        Self {
            center: Vector3::from(center),
            u,
            v,
            a,
            b,
        }
    }

    /// Stratified samples over the bounding rectangle, kept inside the ellipse.
    fn samples(&self, rng: &mut ChaCha8Rng, pitch: f64) -> Vec<[f64; 3]> {
        stratified(rng, cells(2.0 * self.a, pitch), cells(2.0 * self.b, pitch))
            .into_iter()
            .filter_map(|(s, t)| {
                let (x, y) = (2.0 * s - 1.0, 2.0 * t - 1.0);
                (x * x + y * y <= 1.0).then(|| {
                    let p = self.center + self.u * (self.a * x) + self.v * (self.b * y);
                    [p.x, p.y, p.z]
                })
            })
            .collect()
    }
}

fn facing_front(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let tilt_x: f64 = rng.random_range(-0.4..0.4);
    let tilt_z: f64 = rng.random_range(-0.4..0.4);
    (Rotation3::from_euler_angles(tilt_x, 0.0, tilt_z) * -Vector3::y()).normalize()
}

struct Builder {
    points: Vec<ColoredPoint>,
    labels: Vec<PartKind>,
    pitch: f64,
}

impl Builder {
    fn push(&mut self, p: [f64; 3], color: [u8; 3], kind: PartKind) {
        self.points.push(ColoredPoint { position: p, color });
        self.labels.push(kind);
    }

    fn patch(&mut self, rng: &mut ChaCha8Rng, patch: &Patch, color: [u8; 3], kind: PartKind) {
        for p in patch.samples(rng, self.pitch) {
            let c = jitter(rng, color);
            self.push(p, c, kind);
        }
    }
}

/// Deterministic scene for `spec`; equal specs give bit-identical scenes.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pitch = spec.sampling_pitch;
    let mut b = Builder {
        points: Vec::new(),
        labels: Vec::new(),
        pitch,
    };
    let half = spec.branch_length() / 2.0;

    let branch_a = [-half, 0.0, BRANCH_HEIGHT];
    let branch_b = [half, 0.0, BRANCH_HEIGHT];
    for p in cylinder_samples(&mut rng, branch_a, branch_b, BRANCH_RADIUS, pitch) {
        let c = jitter(&mut rng, BRANCH_COLOR);
        b.push(p, c, PartKind::Branch);
    }

    let mut gt_boxes = Vec::new();
    let mut stems = Vec::new();
    let mut fruit_spheres = Vec::new();
    for i in 0..spec.n_clusters {
        let x = (i as f64 - (spec.n_clusters - 1) as f64 / 2.0) * CLUSTER_SPACING + rng.random_range(-0.01..0.01);
        let y = rng.random_range(-0.005..0.005);
        let top = BRANCH_HEIGHT - 0.5 * BRANCH_RADIUS;
        let bottom = top - spec.stem_length;
        let (sa, sb) = ([x, y, top], [x, y, bottom]);
        stems.push((sa, sb));
        gt_boxes.push(BoundingBox3D::new(
            [x, y, 0.5 * (top + bottom)],
            [GT_BOX_SIDE; 3],
        ));
        for p in cylinder_samples(&mut rng, sa, sb, spec.stem_radius, pitch) {
            let c = jitter(&mut rng, STEM_COLOR);
            b.push(p, c, PartKind::Stem);
        }

        // first fruit hangs from the stem end, the rest fill the cluster ball
        let ball = [x, y, bottom - spec.cluster_radius];
        let mut fruits = vec![[x, y, bottom - 0.9 * FRUIT_RADIUS]];
        let reach = spec.cluster_radius - FRUIT_RADIUS;
        let mut attempts = 0;
        while fruits.len() < FRUITS_PER_CLUSTER && attempts < 500 {
            attempts += 1;
            let d = [0, 1, 2].map(|_| rng.random_range(-reach..=reach));
            if d.iter().map(|v| v * v).sum::<f64>() > reach * reach {
                continue;
            }
            let c = [ball[0] + d[0], ball[1] + d[1], ball[2] + d[2]];
            let clear = fruits.iter().all(|f| {
                let dd: f64 = (0..3).map(|a| (f[a] - c[a]).powi(2)).sum();
                dd.sqrt() >= 1.6 * FRUIT_RADIUS
            });
            // keep fruit below the stem
            if clear && c[2] < bottom - FRUIT_RADIUS {
                fruits.push(c);
            }
        }
        for (k, f) in fruits.iter().enumerate() {
            for p in sphere_samples(&mut rng, *f, FRUIT_RADIUS, pitch) {
                let c = jitter(&mut rng, FRUIT_COLOR);
                let inside_other = fruits.iter().enumerate().any(|(j, g)| {
                    j != k && (0..3).map(|a| (p[a] - g[a]).powi(2)).sum::<f64>() < FRUIT_RADIUS * FRUIT_RADIUS
                });
                if !inside_other {
                    b.push(p, c, PartKind::Fruit);
                }
            }
            fruit_spheres.push((*f, FRUIT_RADIUS));
        }
    }

    for _ in 0..spec.leaf_count {
        let center = [
            rng.random_range(-half - 0.22..half + 0.22),
            rng.random_range(0.07..0.15),
            rng.random_range(-0.1..0.32),
        ];
        let normal = facing_front(&mut rng);
        let spin = rng.random_range(0.0..PI);
        let patch = Patch::new(center, normal, spin, 0.05, 0.025);
        b.patch(&mut rng, &patch, LEAF_COLOR, PartKind::Leaf);
    }

    // occluders come from their own stream so the base scene is unchanged
    let mut occ_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    occ_rng.set_stream(1);
    for (sa, sb) in &stems {
        let mid = [sa[0], sa[1], 0.5 * (sa[2] + sb[2])];
        let dx = occ_rng.random_range(-0.008..0.008);
        let dz = occ_rng.random_range(-0.008..0.008);
        let spin = occ_rng.random_range(0.0..PI);
        let patch = match spec.occlusion_level {
            OcclusionLevel::None => continue,
            OcclusionLevel::Slight => Patch::new(
                [mid[0] + dx, mid[1] - 0.035, mid[2] + dz],
                -Vector3::y(),
                spin,
                0.018,
                0.01,
            ),
            OcclusionLevel::Severe => Patch::new([mid[0], mid[1] - 0.04, mid[2] - 0.02], -Vector3::y(), 0.0, 0.07, 0.06),
        };
        b.patch(&mut occ_rng, &patch, LEAF_COLOR, PartKind::Occluder);
    }

    let mut surface_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    surface_rng.set_stream(2);
    let fine = pitch / 2.0;
    let mut surface_samples = Vec::new();
    for (sa, sb) in &stems {
        surface_samples.extend(cylinder_samples(&mut surface_rng, *sa, *sb, spec.stem_radius, fine));
    }
    for (c, r) in &fruit_spheres {
        surface_samples.extend(sphere_samples(&mut surface_rng, *c, *r, fine));
    }

    Ok(SyntheticScene {
        spec: *spec,
        cloud: ColoredPointCloud::new(b.points, Some("world".into())),
        labels: b.labels,
        gt_boxes,
        surface_samples,
        fruit_spheres,
    })
}

/// Camera pose at `eye` looking at `target`, world +z up in the image.
pub fn look_at(eye: [f64; 3], target: [f64; 3]) -> RigidTransform {
    let eye_v = Vector3::from(eye);
    let z = (Vector3::from(target) - eye_v).normalize();
    let up = Vector3::z();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    RigidTransform::from_parts(Rotation3::from_matrix_unchecked(r), eye_v)
}

/// Frontal and ±45° azimuth cameras at `standoff` from `target`, level with it.
pub fn canonical_view_poses(target: [f64; 3], standoff: f64) -> Vec<RigidTransform> {
    [0.0_f64, -PI / 4.0, PI / 4.0]
        .iter()
        .map(|az| {
            let eye = [target[0] + standoff * az.sin(), target[1] - standoff * az.cos(), target[2]];
            look_at(eye, target)
        })
        .collect()
}

/// Renders `points` as seen from `camera_in_world`; returns camera-frame
/// points (in input order) plus the indices of the input points they came
/// from.
///
/// Per input index the generator draws one depth-noise and one dropout
/// variate, so adding points to a scene never changes the noise of the
/// others. Visibility is a splatted z-buffer: every projected point stamps
/// its depth over a footprint sized to the sampling pitch, and a point
/// survives when it is the nearest in its own cell and no stamp at that cell
/// is more than a small slack in front of it. Dropout applies after
/// visibility.
pub fn render_points(
    points: &[ColoredPoint],
    pitch: f64,
    camera_in_world: &RigidTransform,
    noise: &NoiseModel,
    seed: u64,
) -> (ColoredPointCloud, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world_to_cam = camera_in_world.inverse();
    let tan = HALF_FOV.tan();
    let n = IMAGE_SIZE as i64;
    let mut projected: Vec<(usize, [f64; 3], i64, i64, bool)> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dn: f64 = StandardNormal.sample(&mut rng);
        let drop = rng.random::<f64>() < noise.dropout_rate;
        let mut c = world_to_cam.transform_point(p.position);
        let range = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if noise.depth_sigma > 0.0 && range > 0.0 {
            let k = 1.0 + noise.depth_sigma * dn / range;
            c = c.map(|v| v * k);
        }
        let range = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        if c[2] <= 0.0 || range > MAX_RANGE {
            continue;
        }
        let (sx, sy) = (c[0] / c[2] / tan, c[1] / c[2] / tan);
        if sx.abs() > 1.0 || sy.abs() > 1.0 {
            continue;
        }
        let u = (((sx + 1.0) / 2.0 * IMAGE_SIZE as f64) as i64).min(n - 1);
        let v = (((sy + 1.0) / 2.0 * IMAGE_SIZE as f64) as i64).min(n - 1);
        projected.push((i, c, u, v, drop));
    }
    let cells = IMAGE_SIZE * IMAGE_SIZE;
    let mut stamp = vec![f64::INFINITY; cells];
    let mut nearest: Vec<Option<(f64, usize)>> = vec![None; cells];
    for (k, (_, c, u, v, _)) in projected.iter().enumerate() {
        let pixel = c[2] * 2.0 * tan / IMAGE_SIZE as f64;
        let r = ((pitch / pixel).ceil() as i64).clamp(1, MAX_SPLAT_RADIUS);
        for y in (v - r).max(0)..=(v + r).min(n - 1) {
            for x in (u - r).max(0)..=(u + r).min(n - 1) {
                let cell = (y * n + x) as usize;
                stamp[cell] = stamp[cell].min(c[2]);
            }
        }
        let cell = (v * n + u) as usize;
        if nearest[cell].is_none_or(|(d, _)| c[2] < d) {
            nearest[cell] = Some((c[2], k));
        }
    }
    let mut out = Vec::new();
    let mut source = Vec::new();
    for (k, (i, c, u, v, drop)) in projected.iter().enumerate() {
        let cell = (v * n + u) as usize;
        let wins = nearest[cell].is_some_and(|(_, w)| w == k);
        if wins && c[2] <= stamp[cell] + VISIBILITY_EPS && !drop {
            out.push(ColoredPoint {
                position: *c,
                color: points[*i].color,
            });
            source.push(*i);
        }
    }
    (ColoredPointCloud::new(out, Some("camera".into())), source)
}

pub fn render_view(
    scene: &SyntheticScene,
    camera_in_world: &RigidTransform,
    noise: &NoiseModel,
    seed: u64,
) -> ColoredPointCloud {
    render_points(scene.cloud.points(), scene.spec.sampling_pitch, camera_in_world, noise, seed).0
}

/// Seed of view `k` derived from a capture seed.
pub fn view_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Renders the canonical views and attaches the flange poses that put each
/// camera where it was rendered from, given the camera pose in the flange.
pub fn capture_views(
    scene: &SyntheticScene,
    hand_eye: &RigidTransform,
    noise: &NoiseModel,
    seed: u64,
) -> Vec<ViewCapture> {
    let flange_to_camera_inv = hand_eye.inverse();
    canonical_view_poses(scene.focus(), 0.5)
        .iter()
        .enumerate()
        .map(|(k, cam)| ViewCapture {
            cloud: render_view(scene, cam, noise, view_seed(seed, k)),
            flange_in_base: cam.compose(&flange_to_camera_inv),
            view_label: ["front", "left", "right"][k].to_string(),
        })
        .collect()
}

/// Ground-truth camera pose in the flange used by synthetic runs.
pub fn default_hand_eye() -> RigidTransform {
    rotvec_transform([0.05, -0.1, 1.2], [0.03, -0.02, 0.11])
}

fn rotvec_transform(rv: [f64; 3], t: [f64; 3]) -> RigidTransform {
    let rot = Rotation3::from_scaled_axis(Vector3::from(rv));
    RigidTransform::from_parts(rot, Vector3::from(t))
}

/// Board pose in the base used by synthetic calibration runs.
pub fn default_board_in_base() -> RigidTransform {
    rotvec_transform([0.0, 0.0, 0.3], [0.5, 0.0, 0.0])
}

/// Calibration run: `n_c` camera poses around the board, flange poses that
/// realize them through `t_true`, and board observations perturbed by
/// left-multiplied rotation-vector / translation noise. Returns the samples
/// and the base-to-board transform.
pub fn generate_calibration_set(
    t_true: &RigidTransform,
    n_c: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<(Vec<CalibrationSample>, RigidTransform), SynthError> {
    noise.validate()?;
    if n_c == 0 {
        return Err(SynthError::InvalidSpec("n_c must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let board = default_board_in_base();
    let base_to_board = board.inverse();
    let centre = board.translation();
    let t_inv = t_true.inverse();
    let rot_sigma = noise.pose_rot_sigma.to_radians();
    let rot_noise = Normal::new(0.0, rot_sigma).map_err(|e| SynthError::InvalidNoise(e.to_string()))?;
    let trans_noise = Normal::new(0.0, noise.pose_trans_sigma).map_err(|e| SynthError::InvalidNoise(e.to_string()))?;
    let mut samples = Vec::with_capacity(n_c);
    for i in 0..n_c {
        let az: f64 = rng.random_range(-PI..PI);
        let el: f64 = rng.random_range(50f64.to_radians()..85f64.to_radians());
        let dist: f64 = rng.random_range(0.4..0.6);
        let roll: f64 = rng.random_range(-0.5..0.5);
        let eye = [
            centre.x + dist * el.cos() * az.cos(),
            centre.y + dist * el.cos() * az.sin(),
            centre.z + dist * el.sin(),
        ];
        let cam = look_at(eye, [centre.x, centre.y, centre.z]).compose(&RigidTransform::rot_z(roll));
        let flange = cam.compose(&t_inv);
        let exact = base_to_board.compose(&flange).compose(t_true).inverse();
        let rv = [0, 1, 2].map(|_| rot_noise.sample(&mut rng));
        let tv = [0, 1, 2].map(|_| trans_noise.sample(&mut rng));
        let observed = if noise.pose_rot_sigma == 0.0 && noise.pose_trans_sigma == 0.0 {
            exact
        } else {
            rotvec_transform(rv, tv).compose(&exact)
        };
        samples.push(CalibrationSample {
            pose_index: i as u32 + 1,
            board_to_camera: observed,
            flange_in_base: flange,
        });
    }
    Ok((samples, base_to_board))
}
