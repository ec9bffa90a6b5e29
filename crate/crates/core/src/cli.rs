//! Command-line front end: one subcommand per pipeline stage plus the
//! end-to-end `pipeline` runner.
//!
//! Every subcommand returns a JSON summary (counts, timings) that the binary
//! prints as a single stdout line. Output files never contain timings, so
//! equal inputs give byte-identical files. Errors carry an exit code: 2 for
//! bad usage or input, 1 for internal failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::eval::{self, BoxSetFile, SceneBoxes, DEFAULT_MATCH_IOU};
use crate::geometry::{estimate_hand_eye, CalibrationFile, GeometryError, HandEyeFile};
use crate::pointcloud::{self, write_ply_to, CloudFormat, ColoredPointCloud, PlyEncoding};
use crate::preprocess::{self, ColorFilterParams, StatFilterParams, VoxelParams};
use crate::sparsenn::{self, constructed, DecodeParams, DetectParams, Network, NetworkConfig};
use crate::stitch::{self, ManifestView, ViewManifest};
use crate::synth::{self, NoiseModel, OcclusionLevel, SceneSpec};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config or unreadable / invalid input files.
    #[error("{0}")]
    Input(String),
    /// Failures not caused by the inputs, such as an unwritable output.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn stage(name: &str) -> impl Fn(CliError) -> CliError + '_ {
    move |e| match e {
        CliError::Input(m) => CliError::Input(format!("stage {name}: {m}")),
        CliError::Internal(m) => CliError::Internal(format!("stage {name}: {m}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "pickpoint", version, about = "Locate fruit picking points in multi-view colored point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the camera pose in the flange frame from a calibration sample file.
    Calibrate(CalibrateArgs),
    /// Run stitch, filters, downsampling and detection from a config file and flags.
    Pipeline(PipelineArgs),
    /// Color filter followed by the statistical outlier filter.
    Filter(FilterArgs),
    /// Map every view of a manifest into the base frame and concatenate.
    Stitch(StitchArgs),
    /// Voxel-grid downsampling.
    Downsample(DownsampleArgs),
    /// Run the detector on one cloud and write its boxes.
    Detect(DetectArgs),
    /// Score prediction boxes against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene: view clouds, manifest, ground truth and calibration samples.
    Synth(SynthArgs),
    /// Write a detector weight file (hand-set or seeded random).
    Weights(WeightsArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Calibration sample file (JSON).
    #[arg(long)]
    pub samples: PathBuf,
    /// Output hand-eye file (JSON, 16 row-major numbers).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Default)]
pub struct ColorArgs {
    /// Red must exceed this to keep a point.
    #[arg(long)]
    pub sigma1: Option<i64>,
    /// Green must not exceed this to keep a point.
    #[arg(long)]
    pub sigma2: Option<i64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct StatArgs {
    /// Neighbors used for the mean k-NN distance.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Half-width of the kept interval in standard deviations.
    #[arg(long = "alpha-v")]
    pub alpha_v: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct DetectParamArgs {
    /// Network input voxel, meters.
    #[arg(long = "tensor-voxel")]
    pub tensor_voxel: Option<f64>,
    #[arg(long = "score-threshold")]
    pub score_threshold: Option<f64>,
    #[arg(long = "nms-iou")]
    pub nms_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub color: ColorArgs,
    #[command(flatten)]
    pub stat: StatArgs,
    /// Which filters to run.
    #[arg(long, value_enum, default_value_t = FilterStage::Both)]
    pub stage: FilterStage,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterStage {
    Color,
    Statistical,
    Both,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// View-set manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Voxel edge, meters.
    #[arg(long = "voxel-size")]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Output box file (JSON).
    #[arg(long)]
    pub output: PathBuf,
    /// Scene id written with the boxes; defaults to the input file stem.
    #[arg(long = "scene-id")]
    pub scene_id: Option<String>,
    #[command(flatten)]
    pub params: DetectParamArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction box file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth box file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    pub output: PathBuf,
    /// Per-axis localization error CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long = "match-iou")]
    pub match_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "n-clusters")]
    pub n_clusters: Option<usize>,
    #[arg(long = "cluster-radius")]
    pub cluster_radius: Option<f64>,
    #[arg(long = "stem-length")]
    pub stem_length: Option<f64>,
    #[arg(long = "stem-radius")]
    pub stem_radius: Option<f64>,
    #[arg(long = "leaf-count")]
    pub leaf_count: Option<usize>,
    #[arg(long = "sampling-pitch")]
    pub sampling_pitch: Option<f64>,
    #[arg(long, value_enum, default_value_t = Occlusion::None)]
    pub occlusion: Occlusion,
    #[arg(long = "depth-sigma")]
    pub depth_sigma: Option<f64>,
    #[arg(long = "dropout-rate")]
    pub dropout_rate: Option<f64>,
    /// Degrees.
    #[arg(long = "pose-rot-sigma")]
    pub pose_rot_sigma: Option<f64>,
    #[arg(long = "pose-trans-sigma")]
    pub pose_trans_sigma: Option<f64>,
    /// Number of calibration poses.
    #[arg(long = "calib-samples", default_value_t = 16)]
    pub calib_samples: usize,
    /// Scene id for the ground-truth file; defaults to `scene-<seed>`.
    #[arg(long = "scene-id")]
    pub scene_id: Option<String>,
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Occlusion {
    None,
    Slight,
    Severe,
}

impl From<Occlusion> for OcclusionLevel {
    fn from(o: Occlusion) -> Self {
        match o {
            Occlusion::None => OcclusionLevel::None,
            Occlusion::Slight => OcclusionLevel::Slight,
            Occlusion::Severe => OcclusionLevel::Severe,
        }
    }
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long, value_enum)]
    pub kind: WeightsKind,
    /// Seed for `random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsKind {
    /// Hand-set stem detector for the synthetic scenes.
    Constructed,
    /// He-normal initialization.
    Random,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Flat TOML file keyed by the flag names below; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Ground-truth box file; enables the report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long = "output-dir")]
    pub output_dir: Option<PathBuf>,
    /// Scene id for detections and ground-truth lookup; defaults to the manifest's `scene_id`, then its file stem.
    #[arg(long = "scene-id")]
    pub scene_id: Option<String>,
    #[command(flatten)]
    pub color: ColorArgs,
    #[command(flatten)]
    pub stat: StatArgs,
    #[arg(long = "voxel-size")]
    pub voxel_size: Option<f64>,
    #[command(flatten)]
    pub detect: DetectParamArgs,
    #[arg(long = "match-iou")]
    pub match_iou: Option<f64>,
    /// Stop after downsampling.
    #[arg(long = "skip-detect")]
    pub skip_detect: bool,
    #[arg(long)]
    pub ascii: bool,
}

/// Pipeline config file. Keys are the pipeline flag names; relative paths
/// resolve against the config file's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub scene_id: Option<String>,
    pub sigma1: Option<i64>,
    pub sigma2: Option<i64>,
    pub knn: Option<usize>,
    pub alpha_v: Option<f64>,
    pub voxel_size: Option<f64>,
    pub tensor_voxel: Option<f64>,
    pub score_threshold: Option<f64>,
    pub nms_iou: Option<f64>,
    pub match_iou: Option<f64>,
    pub skip_detect: Option<bool>,
    pub ascii: Option<bool>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| input(format!("config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| input(format!("config {}: {}", path.display(), e.message())))?;
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.weights, &mut cfg.gt, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Flags override config values.
    fn merge(self, a: &PipelineArgs) -> Self {
        Self {
            manifest: a.manifest.clone().or(self.manifest),
            weights: a.weights.clone().or(self.weights),
            gt: a.gt.clone().or(self.gt),
            output_dir: a.output_dir.clone().or(self.output_dir),
            scene_id: a.scene_id.clone().or(self.scene_id),
            sigma1: a.color.sigma1.or(self.sigma1),
            sigma2: a.color.sigma2.or(self.sigma2),
            knn: a.stat.knn.or(self.knn),
            alpha_v: a.stat.alpha_v.or(self.alpha_v),
            voxel_size: a.voxel_size.or(self.voxel_size),
            tensor_voxel: a.detect.tensor_voxel.or(self.tensor_voxel),
            score_threshold: a.detect.score_threshold.or(self.score_threshold),
            nms_iou: a.detect.nms_iou.or(self.nms_iou),
            match_iou: a.match_iou.or(self.match_iou),
            skip_detect: if a.skip_detect { Some(true) } else { self.skip_detect },
            ascii: if a.ascii { Some(true) } else { self.ascii },
        }
    }
}

/// Files written so far; removed again when a later step fails.
#[derive(Debug, Default)]
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
        }
        self.written.push(path.to_path_buf());
        fs::write(path, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
    }

    fn cloud(&mut self, path: &Path, cloud: &ColoredPointCloud, ascii: bool) -> Result<(), CliError> {
        let encoding = if ascii { PlyEncoding::Ascii } else { PlyEncoding::BinaryLittleEndian };
        let mut bytes = Vec::new();
        write_ply_to(cloud, &mut bytes, encoding).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(path, &bytes)
    }

    fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    fn discard(&mut self) {
        for p in self.written.drain(..) {
            if fs::remove_file(&p).is_ok() {
                warn!("removed partial output {}", p.display());
            }
        }
    }
}

/// Runs `body`, deleting everything it wrote if it fails.
fn transactional(body: impl FnOnce(&mut Outputs) -> Result<Value, CliError>) -> Result<Value, CliError> {
    let mut out = Outputs::default();
    let result = body(&mut out);
    if result.is_err() {
        out.discard();
    }
    result
}

fn read_cloud(path: &Path) -> Result<ColoredPointCloud, CliError> {
    let format = CloudFormat::from_path(path)
        .ok_or_else(|| input(format!("{}: unknown cloud format (expected .ply or .pcd)", path.display())))?;
    pointcloud::read_cloud(path, format).map_err(input)
}

fn ms(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scene".to_string(), |s| s.to_string_lossy().into_owned())
}

fn color_params(a: &ColorArgs) -> Result<ColorFilterParams, CliError> {
    let d = ColorFilterParams::default();
    ColorFilterParams::new(a.sigma1.unwrap_or(d.sigma1.into()), a.sigma2.unwrap_or(d.sigma2.into())).map_err(input)
}

fn stat_params(a: &StatArgs) -> Result<StatFilterParams, CliError> {
    let d = StatFilterParams::default();
    StatFilterParams::new(a.knn.unwrap_or(d.k), a.alpha_v.unwrap_or(d.alpha_v)).map_err(input)
}

fn voxel_params(v: Option<f64>) -> Result<VoxelParams, CliError> {
    VoxelParams::new(v.unwrap_or(VoxelParams::default().voxel_size)).map_err(input)
}

fn detect_params(a: &DetectParamArgs) -> Result<DetectParams, CliError> {
    let d = DetectParams::default();
    let p = DetectParams {
        tensor_voxel: a.tensor_voxel.unwrap_or(d.tensor_voxel),
        score_threshold: a.score_threshold.unwrap_or(d.score_threshold),
        nms_iou: a.nms_iou.unwrap_or(d.nms_iou),
    };
    DecodeParams::new(p.tensor_voxel, p.score_threshold, p.nms_iou).map_err(input)?;
    Ok(p)
}

fn match_iou(v: Option<f64>) -> Result<f64, CliError> {
    let v = v.unwrap_or(DEFAULT_MATCH_IOU);
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(input(format!("invalid parameter match-iou: {v} outside (0, 1]")))
    }
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    let w = sparsenn::load_weights(path).map_err(input)?;
    Network::from_weights(&w, NetworkConfig::default()).map_err(input)
}

pub fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::Calibrate(a) => calibrate(&a),
        Command::Pipeline(a) => pipeline(&a),
        Command::Filter(a) => filter(&a),
        Command::Stitch(a) => stitch_cmd(&a),
        Command::Downsample(a) => downsample(&a),
        Command::Detect(a) => detect_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Synth(a) => synth_cmd(&a),
        Command::Weights(a) => weights_cmd(&a),
    }
}

fn calibrate(a: &CalibrateArgs) -> Result<Value, CliError> {
    let t0 = Instant::now();
    let text = fs::read_to_string(&a.samples).map_err(|e| input(format!("{}: {e}", a.samples.display())))?;
    if text.trim().is_empty() {
        return Err(input(GeometryError::NoSamples));
    }
    let file: CalibrationFile =
        serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", a.samples.display())))?;
    let (samples, board) = file.decode().map_err(input)?;
    let hand_eye = estimate_hand_eye(&samples, &board).map_err(input)?;
    transactional(|out| {
        out.json(&a.output, &HandEyeFile { hand_eye: hand_eye.to_row_major().to_vec() })?;
        Ok(json!({
            "command": "calibrate",
            "samples": samples.len(),
            "output": a.output,
            "elapsed_ms": ms(t0),
        }))
    })
}

fn filter(a: &FilterArgs) -> Result<Value, CliError> {
    let color = color_params(&a.color)?;
    let stat = stat_params(&a.stat)?;
    let t0 = Instant::now();
    let cloud = read_cloud(&a.input)?;
    let n_in = cloud.len();
    let after_color = match a.stage {
        FilterStage::Statistical => cloud,
        _ => preprocess::color_filter(&cloud, &color),
    };
    let n_color = after_color.len();
    let result = match a.stage {
        FilterStage::Color => after_color,
        _ => preprocess::statistical_filter(&after_color, &stat).map_err(input)?,
    };
    transactional(|out| {
        out.cloud(&a.output, &result, a.ascii)?;
        Ok(json!({
            "command": "filter",
            "input_points": n_in,
            "after_color": n_color,
            "output_points": result.len(),
            "elapsed_ms": ms(t0),
        }))
    })
}

fn stitch_cmd(a: &StitchArgs) -> Result<Value, CliError> {
    let t0 = Instant::now();
    let (views, hand_eye) = stitch::load_manifest(&a.manifest).map_err(input)?;
    let cloud = stitch::stitch_views(&views, &hand_eye).map_err(input)?;
    let per_view: Vec<usize> = views.iter().map(|v| v.cloud.len()).collect();
    transactional(|out| {
        out.cloud(&a.output, &cloud, a.ascii)?;
        Ok(json!({
            "command": "stitch",
            "views": per_view,
            "output_points": cloud.len(),
            "elapsed_ms": ms(t0),
        }))
    })
}

fn downsample(a: &DownsampleArgs) -> Result<Value, CliError> {
    let params = voxel_params(a.voxel_size)?;
    let t0 = Instant::now();
    let cloud = read_cloud(&a.input)?;
    let result = preprocess::voxel_downsample(&cloud, &params).map_err(input)?;
    transactional(|out| {
        out.cloud(&a.output, &result, a.ascii)?;
        Ok(json!({
            "command": "downsample",
            "input_points": cloud.len(),
            "output_points": result.len(),
            "voxel_size": params.voxel_size,
            "elapsed_ms": ms(t0),
        }))
    })
}

fn detect_cmd(a: &DetectArgs) -> Result<Value, CliError> {
    let params = detect_params(&a.params)?;
    let t0 = Instant::now();
    let net = load_network(&a.weights)?;
    let cloud = read_cloud(&a.input)?;
    let boxes = sparsenn::detect(&cloud, &net, &params).map_err(input)?;
    let id = a.scene_id.clone().unwrap_or_else(|| file_stem(&a.input));
    let n = boxes.len();
    transactional(|out| {
        out.json(&a.output, &BoxSetFile::from_map(&BTreeMap::from([(id.clone(), boxes)])))?;
        Ok(json!({
            "command": "detect",
            "scene": id,
            "input_points": cloud.len(),
            "detections": n,
            "elapsed_ms": ms(t0),
        }))
    })
}

fn report_summary(r: &eval::DatasetReport) -> Value {
    json!({
        "tp": r.totals.tp,
        "fp": r.totals.fp,
        "fn": r.totals.fn_,
        "precision": r.metrics.precision,
        "recall": r.metrics.recall,
        "f1": r.metrics.f1,
        "detection_accuracy": r.metrics.detection_accuracy,
        "matched": r.localization.len(),
    })
}

fn eval_cmd(a: &EvalArgs) -> Result<Value, CliError> {
    let iou = match_iou(a.match_iou)?;
    let t0 = Instant::now();
    let preds = eval::load_box_sets(&a.pred).map_err(input)?;
    let gts = eval::load_box_sets(&a.gt).map_err(input)?;
    let report = eval::evaluate_dataset(&preds, &gts, iou).map_err(input)?;
    transactional(|out| {
        out.json(&a.output, &report)?;
        if let Some(csv) = &a.csv {
            out.write(csv, eval::localization_csv(&report.localization).as_bytes())?;
        }
        let mut summary = report_summary(&report);
        summary["command"] = json!("eval");
        summary["scenes"] = json!(report.scenes.len());
        summary["elapsed_ms"] = json!(ms(t0));
        Ok(summary)
    })
}

fn synth_cmd(a: &SynthArgs) -> Result<Value, CliError> {
    let d = SceneSpec::default();
    let spec = SceneSpec {
        seed: a.seed,
        n_clusters: a.n_clusters.unwrap_or(d.n_clusters),
        cluster_radius: a.cluster_radius.unwrap_or(d.cluster_radius),
        stem_length: a.stem_length.unwrap_or(d.stem_length),
        stem_radius: a.stem_radius.unwrap_or(d.stem_radius),
        leaf_count: a.leaf_count.unwrap_or(d.leaf_count),
        sampling_pitch: a.sampling_pitch.unwrap_or(d.sampling_pitch),
        occlusion_level: a.occlusion.into(),
    };
    let dn = NoiseModel::default();
    let noise = NoiseModel {
        depth_sigma: a.depth_sigma.unwrap_or(dn.depth_sigma),
        dropout_rate: a.dropout_rate.unwrap_or(dn.dropout_rate),
        pose_rot_sigma: a.pose_rot_sigma.unwrap_or(dn.pose_rot_sigma),
        pose_trans_sigma: a.pose_trans_sigma.unwrap_or(dn.pose_trans_sigma),
    };
    spec.validate().map_err(input)?;
    noise.validate().map_err(input)?;
    if a.calib_samples == 0 {
        return Err(input("invalid parameter calib-samples: must be at least 1"));
    }
    let t0 = Instant::now();
    let scene = synth::generate_scene(&spec).map_err(input)?;
    let hand_eye = synth::default_hand_eye();
    let views = synth::capture_views(&scene, &hand_eye, &noise, a.seed);
    let (samples, board) = synth::generate_calibration_set(&hand_eye, a.calib_samples, &noise, a.seed).map_err(input)?;
    let id = a.scene_id.clone().unwrap_or_else(|| format!("scene-{}", a.seed));
    let dir = &a.out_dir;
    transactional(|out| {
        let mut manifest = ViewManifest {
            scene_id: Some(id.clone()),
            hand_eye: Some(hand_eye.to_row_major().to_vec()),
            hand_eye_file: None,
            views: Vec::new(),
        };
        for v in &views {
            let name = format!("view_{}.ply", v.view_label);
            out.cloud(&dir.join(&name), &v.cloud, a.ascii)?;
            manifest.views.push(ManifestView {
                label: v.view_label.clone(),
                cloud: name,
                flange_in_base: v.flange_in_base.to_row_major().to_vec(),
            });
        }
        out.json(&dir.join("manifest.json"), &manifest)?;
        out.json(
            &dir.join("gt.json"),
            &BoxSetFile::from_map(&BTreeMap::from([(id.clone(), scene.gt_boxes.clone())])),
        )?;
        out.json(&dir.join("calibration.json"), &CalibrationFile::new(&samples, &board))?;
        Ok(json!({
            "command": "synth",
            "scene": id,
            "scene_points": scene.cloud.len(),
            "views": views.iter().map(|v| v.cloud.len()).collect::<Vec<_>>(),
            "gt_boxes": scene.gt_boxes.len(),
            "calibration_samples": samples.len(),
            "elapsed_ms": ms(t0),
        }))
    })
}

fn weights_cmd(a: &WeightsArgs) -> Result<Value, CliError> {
    let w = match a.kind {
        WeightsKind::Constructed => constructed::constructed_weights(),
        WeightsKind::Random => NetworkConfig::default().random_weights(a.seed),
    };
    transactional(|out| {
        out.write(&a.output, &w.encode())?;
        Ok(json!({
            "command": "weights",
            "fingerprint": w.fingerprint,
            "tensors": w.tensors.len(),
        }))
    })
}

fn require(value: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = value.ok_or_else(|| input(format!("missing required key '{key}' (config key or --{key})")))?;
    if !p.exists() {
        return Err(input(format!("{key}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn pipeline(a: &PipelineArgs) -> Result<Value, CliError> {
    let cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    }
    .merge(a);

    // everything is validated before the first stage runs
    let skip_detect = cfg.skip_detect.unwrap_or(false);
    let ascii = cfg.ascii.unwrap_or(false);
    let manifest = require(cfg.manifest.clone(), "manifest")?;
    let weights = if skip_detect { None } else { Some(require(cfg.weights.clone(), "weights")?) };
    let gt = match cfg.gt.clone() {
        Some(p) if !skip_detect => Some(require(Some(p), "gt")?),
        _ => None,
    };
    let out_dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| input("missing required key 'output-dir' (config key or --output-dir)"))?;
    let color = color_params(&ColorArgs { sigma1: cfg.sigma1, sigma2: cfg.sigma2 })?;
    let stat = stat_params(&StatArgs { knn: cfg.knn, alpha_v: cfg.alpha_v })?;
    let voxel = voxel_params(cfg.voxel_size)?;
    let detect = detect_params(&DetectParamArgs {
        tensor_voxel: cfg.tensor_voxel,
        score_threshold: cfg.score_threshold,
        nms_iou: cfg.nms_iou,
    })?;
    let iou = match_iou(cfg.match_iou)?;

    let t_all = Instant::now();
    let mut stages = serde_json::Map::new();
    let mut timed = |name: &str, t: Instant, points: usize| {
        info!("{name}: {points} points");
        stages.insert(name.to_string(), json!({ "points": points, "elapsed_ms": ms(t) }));
    };

    let t = Instant::now();
    let (views, hand_eye) = stitch::load_manifest(&manifest).map_err(input).map_err(stage("stitch"))?;
    let scene_id = match cfg.scene_id.clone() {
        Some(id) => id,
        None => stitch::read_manifest(&manifest)
            .map_err(input)
            .map_err(stage("stitch"))?
            .scene_id
            .unwrap_or_else(|| file_stem(&manifest)),
    };
    let stitched = stitch::stitch_views(&views, &hand_eye).map_err(input).map_err(stage("stitch"))?;
    timed("stitch", t, stitched.len());
    let t = Instant::now();
    let colored = preprocess::color_filter(&stitched, &color);
    timed("color_filter", t, colored.len());
    let t = Instant::now();
    let filtered = preprocess::statistical_filter(&colored, &stat)
        .map_err(input)
        .map_err(stage("statistical_filter"))?;
    timed("statistical_filter", t, filtered.len());
    let t = Instant::now();
    let down = preprocess::voxel_downsample(&filtered, &voxel)
        .map_err(input)
        .map_err(stage("voxel_downsample"))?;
    timed("voxel_downsample", t, down.len());

    let detections = match &weights {
        None => None,
        Some(w) => {
            let t = Instant::now();
            let net = load_network(w).map_err(stage("detect"))?;
            let boxes = sparsenn::detect(&down, &net, &detect).map_err(input).map_err(stage("detect"))?;
            timed("detect", t, boxes.len());
            Some(boxes)
        }
    };
    let report = match (&gt, &detections) {
        (Some(gt), Some(boxes)) => {
            let mut gts = eval::load_box_sets(gt).map_err(input).map_err(stage("eval"))?;
            let gt_boxes = gts
                .remove(&scene_id)
                .ok_or_else(|| input(format!("{}: no scene '{scene_id}'", gt.display())))
                .map_err(stage("eval"))?;
            let preds: SceneBoxes = BTreeMap::from([(scene_id.clone(), boxes.clone())]);
            let gts: SceneBoxes = BTreeMap::from([(scene_id.clone(), gt_boxes)]);
            Some(eval::evaluate_dataset(&preds, &gts, iou).map_err(input).map_err(stage("eval"))?)
        }
        _ => None,
    };

    transactional(|out| {
        out.cloud(&out_dir.join("preprocessed.ply"), &down, ascii)?;
        let mut summary = json!({
            "command": "pipeline",
            "scene": scene_id,
            "views": views.len(),
            "stages": stages,
        });
        if let Some(boxes) = &detections {
            out.json(
                &out_dir.join("detections.json"),
                &BoxSetFile::from_map(&BTreeMap::from([(scene_id.clone(), boxes.clone())])),
            )?;
            summary["detections"] = json!(boxes.len());
        }
        if let Some(r) = &report {
            out.json(&out_dir.join("report.json"), r)?;
            out.write(&out_dir.join("localization.csv"), eval::localization_csv(&r.localization).as_bytes())?;
            summary["metrics"] = report_summary(r);
        }
        summary["elapsed_ms"] = json!(ms(t_all));
        Ok(summary)
    })
}
