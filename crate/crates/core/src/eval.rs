//! Detection scoring: axis-aligned 3D IoU, greedy matching, precision /
//! recall / F1 / accuracy and per-axis localization errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LABEL: &str = "picking_point";
/// Default IoU needed for a prediction to count as a hit.
pub const DEFAULT_MATCH_IOU: f64 = 0.25;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scene '{0}' has predictions but no ground truth")]
    MissingGroundTruth(String),
    #[error("scene '{0}' has ground truth but no predictions")]
    MissingPredictions(String),
    #[error("duplicate scene '{0}'")]
    DuplicateScene(String),
    #[error("invalid box in scene '{scene}': {msg}")]
    InvalidBox { scene: String, msg: String },
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
}

fn default_label() -> String {
    DEFAULT_LABEL.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3D {
    pub center: [f64; 3],
    /// Edge lengths along x, y, z in meters.
    pub size: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default = "default_label")]
    pub label: String,
}

impl BoundingBox3D {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Self {
        Self {
            center,
            size,
            score: None,
            label: default_label(),
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.center.iter().any(|v| !v.is_finite()) {
            return Err("non-finite center".into());
        }
        if self.size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(format!("sizes must be positive, got {:?}", self.size));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("score {s} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.center[a] - 0.5 * self.size[a])
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.center[a] + 0.5 * self.size[a])
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    fn rank_score(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }
}

/// Intersection over union of two axis-aligned boxes.
pub fn iou3d(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    let (amin, amax) = (a.min_corner(), a.max_corner());
    let (bmin, bmax) = (b.min_corner(), b.max_corner());
    let mut inter = 1.0;
    for k in 0..3 {
        let overlap = amax[k].min(bmax[k]) - amin[k].max(bmin[k]);
        if overlap <= 0.0 {
            return 0.0;
        }
        inter *= overlap;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub pairs: Vec<MatchPair>,
}

/// Greedy matching: predictions in descending score order each take the
/// unmatched ground truth of highest IoU at or above `iou_threshold`.
/// Equal scores keep input order.
pub fn match_boxes(preds: &[BoundingBox3D], gts: &[BoundingBox3D], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].rank_score().total_cmp(&preds[i].rank_score()));
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = iou3d(&preds[pi], gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            taken[gi] = true;
            pairs.push(MatchPair { pred: pi, gt: gi, iou });
        }
    }
    let tp = pairs.len();
    MatchResult {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        tn: 0,
        pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// (TP + TN) / (TP + FN + FP + TN).
    pub accuracy: f64,
    /// TP / (TP + FP): the convention of per-occlusion accuracy tables.
    pub detection_accuracy: f64,
    /// Set when any ratio had a zero denominator (reported as 0).
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics_from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> DetectionMetrics {
    let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    let mut degenerate = false;
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        f1_score(precision, recall)
    };
    let accuracy = ratio(tp + tn, tp + fn_ + fp + tn, &mut degenerate);
    let detection_accuracy = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    DetectionMetrics {
        precision,
        recall,
        f1,
        accuracy,
        detection_accuracy,
        degenerate,
    }
}

pub fn metrics(m: &MatchResult) -> DetectionMetrics {
    metrics_from_counts(m.tp, m.fp, m.fn_, m.tn)
}

/// Signed per-axis center difference `pred − gt`, meters.
pub fn localization_error(pred: &BoundingBox3D, gt: &BoundingBox3D) -> [f64; 3] {
    [0, 1, 2].map(|a| pred.center[a] - gt.center[a])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub scene: String,
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
    pub error: [f64; 3],
}

/// Fixed-width histogram of per-axis errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisHistogram {
    pub lower: f64,
    pub bin_width: f64,
    /// Counts per bin for x, y, z.
    pub counts: [Vec<usize>; 3],
    pub underflow: [usize; 3],
    pub overflow: [usize; 3],
}

impl AxisHistogram {
    /// 24 bins of 2.5 mm spanning ±3 cm.
    pub fn standard() -> Self {
        Self::new(-0.03, 0.0025, 24)
    }

    pub fn new(lower: f64, bin_width: f64, bins: usize) -> Self {
        Self {
            lower,
            bin_width,
            counts: [vec![0; bins], vec![0; bins], vec![0; bins]],
            underflow: [0; 3],
            overflow: [0; 3],
        }
    }

    pub fn add(&mut self, err: &[f64; 3]) {
        for a in 0..3 {
            let pos = ((err[a] - self.lower) / self.bin_width).floor();
            if pos < 0.0 {
                self.underflow[a] += 1;
            } else if pos as usize >= self.counts[a].len() {
                self.overflow[a] += 1;
            } else {
                self.counts[a][pos as usize] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub iou_threshold: f64,
    pub totals: MatchTotals,
    pub metrics: DetectionMetrics,
    pub scenes: BTreeMap<String, MatchResult>,
    pub localization: Vec<LocalizationRecord>,
    pub histogram: AxisHistogram,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchTotals {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

pub type SceneBoxes = BTreeMap<String, Vec<BoundingBox3D>>;

/// Micro-averaged evaluation: counts are summed over scenes before the ratios.
pub fn evaluate_dataset(preds: &SceneBoxes, gts: &SceneBoxes, iou_threshold: f64) -> Result<DatasetReport, EvalError> {
    if let Some(id) = preds.keys().find(|k| !gts.contains_key(*k)) {
        return Err(EvalError::MissingGroundTruth(id.clone()));
    }
    if let Some(id) = gts.keys().find(|k| !preds.contains_key(*k)) {
        return Err(EvalError::MissingPredictions(id.clone()));
    }
    let mut totals = MatchTotals::default();
    let mut scenes = BTreeMap::new();
    let mut localization = Vec::new();
    let mut histogram = AxisHistogram::standard();
    for (id, gt) in gts {
        let pred = &preds[id];
        let m = match_boxes(pred, gt, iou_threshold);
        totals.tp += m.tp;
        totals.fp += m.fp;
        totals.fn_ += m.fn_;
        totals.tn += m.tn;
        for pair in &m.pairs {
            let error = localization_error(&pred[pair.pred], &gt[pair.gt]);
            histogram.add(&error);
            localization.push(LocalizationRecord {
                scene: id.clone(),
                pred: pair.pred,
                gt: pair.gt,
                iou: pair.iou,
                error,
            });
        }
        scenes.insert(id.clone(), m);
    }
    Ok(DatasetReport {
        iou_threshold,
        metrics: metrics_from_counts(totals.tp, totals.fp, totals.fn_, totals.tn),
        totals,
        scenes,
        localization,
        histogram,
    })
}

/// CSV of per-axis localization errors, one matched pair per row.
pub fn localization_csv(records: &[LocalizationRecord]) -> String {
    let mut out = String::from("scene,pred,gt,iou,dx,dy,dz\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scene, r.pred, r.gt, r.iou, r.error[0], r.error[1], r.error[2]
        );
    }
    out
}

/// On-disk box sets: `{"scenes": [{"id": "...", "boxes": [...]}]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoxSetFile {
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub boxes: Vec<BoundingBox3D>,
}

impl BoxSetFile {
    pub fn from_map(map: &SceneBoxes) -> Self {
        Self {
            scenes: map
                .iter()
                .map(|(id, boxes)| SceneEntry {
                    id: id.clone(),
                    boxes: boxes.clone(),
                })
                .collect(),
        }
    }

    pub fn into_map(self) -> Result<SceneBoxes, EvalError> {
        let mut map = BTreeMap::new();
        for entry in self.scenes {
            for b in &entry.boxes {
                b.validate().map_err(|msg| EvalError::InvalidBox {
                    scene: entry.id.clone(),
                    msg,
                })?;
            }
            if map.insert(entry.id.clone(), entry.boxes).is_some() {
                return Err(EvalError::DuplicateScene(entry.id));
            }
        }
        Ok(map)
    }
}

pub fn load_box_sets(path: &Path) -> Result<SceneBoxes, EvalError> {
    let err = |msg: String| EvalError::File {
        path: path.display().to_string(),
        msg,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let file: BoxSetFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    file.into_map()
}
