//! Four-level SE-residual backbone, generative neck with optional pruning,
//! shared 1×1×1 head and box decoding.
//!
//! Layer names (`<layer>.weight` is `[offsets, in, out]`, `<layer>.bias` is
//! `[out]` and optional):
//!
//! | layer                          | offsets | in → out            |
//! |--------------------------------|---------|---------------------|
//! | `stem`                         | 3³      | 3 → C1              |
//! | `stage{k}.down`                | 2³      | C(k−1) → Ck (C0=C1) |
//! | `stage{k}.conv1`, `.conv2`     | 3³      | Ck → Ck             |
//! | `stage{k}.se.fc1` / `.se.fc2`  | matrix  | Ck → Ck/r → Ck      |
//! | `neck.up{l}` (l = 1..3)        | 2³      | C(l+1) → Cl         |
//! | `neck.prune{l}` (optional)     | 1       | Cl → 1              |
//! | `neck.out{l}` (l = 1..4)       | 3³      | Cl → H              |
//! | `head.cls` / `.reg` / `.ctr`   | 1       | H → 1 / 6 / 1       |
//!
//! The SE matrices are stored as `[in, out]`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{se_res_block, sigmoid, SeResBlock, SeWeights};
use super::conv::{
    add_union, block2_offsets, center_offset, cube3_offsets, downsample_conv, prune, relu, submanifold_conv,
    transposed_conv, SparseKernel,
};
use super::tensor::{build_sparse_tensor, Coord, SparseTensor};
use super::weights::{NetworkWeights, WeightTensor};
use super::SparseError;
use crate::eval::{iou3d, BoundingBox3D};
use crate::pointcloud::ColoredPointCloud;

pub const LEVELS: usize = 4;
/// Site keep probability used by the neck's pruning branches.
pub const PRUNE_THRESHOLD: f64 = 0.5;
/// Size parameters are clamped to this magnitude before `exp`.
const MAX_LOG_SIZE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub channels: [usize; LEVELS],
    pub head_width: usize,
    pub se_ratio: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            channels: [64, 128, 256, 256],
            head_width: 64,
            se_ratio: 16,
        }
    }
}

impl NetworkConfig {
    pub fn fingerprint(&self) -> String {
        let c = self.channels;
        format!(
            "se-res-sparse-det/in{}/c{}-{}-{}-{}/h{}/r{}",
            self.in_channels, c[0], c[1], c[2], c[3], self.head_width, self.se_ratio
        )
    }

    /// Channel width feeding stage `k` (0-based).
    fn stage_input(&self, k: usize) -> usize {
        if k == 0 {
            self.channels[0]
        } else {
            self.channels[k - 1]
        }
    }

    /// Every weight the forward pass reads, with its shape, in a fixed order.
    /// Optional pruning layers are listed only when `with_prune` is set.
    pub fn layer_shapes(&self, with_prune: bool) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        let mut conv = |name: String, k: usize, cin: usize, cout: usize| {
            v.push((format!("{name}.weight"), vec![k, cin, cout]));
            v.push((format!("{name}.bias"), vec![cout]));
        };
        conv("stem".into(), 27, self.in_channels, self.channels[0]);
        for k in 0..LEVELS {
            let c = self.channels[k];
            conv(format!("stage{}.down", k + 1), 8, self.stage_input(k), c);
            conv(format!("stage{}.conv1", k + 1), 27, c, c);
            conv(format!("stage{}.conv2", k + 1), 27, c, c);
        }
        for l in 1..LEVELS {
            conv(format!("neck.up{l}"), 8, self.channels[l], self.channels[l - 1]);
            if with_prune {
                conv(format!("neck.prune{l}"), 1, self.channels[l - 1], 1);
            }
        }
        for l in 1..=LEVELS {
            conv(format!("neck.out{l}"), 27, self.channels[l - 1], self.head_width);
        }
        conv("head.cls".into(), 1, self.head_width, 1);
        conv("head.reg".into(), 1, self.head_width, 6);
        conv("head.ctr".into(), 1, self.head_width, 1);
        for k in 0..LEVELS {
            let c = self.channels[k];
            let h = c / self.se_ratio;
            v.push((format!("stage{}.se.fc1.weight", k + 1), vec![c, h]));
            v.push((format!("stage{}.se.fc1.bias", k + 1), vec![h]));
            v.push((format!("stage{}.se.fc2.weight", k + 1), vec![h, c]));
            v.push((format!("stage{}.se.fc2.bias", k + 1), vec![c]));
        }
        v
    }

    /// All-zero weights for every required layer.
    pub fn zero_weights(&self) -> NetworkWeights {
        let mut w = NetworkWeights::new(self.fingerprint());
        for (name, dims) in self.layer_shapes(false) {
            w.tensors.insert(name, WeightTensor::zeros(&dims));
        }
        w
    }

    /// He-normal weights and small normal biases, pruning branches included.
    pub fn random_weights(&self, seed: u64) -> NetworkWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = NetworkWeights::new(self.fingerprint());
        for (name, dims) in self.layer_shapes(true) {
            let std = if name.ends_with(".bias") {
                0.01
            } else {
                let fan_in: usize = dims[..dims.len() - 1].iter().product();
                (2.0 / fan_in as f64).sqrt()
            };
            let dist = Normal::new(0.0, std).expect("positive std");
            let n: usize = dims.iter().product();
            let values = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
            w.tensors.insert(name, WeightTensor { dims, values });
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub down: SparseKernel,
    pub block: SeResBlock,
}

/// Parsed, shape-checked network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub stem: SparseKernel,
    pub stages: Vec<Stage>,
    pub neck_up: Vec<SparseKernel>,
    pub neck_prune: Vec<Option<SparseKernel>>,
    pub neck_out: Vec<SparseKernel>,
    pub head_cls: SparseKernel,
    pub head_reg: SparseKernel,
    pub head_ctr: SparseKernel,
}

fn matrix(values: &[f32], rows: usize, cols: usize) -> Array2<f64> {
    ArrayView2::from_shape((rows, cols), values)
        .expect("shape checked")
        .mapv(f64::from)
}

fn shape_err(layer: &str, msg: String) -> SparseError {
    SparseError::ShapeMismatch {
        layer: layer.to_string(),
        msg,
    }
}

fn read_bias(w: &NetworkWeights, name: &str, n: usize) -> Result<Option<Array1<f64>>, SparseError> {
    let key = format!("{name}.bias");
    match w.get(&key) {
        None => Ok(None),
        Some(t) if t.dims == [n] => Ok(Some(t.values.iter().map(|v| f64::from(*v)).collect())),
        Some(t) => Err(shape_err(&key, format!("dims {:?}, expected [{n}]", t.dims))),
    }
}

fn read_kernel(
    w: &NetworkWeights,
    name: &str,
    offsets: Vec<[i32; 3]>,
    cin: usize,
    cout: usize,
) -> Result<SparseKernel, SparseError> {
    let key = format!("{name}.weight");
    let t = w.get(&key).ok_or_else(|| SparseError::MissingLayer(key.clone()))?;
    let want = [offsets.len(), cin, cout];
    if t.dims != want {
        return Err(shape_err(&key, format!("dims {:?}, expected {want:?}", t.dims)));
    }
    let per = cin * cout;
    let weights = (0..offsets.len())
        .map(|k| matrix(&t.values[k * per..(k + 1) * per], cin, cout))
        .collect();
    SparseKernel::new(name, offsets, weights, read_bias(w, name, cout)?)
}

fn read_matrix(w: &NetworkWeights, key: &str, rows: usize, cols: usize) -> Result<Array2<f64>, SparseError> {
    let t = w.get(key).ok_or_else(|| SparseError::MissingLayer(key.to_string()))?;
    if t.dims != [rows, cols] {
        return Err(shape_err(key, format!("dims {:?}, expected [{rows}, {cols}]", t.dims)));
    }
    Ok(matrix(&t.values, rows, cols))
}

impl Network {
    pub fn from_weights(w: &NetworkWeights, config: NetworkConfig) -> Result<Self, SparseError> {
        let expected = config.fingerprint();
        if w.fingerprint != expected {
            return Err(SparseError::Fingerprint {
                expected,
                found: w.fingerprint.clone(),
            });
        }
        let c = config.channels;
        if c.iter().any(|ch| *ch == 0 || ch % config.se_ratio != 0) {
            return Err(shape_err("config", format!("se ratio {} must divide {c:?}", config.se_ratio)));
        }
        let stem = read_kernel(w, "stem", cube3_offsets(), config.in_channels, c[0])?;
        let mut stages = Vec::with_capacity(LEVELS);
        for k in 0..LEVELS {
            let p = format!("stage{}", k + 1);
            let ch = c[k];
            let hidden = ch / config.se_ratio;
            let se_name = format!("{p}.se");
            let se = SeWeights::new(
                se_name.clone(),
                read_matrix(w, &format!("{se_name}.fc1.weight"), ch, hidden)?,
                read_bias(w, &format!("{se_name}.fc1"), hidden)?,
                read_matrix(w, &format!("{se_name}.fc2.weight"), hidden, ch)?,
                read_bias(w, &format!("{se_name}.fc2"), ch)?,
            )?;
            stages.push(Stage {
                down: read_kernel(w, &format!("{p}.down"), block2_offsets(), config.stage_input(k), ch)?,
                block: SeResBlock {
                    conv1: read_kernel(w, &format!("{p}.conv1"), cube3_offsets(), ch, ch)?,
                    conv2: read_kernel(w, &format!("{p}.conv2"), cube3_offsets(), ch, ch)?,
                    se,
                    proj: None,
                },
            });
        }
        let mut neck_up = Vec::new();
        let mut neck_prune = Vec::new();
        for l in 1..LEVELS {
            neck_up.push(read_kernel(w, &format!("neck.up{l}"), block2_offsets(), c[l], c[l - 1])?);
            let name = format!("neck.prune{l}");
            neck_prune.push(if w.get(&format!("{name}.weight")).is_some() {
                Some(read_kernel(w, &name, center_offset(), c[l - 1], 1)?)
            } else {
                None
            });
        }
        let neck_out = (1..=LEVELS)
            .map(|l| read_kernel(w, &format!("neck.out{l}"), cube3_offsets(), c[l - 1], config.head_width))
            .collect::<Result<_, _>>()?;
        let h = config.head_width;
        Ok(Self {
            config,
            stem,
            stages,
            neck_up,
            neck_prune,
            neck_out,
            head_cls: read_kernel(w, "head.cls", center_offset(), h, 1)?,
            head_reg: read_kernel(w, "head.reg", center_offset(), h, 6)?,
            head_ctr: read_kernel(w, "head.ctr", center_offset(), h, 1)?,
        })
    }
}

/// Stem plus four downsampling SE-residual stages; returns the stage outputs
/// at strides 2, 4, 8 and 16.
pub fn backbone_forward(input: &SparseTensor, net: &Network) -> Result<Vec<SparseTensor>, SparseError> {
    if input.stride() != 1 {
        return Err(shape_err("stem", format!("input stride {} (expected 1)", input.stride())));
    }
    let mut x = relu(&submanifold_conv(input, &net.stem)?);
    let mut levels = Vec::with_capacity(LEVELS);
    for stage in &net.stages {
        let d = relu(&downsample_conv(&x, &stage.down)?);
        x = se_res_block(&d, &stage.block)?;
        levels.push(x.clone());
    }
    Ok(levels)
}

/// Top-down pass: each level adds the transposed-convolved coarser level on
/// the union of their sites, optionally prunes, then maps to the head width.
pub fn neck_forward(levels: &[SparseTensor], net: &Network) -> Result<Vec<SparseTensor>, SparseError> {
    if levels.len() != LEVELS {
        return Err(shape_err("neck", format!("{} levels (expected {LEVELS})", levels.len())));
    }
    let mut outs: Vec<Option<SparseTensor>> = vec![None; LEVELS];
    let mut p = levels[LEVELS - 1].clone();
    outs[LEVELS - 1] = Some(relu(&submanifold_conv(&p, &net.neck_out[LEVELS - 1])?));
    for l in (0..LEVELS - 1).rev() {
        let up = transposed_conv(&p, &net.neck_up[l])?;
        p = add_union(&levels[l], &up)?;
        if let Some(k) = &net.neck_prune[l] {
            let scores: Vec<f64> = submanifold_conv(&p, k)?.feats().column(0).iter().map(|v| sigmoid(*v)).collect();
            p = prune(&p, &scores, PRUNE_THRESHOLD)?;
        }
        outs[l] = Some(relu(&submanifold_conv(&p, &net.neck_out[l])?));
    }
    Ok(outs.into_iter().map(|o| o.expect("every level filled")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub coord: Coord,
    pub stride: u32,
    pub class_prob: f64,
    /// Center offsets Δx, Δy, Δz in meters, then log-size parameters.
    pub box_params: [f64; 6],
    pub centerness: f64,
}

/// Shared 1×1×1 classification, regression and centerness branches on every
/// level's sites.
pub fn head_forward(levels: &[SparseTensor], net: &Network) -> Result<Vec<Vec<HeadOutput>>, SparseError> {
    levels
        .iter()
        .map(|t| {
            let cls = submanifold_conv(t, &net.head_cls)?;
            let reg = submanifold_conv(t, &net.head_reg)?;
            let ctr = submanifold_conv(t, &net.head_ctr)?;
            Ok(t.coords()
                .iter()
                .enumerate()
                .map(|(i, c)| HeadOutput {
                    coord: *c,
                    stride: t.stride(),
                    class_prob: sigmoid(cls.feats()[[i, 0]]),
                    box_params: [0, 1, 2, 3, 4, 5].map(|j| reg.feats()[[i, j]]),
                    centerness: sigmoid(ctr.feats()[[i, 0]]),
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub voxel_size: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl DecodeParams {
    pub fn new(voxel_size: f64, score_threshold: f64, nms_iou: f64) -> Result<Self, SparseError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(SparseError::InvalidParam(format!("voxel size {voxel_size}")));
        }
        for (name, v) in [("score-threshold", score_threshold), ("nms-iou", nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SparseError::InvalidParam(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            voxel_size,
            score_threshold,
            nms_iou,
        })
    }
}

/// Turns head outputs into scored boxes and applies greedy NMS per batch.
/// Boxes come out per batch in descending score order; ties keep level and
/// site order.
pub fn decode_detections(outputs: &[Vec<HeadOutput>], params: &DecodeParams) -> BTreeMap<u32, Vec<BoundingBox3D>> {
    let mut per_batch: BTreeMap<u32, Vec<BoundingBox3D>> = BTreeMap::new();
    for o in outputs.iter().flatten() {
        let score = o.class_prob * o.centerness;
        if score < params.score_threshold {
            continue;
        }
        let cell = f64::from(o.stride) * params.voxel_size;
        let center = [0, 1, 2].map(|a| (f64::from(o.coord.xyz[a]) + 0.5) * cell + o.box_params[a]);
        let size = [3, 4, 5].map(|a| o.box_params[a].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE).exp() * cell);
        per_batch
            .entry(o.coord.batch)
            .or_default()
            .push(BoundingBox3D::new(center, size).with_score(score));
    }
    for boxes in per_batch.values_mut() {
        boxes.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
        let mut kept: Vec<BoundingBox3D> = Vec::new();
        for b in boxes.drain(..) {
            if kept.iter().all(|k| iou3d(k, &b) < params.nms_iou) {
                kept.push(b);
            }
        }
        *boxes = kept;
    }
    per_batch
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    /// Quantization step of the network input grid, meters.
    pub tensor_voxel: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            tensor_voxel: 0.005,
            score_threshold: 0.3,
            nms_iou: 0.5,
        }
    }
}

/// Full forward pass on one cloud: quantize, backbone, neck, head, decode.
pub fn detect(cloud: &ColoredPointCloud, net: &Network, params: &DetectParams) -> Result<Vec<BoundingBox3D>, SparseError> {
    let decode = DecodeParams::new(params.tensor_voxel, params.score_threshold, params.nms_iou)?;
    let input = build_sparse_tensor(cloud, params.tensor_voxel)?;
    let levels = backbone_forward(&input, net)?;
    let neck = neck_forward(&levels, net)?;
    let heads = head_forward(&neck, net)?;
    Ok(decode_detections(&heads, &decode).remove(&0).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            in_channels: 3,
            channels: [4, 4, 8, 8],
            head_width: 4,
            se_ratio: 2,
        }
    }

    fn single_site(xyz: [i32; 3]) -> SparseTensor {
        SparseTensor::new(vec![Coord::new(0, xyz)], Array2::from_elem((1, 3), 0.5), 1).unwrap()
    }

    #[test]
    fn level_widths_strides_and_sites() {
        let cfg = NetworkConfig::default();
        let net = Network::from_weights(&cfg.random_weights(1), cfg).unwrap();
        let u = [13, -6, 37];
        let levels = backbone_forward(&single_site(u), &net).unwrap();
        let widths: Vec<usize> = levels.iter().map(SparseTensor::width).collect();
        assert_eq!(widths, [64, 128, 256, 256]);
        let strides: Vec<u32> = levels.iter().map(SparseTensor::stride).collect();
        assert_eq!(strides, [2, 4, 8, 16]);
        for (l, t) in levels.iter().enumerate() {
            let s = 1 << (l + 1);
            assert_eq!(t.coords(), &[Coord::new(0, u.map(|v| v.div_euclid(s)))]);
        }
    }

    #[test]
    fn zero_head_gives_half_probabilities() {
        let cfg = small_config();
        let net = Network::from_weights(&cfg.zero_weights(), cfg).unwrap();
        let levels = backbone_forward(&single_site([0, 0, 0]), &net).unwrap();
        let neck = neck_forward(&levels, &net).unwrap();
        let heads = head_forward(&neck, &net).unwrap();
        for o in heads.iter().flatten() {
            assert_eq!(o.class_prob, 0.5);
            assert_eq!(o.centerness, 0.5);
            assert_eq!(o.box_params, [0.0; 6]);
        }
        assert_eq!(heads[3].len(), 1);
    }

    #[test]
    fn missing_and_misshaped_layers_are_named() {
        let cfg = small_config();
        let mut w = cfg.zero_weights();
        w.tensors.remove("stage3.conv2.weight");
        let err = Network::from_weights(&w, cfg).unwrap_err();
        assert!(err.to_string().contains("stage3.conv2.weight"), "{err}");
        let mut w = cfg.zero_weights();
        w.tensors.insert("stage2.down.weight".into(), WeightTensor::zeros(&[8, 4, 5]));
        let err = Network::from_weights(&w, cfg).unwrap_err();
        assert!(err.to_string().contains("stage2.down"), "{err}");
        let mut w = cfg.zero_weights();
        w.fingerprint = "other".into();
        assert!(matches!(Network::from_weights(&w, cfg), Err(SparseError::Fingerprint { .. })));
    }

    fn out(xyz: [i32; 3], prob: f64) -> HeadOutput {
        HeadOutput {
            coord: Coord::new(0, xyz),
            stride: 2,
            class_prob: prob,
            box_params: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            centerness: 1.0,
        }
    }

    #[test]
    fn decode_threshold_and_nms() {
        let p = DecodeParams::new(0.01, 0.3, 0.5).unwrap();
        assert!(decode_detections(&[vec![out([0, 0, 0], 0.2)]], &p).is_empty());
        let boxes = decode_detections(&[vec![out([0, 0, 0], 0.8), out([0, 0, 0], 0.9)]], &p);
        assert_eq!(boxes[&0].len(), 1);
        assert_eq!(boxes[&0][0].score, Some(0.9));
        assert_eq!(boxes[&0][0].center, [0.01, 0.01, 0.01]);
        assert_eq!(boxes[&0][0].size, [0.02, 0.02, 0.02]);
        let boxes = decode_detections(&[vec![out([0, 0, 0], 0.8)], vec![out([5, 0, 0], 0.9)]], &p);
        assert_eq!(boxes[&0].len(), 2);
        assert!(DecodeParams::new(0.01, 1.5, 0.5).is_err());
    }
}
