//! Hand-set weights for the default architecture that respond to stem-tinted
//! sites (green channel above [`STEM_GREEN_FLOOR`]) and place a fixed-size
//! box on stride-2 cells that are local maxima of a vertically smoothed stem
//! count.
//!
//! Channel use, everything else zero:
//! - stem: ch0 = ReLU(g), ch1 = ReLU(g − 1) with g = (G − floor) / span, so
//!   ch0 − ch1 is g clipped to [0, 1]
//! - stage1.down: ch0 = sum of the clipped indicator over the 2³ children
//! - stage1.conv1 / conv2: ch2 = [1, 2, 3, 2, 1] sum of ch0 along z; the zero
//!   excitation halves it. Smoothing is vertical only because submanifold
//!   sites exist only on the observed, camera-facing side of a stem.
//! - neck.out1: ch0 = S = ch2 at the site; ch1..26 = ReLU(S(u + d) − S(u) [+ ε])
//!   for the 26 neighbors d, with ε on lexicographically positive d so that
//!   exact ties keep only the larger coordinate
//! - head: class logit = gain · S − penalty · Σ ch1..26 − offset, centerness
//!   fixed, zero offsets
//!
//! Deeper stages carry nothing, so only the stride-2 level can fire.

use super::conv::cube3_offsets;
use super::network::NetworkConfig;
use super::weights::NetworkWeights;

/// Green channel (0–255) above which a site counts as stem.
pub const STEM_GREEN_FLOOR: f64 = 90.0;
/// Green excess that maps to a full stem indicator.
pub const STEM_GREEN_SPAN: f64 = 15.0;
/// Side of the emitted boxes, in stride-2 cells.
pub const BOX_CELLS: f64 = 3.0;
const CLASS_GAIN: f64 = 2.0;
const CLASS_OFFSET: f64 = 4.5;
const TIE_EPS: f64 = 0.05;
const NEIGHBOR_PENALTY: f64 = 120.0;
const CENTERNESS_LOGIT: f64 = 4.0;
const CENTER: usize = 13;

/// Weights for [`NetworkConfig::default`].
pub fn constructed_weights() -> NetworkWeights {
    let cfg = NetworkConfig::default();
    let mut w = cfg.zero_weights();
    let mut set = |name: &str, idx: &[usize], v: f64| {
        w.get_mut(name)
            .unwrap_or_else(|| panic!("layer {name} exists"))
            .set(idx, v as f32);
    };
    // input channel 1 is green normalized to [0, 1]
    set("stem.weight", &[CENTER, 1, 0], 255.0 / STEM_GREEN_SPAN);
    set("stem.weight", &[CENTER, 1, 1], 255.0 / STEM_GREEN_SPAN);
    set("stem.bias", &[0], -STEM_GREEN_FLOOR / STEM_GREEN_SPAN);
    set("stem.bias", &[1], -STEM_GREEN_FLOOR / STEM_GREEN_SPAN - 1.0);
    for k in 0..8 {
        set("stage1.down.weight", &[k, 0, 0], 1.0);
        set("stage1.down.weight", &[k, 1, 0], -1.0);
    }
    for (k, d) in cube3_offsets().iter().enumerate() {
        if d[0] == 0 && d[1] == 0 {
            set("stage1.conv1.weight", &[k, 0, 1], 1.0);
            set("stage1.conv2.weight", &[k, 1, 2], 1.0);
        }
    }
    set("neck.out1.weight", &[CENTER, 2, 0], 1.0);
    set("head.cls.weight", &[0, 0, 0], CLASS_GAIN);
    let mut ch = 1;
    for k in (0..27).filter(|&k| k != CENTER) {
        set("neck.out1.weight", &[k, 2, ch], 1.0);
        set("neck.out1.weight", &[CENTER, 2, ch], -1.0);
        if k > CENTER {
            set("neck.out1.bias", &[ch], TIE_EPS);
        }
        set("head.cls.weight", &[0, ch, 0], -NEIGHBOR_PENALTY);
        ch += 1;
    }
    set("head.cls.bias", &[0], -CLASS_OFFSET);
    set("head.ctr.bias", &[0], CENTERNESS_LOGIT);
    for a in 3..6 {
        set("head.reg.bias", &[a], BOX_CELLS.ln());
    }
    w
}
