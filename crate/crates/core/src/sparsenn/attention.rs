use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::conv::{relu, submanifold_conv, SparseKernel};
use super::tensor::SparseTensor;
use super::SparseError;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-batch mean of the feature rows over occupied sites. Rows are summed in
/// canonical coordinate order so the result does not depend on row order.
pub fn global_avg_pool(input: &SparseTensor) -> Result<BTreeMap<u32, Array1<f64>>, SparseError> {
    if input.is_empty() {
        return Err(SparseError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..input.len()).collect();
    order.sort_unstable_by_key(|&i| input.coords()[i]);
    let mut sums: BTreeMap<u32, (Array1<f64>, usize)> = BTreeMap::new();
    for i in order {
        let e = sums
            .entry(input.coords()[i].batch)
            .or_insert_with(|| (Array1::zeros(input.width()), 0));
        e.0 += &input.feats().row(i);
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(b, (s, n))| (b, s / n as f64)).collect())
}

/// Squeeze-and-excitation bottleneck: `w1` is `C × C/r`, `w2` is `C/r × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeWeights {
    pub name: String,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ratio: usize,
}

impl SeWeights {
    pub fn new(
        name: impl Into<String>,
        w1: Array2<f64>,
        b1: Option<Array1<f64>>,
        w2: Array2<f64>,
        b2: Option<Array1<f64>>,
    ) -> Result<Self, SparseError> {
        let name = name.into();
        let (c, hidden) = w1.dim();
        let bad = |msg: String| SparseError::ShapeMismatch {
            layer: name.clone(),
            msg,
        };
        if hidden == 0 || c % hidden != 0 {
            return Err(bad(format!("bottleneck {hidden} does not divide {c} channels")));
        }
        if w2.dim() != (hidden, c) {
            return Err(bad(format!("fc2 shape {:?}, expected {:?}", w2.dim(), (hidden, c))));
        }
        let b1 = b1.unwrap_or_else(|| Array1::zeros(hidden));
        let b2 = b2.unwrap_or_else(|| Array1::zeros(c));
        if b1.len() != hidden || b2.len() != c {
            return Err(bad("bias length".into()));
        }
        Ok(Self {
            name,
            w1,
            b1,
            w2,
            b2,
            ratio: c / hidden,
        })
    }

    pub fn zeros(name: impl Into<String>, channels: usize, ratio: usize) -> Self {
        let hidden = channels / ratio;
        Self {
            name: name.into(),
            w1: Array2::zeros((channels, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, channels)),
            b2: Array1::zeros(channels),
            ratio,
        }
    }

    pub fn channels(&self) -> usize {
        self.w1.nrows()
    }

    /// `sigmoid(L2(ReLU(L1(pooled))))`.
    pub fn scale(&self, pooled: &Array1<f64>) -> Array1<f64> {
        let h = (pooled.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        (h.dot(&self.w2) + &self.b2).mapv(sigmoid)
    }
}

/// Rescales every site's channels by its batch's excitation vector.
pub fn se_forward(input: &SparseTensor, se: &SeWeights) -> Result<SparseTensor, SparseError> {
    if input.width() != se.channels() {
        return Err(SparseError::ShapeMismatch {
            layer: se.name.clone(),
            msg: format!("expects {} channels, got {}", se.channels(), input.width()),
        });
    }
    let scales: BTreeMap<u32, Array1<f64>> = global_avg_pool(input)?
        .into_iter()
        .map(|(b, pooled)| (b, se.scale(&pooled)))
        .collect();
    let mut feats = input.feats().clone();
    for (row, c) in input.coords().iter().enumerate() {
        let mut r = feats.row_mut(row);
        r *= &scales[&c.batch];
    }
    Ok(input.with_feats(feats))
}

/// Residual unit with excitation on the residual branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SeResBlock {
    pub conv1: SparseKernel,
    pub conv2: SparseKernel,
    pub se: SeWeights,
    /// 1×1×1 shortcut; required when input and output widths differ.
    pub proj: Option<SparseKernel>,
}

/// `ReLU(shortcut(x) + SE(conv2(ReLU(conv1(x)))))` on the input's sites.
pub fn se_res_block(input: &SparseTensor, block: &SeResBlock) -> Result<SparseTensor, SparseError> {
    let h = relu(&submanifold_conv(input, &block.conv1)?);
    let h = se_forward(&submanifold_conv(&h, &block.conv2)?, &block.se)?;
    let shortcut = match &block.proj {
        Some(p) => submanifold_conv(input, p)?,
        None if input.width() == h.width() => input.clone(),
        None => {
            return Err(SparseError::MissingLayer(format!(
                "{} projection ({} -> {} channels)",
                block.conv1.name,
                input.width(),
                h.width()
            )))
        }
    };
    Ok(relu(&shortcut.with_feats(shortcut.feats() + h.feats())))
}
