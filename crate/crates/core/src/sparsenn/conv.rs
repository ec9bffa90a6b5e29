use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::tensor::{Coord, SparseTensor};
use super::SparseError;

/// `{-1, 0, 1}³` in lexicographic (dx, dy, dz) order; index `9(dx+1) + 3(dy+1) + (dz+1)`.
pub fn cube3_offsets() -> Vec<[i32; 3]> {
    let mut v = Vec::with_capacity(27);
    for dx in -1..=1 {
        for dy in -1..=1 {
            for dz in -1..=1 {
                v.push([dx, dy, dz]);
            }
        }
    }
    v
}

/// `{0, 1}³` in lexicographic order; index `4dx + 2dy + dz`.
pub fn block2_offsets() -> Vec<[i32; 3]> {
    let mut v = Vec::with_capacity(8);
    for dx in 0..=1 {
        for dy in 0..=1 {
            for dz in 0..=1 {
                v.push([dx, dy, dz]);
            }
        }
    }
    v
}

pub fn center_offset() -> Vec<[i32; 3]> {
    vec![[0, 0, 0]]
}

/// Offsets with one `N_in × N_out` matrix each, plus an optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    pub name: String,
    pub offsets: Vec<[i32; 3]>,
    pub weights: Vec<Array2<f64>>,
    pub bias: Option<Array1<f64>>,
}

impl SparseKernel {
    pub fn new(
        name: impl Into<String>,
        offsets: Vec<[i32; 3]>,
        weights: Vec<Array2<f64>>,
        bias: Option<Array1<f64>>,
    ) -> Result<Self, SparseError> {
        let name = name.into();
        let bad = |msg: String| SparseError::ShapeMismatch {
            layer: name.clone(),
            msg,
        };
        if offsets.is_empty() || offsets.len() != weights.len() {
            return Err(bad(format!("{} offsets but {} matrices", offsets.len(), weights.len())));
        }
        let dim = weights[0].dim();
        if let Some(w) = weights.iter().find(|w| w.dim() != dim) {
            return Err(bad(format!("matrix shape {:?} differs from {:?}", w.dim(), dim)));
        }
        let distinct: BTreeSet<_> = offsets.iter().collect();
        if distinct.len() != offsets.len() {
            return Err(bad("repeated offset".into()));
        }
        if let Some(b) = &bias {
            if b.len() != dim.1 {
                return Err(bad(format!("bias length {} for {} outputs", b.len(), dim.1)));
            }
        }
        Ok(Self {
            name,
            offsets,
            weights,
            bias,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weights[0].ncols()
    }

    /// A single-offset identity kernel of width `n`.
    pub fn identity(name: impl Into<String>, n: usize) -> Self {
        Self {
            name: name.into(),
            offsets: center_offset(),
            weights: vec![Array2::eye(n)],
            bias: None,
        }
    }

    fn check_input(&self, input: &SparseTensor) -> Result<(), SparseError> {
        if input.width() != self.n_in() {
            return Err(SparseError::ShapeMismatch {
                layer: self.name.clone(),
                msg: format!("expects {} input channels, got {}", self.n_in(), input.width()),
            });
        }
        Ok(())
    }
}

/// Evaluates `x_out(u) = bias + Σ_i W_i · x_in(source(u, i))` over the kernel
/// offsets in kernel order, skipping offsets whose source site is inactive.
fn gather_conv<F>(
    input: &SparseTensor,
    kernel: &SparseKernel,
    out_coords: Vec<Coord>,
    out_stride: u32,
    source: F,
) -> Result<SparseTensor, SparseError>
where
    F: Fn(Coord, [i32; 3]) -> Option<Coord> + Sync,
{
    kernel.check_input(input)?;
    let index = input.index();
    let mut out = Array2::<f64>::zeros((out_coords.len(), kernel.n_out()));
    if let Some(b) = &kernel.bias {
        for mut row in out.rows_mut() {
            row.assign(b);
        }
    }
    for (off, w) in kernel.offsets.iter().zip(&kernel.weights) {
        if w.iter().all(|v| *v == 0.0) {
            continue;
        }
        let pairs: Vec<(usize, usize)> = out_coords
            .par_iter()
            .enumerate()
            .filter_map(|(o, u)| source(*u, *off).and_then(|c| index.get(&c)).map(|&r| (o, r)))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let y = input.feats().select(Axis(0), &rows).dot(w);
        for (j, (o, _)) in pairs.iter().enumerate() {
            let mut dst = out.row_mut(*o);
            dst += &y.row(j);
        }
    }
    Ok(SparseTensor::from_parts_unchecked(out_coords, out, out_stride))
}

/// Generalized sparse convolution evaluated at `out_coords`: the input site
/// read for output `u` and offset `i` is `stride · u + i`.
pub fn sparse_conv(
    input: &SparseTensor,
    kernel: &SparseKernel,
    out_coords: &[Coord],
    stride: u32,
) -> Result<SparseTensor, SparseError> {
    if !stride.is_power_of_two() {
        return Err(SparseError::ShapeMismatch {
            layer: kernel.name.clone(),
            msg: format!("stride {stride} is not a power of two"),
        });
    }
    let s = stride as i32;
    gather_conv(input, kernel, out_coords.to_vec(), input.stride() * stride, move |u, i| {
        Some(u.offset(s, i))
    })
}

/// Convolution on the input's own sites.
pub fn submanifold_conv(input: &SparseTensor, kernel: &SparseKernel) -> Result<SparseTensor, SparseError> {
    sparse_conv(input, kernel, input.coords(), 1)
}

/// Stride-2 convolution onto the parents `floor(u / 2)` of the active sites.
pub fn downsample_conv(input: &SparseTensor, kernel: &SparseKernel) -> Result<SparseTensor, SparseError> {
    let parents: BTreeSet<Coord> = input.coords().iter().map(|c| c.parent()).collect();
    let out: Vec<Coord> = parents.into_iter().collect();
    sparse_conv(input, kernel, &out, 2)
}

/// Generative transposed convolution: every input site `u` emits to `2u + i`
/// for each kernel offset `i`, and `x_out(v) = Σ_{2u+i=v} W_i · x_in(u)`.
pub fn transposed_conv(input: &SparseTensor, kernel: &SparseKernel) -> Result<SparseTensor, SparseError> {
    kernel.check_input(input)?;
    if input.stride() < 2 {
        return Err(SparseError::ShapeMismatch {
            layer: kernel.name.clone(),
            msg: "transposed convolution needs an input stride of at least 2".into(),
        });
    }
    let generated: BTreeSet<Coord> = input
        .coords()
        .iter()
        .flat_map(|u| kernel.offsets.iter().map(move |i| u.offset(2, *i)))
        .collect();
    let out: Vec<Coord> = generated.into_iter().collect();
    gather_conv(input, kernel, out, input.stride() / 2, |v, i| {
        let d = [0, 1, 2].map(|a| v.xyz[a] - i[a]);
        if d.iter().all(|x| x % 2 == 0) {
            Some(Coord::new(v.batch, d.map(|x| x / 2)))
        } else {
            None
        }
    })
}

/// Keeps the sites whose score is at least `threshold`, in input order.
pub fn prune(input: &SparseTensor, keep_scores: &[f64], threshold: f64) -> Result<SparseTensor, SparseError> {
    if keep_scores.len() != input.len() {
        return Err(SparseError::LengthMismatch {
            expected: input.len(),
            got: keep_scores.len(),
        });
    }
    let keep: Vec<usize> = (0..input.len()).filter(|&i| keep_scores[i] >= threshold).collect();
    Ok(input.permuted(&keep))
}

/// Sum over the union of both coordinate sets; absent sites count as zero.
/// The result is in canonical order.
pub fn add_union(a: &SparseTensor, b: &SparseTensor) -> Result<SparseTensor, SparseError> {
    if a.width() != b.width() || a.stride() != b.stride() {
        return Err(SparseError::InvalidTensor(format!(
            "cannot add width {} stride {} to width {} stride {}",
            a.width(),
            a.stride(),
            b.width(),
            b.stride()
        )));
    }
    let union: BTreeSet<Coord> = a.coords().iter().chain(b.coords()).copied().collect();
    let coords: Vec<Coord> = union.into_iter().collect();
    let (ia, ib) = (a.index(), b.index());
    let mut feats = Array2::zeros((coords.len(), a.width()));
    for (row, c) in coords.iter().enumerate() {
        let mut dst = feats.row_mut(row);
        if let Some(&r) = ia.get(c) {
            dst += &a.feats().row(r);
        }
        if let Some(&r) = ib.get(c) {
            dst += &b.feats().row(r);
        }
    }
    Ok(SparseTensor::from_parts_unchecked(coords, feats, a.stride()))
}

pub fn relu(t: &SparseTensor) -> SparseTensor {
    t.with_feats(t.feats().mapv(|v| v.max(0.0)))
}
