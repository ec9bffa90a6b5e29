use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SparseError;
use crate::pointcloud::ColoredPointCloud;

/// A batch-indexed integer site. The derived order (batch, x, y, z) is the
/// canonical order used for sorted outputs and reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub batch: u32,
    pub xyz: [i32; 3],
}

impl Coord {
    pub const fn new(batch: u32, xyz: [i32; 3]) -> Self {
        Self { batch, xyz }
    }

    #[inline]
    pub(crate) fn offset(self, scale: i32, d: [i32; 3]) -> Self {
        Self {
            batch: self.batch,
            xyz: [0, 1, 2].map(|a| scale * self.xyz[a] + d[a]),
        }
    }

    /// Parent site one level coarser (floor division by 2).
    #[inline]
    pub fn parent(self) -> Self {
        Self {
            batch: self.batch,
            xyz: self.xyz.map(|v| v.div_euclid(2)),
        }
    }
}

/// COO sparse tensor. Coordinates are indices at this tensor's level: a site
/// `u` covers the world cube starting at `u · stride · voxel`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    coords: Vec<Coord>,
    feats: Array2<f64>,
    stride: u32,
}

impl SparseTensor {
    pub fn new(coords: Vec<Coord>, feats: Array2<f64>, stride: u32) -> Result<Self, SparseError> {
        if coords.len() != feats.nrows() {
            return Err(SparseError::InvalidTensor(format!(
                "{} coordinates but {} feature rows",
                coords.len(),
                feats.nrows()
            )));
        }
        if !stride.is_power_of_two() {
            return Err(SparseError::InvalidTensor(format!("stride {stride} is not a power of two")));
        }
        let mut seen = HashSet::with_capacity(coords.len());
        if let Some(c) = coords.iter().find(|c| !seen.insert(**c)) {
            return Err(SparseError::InvalidTensor(format!("duplicate coordinate {c:?}")));
        }
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(SparseError::InvalidTensor("non-finite feature".into()));
        }
        Ok(Self { coords, feats, stride })
    }

    pub(crate) fn from_parts_unchecked(coords: Vec<Coord>, feats: Array2<f64>, stride: u32) -> Self {
        debug_assert_eq!(coords.len(), feats.nrows());
        Self { coords, feats, stride }
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn feats(&self) -> &Array2<f64> {
        &self.feats
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Feature width N.
    pub fn width(&self) -> usize {
        self.feats.ncols()
    }

    pub fn index(&self) -> HashMap<Coord, usize> {
        self.coords.iter().enumerate().map(|(i, c)| (*c, i)).collect()
    }

    /// Same sites and rows, sorted in canonical coordinate order.
    pub fn canonical(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&i| self.coords[i]);
        self.permuted(&order)
    }

    /// Rows reordered so that row `k` of the result is row `order[k]` here.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let coords = order.iter().map(|&i| self.coords[i]).collect();
        let feats = self.feats.select(ndarray::Axis(0), order);
        Self::from_parts_unchecked(coords, feats, self.stride)
    }

    pub fn with_feats(&self, feats: Array2<f64>) -> Self {
        assert_eq!(feats.nrows(), self.len());
        Self::from_parts_unchecked(self.coords.clone(), feats, self.stride)
    }

    /// Distinct batch indices, ascending.
    pub fn batches(&self) -> Vec<u32> {
        let mut b: Vec<u32> = self.coords.iter().map(|c| c.batch).collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

/// Quantizes a cloud on a world-anchored grid (`floor(p / voxel_size)`) into
/// a stride-1 tensor, batch 0, with the mean normalized RGB of each voxel.
/// Sites come out in canonical order.
pub fn build_sparse_tensor(cloud: &ColoredPointCloud, voxel_size: f64) -> Result<SparseTensor, SparseError> {
    if cloud.is_empty() {
        return Err(SparseError::EmptyCloud);
    }
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(SparseError::InvalidTensor(format!("voxel size {voxel_size}")));
    }
    let mut cells: HashMap<Coord, ([f64; 3], u32)> = HashMap::new();
    for p in cloud.points() {
        let xyz = p.position.map(|v| {
            let q = (v / voxel_size).floor();
            q.clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32
        });
        let e = cells.entry(Coord::new(0, xyz)).or_insert(([0.0; 3], 0));
        for c in 0..3 {
            e.0[c] += f64::from(p.color[c]) / 255.0;
        }
        e.1 += 1;
    }
    let mut sites: Vec<(Coord, ([f64; 3], u32))> = cells.into_iter().collect();
    sites.sort_unstable_by_key(|(c, _)| *c);
    let mut feats = Array2::zeros((sites.len(), 3));
    for (row, (_, (sum, n))) in sites.iter().enumerate() {
        for c in 0..3 {
            feats[[row, c]] = sum[c] / f64::from(*n);
        }
    }
    let coords = sites.into_iter().map(|(c, _)| c).collect();
    Ok(SparseTensor::from_parts_unchecked(coords, feats, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::ColoredPoint;

    #[test]
    fn quantization_examples() {
        let one = ColoredPointCloud::new(vec![ColoredPoint::new([0.015, -0.001, 0.0], [255, 0, 51]).unwrap()], None);
        let t = build_sparse_tensor(&one, 0.01).unwrap();
        assert_eq!(t.coords(), &[Coord::new(0, [1, -1, 0])]);
        assert_eq!(t.feats().row(0).to_vec(), vec![1.0, 0.0, 0.2]);

        let two = ColoredPointCloud::new(
            vec![
                ColoredPoint::new([0.001, 0.001, 0.001], [0, 0, 0]).unwrap(),
                ColoredPoint::new([0.002, 0.002, 0.002], [255, 255, 255]).unwrap(),
            ],
            None,
        );
        let t = build_sparse_tensor(&two, 0.01).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.feats().row(0).to_vec(), vec![0.5; 3]);
        assert!(matches!(
            build_sparse_tensor(&ColoredPointCloud::default(), 0.01),
            Err(SparseError::EmptyCloud)
        ));
    }

    #[test]
    fn rejects_duplicates_and_bad_stride() {
        let c = Coord::new(0, [0, 0, 0]);
        assert!(SparseTensor::new(vec![c, c], Array2::zeros((2, 1)), 1).is_err());
        assert!(SparseTensor::new(vec![c], Array2::zeros((1, 1)), 3).is_err());
        assert!(SparseTensor::new(vec![c, Coord::new(1, [0, 0, 0])], Array2::zeros((2, 1)), 2).is_ok());
    }

    #[test]
    fn parent_floors_negative() {
        assert_eq!(Coord::new(0, [5, 3, 7]).parent().xyz, [2, 1, 3]);
        assert_eq!(Coord::new(0, [-1, -2, -3]).parent().xyz, [-1, -1, -2]);
    }
}
