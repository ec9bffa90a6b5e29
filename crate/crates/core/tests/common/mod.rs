#![allow(dead_code)]

pub mod bin;
pub mod dense;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use pickpoint::pointcloud::{ColoredPoint, ColoredPointCloud};
use pickpoint::sparsenn::{Coord, SparseKernel, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random sites of a `size³` grid in `batches` batches, each kept with
/// probability `density` (at least one per batch), with standard normal features.
pub fn random_tensor(rng: &mut ChaCha8Rng, batches: u32, size: i32, density: f64, channels: usize) -> SparseTensor {
    let mut coords = Vec::new();
    for b in 0..batches {
        let start = coords.len();
        for x in 0..size {
            for y in 0..size {
                for z in 0..size {
                    if rng.random::<f64>() < density {
                        coords.push(Coord::new(b, [x, y, z]));
                    }
                }
            }
        }
        if coords.len() == start {
            coords.push(Coord::new(b, [rng.random_range(0..size), rng.random_range(0..size), rng.random_range(0..size)]));
        }
    }
    // shuffle so no test depends on canonical input order
    for i in (1..coords.len()).rev() {
        let j = rng.random_range(0..=i);
        coords.swap(i, j);
    }
    let feats = Array2::from_shape_fn((coords.len(), channels), |_| normal(rng));
    SparseTensor::new(coords, feats, 1).unwrap()
}

pub fn random_kernel(
    rng: &mut ChaCha8Rng,
    name: &str,
    offsets: Vec<[i32; 3]>,
    n_in: usize,
    n_out: usize,
    bias: bool,
) -> SparseKernel {
    let weights = offsets
        .iter()
        .map(|_| Array2::from_shape_fn((n_in, n_out), |_| 0.5 * normal(rng)))
        .collect();
    let bias = bias.then(|| Array1::from_shape_fn(n_out, |_| normal(rng)));
    SparseKernel::new(name, offsets, weights, bias).unwrap()
}

/// `n` points in a `extent`-sided cube with random colors.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> ColoredPointCloud {
    let pts = (0..n)
        .map(|_| ColoredPoint {
            position: [0, 1, 2].map(|_| rng.random_range(0.0..extent)),
            color: [0, 1, 2].map(|_| rng.random::<u8>()),
        })
        .collect();
    ColoredPointCloud::new(pts, None)
}

pub fn bf_color_filter(cloud: &ColoredPointCloud, sigma1: u8, sigma2: u8) -> Vec<ColoredPoint> {
    let mut out = Vec::new();
    for p in cloud.points() {
        if p.color[0] > sigma1 && p.color[1] <= sigma2 {
            out.push(*p);
        }
    }
    out
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// All-pairs k-NN mean distances, then the population μ ± α·σ window.
pub fn bf_statistical_filter(cloud: &ColoredPointCloud, k: usize, alpha: f64) -> Vec<ColoredPoint> {
    let pts = cloud.points();
    let n = pts.len();
    let mut mean_d = vec![0.0; n];
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        for j in 0..n {
            if j != i {
                row.push(d2(&pts[i].position, &pts[j].position));
            }
        }
        row.select_nth_unstable_by(k - 1, f64::total_cmp);
        let nearest = &mut row[..k];
        nearest.sort_by(f64::total_cmp);
        mean_d[i] = nearest.iter().map(|v| v.sqrt()).sum::<f64>() / k as f64;
    }
    let mu = mean_d.iter().sum::<f64>() / n as f64;
    let var = mean_d.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    (0..n)
        .filter(|&i| mean_d[i] >= mu - alpha * sigma && mean_d[i] <= mu + alpha * sigma)
        .map(|i| pts[i])
        .collect()
}

/// Voxel hashing with a min-bound origin; sums accumulate in input order.
pub fn bf_voxel_downsample(cloud: &ColoredPointCloud, voxel: f64) -> Vec<ColoredPoint> {
    let pts = cloud.points();
    let mut lo = [f64::INFINITY; 3];
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p.position[a]);
        }
    }
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], [u64; 3], u64)> = BTreeMap::new();
    for p in pts {
        let key = [0, 1, 2].map(|a| ((p.position[a] - lo[a]) / voxel).floor() as i64);
        let e = cells.entry(key).or_insert(([0.0; 3], [0; 3], 0));
        for a in 0..3 {
            e.0[a] += p.position[a];
            e.1[a] += u64::from(p.color[a]);
        }
        e.2 += 1;
    }
    cells
        .values()
        .map(|(s, c, n)| ColoredPoint {
            position: s.map(|v| v / *n as f64),
            // round half up
            color: c.map(|v| ((2 * v + n) / (2 * n)) as u8),
        })
        .collect()
}
