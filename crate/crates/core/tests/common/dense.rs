//! Dense reference implementations of the sparse network operations.
//!
//! Every operation is evaluated at every position of a bounding box with
//! inactive sites read as zero, then restricted to the output site set. The
//! transposed convolution is written in scatter form, the opposite of the
//! gather form used by the library.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use pickpoint::sparsenn::{sigmoid, Coord, Network, SeResBlock, SeWeights, SparseKernel, SparseTensor};

pub type SiteMap = BTreeMap<Coord, Array1<f64>>;

pub fn to_map(t: &SparseTensor) -> SiteMap {
    t.coords()
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, t.feats().row(i).to_owned()))
        .collect()
}

/// Maximum absolute difference; panics when the site sets differ.
pub fn max_diff(t: &SparseTensor, expected: &SiteMap) -> f64 {
    let got = to_map(t);
    assert_eq!(got.len(), t.len(), "duplicate sites in result");
    assert_eq!(
        got.keys().collect::<Vec<_>>(),
        expected.keys().collect::<Vec<_>>(),
        "site sets differ"
    );
    got.iter()
        .flat_map(|(c, row)| row.iter().zip(expected[c].iter()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn read(x: &SiteMap, c: &Coord, width: usize) -> Array1<f64> {
    x.get(c).cloned().unwrap_or_else(|| Array1::zeros(width))
}

fn width(x: &SiteMap) -> usize {
    x.values().next().map_or(0, |r| r.len())
}

/// Every integer position of the per-batch bounding box of `sites`.
fn bbox(sites: &BTreeSet<Coord>) -> Vec<Coord> {
    let mut out = Vec::new();
    let batches: BTreeSet<u32> = sites.iter().map(|c| c.batch).collect();
    for b in batches {
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for c in sites.iter().filter(|c| c.batch == b) {
            for a in 0..3 {
                lo[a] = lo[a].min(c.xyz[a]);
                hi[a] = hi[a].max(c.xyz[a]);
            }
        }
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    out.push(Coord::new(b, [x, y, z]));
                }
            }
        }
    }
    out
}

/// `out(u) = bias + Σ_i W_iᵀ x(stride·u + i)` over the whole bounding box of
/// `out_sites`, then restricted to `out_sites`.
pub fn conv(x: &SiteMap, k: &SparseKernel, out_sites: &BTreeSet<Coord>, stride: i32) -> SiteMap {
    let n_in = k.weights[0].nrows();
    let n_out = k.weights[0].ncols();
    let full: SiteMap = bbox(out_sites)
        .into_iter()
        .map(|u| {
            let mut acc = k.bias.clone().unwrap_or_else(|| Array1::zeros(n_out));
            for (off, w) in k.offsets.iter().zip(&k.weights) {
                let src = Coord::new(u.batch, [0, 1, 2].map(|a| stride * u.xyz[a] + off[a]));
                let v = read(x, &src, n_in);
                for o in 0..n_out {
                    for i in 0..n_in {
                        acc[o] += w[[i, o]] * v[i];
                    }
                }
            }
            (u, acc)
        })
        .collect();
    out_sites.iter().map(|c| (*c, full[c].clone())).collect()
}

pub fn submanifold(x: &SiteMap, k: &SparseKernel) -> SiteMap {
    let sites: BTreeSet<Coord> = x.keys().copied().collect();
    conv(x, k, &sites, 1)
}

/// Parents found by scanning the coarse bounding box for any active child.
pub fn downsample(x: &SiteMap, k: &SparseKernel) -> SiteMap {
    let coarse: BTreeSet<Coord> = x
        .keys()
        .map(|c| Coord::new(c.batch, c.xyz.map(|v| v.div_euclid(2))))
        .collect();
    let mut parents = BTreeSet::new();
    for q in bbox(&coarse) {
        let any_child = (0..8).any(|j| {
            let child = Coord::new(q.batch, [0, 1, 2].map(|a| 2 * q.xyz[a] + ((j >> (2 - a)) & 1)));
            x.contains_key(&child)
        });
        if any_child {
            parents.insert(q);
        }
    }
    conv(x, k, &parents, 2)
}

/// Scatter form: every input site pushes `W_iᵀ x(u)` to `2u + i`.
pub fn transposed(x: &SiteMap, k: &SparseKernel) -> SiteMap {
    let n_out = k.weights[0].ncols();
    let mut out: SiteMap = BTreeMap::new();
    for (u, v) in x {
        for (off, w) in k.offsets.iter().zip(&k.weights) {
            let dst = Coord::new(u.batch, [0, 1, 2].map(|a| 2 * u.xyz[a] + off[a]));
            let entry = out.entry(dst).or_insert_with(|| Array1::zeros(n_out));
            for o in 0..n_out {
                for i in 0..v.len() {
                    entry[o] += w[[i, o]] * v[i];
                }
            }
        }
    }
    if let Some(b) = &k.bias {
        for row in out.values_mut() {
            *row += b;
        }
    }
    out
}

pub fn relu(x: &SiteMap) -> SiteMap {
    x.iter().map(|(c, r)| (*c, r.mapv(|v| v.max(0.0)))).collect()
}

pub fn se(x: &SiteMap, w: &SeWeights) -> SiteMap {
    let c = width(x);
    let mut pooled: BTreeMap<u32, (Array1<f64>, f64)> = BTreeMap::new();
    for (site, row) in x {
        let e = pooled.entry(site.batch).or_insert_with(|| (Array1::zeros(c), 0.0));
        e.0 += row;
        e.1 += 1.0;
    }
    let scales: BTreeMap<u32, Array1<f64>> = pooled
        .into_iter()
        .map(|(b, (sum, n))| {
            let mean = sum / n;
            let hidden = w.w1.ncols();
            let mut h = w.b1.clone();
            for j in 0..hidden {
                for i in 0..c {
                    h[j] += mean[i] * w.w1[[i, j]];
                }
                h[j] = h[j].max(0.0);
            }
            let mut s = w.b2.clone();
            for o in 0..c {
                for j in 0..hidden {
                    s[o] += h[j] * w.w2[[j, o]];
                }
                s[o] = sigmoid(s[o]);
            }
            (b, s)
        })
        .collect();
    x.iter().map(|(site, row)| (*site, row * &scales[&site.batch])).collect()
}

pub fn block(x: &SiteMap, b: &SeResBlock) -> SiteMap {
    let h = relu(&submanifold(x, &b.conv1));
    let h = se(&submanifold(&h, &b.conv2), &b.se);
    let shortcut = match &b.proj {
        Some(p) => submanifold(x, p),
        None => x.clone(),
    };
    relu(&shortcut.iter().map(|(c, r)| (*c, r + &h[c])).collect())
}

pub fn backbone(x: &SiteMap, net: &Network) -> Vec<SiteMap> {
    let mut cur = relu(&submanifold(x, &net.stem));
    let mut levels = Vec::new();
    for stage in &net.stages {
        cur = block(&relu(&downsample(&cur, &stage.down)), &stage.block);
        levels.push(cur.clone());
    }
    levels
}
