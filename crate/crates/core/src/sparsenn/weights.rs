//! Weight file layout (all integers u32 little-endian, payloads f32 LE):
//!
//! ```text
//! "SPNW" | version | fingerprint_len | fingerprint (UTF-8) | record_count
//! record: name_len | name (UTF-8) | rank | dims[rank] | values[prod(dims)]
//! ```
//!
//! Records are written in name order, so equal maps encode to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::SparseError;

pub const WEIGHT_MAGIC: &[u8; 4] = b"SPNW";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub dims: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f32>,
}

impl WeightTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            values: vec![0.0; dims.iter().product()],
        }
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.dims.len(), "index rank");
        idx.iter().zip(&self.dims).fold(0, |acc, (i, d)| {
            assert!(i < d, "index out of range");
            acc * d + i
        })
    }

    pub fn set(&mut self, idx: &[usize], value: f32) {
        let k = self.flat_index(idx);
        self.values[k] = value;
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.values[self.flat_index(idx)]
    }
}

/// Named layer tensors plus the architecture fingerprint they were made for.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkWeights {
    pub fingerprint: String,
    pub tensors: BTreeMap<String, WeightTensor>,
}

fn format_err(msg: impl Into<String>) -> SparseError {
    SparseError::WeightFormat(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SparseError> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(format!("truncated weight file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, SparseError> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn string(&mut self, what: &str) -> Result<String, SparseError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| format_err(format!("{what} is not UTF-8")))
    }
}

impl NetworkWeights {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: WeightTensor) -> Result<(), SparseError> {
        let name = name.into();
        if tensor.dims.len() > MAX_RANK || tensor.dims.iter().product::<usize>() != tensor.values.len() {
            return Err(SparseError::ShapeMismatch {
                layer: name,
                msg: format!("dims {:?} vs {} values", tensor.dims, tensor.values.len()),
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut WeightTensor> {
        self.tensors.get_mut(name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
            out.extend_from_slice(s.as_bytes());
        };
        out.write_u32::<LittleEndian>(WEIGHT_FORMAT_VERSION).expect("vec write");
        put_str(&mut out, &self.fingerprint);
        out.write_u32::<LittleEndian>(self.tensors.len() as u32).expect("vec write");
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.write_u32::<LittleEndian>(t.dims.len() as u32).expect("vec write");
            for d in &t.dims {
                out.write_u32::<LittleEndian>(*d as u32).expect("vec write");
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SparseError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic").ok() != Some(&WEIGHT_MAGIC[..]) {
            return Err(format_err("not a weight file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(SparseError::UnsupportedVersion(version));
        }
        let fingerprint = r.string("fingerprint")?;
        let count = r.u32("record count")?;
        let mut w = Self::new(fingerprint);
        for _ in 0..count {
            let name = r.string("record name")?;
            let rank = r.u32("rank")? as usize;
            if rank > MAX_RANK {
                return Err(format_err(format!("{name}: rank {rank} too large")));
            }
            let dims = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| format_err(format!("{name}: dims {dims:?} overflow")))?;
            let payload = r.take(n * 4, &name)?;
            let values = payload.chunks_exact(4).map(LittleEndian::read_f32).collect();
            if w.tensors.insert(name.clone(), WeightTensor { dims, values }).is_some() {
                return Err(format_err(format!("duplicate record {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(format_err("trailing bytes after last record"));
        }
        Ok(w)
    }
}

pub fn save_weights(w: &NetworkWeights, path: &Path) -> Result<(), SparseError> {
    fs::write(path, w.encode()).map_err(|e| SparseError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights, SparseError> {
    let bytes = fs::read(path).map_err(|e| SparseError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    NetworkWeights::decode(&bytes)
}
