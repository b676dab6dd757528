//! Dense f64 tensors, channel softmax, arg-max prediction and the `CSEG`
//! binary interchange format.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "CSEG" | 0x01 | rank: u8 | rank x dim: u32 | prod(dims) x f64
//! ```
//!
//! Integer maps (labels, blob ids, super-pixel ids) use the same layout with
//! every value an exactly representable integer.

use std::fs;
use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::grid::{Grid, HardMask};

pub const MAGIC: &[u8; 4] = b"CSEG";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(dim_err!("tensor needs at least one dimension"));
        }
        if dims.contains(&0) {
            return Err(dim_err!("tensor extents must be positive, got {dims:?}"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(dim_err!("dims {dims:?} need {n} values, got {}", data.len()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(channels, height, width)` for a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(dim_err!("expected a CxHxW tensor, got dims {other:?}")),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, i: usize, j: usize) -> f64 {
        let (h, w) = (self.dims[1], self.dims[2]);
        self.data[(c * h + i) * w + j]
    }

    pub fn from_grid<T: Copy + Into<f64>>(grid: &Grid<T>) -> Self {
        Tensor {
            dims: vec![grid.height(), grid.width()],
            data: grid.as_slice().iter().map(|&v| v.into()).collect(),
        }
    }

    /// Rank-2 tensor of non-negative integers into a grid.
    pub fn to_u32_grid(&self) -> Result<Grid<u32>> {
        let (h, w) = match self.dims.as_slice() {
            &[h, w] => (h, w),
            other => return Err(dim_err!("expected an HxW integer map, got {other:?}")),
        };
        let mut out = Vec::with_capacity(self.data.len());
        for &v in &self.data {
            if !(v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0) {
                return Err(Error::Format(format!("value {v} is not a u32 id")));
            }
            out.push(v as u32);
        }
        Grid::from_vec(h, w, out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decode one tensor from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn from_bytes_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 6 {
            return Err(Error::Format("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected CSEG".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        let rank = bytes[5] as usize;
        if rank == 0 {
            return Err(Error::Format("rank-0 tensor".into()));
        }
        let mut pos = 6;
        if bytes.len() < pos + 4 * rank {
            return Err(Error::Format("truncated dims".into()));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            dims.push(d);
            pos += 4;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let need = n
            .checked_mul(8)
            .and_then(|b| b.checked_add(pos))
            .ok_or_else(|| Error::Format("payload size overflow".into()))?;
        if bytes.len() < need {
            return Err(Error::Format(format!(
                "truncated payload: need {need} bytes, have {}",
                bytes.len()
            )));
        }
        let data = bytes[pos..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(e.to_string()))?;
        Ok((t, need))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::from_bytes_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor payload",
                bytes.len() - used
            )));
        }
        Ok(t)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Per-pixel softmax over the leading (class) axis of a `K x H x W` tensor.
///
/// The per-pixel maximum is subtracted before exponentiation.
pub fn softmax_channels(z: &Tensor) -> Result<Tensor> {
    let (k, h, w) = z.chw()?;
    if k < 2 {
        return Err(dim_err!("softmax needs at least 2 classes, got {k}"));
    }
    let plane = h * w;
    let zd = z.data();
    let mut out = vec![0.0; zd.len()];
    for s in 0..plane {
        let mut m = f64::NEG_INFINITY;
        for c in 0..k {
            m = m.max(zd[c * plane + s]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            let e = (zd[c * plane + s] - m).exp();
            out[c * plane + s] = e;
            sum += e;
        }
        for c in 0..k {
            out[c * plane + s] /= sum;
        }
    }
    Tensor::new(z.dims().to_vec(), out)
}

/// Per-pixel log-softmax, same layout as [`softmax_channels`].
pub fn log_softmax_channels(z: &Tensor) -> Result<Tensor> {
    let (k, h, w) = z.chw()?;
    if k < 2 {
        return Err(dim_err!("softmax needs at least 2 classes, got {k}"));
    }
    let plane = h * w;
    let zd = z.data();
    let mut out = vec![0.0; zd.len()];
    for s in 0..plane {
        let mut m = f64::NEG_INFINITY;
        for c in 0..k {
            m = m.max(zd[c * plane + s]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            sum += (zd[c * plane + s] - m).exp();
        }
        let lse = m + sum.ln();
        for c in 0..k {
            out[c * plane + s] = zd[c * plane + s] - lse;
        }
    }
    Tensor::new(z.dims().to_vec(), out)
}

/// Arg-max over classes; ties go to the smallest class index.
pub fn hard_predict(p: &Tensor) -> Result<HardMask> {
    let (k, h, w) = p.chw()?;
    if k > u8::MAX as usize + 1 {
        return Err(dim_err!("too many classes for a label map: {k}"));
    }
    let plane = h * w;
    let pd = p.data();
    let labels = (0..plane)
        .map(|s| {
            let mut best = 0;
            for c in 1..k {
                if pd[c * plane + s] > pd[best * plane + s] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Grid::from_vec(h, w, labels)
}
