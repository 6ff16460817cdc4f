//! Binary tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "TSR1"
//! 4       1           dtype (1 = f32, 2 = f64)
//! 5       1           rank (1..=3)
//! 6       4 * rank    dims, u32 little-endian
//! ...     n * size    payload, row-major, little-endian
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Grid2, Grid3};

pub const MAGIC: &[u8; 4] = b"TSR1";
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Decoded tensor: dims plus values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::dim(format!("tensor rank must be 1..=3, got {}", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != values.len() || n == 0 {
            return Err(Error::dim(format!(
                "tensor dims {dims:?} do not match {} values",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_grid2(g: &Grid2) -> Self {
        Self {
            dims: vec![g.height(), g.width()],
            values: g.values().to_vec(),
        }
    }

    pub fn from_grid3(g: &Grid3) -> Self {
        let (c, h, w) = g.dims();
        Self {
            dims: vec![c, h, w],
            values: g.values().to_vec(),
        }
    }

    pub fn into_grid2(self) -> Result<Grid2> {
        match self.dims[..] {
            [h, w] => Grid2::new(h, w, self.values),
            [1, h, w] => Grid2::new(h, w, self.values),
            _ => Err(Error::dim(format!("expected a rank-2 tensor, got dims {:?}", self.dims))),
        }
    }

    /// Rank-3 tensors map directly; rank-2 tensors become a single channel.
    pub fn into_grid3(self) -> Result<Grid3> {
        match self.dims[..] {
            [c, h, w] => Grid3::new(c, h, w, self.values),
            [h, w] => Grid3::new(1, h, w, self.values),
            _ => Err(Error::dim(format!("expected a rank-3 tensor, got dims {:?}", self.dims))),
        }
    }
}

pub fn encode(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.dims.len() + t.values.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        DType::F64 => t.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => t
            .values
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

/// Parses a container; `origin` names the source in error messages.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let need = |expected: usize, what: &'static str| -> Result<()> {
        if bytes.len() < expected {
            Err(Error::Truncated {
                path: origin.to_path_buf(),
                what,
                expected,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(6, "header")?;
    if &bytes[..4] != MAGIC {
        return Err(Error::format(origin, format!("bad magic {:?}", &bytes[..4])));
    }
    let dtype = match bytes[4] {
        1 => DType::F32,
        2 => DType::F64,
        other => return Err(Error::format(origin, format!("unknown dtype code {other}"))),
    };
    let rank = bytes[5] as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::format(origin, format!("rank {rank} outside 1..=3")));
    }
    let header = 6 + 4 * rank;
    need(header, "dims")?;
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(Error::format(origin, format!("zero dimension in {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::format(origin, format!("dims {dims:?} exceed 2^32 elements")))?;
    let payload = (count as usize)
        .checked_mul(dtype.size())
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::format(origin, "payload size overflows"))?;
    need(payload, "payload")?;
    if bytes.len() > payload {
        return Err(Error::format(
            origin,
            format!("{} trailing bytes after payload", bytes.len() - payload),
        ));
    }
    let body = &bytes[header..payload];
    let values: Vec<f64> = match dtype {
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{}: element {i} is {}",
            origin.display(),
            values[i]
        )));
    }
    Ok(Tensor { dims, values })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_tensor_as(path, t, DType::F64)
}

pub fn write_tensor_as(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    std::fs::write(path, encode(t, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_grid2(path: &Path) -> Result<Grid2> {
    read_tensor(path)?.into_grid2()
}

pub fn read_grid3(path: &Path) -> Result<Grid3> {
    read_tensor(path)?.into_grid3()
}

pub fn write_grid2(path: &Path, g: &Grid2) -> Result<()> {
    write_tensor(path, &Tensor::from_grid2(g))
}

pub fn write_grid3(path: &Path, g: &Grid3) -> Result<()> {
    write_tensor(path, &Tensor::from_grid3(g))
}
