//! CCT1 tensor exchange files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4   b"CCT1"
//! u32          ndim
//! ndim x u32   dims, outermost first
//! u32          dtype code (1 = f32 LE)
//! ...          row-major payload
//! ```

use std::path::Path;

use crate::error::{CamError, Result};
use crate::tensor::{Grid2D, GridStack};

pub const MAGIC: [u8; 4] = *b"CCT1";
pub const DTYPE_F32: u32 = 1;
/// Readers refuse headers with more axes than this.
pub const MAX_NDIM: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims)
            .ok_or_else(|| CamError::Format(format!("dims {dims:?} overflow")))?;
        if n != data.len() {
            return Err(CamError::invalid(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `[height, width]` tensor from a grid, narrowed to f32.
    pub fn from_grid(g: &Grid2D) -> Self {
        Self {
            dims: vec![g.height() as u32, g.width() as u32],
            data: g.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// `[channels, height, width]` tensor from a stack.
    pub fn from_stack(s: &GridStack) -> Self {
        let mut data = Vec::with_capacity(s.channels() * s.width() * s.height());
        for g in s.grids() {
            data.extend(g.data().iter().map(|&v| v as f32));
        }
        Self {
            dims: vec![s.channels() as u32, s.height() as u32, s.width() as u32],
            data,
        }
    }

    /// Interprets `[C, H, W]` (or `[H, W]` as one channel) as a stack.
    pub fn to_stack(&self) -> Result<GridStack> {
        let (c, h, w) = match self.dims[..] {
            [h, w] => (1, h as usize, w as usize),
            [c, h, w] => (c as usize, h as usize, w as usize),
            _ => {
                return Err(CamError::Format(format!(
                    "expected a 2-D or 3-D tensor, got dims {:?}",
                    self.dims
                )))
            }
        };
        if c == 0 {
            return Err(CamError::Format("tensor has no channels".into()));
        }
        let plane = w * h;
        let grids = (0..c)
            .map(|i| {
                let data = self.data[i * plane..(i + 1) * plane]
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect();
                Grid2D::new(w, h, data).map_err(|e| CamError::Format(format!("channel {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        GridStack::with_dims(w, h, grids)
    }

    pub fn to_grid(&self) -> Result<Grid2D> {
        let stack = self.to_stack()?;
        if stack.channels() != 1 {
            return Err(CamError::Format(format!(
                "expected a single plane, got {} channels",
                stack.channels()
            )));
        }
        Ok(stack.into_grids().remove(0))
    }
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CamError::Format(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a CCT1 byte buffer. The payload must fill the buffer exactly.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(CamError::Format("bad magic, expected CCT1".into()));
    }
    let ndim = cur.u32("ndim")?;
    if ndim > MAX_NDIM {
        return Err(CamError::Format(format!("ndim {ndim} exceeds {MAX_NDIM}")));
    }
    let dims = (0..ndim)
        .map(|i| cur.u32(&format!("dim {i}")))
        .collect::<Result<Vec<_>>>()?;
    let dtype = cur.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(CamError::Format(format!("unsupported dtype code {dtype}")));
    }
    let count =
        element_count(&dims).ok_or_else(|| CamError::Format(format!("dims {dims:?} overflow")))?;
    let remaining = bytes.len() - cur.pos;
    if count.checked_mul(4) != Some(remaining) {
        return Err(CamError::Format(format!(
            "payload is {remaining} bytes, dims {dims:?} need {count} f32 values"
        )));
    }
    let data = cur.buf[cur.pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn read_file(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| CamError::io(path, e))?;
    decode(&bytes).map_err(|e| CamError::Format(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| CamError::io(path, e))
}
