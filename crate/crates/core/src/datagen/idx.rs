//! IDX binary format (the MNIST container).
//!
//! Layout: two zero bytes, a type byte (only `0x08`, unsigned byte, is
//! supported), a rank byte, `rank` big-endian `u32` dimension sizes, then
//! the raw row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const TYPE_U8: u8 = 0x08;

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(dims: Vec<u32>, data: Vec<u8>) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::Consistency(format!(
                "idx dims {dims:?} require {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(IdxArray { dims, data })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, TYPE_U8, self.dims.len() as u8]);
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses an in-memory IDX buffer. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        if bytes.len() < 4 {
            return Err(fail(format!("file too short for idx header ({} bytes)", bytes.len())));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(fail(format!(
                "bad magic prefix {:#04x} {:#04x}",
                bytes[0], bytes[1]
            )));
        }
        if bytes[2] != TYPE_U8 {
            return Err(fail(format!("unsupported element type {:#04x}", bytes[2])));
        }
        let rank = bytes[3] as usize;
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(fail(format!("truncated header for rank {rank}")));
        }
        let dims: Vec<u32> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let expected = element_count(&dims).map_err(|e| fail(e.to_string()))?;
        let payload = &bytes[header..];
        if payload.len() != expected {
            return Err(fail(format!(
                "payload has {} bytes, dims {dims:?} require {expected}",
                payload.len()
            )));
        }
        Ok(IdxArray {
            dims,
            data: payload.to_vec(),
        })
    }

    /// Like [`IdxArray::from_bytes`] but also checks the rank.
    pub fn from_bytes_with_rank(bytes: &[u8], rank: usize, path: &Path) -> Result<Self> {
        if bytes.len() >= 4 && bytes[0] == 0 && bytes[1] == 0 && bytes[3] as usize != rank {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "magic {:02x} {:02x} {:02x} {:02x} declares rank {} where rank {rank} is expected",
                    bytes[0], bytes[1], bytes[2], bytes[3], bytes[3]
                ),
            });
        }
        Self::from_bytes(bytes, path)
    }
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d as usize)
            .ok_or_else(|| Error::Consistency(format!("idx dims {dims:?} overflow")))
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path)?;
    IdxArray::from_bytes(&bytes, path)
}

pub fn read_idx_rank(path: &Path, rank: usize) -> Result<IdxArray> {
    let bytes = fs::read(path)?;
    IdxArray::from_bytes_with_rank(&bytes, rank, path)
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    fs::write(path, array.to_bytes())?;
    Ok(())
}

/// A decoded IDX image with its class id.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseImage {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub class: usize,
}

/// Loads an IDX image file (rank 3) and its label file (rank 1).
///
/// Pixel bytes are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<BaseImage>> {
    let images = read_idx_rank(images_path, 3)?;
    let labels = read_idx_rank(labels_path, 1)?;
    let count = images.dims[0] as usize;
    if labels.dims[0] as usize != count {
        return Err(Error::Consistency(format!(
            "{} holds {count} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.dims[0]
        )));
    }
    let (h, w) = (images.dims[1] as usize, images.dims[2] as usize);
    let stride = h * w;
    Ok((0..count)
        .map(|i| BaseImage {
            height: h,
            width: w,
            pixels: images.data[i * stride..(i + 1) * stride]
                .iter()
                .map(|&b| f32::from(b) / 255.0)
                .collect(),
            class: labels.data[i] as usize,
        })
        .collect())
}
