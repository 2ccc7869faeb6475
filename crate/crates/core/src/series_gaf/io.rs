//! GAF tensor files and PNG rendering.
//!
//! Tensor file layout, all integers little-endian:
//!
//! | bytes      | content                         |
//! |------------|---------------------------------|
//! | 4          | magic `GAFT`                    |
//! | 4          | format version (`u32`, = 1)     |
//! | 4          | rank `d` (`u32`)                |
//! | 4·d        | extents (`u32` each)            |
//! | 4·Π extents| values, row-major `f32`         |
//!
//! A batch of image pairs is stored with shape `[N, 2, T, T]`, channel 0 the
//! GASF and channel 1 the GADF.

use std::path::Path;

use super::gaf::{GafImagePair, GafMatrix};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"GAFT";
pub const TENSOR_VERSION: u32 = 1;

pub fn encode_tensor(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape {
            op: "gaf tensor",
            left: shape.to_vec(),
            right: vec![data.len()],
        });
    }
    let mut out = Vec::with_capacity(12 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::validation(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Corrupt("gaf tensor file is truncated".into()))?;
        pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    if take(4)? != TENSOR_MAGIC {
        return Err(Error::Corrupt("not a gaf tensor file".into()));
    }
    let version = u32_at(take(4)?);
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: TENSOR_VERSION,
        });
    }
    let rank = u32_at(take(4)?) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32_at(take(4)?) as usize);
    }
    let n: usize = shape.iter().product();
    let raw = take(4 * n)?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after gaf tensor".into()));
    }
    Ok((shape, data))
}

pub fn write_tensor_file(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    std::fs::write(path, encode_tensor(shape, data)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    decode_tensor(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// `[N, 2, T, T]` values of a batch of pairs.
pub fn pairs_to_tensor(pairs: &[&GafImagePair]) -> Result<(Vec<usize>, Vec<f32>)> {
    let t = pairs.first().map_or(0, |p| p.size());
    let mut data = Vec::with_capacity(pairs.len() * 2 * t * t);
    for p in pairs {
        if p.size() != t || p.gadf.size() != t {
            return Err(Error::Shape {
                op: "gaf batch",
                left: vec![p.size(), p.gadf.size()],
                right: vec![t],
            });
        }
        data.extend(p.gasf.data().iter().map(|&v| v as f32));
        data.extend(p.gadf.data().iter().map(|&v| v as f32));
    }
    Ok((vec![pairs.len(), 2, t, t], data))
}

/// Inverse of [`pairs_to_tensor`]; metadata is left empty.
pub fn tensor_to_pairs(shape: &[usize], data: &[f32]) -> Result<Vec<GafImagePair>> {
    let [n, 2, t, t2] = *shape else {
        return Err(Error::Shape {
            op: "gaf batch",
            left: shape.to_vec(),
            right: vec![0, 2, 0, 0],
        });
    };
    if t != t2 || data.len() != n * 2 * t * t {
        return Err(Error::Shape {
            op: "gaf batch",
            left: shape.to_vec(),
            right: vec![data.len()],
        });
    }
    let plane = t * t;
    (0..n)
        .map(|i| {
            let base = i * 2 * plane;
            let m = |off: usize| {
                GafMatrix::new(t, data[base + off..base + off + plane].iter().map(|&v| v as f64).collect())
            };
            Ok(GafImagePair {
                gasf: m(0)?,
                gadf: m(plane)?,
                meta: Default::default(),
            })
        })
        .collect()
}

/// 8-bit grayscale PNG, `−1 → 0` and `+1 → 255`.
pub fn write_png(path: &Path, m: &GafMatrix) -> Result<()> {
    let n = m.size() as u32;
    let pixels: Vec<u8> = m
        .data()
        .iter()
        .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8)
        .collect();
    let img = image::GrayImage::from_raw(n, n, pixels).expect("n·n pixels");
    img.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
