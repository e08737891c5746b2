//! The LVOL binary container for intensity volumes and masks.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "LVOL" | version u16 | dtype u8 | reserved u8 | height u32 | width u32 | n_slices u32
//!        | dy f32 | dx f32 | dz f32 | payload
//! ```
//!
//! dtype 1 is an i16 intensity volume, dtype 2 a u8 mask. The payload is
//! ordered with `i` varying fastest, then `j`, then `k`.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::volume::{Dims, MaskVolume, Spacing, Volume, VolumeError};

pub const MAGIC: &[u8; 4] = b"LVOL";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Intensity = 1,
    Mask = 2,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::Intensity => 2,
            DType::Mask => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum LvolError {
    #[error("bad magic {0:?}, expected \"LVOL\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("dtype code {found} where {expected:?} was expected")]
    WrongDType { expected: DType, found: u8 },
    #[error("truncated file: need {expected} bytes, have {got}")]
    Truncated { expected: usize, got: usize },
    #[error("payload has {got} bytes but dims {dims:?} require {expected}")]
    SizeMismatch { dims: Dims, expected: usize, got: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Header {
    dims: Dims,
    spacing: Spacing,
}

fn encode_header(dtype: DType, dims: Dims, spacing: Spacing, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(0);
    for d in [dims.height, dims.width, dims.n_slices] {
        out.extend_from_slice(&u32::try_from(d).expect("dimension fits u32").to_le_bytes());
    }
    for s in [spacing.dy, spacing.dx, spacing.dz] {
        out.extend_from_slice(&s.to_le_bytes());
    }
}

fn decode_header(bytes: &[u8], dtype: DType) -> Result<(Header, &[u8]), LvolError> {
    if bytes.len() < 4 {
        return Err(LvolError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(LvolError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LvolError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());

    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(LvolError::UnsupportedVersion(version));
    }
    if bytes[6] != dtype as u8 {
        return Err(LvolError::WrongDType {
            expected: dtype,
            found: bytes[6],
        });
    }
    let dims = Dims::new(u32_at(8), u32_at(12), u32_at(16));
    let spacing = Spacing {
        dy: f32_at(20),
        dx: f32_at(24),
        dz: f32_at(28),
    };
    let payload = &bytes[HEADER_LEN..];
    let expected = dims.voxel_count() * dtype.width();
    if payload.len() < expected {
        return Err(LvolError::Truncated {
            expected: HEADER_LEN + expected,
            got: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(LvolError::SizeMismatch {
            dims,
            expected,
            got: payload.len(),
        });
    }
    Ok((Header { dims, spacing }, payload))
}

/// File offset (in voxels) for in-memory index order `(k, i, j)`.
fn file_order(dims: Dims) -> impl Iterator<Item = usize> {
    let (h, w) = (dims.height, dims.width);
    (0..dims.n_slices).flat_map(move |k| {
        (0..w).flat_map(move |j| (0..h).map(move |i| (k * h + i) * w + j))
    })
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let dims = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + dims.voxel_count() * 2);
    encode_header(DType::Intensity, dims, v.spacing(), &mut out);
    let voxels = v.voxels();
    for idx in file_order(dims) {
        out.extend_from_slice(&voxels[idx].to_le_bytes());
    }
    out
}

pub fn decode_volume(
    bytes: &[u8],
    scan_id: impl Into<String>,
    patient_id: impl Into<String>,
) -> Result<Volume, LvolError> {
    let (header, payload) = decode_header(bytes, DType::Intensity)?;
    let dims = header.dims;
    let mut voxels = vec![0i16; dims.voxel_count()];
    for (idx, chunk) in file_order(dims).zip(payload.chunks_exact(2)) {
        voxels[idx] = i16::from_le_bytes([chunk[0], chunk[1]]);
    }
    Ok(Volume::new(scan_id, patient_id, dims, header.spacing, voxels)?)
}

pub fn encode_mask(m: &MaskVolume, spacing: Spacing) -> Vec<u8> {
    let dims = m.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + dims.voxel_count());
    encode_header(DType::Mask, dims, spacing, &mut out);
    let voxels = m.voxels();
    out.extend(file_order(dims).map(|idx| voxels[idx]));
    out
}

pub fn decode_mask(bytes: &[u8], scan_id: impl Into<String>) -> Result<MaskVolume, LvolError> {
    let (header, payload) = decode_header(bytes, DType::Mask)?;
    let dims = header.dims;
    let mut voxels = vec![0u8; dims.voxel_count()];
    for (idx, &b) in file_order(dims).zip(payload) {
        voxels[idx] = b;
    }
    Ok(MaskVolume::new(scan_id, dims, voxels)?)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads an intensity volume. The scan id defaults to the file stem and the
/// patient id is left empty; manifest loading fills both in.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, LvolError> {
    let path = path.as_ref();
    decode_volume(&fs::read(path)?, stem(path), "")
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<(), LvolError> {
    fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume, LvolError> {
    let path = path.as_ref();
    decode_mask(&fs::read(path)?, stem(path))
}

pub fn write_mask(path: impl AsRef<Path>, m: &MaskVolume, spacing: Spacing) -> Result<(), LvolError> {
    fs::write(path, encode_mask(m, spacing))?;
    Ok(())
}
