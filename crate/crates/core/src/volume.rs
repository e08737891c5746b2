//! CT volumes, lesion masks and slice windows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::{BinaryPlane, Plane, Shape};

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must all be >= 1, got {0:?}")]
    EmptyDims(Dims),
    #[error("spacing must be positive, got {0:?}")]
    BadSpacing(Spacing),
    #[error("voxel count {got} does not match dims {dims:?}")]
    VoxelCount { dims: Dims, got: usize },
    #[error("mask voxel value {0} is not 0 or 1")]
    NonBinary(u8),
    #[error("slice index {k} out of range for {n_slices} slices")]
    SliceOutOfRange { k: usize, n_slices: usize },
    #[error("mask dims {mask:?} do not match volume dims {volume:?}")]
    DimsMismatch { volume: Dims, mask: Dims },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub n_slices: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, n_slices: usize) -> Self {
        Self {
            height,
            width,
            n_slices,
        }
    }

    pub const fn slice_shape(self) -> Shape {
        Shape::new(self.height, self.width)
    }

    pub const fn voxel_count(self) -> usize {
        self.height * self.width * self.n_slices
    }

    fn validate(self) -> Result<(), VolumeError> {
        if self.height == 0 || self.width == 0 || self.n_slices == 0 {
            return Err(VolumeError::EmptyDims(self));
        }
        Ok(())
    }
}

/// Voxel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dy: f32,
    pub dx: f32,
    pub dz: f32,
}

impl Default for Spacing {
    fn default() -> Self {
        Self {
            dy: 1.0,
            dx: 1.0,
            dz: 1.0,
        }
    }
}

impl Spacing {
    fn validate(self) -> Result<(), VolumeError> {
        if [self.dy, self.dx, self.dz].iter().all(|&s| s > 0.0) {
            Ok(())
        } else {
            Err(VolumeError::BadSpacing(self))
        }
    }
}

/// A CT scan: signed 16-bit Hounsfield-like intensities.
///
/// Voxels are stored slice by slice, each slice row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub scan_id: String,
    pub patient_id: String,
    dims: Dims,
    spacing: Spacing,
    voxels: Vec<i16>,
}

impl Volume {
    pub fn new(
        scan_id: impl Into<String>,
        patient_id: impl Into<String>,
        dims: Dims,
        spacing: Spacing,
        voxels: Vec<i16>,
    ) -> Result<Self, VolumeError> {
        dims.validate()?;
        spacing.validate()?;
        if voxels.len() != dims.voxel_count() {
            return Err(VolumeError::VoxelCount {
                dims,
                got: voxels.len(),
            });
        }
        Ok(Self {
            scan_id: scan_id.into(),
            patient_id: patient_id.into(),
            dims,
            spacing,
            voxels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> i16 {
        self.voxels[voxel_index(self.dims, i, j, k)]
    }

    pub fn slice(&self, k: usize) -> Result<Plane<i16>, VolumeError> {
        let data = slice_of(&self.voxels, self.dims, k)?.to_vec();
        Ok(Plane::from_vec(self.dims.slice_shape(), data).expect("slice length"))
    }
}

/// Binary lesion mask paired with a [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskVolume {
    pub scan_id: String,
    dims: Dims,
    voxels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(scan_id: impl Into<String>, dims: Dims, voxels: Vec<u8>) -> Result<Self, VolumeError> {
        dims.validate()?;
        if voxels.len() != dims.voxel_count() {
            return Err(VolumeError::VoxelCount {
                dims,
                got: voxels.len(),
            });
        }
        if let Some(&bad) = voxels.iter().find(|&&v| v > 1) {
            return Err(VolumeError::NonBinary(bad));
        }
        Ok(Self {
            scan_id: scan_id.into(),
            dims,
            voxels,
        })
    }

    pub fn empty(scan_id: impl Into<String>, dims: Dims) -> Self {
        Self {
            scan_id: scan_id.into(),
            dims,
            voxels: vec![0; dims.voxel_count()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.voxels[voxel_index(self.dims, i, j, k)] != 0
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v != 0).count()
    }

    pub fn slice(&self, k: usize) -> Result<BinaryPlane, VolumeError> {
        let data = slice_of(&self.voxels, self.dims, k)?
            .iter()
            .map(|&v| v != 0)
            .collect();
        Ok(Plane::from_vec(self.dims.slice_shape(), data).expect("slice length"))
    }

    pub fn set_slice(&mut self, k: usize, mask: &BinaryPlane) -> Result<(), VolumeError> {
        if k >= self.dims.n_slices {
            return Err(VolumeError::SliceOutOfRange {
                k,
                n_slices: self.dims.n_slices,
            });
        }
        assert_eq!(mask.shape(), self.dims.slice_shape(), "slice shape");
        let n = self.dims.slice_shape().len();
        for (dst, &src) in self.voxels[k * n..(k + 1) * n].iter_mut().zip(mask.as_slice()) {
            *dst = src as u8;
        }
        Ok(())
    }

    /// Number of slices with at least one foreground voxel.
    pub fn lesion_slice_count(&self) -> usize {
        let n = self.dims.slice_shape().len();
        self.voxels.chunks(n).filter(|s| s.iter().any(|&v| v != 0)).count()
    }

    pub fn relative_foreground_area(&self) -> f64 {
        self.count() as f64 / self.dims.voxel_count() as f64
    }

    pub fn check_pair(&self, volume: &Volume) -> Result<(), VolumeError> {
        if self.dims != volume.dims() {
            return Err(VolumeError::DimsMismatch {
                volume: volume.dims(),
                mask: self.dims,
            });
        }
        Ok(())
    }
}

fn voxel_index(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    assert!(i < dims.height && j < dims.width && k < dims.n_slices);
    (k * dims.height + i) * dims.width + j
}

fn slice_of<T>(voxels: &[T], dims: Dims, k: usize) -> Result<&[T], VolumeError> {
    if k >= dims.n_slices {
        return Err(VolumeError::SliceOutOfRange {
            k,
            n_slices: dims.n_slices,
        });
    }
    let n = dims.slice_shape().len();
    Ok(&voxels[k * n..(k + 1) * n])
}

/// Linear intensity window mapping `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityWindow {
    pub lo: f32,
    pub hi: f32,
}

impl Default for IntensityWindow {
    fn default() -> Self {
        Self {
            lo: -1000.0,
            hi: 400.0,
        }
    }
}

impl IntensityWindow {
    pub fn apply(&self, raw: f32) -> f32 {
        ((raw - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    /// Maps a normalized value back to raw intensity.
    pub fn invert(&self, value: f32) -> f32 {
        self.lo + value * (self.hi - self.lo)
    }
}

pub fn preprocess_slice(raw: &Plane<i16>, window: &IntensityWindow) -> Plane<f32> {
    raw.map(|&v| window.apply(f32::from(v)))
}

/// The stack of neighbouring slices fed to a segmenter for target slice `center_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceWindow {
    pub center_index: usize,
    pub radius: usize,
    pub channels: Vec<Plane<f32>>,
}

impl SliceWindow {
    pub fn center(&self) -> &Plane<f32> {
        &self.channels[self.radius]
    }

    pub fn shape(&self) -> Shape {
        self.center().shape()
    }

    /// Source slice index for each channel, with boundary slices replicated.
    pub fn source_indices(center: usize, radius: usize, n_slices: usize) -> Vec<usize> {
        let r = radius as isize;
        (-r..=r)
            .map(|o| (center as isize + o).clamp(0, n_slices as isize - 1) as usize)
            .collect()
    }
}

pub fn extract_window(
    volume: &Volume,
    k: usize,
    radius: usize,
    window: &IntensityWindow,
) -> Result<SliceWindow, VolumeError> {
    let n_slices = volume.dims().n_slices;
    if k >= n_slices {
        return Err(VolumeError::SliceOutOfRange { k, n_slices });
    }
    let channels = SliceWindow::source_indices(k, radius, n_slices)
        .into_iter()
        .map(|src| volume.slice(src).map(|s| preprocess_slice(&s, window)))
        .collect::<Result<_, _>>()?;
    Ok(SliceWindow {
        center_index: k,
        radius,
        channels,
    })
}
