//! Manifests, scan loading and dataset statistics.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lvol::{read_mask, read_volume, LvolError};
use crate::metrics::quantile;
use crate::volume::{MaskVolume, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Lvol { path: PathBuf, source: LvolError },
    #[error("scan {scan_id}: {source}")]
    Volume { scan_id: String, source: VolumeError },
    #[error("unknown scan {0:?}")]
    UnknownScan(String),
    #[error("duplicate scan id {0:?}")]
    DuplicateScan(String),
    #[error("scan {scan_id}: relative foreground area {value} outside [0, 1]")]
    BadArea { scan_id: String, value: f64 },
    #[error("scan {0:?} has no mask")]
    MissingMask(String),
    #[error("manifest is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub patient_id: String,
    /// Relative to the manifest file's directory unless absolute.
    pub volume_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub relative_foreground_area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.scan_id.as_str()) {
                return Err(DatasetError::DuplicateScan(e.scan_id.clone()));
            }
            if !(0.0..=1.0).contains(&e.relative_foreground_area) {
                return Err(DatasetError::BadArea {
                    scan_id: e.scan_id.clone(),
                    value: e.relative_foreground_area,
                });
            }
        }
        Ok(Self {
            root: root.into(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.into(),
            source,
        })?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.into(),
            source,
        })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
            path: path.into(),
            source,
        })
    }

    pub fn entry(&self, scan_id: &str) -> Result<&ManifestEntry, DatasetError> {
        self.entries
            .iter()
            .find(|e| e.scan_id == scan_id)
            .ok_or_else(|| DatasetError::UnknownScan(scan_id.into()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_volume(&self, entry: &ManifestEntry) -> Result<Volume, DatasetError> {
        let path = self.resolve(&entry.volume_path);
        let mut v = read_volume(&path).map_err(|source| DatasetError::Lvol { path, source })?;
        v.scan_id = entry.scan_id.clone();
        v.patient_id = entry.patient_id.clone();
        Ok(v)
    }

    /// Loads the ground-truth mask if the entry has one, checking it against the volume.
    pub fn load_mask(&self, entry: &ManifestEntry, volume: &Volume) -> Result<Option<MaskVolume>, DatasetError> {
        let Some(rel) = &entry.mask_path else {
            return Ok(None);
        };
        let path = self.resolve(rel);
        let mut m = read_mask(&path).map_err(|source| DatasetError::Lvol { path, source })?;
        m.scan_id = entry.scan_id.clone();
        m.check_pair(volume).map_err(|source| DatasetError::Volume {
            scan_id: entry.scan_id.clone(),
            source,
        })?;
        Ok(Some(m))
    }

    pub fn load_scan(&self, scan_id: &str) -> Result<(Volume, Option<MaskVolume>), DatasetError> {
        let entry = self.entry(scan_id)?;
        let v = self.load_volume(entry)?;
        let m = self.load_mask(entry, &v)?;
        Ok((v, m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanStats {
    pub n_scans: usize,
    pub median_slices: f64,
    pub median_lesion_slices: f64,
    pub median_relative_area: f64,
}

/// Medians over the given ground-truth masks.
pub fn scan_stats(masks: &[MaskVolume]) -> Result<ScanStats, DatasetError> {
    if masks.is_empty() {
        return Err(DatasetError::Empty);
    }
    let med = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        quantile(&v, 0.5)
    };
    Ok(ScanStats {
        n_scans: masks.len(),
        median_slices: med(masks.iter().map(|m| m.dims().n_slices as f64).collect()),
        median_lesion_slices: med(masks.iter().map(|m| m.lesion_slice_count() as f64).collect()),
        median_relative_area: med(masks.iter().map(MaskVolume::relative_foreground_area).collect()),
    })
}

/// Loads every mask in the manifest and summarises it.
pub fn manifest_stats(manifest: &Manifest) -> Result<ScanStats, DatasetError> {
    let mut masks = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let v = manifest.load_volume(e)?;
        masks.push(
            manifest
                .load_mask(e, &v)?
                .ok_or_else(|| DatasetError::MissingMask(e.scan_id.clone()))?,
        );
    }
    scan_stats(&masks)
}
