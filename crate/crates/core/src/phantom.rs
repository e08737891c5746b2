//! Synthetic CT-like phantoms with exact ground truth.
//!
//! A phantom is a uniform background with additive Gaussian noise and a set
//! of ellipsoidal lesions. Some lesions are faint (below the reference
//! threshold segmenter's level). Optional distractor blobs share the lesion
//! intensity but are not part of the mask; they sit on lesion-free slices
//! where possible, so a threshold segmenter produces spurious slices.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Manifest, ManifestEntry};
use crate::lvol::{write_mask, write_volume, LvolError};
use crate::seed::derive_seed;
use crate::volume::{Dims, MaskVolume, Spacing, Volume};

pub const MIN_EXTENT: usize = 16;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phantom dims {0:?} below the minimum of {MIN_EXTENT} per axis")]
    TooSmall(Dims),
    #[error("lesion radii {radii:?} exceed the volume extent {dims:?}")]
    RadiusTooLarge { radii: [f64; 3], dims: Dims },
    #[error("lesion radii must be positive, got {0:?}")]
    BadRadius([f64; 3]),
    #[error("bad lesion plan: {0}")]
    BadPlan(String),
    #[error("noise sd must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: LvolError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Axis-aligned ellipsoid in voxel coordinates `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub hu: i16,
}

impl Ellipsoid {
    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        let d = |x: usize, a: usize| (x as f64 - self.center[a]) / self.radii[a];
        let (a, b, c) = (d(i, 0), d(j, 1), d(k, 2));
        a * a + b * b + c * c <= 1.0
    }

    /// Inclusive voxel range along `axis`, clipped to `[0, len)`.
    fn span(&self, axis: usize, len: usize) -> std::ops::Range<usize> {
        let lo = (self.center[axis] - self.radii[axis]).ceil().max(0.0) as usize;
        let hi = (self.center[axis] + self.radii[axis]).floor();
        if hi < 0.0 {
            return 0..0;
        }
        lo..((hi as usize) + 1).min(len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionPlan {
    Random {
        min_count: usize,
        max_count: usize,
        /// In-plane radius range, pixels.
        min_radius: f64,
        max_radius: f64,
        /// Through-plane radius range, slices.
        min_radius_z: f64,
        max_radius_z: f64,
        /// Fraction of lesions drawn at `faint_hu` instead of `lesion_hu`.
        faint_fraction: f64,
    },
    Explicit(Vec<Ellipsoid>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub background_hu: i16,
    pub lesion_hu: i16,
    pub faint_hu: i16,
    pub noise_sd: f64,
    pub lesions: LesionPlan,
    pub min_distractors: usize,
    pub max_distractors: usize,
    pub distractor_radius: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: Dims::new(64, 64, 16),
            spacing: Spacing::default(),
            background_hu: -800,
            lesion_hu: 40,
            faint_hu: -450,
            noise_sd: 20.0,
            lesions: LesionPlan::Random {
                min_count: 1,
                max_count: 3,
                min_radius: 3.0,
                max_radius: 8.0,
                min_radius_z: 1.5,
                max_radius_z: 3.5,
                faint_fraction: 0.25,
            },
            min_distractors: 0,
            max_distractors: 2,
            distractor_radius: 2.5,
        }
    }
}

impl PhantomSpec {
    /// Noise-free phantom without distractors holding exactly the given lesions.
    pub fn explicit(dims: Dims, lesions: Vec<Ellipsoid>) -> Self {
        Self {
            dims,
            noise_sd: 0.0,
            lesions: LesionPlan::Explicit(lesions),
            min_distractors: 0,
            max_distractors: 0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), PhantomError> {
        let d = self.dims;
        if d.height < MIN_EXTENT || d.width < MIN_EXTENT || d.n_slices < MIN_EXTENT {
            return Err(PhantomError::TooSmall(d));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(PhantomError::BadNoise(self.noise_sd));
        }
        if self.min_distractors > self.max_distractors {
            return Err(PhantomError::BadPlan("min_distractors > max_distractors".into()));
        }
        match &self.lesions {
            LesionPlan::Random {
                min_count,
                max_count,
                min_radius,
                max_radius,
                min_radius_z,
                max_radius_z,
                faint_fraction,
            } => {
                if min_count > max_count || min_radius > max_radius || min_radius_z > max_radius_z {
                    return Err(PhantomError::BadPlan("min exceeds max".into()));
                }
                if !(0.0..=1.0).contains(faint_fraction) {
                    return Err(PhantomError::BadPlan(format!("faint_fraction {faint_fraction}")));
                }
                self.check_radii([*max_radius, *max_radius, *max_radius_z])?;
                self.check_radii([*min_radius, *min_radius, *min_radius_z])
            }
            LesionPlan::Explicit(list) => list.iter().try_for_each(|e| self.check_radii(e.radii)),
        }
    }

    fn check_radii(&self, radii: [f64; 3]) -> Result<(), PhantomError> {
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(PhantomError::BadRadius(radii));
        }
        let d = self.dims;
        let extents = [d.height, d.width, d.n_slices];
        if radii.iter().zip(extents).any(|(r, n)| 2.0 * r + 1.0 > n as f64) {
            return Err(PhantomError::RadiusTooLarge { radii, dims: d });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub mask: MaskVolume,
    pub entry: ManifestEntry,
    pub lesions: Vec<Ellipsoid>,
    pub distractors: Vec<Ellipsoid>,
}

fn plan_lesions(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Ellipsoid> {
    let d = spec.dims;
    match &spec.lesions {
        LesionPlan::Explicit(list) => list.clone(),
        &LesionPlan::Random {
            min_count,
            max_count,
            min_radius,
            max_radius,
            min_radius_z,
            max_radius_z,
            faint_fraction,
        } => {
            let n = rng.gen_range(min_count..=max_count);
            (0..n)
                .map(|_| {
                    let r = rng.gen_range(min_radius..=max_radius);
                    let rz = rng.gen_range(min_radius_z..=max_radius_z);
                    let radii = [r, r * rng.gen_range(0.8..=1.2), rz];
                    let radii = [radii[0], radii[1].clamp(min_radius, max_radius), radii[2]];
                    let extents = [d.height, d.width, d.n_slices];
                    let mut center = [0.0; 3];
                    for a in 0..3 {
                        let lo = radii[a].ceil();
                        let hi = extents[a] as f64 - 1.0 - radii[a].ceil();
                        center[a] = if hi > lo { rng.gen_range(lo..=hi).round() } else { (extents[a] / 2) as f64 };
                    }
                    let hu = if rng.gen_bool(faint_fraction) {
                        spec.faint_hu
                    } else {
                        spec.lesion_hu
                    };
                    Ellipsoid { center, radii, hu }
                })
                .collect()
        }
    }
}

fn rasterize(dims: Dims, shapes: &[Ellipsoid], mut visit: impl FnMut(usize, &Ellipsoid)) {
    for e in shapes {
        for k in e.span(2, dims.n_slices) {
            for i in e.span(0, dims.height) {
                for j in e.span(1, dims.width) {
                    if e.contains(i, j, k) {
                        visit((k * dims.height + i) * dims.width + j, e);
                    }
                }
            }
        }
    }
}

fn plan_distractors(spec: &PhantomSpec, mask: &[u8], rng: &mut ChaCha8Rng) -> Vec<Ellipsoid> {
    let d = spec.dims;
    let n = rng.gen_range(spec.min_distractors..=spec.max_distractors);
    let plane = d.height * d.width;
    let empty_slices: Vec<usize> = (0..d.n_slices)
        .filter(|&k| mask[k * plane..(k + 1) * plane].iter().all(|&v| v == 0))
        .collect();
    let r = spec.distractor_radius;
    let margin = r.ceil() as usize + 1;
    let clearance = r + 3.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for _attempt in 0..50 {
            let k = if empty_slices.is_empty() {
                rng.gen_range(0..d.n_slices)
            } else {
                empty_slices[rng.gen_range(0..empty_slices.len())]
            };
            let i = rng.gen_range(margin..d.height - margin);
            let j = rng.gen_range(margin..d.width - margin);
            let reach = clearance.ceil() as usize;
            let clear = (i.saturating_sub(reach)..(i + reach + 1).min(d.height)).all(|ii| {
                (j.saturating_sub(reach)..(j + reach + 1).min(d.width)).all(|jj| {
                    let di = ii as f64 - i as f64;
                    let dj = jj as f64 - j as f64;
                    di * di + dj * dj > clearance * clearance || mask[k * plane + ii * d.width + jj] == 0
                })
            });
            if clear {
                out.push(Ellipsoid {
                    center: [i as f64, j as f64, k as f64],
                    radii: [r, r, 0.5],
                    hu: spec.lesion_hu,
                });
                break;
            }
        }
    }
    out
}

/// Generates one phantom with ids `ph{seed}` / `pt{seed}`.
pub fn generate_phantom(seed: u64, spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    generate_named(seed, spec, &format!("ph{seed:04}"), &format!("pt{seed:04}"))
}

pub fn generate_named(seed: u64, spec: &PhantomSpec, scan_id: &str, patient_id: &str) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lesions = plan_lesions(spec, &mut rng);

    let mut mask = vec![0u8; d.voxel_count()];
    let mut base = vec![spec.background_hu; d.voxel_count()];
    rasterize(d, &lesions, |idx, e| {
        mask[idx] = 1;
        base[idx] = base[idx].max(e.hu);
    });
    let distractors = plan_distractors(spec, &mask, &mut rng);
    rasterize(d, &distractors, |idx, e| base[idx] = base[idx].max(e.hu));

    let voxels = if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).expect("validated sd");
        base.iter()
            .map(|&v| (f64::from(v) + noise.sample(&mut rng)).round().clamp(-32768.0, 32767.0) as i16)
            .collect()
    } else {
        base
    };

    let volume = Volume::new(scan_id, patient_id, d, spec.spacing, voxels).expect("dims validated");
    let mask = MaskVolume::new(scan_id, d, mask).expect("binary mask");
    let entry = ManifestEntry {
        scan_id: scan_id.into(),
        patient_id: patient_id.into(),
        volume_path: Path::new("volumes").join(format!("{scan_id}.lvol")),
        mask_path: Some(Path::new("masks").join(format!("{scan_id}.lvol"))),
        relative_foreground_area: mask.relative_foreground_area(),
    };
    Ok(Phantom {
        volume,
        mask,
        entry,
        lesions,
        distractors,
    })
}

/// Options for a multi-scan phantom dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSetSpec {
    pub count: usize,
    /// Each patient gets between 1 and this many scans.
    pub max_scans_per_patient: usize,
    pub scan: PhantomSpec,
}

impl Default for PhantomSetSpec {
    fn default() -> Self {
        Self {
            count: 20,
            max_scans_per_patient: 2,
            scan: PhantomSpec::default(),
        }
    }
}

pub fn generate_phantom_set(seed: u64, spec: &PhantomSetSpec) -> Result<Vec<Phantom>, PhantomError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "patients"));
    let max_per = spec.max_scans_per_patient.max(1);
    let mut out = Vec::with_capacity(spec.count);
    let mut patient = 0usize;
    while out.len() < spec.count {
        let n = rng.gen_range(1..=max_per).min(spec.count - out.len());
        for _ in 0..n {
            let idx = out.len();
            let scan_id = format!("ph{idx:04}");
            let s = derive_seed(seed, &scan_id);
            out.push(generate_named(s, &spec.scan, &scan_id, &format!("pt{patient:04}"))?);
        }
        patient += 1;
    }
    Ok(out)
}

/// Writes volumes, masks and `manifest.json` under `dir`.
pub fn write_phantom_set(dir: impl AsRef<Path>, phantoms: &[Phantom]) -> Result<Manifest, PhantomError> {
    let dir = dir.as_ref();
    for sub in ["volumes", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|source| PhantomError::Io { path: p, source })?;
    }
    for ph in phantoms {
        let vp = dir.join(&ph.entry.volume_path);
        write_volume(&vp, &ph.volume).map_err(|source| PhantomError::Write { path: vp, source })?;
        let mp = dir.join(ph.entry.mask_path.as_ref().expect("phantoms carry masks"));
        write_mask(&mp, &ph.mask, ph.volume.spacing()).map_err(|source| PhantomError::Write { path: mp, source })?;
    }
    let manifest = Manifest::new(dir, phantoms.iter().map(|p| p.entry.clone()).collect())?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
