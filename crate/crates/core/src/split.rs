//! Patient-grouped train/test split stratified by foreground area.
//!
//! Patients are binned into quantiles of their largest relative foreground
//! area. Each bin receives a test quota in scans; quotas are rounded with the
//! largest-remainder method so they add up to the overall target. Within a
//! bin, patients are visited in seeded random order and moved to the test
//! side whenever that brings the bin closer to its quota.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ManifestEntry;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("manifest is empty")]
    Empty,
    #[error("{groups} patient groups cannot fill {bins} bins")]
    TooFewGroups { groups: usize, bins: usize },
    #[error("test fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("split file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            n_bins: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub n_patients: usize,
    pub n_scans: usize,
    pub n_test_scans: usize,
    pub max_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Manifest the split was computed from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub spec: SplitSpec,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub bins: Vec<BinSummary>,
}

impl Split {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SplitError> {
        let path = path.as_ref();
        let err = |message: String| SplitError::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SplitError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text + "\n").map_err(|e| SplitError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

struct Group<'a> {
    scans: Vec<&'a str>,
    max_area: f64,
}

/// Splits `quota_total` across bins proportionally to `sizes`.
fn largest_remainder(sizes: &[usize], fraction: f64, quota_total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&n| n as f64 * fraction).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = quota_total.saturating_sub(quotas.iter().sum());
    for &b in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[b] < sizes[b] {
            quotas[b] += 1;
            remaining -= 1;
        }
    }
    quotas
}

pub fn split_dataset(entries: &[ManifestEntry], spec: &SplitSpec) -> Result<Split, SplitError> {
    if entries.is_empty() {
        return Err(SplitError::Empty);
    }
    if spec.n_bins == 0 {
        return Err(SplitError::NoBins);
    }
    if !(0.0..=1.0).contains(&spec.test_fraction) {
        return Err(SplitError::BadFraction(spec.test_fraction));
    }
    let mut by_patient: BTreeMap<&str, Group<'_>> = BTreeMap::new();
    for e in entries {
        let g = by_patient.entry(e.patient_id.as_str()).or_insert(Group {
            scans: Vec::new(),
            max_area: 0.0,
        });
        g.scans.push(&e.scan_id);
        g.max_area = g.max_area.max(e.relative_foreground_area);
    }
    let n_groups = by_patient.len();
    if n_groups < spec.n_bins {
        return Err(SplitError::TooFewGroups {
            groups: n_groups,
            bins: spec.n_bins,
        });
    }
    let mut groups: Vec<(&str, Group<'_>)> = by_patient.into_iter().collect();
    groups.sort_by(|a, b| a.1.max_area.total_cmp(&b.1.max_area).then(a.0.cmp(b.0)));

    let bins: Vec<&[(&str, Group<'_>)]> = (0..spec.n_bins)
        .map(|b| &groups[b * n_groups / spec.n_bins..(b + 1) * n_groups / spec.n_bins])
        .collect();
    let sizes: Vec<usize> = bins
        .iter()
        .map(|bin| bin.iter().map(|(_, g)| g.scans.len()).sum())
        .collect();
    let quota_total = (entries.len() as f64 * spec.test_fraction).round() as usize;
    let quotas = largest_remainder(&sizes, spec.test_fraction, quota_total);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split"));
    let mut test = Vec::new();
    let mut train = Vec::new();
    let mut summaries = Vec::with_capacity(spec.n_bins);
    for (b, bin) in bins.iter().enumerate() {
        let mut order: Vec<usize> = (0..bin.len()).collect();
        order.shuffle(&mut rng);
        let quota = quotas[b] as i64;
        let mut taken = 0i64;
        let mut in_test = vec![false; bin.len()];
        for idx in order {
            let n = bin[idx].1.scans.len() as i64;
            if (taken + n - quota).abs() < (taken - quota).abs() {
                taken += n;
                in_test[idx] = true;
            }
        }
        for (idx, (_, g)) in bin.iter().enumerate() {
            let side = if in_test[idx] { &mut test } else { &mut train };
            side.extend(g.scans.iter().map(|s| s.to_string()));
        }
        summaries.push(BinSummary {
            n_patients: bin.len(),
            n_scans: sizes[b],
            n_test_scans: taken as usize,
            max_area: bin.last().map_or(0.0, |(_, g)| g.max_area),
        });
    }
    train.sort();
    test.sort();
    Ok(Split {
        manifest: None,
        spec: *spec,
        train,
        test,
        bins: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(scan: &str, patient: &str, area: f64) -> ManifestEntry {
        ManifestEntry {
            scan_id: scan.into(),
            patient_id: patient.into(),
            volume_path: format!("{scan}.lvol").into(),
            mask_path: None,
            relative_foreground_area: area,
        }
    }

    #[test]
    fn ten_singletons_give_two_test_patients() {
        let entries: Vec<_> = (0..10)
            .map(|i| entry(&format!("s{i}"), &format!("p{i}"), i as f64 / 100.0))
            .collect();
        let s = split_dataset(&entries, &SplitSpec::default()).unwrap();
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.train.len(), 8);
    }

    #[test]
    fn patient_scans_stay_together() {
        let mut entries: Vec<_> = (0..9)
            .map(|i| entry(&format!("s{i}"), &format!("p{i}"), i as f64 / 100.0))
            .collect();
        entries.push(entry("s9", "p0", 0.5));
        for seed in 0..20 {
            let s = split_dataset(&entries, &SplitSpec { seed, ..Default::default() }).unwrap();
            assert_eq!(s.test.contains(&"s0".to_string()), s.test.contains(&"s9".to_string()));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(split_dataset(&[], &SplitSpec::default()), Err(SplitError::Empty)));
        let few: Vec<_> = (0..3).map(|i| entry(&format!("s{i}"), "p", 0.1)).collect();
        assert!(matches!(
            split_dataset(&few, &SplitSpec::default()),
            Err(SplitError::TooFewGroups { groups: 1, bins: 5 })
        ));
    }

    #[test]
    fn remainders_sum_to_total() {
        assert_eq!(largest_remainder(&[2, 2, 2, 2, 2], 0.2, 2), vec![1, 1, 0, 0, 0]);
        assert_eq!(largest_remainder(&[10, 10], 0.25, 5).iter().sum::<usize>(), 5);
    }
}
