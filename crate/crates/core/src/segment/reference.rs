//! Deterministic stand-ins for trained segmenters.

use serde::{Deserialize, Serialize};

use super::{to_probability, InitialSegmenter, RefineInput, RefinementSegmenter, SegmenterError};
use crate::click::SliceClicks;
use crate::plane::{offset, BinaryPlane, Pixel, Plane, NEIGHBORS_8};
use crate::region::{component_at, connected_components, Connectivity};
use crate::volume::SliceWindow;

/// Always predicts background.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullSegmenter;

impl InitialSegmenter for NullSegmenter {
    fn predict(&mut self, window: &SliceWindow) -> Result<Plane<f32>, SegmenterError> {
        Ok(Plane::filled(window.shape(), 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    /// Normalized intensity level; pixels strictly above it are kept.
    pub level: f32,
    /// Components smaller than this many pixels are dropped.
    pub min_area: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            level: 0.6,
            min_area: 4,
        }
    }
}

pub fn threshold_initial(window: &SliceWindow, cfg: &ThresholdConfig) -> Plane<f32> {
    let raw = window.center().map(|&v| v > cfg.level);
    let mut kept = BinaryPlane::filled(raw.shape(), false);
    for region in connected_components(&raw, Connectivity::Eight) {
        if region.area() >= cfg.min_area {
            for &p in region.pixels() {
                kept[p] = true;
            }
        }
    }
    to_probability(&kept)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ThresholdSegmenter {
    pub config: ThresholdConfig,
}

impl InitialSegmenter for ThresholdSegmenter {
    fn predict(&mut self, window: &SliceWindow) -> Result<Plane<f32>, SegmenterError> {
        Ok(threshold_initial(window, &self.config))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConservativeConfig {
    pub growth_radius: f64,
    /// Max normalized intensity difference from the clicked pixel.
    pub tau: f32,
    pub removal_radius: f64,
}

impl Default for ConservativeConfig {
    fn default() -> Self {
        Self {
            growth_radius: 15.0,
            tau: 0.1,
            removal_radius: 10.0,
        }
    }
}

/// Pixels reachable from `seed` through 8-neighbours that stay within
/// `radius` of the seed and within `tau` of its intensity.
fn grow(image: &Plane<f32>, seed: Pixel, radius: f64, tau: f32) -> Vec<Pixel> {
    let shape = image.shape();
    let r2 = radius * radius;
    let base = image[seed];
    let mut seen = BinaryPlane::filled(shape, false);
    let mut stack = vec![seed];
    let mut out = Vec::new();
    seen[seed] = true;
    while let Some(p) = stack.pop() {
        out.push(p);
        for &d in &NEIGHBORS_8 {
            let Some(q) = offset(shape, p, d) else { continue };
            if seen[q] {
                continue;
            }
            seen[q] = true;
            if (q.dist2(seed) as f64) <= r2 && (image[q] - base).abs() <= tau {
                stack.push(q);
            }
        }
    }
    out
}

/// Click-driven edits to the previous mask.
///
/// A positive click adds the intensity-similar region grown from it. A
/// negative click on the previous mask removes that mask component; a
/// negative click off the previous mask suppresses any growth within
/// `removal_radius` of it. Nothing else changes.
pub fn conservative_refine(
    window: &SliceWindow,
    prev_mask: &BinaryPlane,
    clicks: &SliceClicks,
    cfg: &ConservativeConfig,
) -> Plane<f32> {
    let image = window.center();
    let shape = prev_mask.shape();
    let mut added = BinaryPlane::filled(shape, false);
    for &c in &clicks.positive {
        for p in grow(image, c, cfg.growth_radius, cfg.tau) {
            added[p] = true;
        }
    }
    let mut removed = BinaryPlane::filled(shape, false);
    let rr2 = cfg.removal_radius * cfg.removal_radius;
    for &c in &clicks.negative {
        match component_at(prev_mask, c, Connectivity::Eight) {
            Some(component) => {
                for &p in component.pixels() {
                    removed[p] = true;
                }
            }
            None => {
                for p in added.foreground().collect::<Vec<_>>() {
                    if p.dist2(c) as f64 <= rr2 {
                        added[p] = false;
                    }
                }
            }
        }
    }
    let out = Plane::from_fn(shape, |p| (prev_mask[p] || added[p]) && !removed[p]);
    to_probability(&out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConservativeRefiner {
    pub config: ConservativeConfig,
}

impl RefinementSegmenter for ConservativeRefiner {
    fn refine(&mut self, input: &RefineInput<'_>) -> Result<Plane<f32>, SegmenterError> {
        Ok(conservative_refine(
            input.window,
            input.prev_mask,
            input.clicks,
            &self.config,
        ))
    }
}
