//! Ground-truth refiner used to check the loop mechanics.

use serde::{Deserialize, Serialize};

use super::{to_probability, RefineInput, RefinementSegmenter, SegmenterError};
use crate::click::SliceClicks;
use crate::plane::{BinaryPlane, Plane};
use crate::region::{component_at, Connectivity};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Positive-click correction radius; `None` is unbounded.
    pub budget_radius: Option<f64>,
}

/// Corrects the error component under each click and nothing else.
///
/// A positive click turns on the gt pixels of its false-negative component
/// that lie within the budget radius; a negative click turns off its whole
/// false-positive component. Clicks outside any error component do nothing.
pub fn oracle_refine(
    gt: &BinaryPlane,
    prev_mask: &BinaryPlane,
    clicks: &SliceClicks,
    cfg: &OracleConfig,
) -> Plane<f32> {
    let missed = gt.and_not(prev_mask);
    let spurious = prev_mask.and_not(gt);
    let mut out = prev_mask.clone();
    for &c in &clicks.positive {
        if let Some(component) = component_at(&missed, c, Connectivity::Eight) {
            for &p in component.pixels() {
                if cfg.budget_radius.is_none_or(|r| p.dist(c) <= r) {
                    out[p] = true;
                }
            }
        }
    }
    for &c in &clicks.negative {
        if let Some(component) = component_at(&spurious, c, Connectivity::Eight) {
            for &p in component.pixels() {
                out[p] = false;
            }
        }
    }
    to_probability(&out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRefiner {
    pub config: OracleConfig,
}

impl RefinementSegmenter for OracleRefiner {
    fn refine(&mut self, input: &RefineInput<'_>) -> Result<Plane<f32>, SegmenterError> {
        let gt = input.gt.ok_or(SegmenterError::MissingGroundTruth)?;
        Ok(oracle_refine(gt, input.prev_mask, input.clicks, &self.config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::{Pixel, Shape};

    fn rect(shape: Shape, i: std::ops::Range<usize>, j: std::ops::Range<usize>) -> BinaryPlane {
        Plane::from_fn(shape, |p| i.contains(&p.i) && j.contains(&p.j))
    }

    #[test]
    fn fixpoint_on_ground_truth() {
        let shape = Shape::new(16, 16);
        let gt = rect(shape, 3..8, 3..8);
        let clicks = SliceClicks {
            positive: vec![Pixel::new(5, 5)],
            negative: vec![Pixel::new(12, 12)],
        };
        assert_eq!(oracle_refine(&gt, &gt, &clicks, &OracleConfig::default()), to_probability(&gt));
    }

    #[test]
    fn unbounded_positive_click_fixes_component() {
        let shape = Shape::new(32, 32);
        let gt = rect(shape, 2..20, 2..20);
        let prev = BinaryPlane::filled(shape, false);
        let clicks = SliceClicks {
            positive: vec![Pixel::new(10, 10)],
            negative: vec![],
        };
        assert_eq!(oracle_refine(&gt, &prev, &clicks, &OracleConfig::default()), to_probability(&gt));

        let cfg = OracleConfig { budget_radius: Some(3.0) };
        let out = oracle_refine(&gt, &prev, &clicks, &cfg);
        for (p, &v) in out.iter() {
            assert_eq!(v == 1.0, gt[p] && p.dist(Pixel::new(10, 10)) <= 3.0);
        }
    }

    #[test]
    fn negative_click_clears_spurious_component() {
        let shape = Shape::new(16, 16);
        let gt = rect(shape, 1..4, 1..4);
        let prev = Plane::from_fn(shape, |p| gt[p] || (p.i >= 10 && p.j >= 10));
        let clicks = SliceClicks {
            positive: vec![],
            negative: vec![Pixel::new(12, 12)],
        };
        assert_eq!(oracle_refine(&gt, &prev, &clicks, &OracleConfig::default()), to_probability(&gt));
    }

    #[test]
    fn requires_ground_truth() {
        let shape = Shape::new(4, 4);
        let w = crate::volume::SliceWindow {
            center_index: 0,
            radius: 0,
            channels: vec![Plane::filled(shape, 0.0)],
        };
        let prev = BinaryPlane::filled(shape, false);
        let cm = crate::click::ClickMask::zeros(shape, Default::default());
        let clicks = SliceClicks::default();
        let input = RefineInput {
            window: &w,
            prev_mask: &prev,
            pos_mask: &cm,
            neg_mask: &cm,
            clicks: &clicks,
            gt: None,
        };
        assert!(matches!(
            OracleRefiner::default().refine(&input),
            Err(SegmenterError::MissingGroundTruth)
        ));
    }
}
