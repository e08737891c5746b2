//! The simulated "ideal" expert.
//!
//! For each slice and iteration the expert looks at the ground truth and the
//! current prediction and emits at most one corrective action.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::click::{Polarity, SliceClicks};
use crate::plane::{BinaryPlane, Pixel, Shape};
use crate::region::{
    center_of_mass, connected_components, distance_transform, error_regions, farthest_point_scored,
    largest_region, Connectivity, Region, RegionError,
};

#[derive(Debug, Error, PartialEq)]
pub enum ExpertError {
    #[error("shape mismatch: gt {0:?} vs prediction {1:?}")]
    ShapeMismatch(Shape, Shape),
    #[error("no background pixel within d0 = {d0} of the lesion")]
    NoCandidate { d0: f64 },
    #[error("ground-truth slice is empty")]
    EmptyGroundTruth,
}

impl From<RegionError> for ExpertError {
    fn from(e: RegionError) -> Self {
        match e {
            RegionError::ShapeMismatch(a, b) => ExpertError::ShapeMismatch(a, b),
            other => unreachable!("unexpected region error: {other}"),
        }
    }
}

/// Which error region the expert fixes when both kinds exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityRule {
    /// Larger region wins; false negatives win ties.
    #[default]
    LargerErrorFirst,
    FalseNegativeFirst,
    FalsePositiveFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Cold-start negative sampling distance, pixels.
    pub d0: f64,
    pub action_priority: PolarityRule,
    pub connectivity: Connectivity,
    pub rng_seed: u64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            d0: 60.0,
            action_priority: PolarityRule::default(),
            connectivity: Connectivity::Eight,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    PositiveClick(Pixel),
    NegativeClick(Pixel),
    Erase,
    NoAction,
}

impl Action {
    pub fn click(polarity: Polarity, p: Pixel) -> Self {
        match polarity {
            Polarity::Positive => Action::PositiveClick(p),
            Polarity::Negative => Action::NegativeClick(p),
        }
    }

    pub fn position(&self) -> Option<Pixel> {
        match *self {
            Action::PositiveClick(p) | Action::NegativeClick(p) => Some(p),
            Action::Erase | Action::NoAction => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeedbackAction {
    pub slice: usize,
    pub action: Action,
}

impl FeedbackAction {
    pub fn none(slice: usize) -> Self {
        Self {
            slice,
            action: Action::NoAction,
        }
    }

    pub fn is_none(&self) -> bool {
        self.action == Action::NoAction
    }
}

/// What the expert sees of the click cache for one slice.
#[derive(Debug, Clone, Copy)]
pub struct CacheView<'a> {
    pub clicks: &'a SliceClicks,
    pub max_per_polarity: usize,
}

impl CacheView<'_> {
    fn at_cap(&self, polarity: Polarity) -> bool {
        self.clicks.of(polarity).len() >= self.max_per_polarity
    }
}

/// Feedback strategy seam. Only the ideal expert is provided.
pub trait FeedbackPolicy {
    fn decide(
        &self,
        slice: usize,
        gt: &BinaryPlane,
        pred: &BinaryPlane,
        cache: CacheView<'_>,
    ) -> Result<FeedbackAction, ExpertError>;

    fn cold_start(&self, slice: usize, gt: &BinaryPlane) -> FeedbackAction;
}

#[derive(Debug, Clone, Default)]
pub struct IdealExpert {
    pub config: ExpertConfig,
}

impl IdealExpert {
    pub fn new(config: ExpertConfig) -> Self {
        Self { config }
    }
}

impl FeedbackPolicy for IdealExpert {
    fn decide(
        &self,
        slice: usize,
        gt: &BinaryPlane,
        pred: &BinaryPlane,
        cache: CacheView<'_>,
    ) -> Result<FeedbackAction, ExpertError> {
        decide(slice, gt, pred, cache, &self.config)
    }

    fn cold_start(&self, slice: usize, gt: &BinaryPlane) -> FeedbackAction {
        cold_start(slice, gt, &self.config)
    }
}

/// Click target for one error region. `None` when the region has no
/// interior, or when every interior pixel already holds a click (the best
/// score is then zero).
fn click_in(region: &Region, prior: &[Pixel]) -> Option<Pixel> {
    farthest_point_scored(region, prior)
        .filter(|&(_, score)| score > 0.0)
        .map(|(p, _)| p)
}

pub fn decide(
    slice: usize,
    gt: &BinaryPlane,
    pred: &BinaryPlane,
    cache: CacheView<'_>,
    cfg: &ExpertConfig,
) -> Result<FeedbackAction, ExpertError> {
    if gt.shape() != pred.shape() {
        return Err(ExpertError::ShapeMismatch(gt.shape(), pred.shape()));
    }
    if !gt.any() {
        return Ok(FeedbackAction {
            slice,
            action: if pred.any() { Action::Erase } else { Action::NoAction },
        });
    }
    let errors = error_regions(gt, pred, cfg.connectivity)?;
    let fn_region = largest_region(&errors.false_negative);
    let fp_region = largest_region(&errors.false_positive);

    let first = match (fn_region, fp_region) {
        (None, None) => return Ok(FeedbackAction::none(slice)),
        (Some(_), None) => Polarity::Positive,
        (None, Some(_)) => Polarity::Negative,
        (Some(f), Some(p)) => match cfg.action_priority {
            PolarityRule::LargerErrorFirst if p.area() > f.area() => Polarity::Negative,
            PolarityRule::LargerErrorFirst | PolarityRule::FalseNegativeFirst => Polarity::Positive,
            PolarityRule::FalsePositiveFirst => Polarity::Negative,
        },
    };
    for polarity in [first, first.opposite()] {
        let region = match polarity {
            Polarity::Positive => fn_region,
            Polarity::Negative => fp_region,
        };
        let Some(region) = region else { continue };
        if cache.at_cap(polarity) {
            continue;
        }
        if let Some(p) = click_in(region, cache.clicks.of(polarity)) {
            return Ok(FeedbackAction {
                slice,
                action: Action::click(polarity, p),
            });
        }
    }
    Ok(FeedbackAction::none(slice))
}

/// First click on a slice with no prior prediction: centre of the largest lesion.
pub fn cold_start(slice: usize, gt: &BinaryPlane, cfg: &ExpertConfig) -> FeedbackAction {
    let lesions = connected_components(gt, cfg.connectivity);
    match largest_region(&lesions) {
        Some(r) => FeedbackAction {
            slice,
            action: Action::PositiveClick(center_of_mass(r)),
        },
        None => FeedbackAction::none(slice),
    }
}

/// Uniformly samples a background pixel within `d0` of the lesion.
pub fn sample_negative_near<R: Rng + ?Sized>(
    gt: &BinaryPlane,
    cfg: &ExpertConfig,
    rng: &mut R,
) -> Result<Pixel, ExpertError> {
    if !gt.any() {
        return Err(ExpertError::EmptyGroundTruth);
    }
    let dist = distance_transform(gt.foreground(), gt.shape()).expect("foreground nonempty");
    let candidates: Vec<Pixel> = dist
        .iter()
        .filter(|(_, &d)| d > 0.0 && d <= cfg.d0)
        .map(|(p, _)| p)
        .collect();
    candidates
        .choose(rng)
        .copied()
        .ok_or(ExpertError::NoCandidate { d0: cfg.d0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::Plane;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask_from(rows: &[&str]) -> BinaryPlane {
        let shape = Shape::new(rows.len(), rows[0].len());
        Plane::from_fn(shape, |p| rows[p.i].as_bytes()[p.j] == b'#')
    }

    fn view(clicks: &SliceClicks) -> CacheView<'_> {
        CacheView {
            clicks,
            max_per_polarity: 12,
        }
    }

    fn square(shape: Shape, i0: usize, j0: usize, n: usize) -> BinaryPlane {
        Plane::from_fn(shape, |p| (i0..i0 + n).contains(&p.i) && (j0..j0 + n).contains(&p.j))
    }

    #[test]
    fn nothing_to_fix() {
        let e = BinaryPlane::filled(Shape::new(8, 8), false);
        let a = decide(3, &e, &e, view(&SliceClicks::default()), &ExpertConfig::default()).unwrap();
        assert_eq!(a, FeedbackAction::none(3));
    }

    #[test]
    fn spurious_mask_on_empty_slice_is_erased() {
        let shape = Shape::new(12, 12);
        let gt = BinaryPlane::filled(shape, false);
        let pred = square(shape, 2, 2, 4);
        let a = decide(0, &gt, &pred, view(&SliceClicks::default()), &ExpertConfig::default()).unwrap();
        assert_eq!(a.action, Action::Erase);
    }

    #[test]
    fn missed_square_gets_center_click() {
        let shape = Shape::new(16, 16);
        let gt = square(shape, 4, 6, 5);
        let pred = BinaryPlane::filled(shape, false);
        let a = decide(0, &gt, &pred, view(&SliceClicks::default()), &ExpertConfig::default()).unwrap();
        assert_eq!(a.action, Action::PositiveClick(Pixel::new(6, 8)));
    }

    #[test]
    fn line_region_is_skipped() {
        let gt = mask_from(&["......", ".####.", "......"]);
        let pred = BinaryPlane::filled(gt.shape(), false);
        let a = decide(0, &gt, &pred, view(&SliceClicks::default()), &ExpertConfig::default()).unwrap();
        assert!(a.is_none());
    }

    #[test]
    fn larger_false_positive_wins() {
        let shape = Shape::new(20, 20);
        let gt = square(shape, 1, 1, 3);
        // Prediction misses the gt square and adds a 5x5 blob.
        let pred = square(shape, 10, 10, 5);
        let a = decide(0, &gt, &pred, view(&SliceClicks::default()), &ExpertConfig::default()).unwrap();
        assert_eq!(a.action, Action::NegativeClick(Pixel::new(12, 12)));

        let cfg = ExpertConfig {
            action_priority: PolarityRule::FalseNegativeFirst,
            ..Default::default()
        };
        let a = decide(0, &gt, &pred, view(&SliceClicks::default()), &cfg).unwrap();
        assert_eq!(a.action, Action::PositiveClick(Pixel::new(2, 2)));
    }

    #[test]
    fn tie_goes_to_false_negative() {
        let shape = Shape::new(20, 20);
        let gt = square(shape, 1, 1, 3);
        let pred = square(shape, 10, 10, 3);
        let a = decide(0, &gt, &pred, view(&SliceClicks::default()), &ExpertConfig::default()).unwrap();
        assert_eq!(a.action, Action::PositiveClick(Pixel::new(2, 2)));
    }

    #[test]
    fn capped_polarity_falls_back() {
        let shape = Shape::new(20, 20);
        let gt = square(shape, 1, 1, 3);
        let pred = square(shape, 10, 10, 3);
        let clicks = SliceClicks {
            positive: vec![Pixel::new(0, 19)],
            negative: vec![],
        };
        let cache = CacheView {
            clicks: &clicks,
            max_per_polarity: 1,
        };
        let a = decide(0, &gt, &pred, cache, &ExpertConfig::default()).unwrap();
        assert_eq!(a.action, Action::NegativeClick(Pixel::new(11, 11)));
    }

    #[test]
    fn already_clicked_point_falls_back() {
        let shape = Shape::new(20, 20);
        let gt = square(shape, 1, 1, 3);
        let pred = BinaryPlane::filled(shape, false);
        let clicks = SliceClicks {
            positive: vec![Pixel::new(2, 2)],
            negative: vec![],
        };
        let a = decide(0, &gt, &pred, view(&clicks), &ExpertConfig::default()).unwrap();
        assert!(a.is_none());
    }

    #[test]
    fn shape_mismatch() {
        let a = BinaryPlane::filled(Shape::new(2, 2), false);
        let b = BinaryPlane::filled(Shape::new(2, 3), false);
        assert!(decide(0, &a, &b, view(&SliceClicks::default()), &ExpertConfig::default()).is_err());
    }

    #[test]
    fn cold_start_examples() {
        let cfg = ExpertConfig::default();
        let shape = Shape::new(32, 32);
        let one = square(shape, 3, 3, 3);
        assert_eq!(cold_start(0, &one, &cfg).action, Action::PositiveClick(Pixel::new(4, 4)));

        let mut two = square(shape, 2, 2, 3);
        for p in square(shape, 15, 15, 5).foreground().collect::<Vec<_>>() {
            two[p] = true;
        }
        assert_eq!(cold_start(1, &two, &cfg).action, Action::PositiveClick(Pixel::new(17, 17)));

        let empty = BinaryPlane::filled(shape, false);
        assert!(cold_start(2, &empty, &cfg).is_none());
    }

    #[test]
    fn negative_sampling_unique_candidate() {
        let shape = Shape::new(3, 3);
        let mut gt = BinaryPlane::filled(shape, true);
        gt[Pixel::new(0, 1)] = false;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_negative_near(&gt, &ExpertConfig::default(), &mut rng).unwrap();
        assert_eq!(p, Pixel::new(0, 1));
    }

    #[test]
    fn negative_sampling_errors() {
        let shape = Shape::new(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = BinaryPlane::filled(shape, true);
        assert!(matches!(
            sample_negative_near(&full, &ExpertConfig::default(), &mut rng),
            Err(ExpertError::NoCandidate { .. })
        ));
        let empty = BinaryPlane::filled(shape, false);
        assert_eq!(
            sample_negative_near(&empty, &ExpertConfig::default(), &mut rng),
            Err(ExpertError::EmptyGroundTruth)
        );
    }

    #[test]
    fn negative_sampling_is_seeded() {
        let shape = Shape::new(40, 40);
        let gt = square(shape, 15, 15, 6);
        let cfg = ExpertConfig { d0: 8.0, ..Default::default() };
        let a = sample_negative_near(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_negative_near(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
