//! Initial and refinement segmenters.
//!
//! Both produce per-pixel probabilities for one target slice. The
//! refinement segmenter additionally receives the positive and negative
//! click masks and the previous slice mask as three extra input planes.

mod oracle;
pub mod plugin;
mod reference;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::{oracle_refine, OracleConfig, OracleRefiner};
pub use plugin::{PluginCommand, PluginError, PluginSegmenter};
pub use reference::{
    conservative_refine, threshold_initial, ConservativeConfig, ConservativeRefiner, NullSegmenter,
    ThresholdConfig, ThresholdSegmenter,
};

use crate::click::{ClickMask, SliceClicks};
use crate::plane::{BinaryPlane, Plane, Shape};
use crate::volume::SliceWindow;

#[derive(Debug, Error)]
pub enum SegmenterError {
    #[error("output shape {got:?} does not match slice shape {expected:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f32),
    #[error("this refiner needs ground truth, which the session does not have")]
    MissingGroundTruth,
    #[error(transparent)]
    Plugin(#[from] PluginError),
}

/// Everything a refinement segmenter may look at for one slice.
#[derive(Debug, Clone, Copy)]
pub struct RefineInput<'a> {
    pub window: &'a SliceWindow,
    pub prev_mask: &'a BinaryPlane,
    pub pos_mask: &'a ClickMask,
    pub neg_mask: &'a ClickMask,
    /// The clicks behind `pos_mask`/`neg_mask`.
    pub clicks: &'a SliceClicks,
    /// Only the oracle refiner reads this.
    pub gt: Option<&'a BinaryPlane>,
}

pub trait InitialSegmenter: Send {
    fn predict(&mut self, window: &SliceWindow) -> Result<Plane<f32>, SegmenterError>;
}

pub trait RefinementSegmenter: Send {
    fn refine(&mut self, input: &RefineInput<'_>) -> Result<Plane<f32>, SegmenterError>;
}

impl<T: InitialSegmenter + ?Sized> InitialSegmenter for Box<T> {
    fn predict(&mut self, window: &SliceWindow) -> Result<Plane<f32>, SegmenterError> {
        (**self).predict(window)
    }
}

impl<T: RefinementSegmenter + ?Sized> RefinementSegmenter for Box<T> {
    fn refine(&mut self, input: &RefineInput<'_>) -> Result<Plane<f32>, SegmenterError> {
        (**self).refine(input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarizeRule {
    pub threshold: f32,
}

impl Default for BinarizeRule {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

/// Checks a segmenter output against the expected shape and `[0, 1]` range.
pub fn validate_probabilities(prob: &Plane<f32>, expected: Shape) -> Result<(), SegmenterError> {
    if prob.shape() != expected {
        return Err(SegmenterError::ShapeMismatch {
            expected,
            got: prob.shape(),
        });
    }
    if let Some(&bad) = prob.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SegmenterError::OutOfRange(bad));
    }
    Ok(())
}

/// Strict threshold: a pixel is foreground iff its probability exceeds the threshold.
pub fn binarize(prob: &Plane<f32>, rule: BinarizeRule) -> Result<BinaryPlane, SegmenterError> {
    validate_probabilities(prob, prob.shape())?;
    Ok(prob.map(|&p| p > rule.threshold))
}

pub(crate) fn to_probability(mask: &BinaryPlane) -> Plane<f32> {
    mask.map(|&b| if b { 1.0 } else { 0.0 })
}
