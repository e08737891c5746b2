//! IoU, distribution statistics, and the weighted feedback score.

use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::Action;
use crate::log::SessionLog;
use crate::plane::BinaryPlane;
use crate::volume::{Dims, MaskVolume};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask dims differ: {0:?} vs {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("cannot summarise an empty list")]
    Empty,
    #[error("malformed session logs: {0}")]
    Malformed(String),
}

fn iou_from_counts(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Voxel-wise IoU over a whole scan. Two empty masks score 1.
pub fn scan_iou(gt: &MaskVolume, pred: &MaskVolume) -> Result<f64, MetricsError> {
    if gt.dims() != pred.dims() {
        return Err(MetricsError::DimsMismatch(gt.dims(), pred.dims()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in gt.voxels().iter().zip(pred.voxels()) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    Ok(iou_from_counts(inter, union))
}

pub fn slice_iou(gt: &BinaryPlane, pred: &BinaryPlane) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in gt.as_slice().iter().zip(pred.as_slice()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    iou_from_counts(inter, union)
}

/// Quantile of sorted data, interpolating linearly between the closest
/// ranks at position `(n - 1) * q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile(&sorted, 0.5))
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUStats {
    pub per_scan: Vec<(String, f64)>,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Counts over `[0, 0.05), [0.05, 0.10), ..., [0.95, 1.0]`.
    pub histogram: Vec<usize>,
}

pub fn iou_stats(per_scan: Vec<(String, f64)>) -> Result<IoUStats, MetricsError> {
    if per_scan.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted: Vec<f64> = per_scan.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for &v in &sorted {
        let bin = ((v * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    Ok(IoUStats {
        mean,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        histogram,
        per_scan,
    })
}

/// Relative cost of each feedback type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackWeights {
    pub positive: f64,
    pub negative: f64,
    pub erase: f64,
}

impl Default for FeedbackWeights {
    fn default() -> Self {
        Self {
            positive: 1.0,
            negative: 0.85,
            erase: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeedbackLedger {
    pub n_positive: u64,
    pub n_negative: u64,
    pub n_erasures: u64,
    #[serde(default)]
    pub weights: FeedbackWeights,
}

impl FeedbackLedger {
    pub fn new(n_positive: u64, n_negative: u64, n_erasures: u64) -> Self {
        Self {
            n_positive,
            n_negative,
            n_erasures,
            weights: FeedbackWeights::default(),
        }
    }

    pub fn record(&mut self, action: &Action) {
        match action {
            Action::PositiveClick(_) => self.n_positive += 1,
            Action::NegativeClick(_) => self.n_negative += 1,
            Action::Erase => self.n_erasures += 1,
            Action::NoAction => {}
        }
    }

    pub fn score(&self) -> f64 {
        feedback_score(self)
    }
}

/// Component-wise sum; weights are taken from the left operand.
impl Add for FeedbackLedger {
    type Output = FeedbackLedger;

    fn add(self, rhs: Self) -> Self {
        FeedbackLedger {
            n_positive: self.n_positive + rhs.n_positive,
            n_negative: self.n_negative + rhs.n_negative,
            n_erasures: self.n_erasures + rhs.n_erasures,
            weights: self.weights,
        }
    }
}

pub fn feedback_score(ledger: &FeedbackLedger) -> f64 {
    let w = ledger.weights;
    ledger.n_positive as f64 * w.positive
        + ledger.n_negative as f64 * w.negative
        + ledger.n_erasures as f64 * w.erase
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub mean_iou: f64,
    /// Summed over sessions, cumulative over iterations.
    pub feedback_score: f64,
    pub n_positive: u64,
    pub n_negative: u64,
    pub n_erasures: u64,
}

/// Mean IoU and cumulative feedback per iteration across sessions.
/// All sessions must cover the same iterations and carry IoU values.
pub fn iteration_curves(logs: &[SessionLog], weights: FeedbackWeights) -> Result<Vec<CurveRow>, MetricsError> {
    let first = logs.first().ok_or(MetricsError::Empty)?;
    let n_iter = first.iterations.len();
    if n_iter == 0 {
        return Err(MetricsError::Malformed("session has no iterations".into()));
    }
    let mut rows = Vec::with_capacity(n_iter);
    let mut ledgers = vec![FeedbackLedger { weights, ..Default::default() }; logs.len()];
    for t in 0..n_iter {
        let mut iou_sum = 0.0;
        for (log, ledger) in logs.iter().zip(&mut ledgers) {
            let rec = log.iterations.get(t).ok_or_else(|| {
                MetricsError::Malformed(format!("{} has {} iterations, expected {n_iter}", log.scan_id, log.iterations.len()))
            })?;
            if rec.t != t {
                return Err(MetricsError::Malformed(format!("{}: iteration {} at position {t}", log.scan_id, rec.t)));
            }
            let iou = rec
                .iou
                .ok_or_else(|| MetricsError::Malformed(format!("{}: iteration {t} has no IoU", log.scan_id)))?;
            iou_sum += iou;
            for a in &rec.actions {
                ledger.record(&a.action);
            }
        }
        let total = ledgers
            .iter()
            .copied()
            .fold(FeedbackLedger { weights, ..Default::default() }, |a, b| a + b);
        rows.push(CurveRow {
            iteration: t,
            mean_iou: iou_sum / logs.len() as f64,
            feedback_score: total.score(),
            n_positive: total.n_positive,
            n_negative: total.n_negative,
            n_erasures: total.n_erasures,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> MaskVolume {
        MaskVolume::new("m", Dims::new(1, bits.len(), 1), bits.to_vec()).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(scan_iou(&mask(&[0, 0, 0]), &mask(&[0, 0, 0])).unwrap(), 1.0);
        assert_eq!(scan_iou(&mask(&[1, 1, 0]), &mask(&[1, 1, 0])).unwrap(), 1.0);
        let gt = mask(&[1, 1, 1, 1, 0, 0]);
        let pred = mask(&[0, 0, 1, 1, 1, 1]);
        assert!((scan_iou(&gt, &pred).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            scan_iou(&mask(&[0]), &mask(&[0, 0])),
            Err(MetricsError::DimsMismatch(..))
        ));
    }

    #[test]
    fn stats_examples() {
        let s = iou_stats(vec![("a".into(), 0.5)]).unwrap();
        assert_eq!((s.mean, s.median, s.q1, s.q3), (0.5, 0.5, 0.5, 0.5));
        assert_eq!(s.histogram[10], 1);

        let s = iou_stats(vec![("a".into(), 1.0), ("b".into(), 0.0)]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (0.5, 0.25, 0.75));
        assert_eq!(s.histogram[0], 1);
        assert_eq!(s.histogram[HISTOGRAM_BINS - 1], 1);

        assert_eq!(iou_stats(vec![]), Err(MetricsError::Empty));
    }

    #[test]
    fn score_examples() {
        assert_eq!(feedback_score(&FeedbackLedger::new(0, 0, 0)), 0.0);
        assert!((feedback_score(&FeedbackLedger::new(1637, 284, 1384)) - 2916.4).abs() < 1e-9);
        assert!((feedback_score(&FeedbackLedger::new(1730, 248, 1344)) - 2948.8).abs() < 1e-9);
        assert!((feedback_score(&FeedbackLedger::new(3024, 0, 0)) - 3024.0).abs() < 1e-9);
        assert!((feedback_score(&FeedbackLedger::new(2, 0, 1)) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[10.0]).unwrap(), 10.0);
        assert_eq!(median(&[20.0, 10.0]).unwrap(), 15.0);
        assert_eq!(median(&[]), Err(MetricsError::Empty));
    }
}
