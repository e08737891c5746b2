//! Per-scan interactive state shared by the batch runner and the HTTP service.
//!
//! A [`Session`] owns the current prediction, the click cache and the
//! feedback ledger. Feedback is applied with [`Session::apply`]; a call to
//! [`Session::refine`] closes one iteration by re-running the refinement
//! segmenter on every slice that received a new click.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::click::{AddOutcome, CacheConfig, Click, ClickCache, ClickEncoding, ClickError, Polarity};
use crate::expert::{Action, CacheView, FeedbackAction};
use crate::log::{mask_digest, IterationRecord, SessionLog};
use crate::metrics::{scan_iou, FeedbackLedger, FeedbackWeights};
use crate::plane::BinaryPlane;
use crate::segment::{binarize, BinarizeRule, InitialSegmenter, RefineInput, RefinementSegmenter, SegmenterError};
use crate::volume::{extract_window, IntensityWindow, MaskVolume, Volume, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Initial segmenter only.
    System1,
    /// Refinement from an empty mask, driven entirely by feedback.
    System2,
    /// Initial prediction followed by feedback-driven refinement.
    System3,
}

impl Topology {
    pub fn is_interactive(self) -> bool {
        !matches!(self, Topology::System1)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::System1 => "system1",
            Topology::System2 => "system2",
            Topology::System3 => "system3",
        })
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "system1" => Ok(Topology::System1),
            "2" | "system2" => Ok(Topology::System2),
            "3" | "system3" => Ok(Topology::System3),
            other => Err(format!("unknown topology {other:?} (expected 1, 2 or 3)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("slice {slice}: {source}")]
    Segmenter { slice: usize, source: SegmenterError },
    #[error(transparent)]
    Click(#[from] ClickError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{0} sessions take no feedback")]
    NotInteractive(Topology),
    #[error("{0} needs an initial segmenter")]
    MissingInitial(Topology),
    #[error("{0} needs a refinement segmenter")]
    MissingRefiner(Topology),
}

/// Knobs shared by every session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub window_radius: usize,
    pub intensity: IntensityWindow,
    pub click_encoding: ClickEncoding,
    pub cache: CacheConfig,
    pub binarize: BinarizeRule,
    pub weights: FeedbackWeights,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            window_radius: 2,
            intensity: IntensityWindow::default(),
            click_encoding: ClickEncoding::default(),
            cache: CacheConfig::default(),
            binarize: BinarizeRule::default(),
            weights: FeedbackWeights::default(),
        }
    }
}

/// Result of applying one feedback action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyOutcome {
    Accepted,
    /// The slice already holds the maximum clicks of that polarity. Nothing changed.
    Cap,
    /// The same click is already cached. Nothing changed.
    Duplicate,
    /// `NoAction` was passed.
    Ignored,
}

pub struct Session {
    scan: Arc<Volume>,
    gt: Option<Arc<MaskVolume>>,
    topology: Topology,
    config: SessionConfig,
    mask: MaskVolume,
    cache: ClickCache,
    ledger: FeedbackLedger,
    refiner: Option<Mutex<Box<dyn RefinementSegmenter>>>,
    dirty: BTreeSet<usize>,
    pending: Vec<FeedbackAction>,
    log: SessionLog,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("scan_id", &self.scan.scan_id)
            .field("topology", &self.topology)
            .field("iteration", &self.log.iterations.len())
            .field("ledger", &self.ledger)
            .finish_non_exhaustive()
    }
}

/// Runs the initial segmenter over every slice of a scan.
pub fn predict_initial(
    scan: &Volume,
    initial: &mut dyn InitialSegmenter,
    config: &SessionConfig,
) -> Result<MaskVolume, SessionError> {
    let dims = scan.dims();
    let mut mask = MaskVolume::empty(scan.scan_id.clone(), dims);
    for k in 0..dims.n_slices {
        let window = extract_window(scan, k, config.window_radius, &config.intensity)?;
        let prob = initial
            .predict(&window)
            .and_then(|p| {
                crate::segment::validate_probabilities(&p, dims.slice_shape())?;
                binarize(&p, config.binarize)
            })
            .map_err(|source| SessionError::Segmenter { slice: k, source })?;
        mask.set_slice(k, &prob)?;
    }
    Ok(mask)
}

impl Session {
    /// Opens a session. System 1 and 3 run the initial segmenter right away;
    /// System 3 records that prediction as iteration 0. System 2 starts from
    /// an empty mask.
    pub fn start(
        scan: Arc<Volume>,
        gt: Option<Arc<MaskVolume>>,
        topology: Topology,
        initial: Option<&mut dyn InitialSegmenter>,
        refiner: Option<Box<dyn RefinementSegmenter>>,
        config: SessionConfig,
        rng_seed: u64,
    ) -> Result<Self, SessionError> {
        if let Some(gt) = &gt {
            gt.check_pair(&scan)?;
        }
        if topology.is_interactive() && refiner.is_none() {
            return Err(SessionError::MissingRefiner(topology));
        }
        let dims = scan.dims();
        let mask = match topology {
            Topology::System2 => MaskVolume::empty(scan.scan_id.clone(), dims),
            Topology::System1 | Topology::System3 => {
                let initial = initial.ok_or(SessionError::MissingInitial(topology))?;
                predict_initial(&scan, initial, &config)?
            }
        };
        let cache = ClickCache::new(dims.slice_shape(), dims.n_slices, config.cache, rng_seed);
        let mut session = Self {
            log: SessionLog::new(scan.scan_id.clone(), topology),
            ledger: FeedbackLedger {
                weights: config.weights,
                ..Default::default()
            },
            scan,
            gt,
            topology,
            config,
            mask,
            cache,
            refiner: refiner.map(Mutex::new),
            dirty: BTreeSet::new(),
            pending: Vec::new(),
        };
        if topology == Topology::System3 {
            session.close_iteration();
        }
        Ok(session)
    }

    pub fn scan(&self) -> &Volume {
        &self.scan
    }

    pub fn gt(&self) -> Option<&MaskVolume> {
        self.gt.as_deref()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn mask(&self) -> &MaskVolume {
        &self.mask
    }

    pub fn into_mask(self) -> MaskVolume {
        self.mask
    }

    pub fn slice_mask(&self, k: usize) -> Result<BinaryPlane, SessionError> {
        Ok(self.mask.slice(k)?)
    }

    pub fn cache(&self) -> &ClickCache {
        &self.cache
    }

    pub fn cache_view(&self, k: usize) -> CacheView<'_> {
        CacheView {
            clicks: self.cache.slice(k),
            max_per_polarity: self.cache.config().max_per_polarity,
        }
    }

    pub fn ledger(&self) -> &FeedbackLedger {
        &self.ledger
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> usize {
        self.log.iterations.len()
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }

    pub fn iou(&self) -> Option<f64> {
        self.gt
            .as_deref()
            .map(|gt| scan_iou(gt, &self.mask).expect("dims checked at start"))
    }

    /// Slices with clicks that have not been refined yet.
    pub fn dirty_slices(&self) -> impl Iterator<Item = usize> + '_ {
        self.dirty.iter().copied()
    }

    pub fn maybe_reset_cache(&mut self) -> bool {
        self.cache.maybe_reset()
    }

    /// Records one feedback action. Erasure clears the slice immediately;
    /// clicks are cached and take effect at the next [`Session::refine`].
    pub fn apply(&mut self, feedback: FeedbackAction) -> Result<ApplyOutcome, SessionError> {
        if !self.topology.is_interactive() {
            return Err(SessionError::NotInteractive(self.topology));
        }
        let k = feedback.slice;
        let n_slices = self.mask.dims().n_slices;
        if k >= n_slices {
            return Err(VolumeError::SliceOutOfRange { k, n_slices }.into());
        }
        let outcome = match feedback.action {
            Action::NoAction => return Ok(ApplyOutcome::Ignored),
            Action::Erase => {
                let empty = BinaryPlane::filled(self.mask.dims().slice_shape(), false);
                self.mask.set_slice(k, &empty)?;
                ApplyOutcome::Accepted
            }
            Action::PositiveClick(p) | Action::NegativeClick(p) => {
                let polarity = match feedback.action {
                    Action::PositiveClick(_) => Polarity::Positive,
                    _ => Polarity::Negative,
                };
                match self.cache.add(Click {
                    slice: k,
                    position: p,
                    polarity,
                })? {
                    AddOutcome::Accepted => {
                        self.dirty.insert(k);
                        ApplyOutcome::Accepted
                    }
                    AddOutcome::AtCap => ApplyOutcome::Cap,
                    AddOutcome::Duplicate => ApplyOutcome::Duplicate,
                }
            }
        };
        if outcome == ApplyOutcome::Accepted {
            self.ledger.record(&feedback.action);
            self.pending.push(feedback);
        }
        Ok(outcome)
    }

    /// Refines every slice with new clicks and closes the iteration.
    /// Slices without new clicks keep their mask. On error nothing is
    /// committed and the pending feedback stays queued.
    pub fn refine(&mut self) -> Result<Vec<usize>, SessionError> {
        if !self.topology.is_interactive() {
            return Err(SessionError::NotInteractive(self.topology));
        }
        let slices: Vec<usize> = self.dirty.iter().copied().collect();
        let mut updates = Vec::with_capacity(slices.len());
        for &k in &slices {
            updates.push((k, self.refine_slice(k)?));
        }
        for (k, m) in &updates {
            self.mask.set_slice(*k, m)?;
        }
        self.dirty.clear();
        self.close_iteration();
        Ok(slices)
    }

    fn refine_slice(&mut self, k: usize) -> Result<BinaryPlane, SessionError> {
        let cfg = self.config;
        let shape = self.mask.dims().slice_shape();
        let window = extract_window(&self.scan, k, cfg.window_radius, &cfg.intensity)?;
        let prev = self.mask.slice(k)?;
        let (pos, neg) = self.cache.masks_for_slice(k, cfg.click_encoding)?;
        let gt_slice = self.gt.as_deref().map(|g| g.slice(k)).transpose()?;
        let input = RefineInput {
            window: &window,
            prev_mask: &prev,
            pos_mask: &pos,
            neg_mask: &neg,
            clicks: self.cache.slice(k),
            gt: gt_slice.as_ref(),
        };
        let refiner = self
            .refiner
            .as_mut()
            .ok_or(SessionError::MissingRefiner(self.topology))?
            .get_mut()
            .unwrap_or_else(|poisoned| poisoned.into_inner());
        refiner
            .refine(&input)
            .and_then(|p| {
                crate::segment::validate_probabilities(&p, shape)?;
                binarize(&p, cfg.binarize)
            })
            .map_err(|source| SessionError::Segmenter { slice: k, source })
    }

    fn close_iteration(&mut self) {
        let n_slices = self.mask.dims().n_slices;
        let digests = (0..n_slices)
            .map(|k| mask_digest(&self.mask.slice(k).expect("slice in range")))
            .collect();
        let record = IterationRecord {
            t: self.log.iterations.len(),
            actions: std::mem::take(&mut self.pending),
            iou: self.iou(),
            slice_digests: digests,
        };
        self.log.iterations.push(record);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::{Pixel, Plane};
    use crate::segment::{ConservativeRefiner, NullSegmenter, ThresholdSegmenter};
    use crate::volume::{Dims, Spacing};

    fn scan() -> Arc<Volume> {
        let dims = Dims::new(16, 16, 3);
        let voxels = (0..dims.voxel_count())
            .map(|idx| {
                let i = (idx / 16) % 16;
                let j = idx % 16;
                if (4..9).contains(&i) && (4..9).contains(&j) {
                    40
                } else {
                    -800
                }
            })
            .collect();
        Arc::new(Volume::new("s", "p", dims, Spacing::default(), voxels).unwrap())
    }

    #[test]
    fn topology_parsing() {
        assert_eq!("2".parse::<Topology>().unwrap(), Topology::System2);
        assert_eq!("system3".parse::<Topology>().unwrap(), Topology::System3);
        assert!("4".parse::<Topology>().is_err());
        assert_eq!(serde_json::to_string(&Topology::System1).unwrap(), "\"system1\"");
    }

    #[test]
    fn system2_starts_empty_and_grows() {
        let mut s = Session::start(
            scan(),
            None,
            Topology::System2,
            None,
            Some(Box::new(ConservativeRefiner::default())),
            SessionConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(s.mask().count(), 0);
        assert_eq!(s.iteration(), 0);
        let click = FeedbackAction {
            slice: 1,
            action: Action::PositiveClick(Pixel::new(6, 6)),
        };
        assert_eq!(s.apply(click).unwrap(), ApplyOutcome::Accepted);
        assert_eq!(s.apply(click).unwrap(), ApplyOutcome::Duplicate);
        // Nothing changes until refine.
        assert_eq!(s.mask().count(), 0);
        assert_eq!(s.refine().unwrap(), vec![1]);
        assert_eq!(s.mask().count(), 25);
        assert_eq!(s.iteration(), 1);
        assert_eq!(s.ledger().n_positive, 1);
        assert_eq!(s.log().iterations[0].actions, vec![click]);
        assert!(s.iou().is_none());
    }

    #[test]
    fn erase_is_immediate() {
        let mut init = ThresholdSegmenter::default();
        let mut s = Session::start(
            scan(),
            None,
            Topology::System3,
            Some(&mut init),
            Some(Box::new(ConservativeRefiner::default())),
            SessionConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(s.iteration(), 1);
        assert_eq!(s.slice_mask(0).unwrap().count(), 25);
        s.apply(FeedbackAction { slice: 0, action: Action::Erase }).unwrap();
        assert_eq!(s.slice_mask(0).unwrap().count(), 0);
        assert_eq!(s.ledger().n_erasures, 1);
        assert!(s.dirty_slices().next().is_none());
    }

    #[test]
    fn system1_rejects_feedback() {
        let mut init = NullSegmenter;
        let mut s = Session::start(scan(), None, Topology::System1, Some(&mut init), None, SessionConfig::default(), 0)
            .unwrap();
        assert!(matches!(
            s.apply(FeedbackAction { slice: 0, action: Action::Erase }),
            Err(SessionError::NotInteractive(_))
        ));
    }

    #[test]
    fn missing_bindings() {
        assert!(matches!(
            Session::start(scan(), None, Topology::System2, None, None, SessionConfig::default(), 0),
            Err(SessionError::MissingRefiner(_))
        ));
        assert!(matches!(
            Session::start(
                scan(),
                None,
                Topology::System3,
                None,
                Some(Box::new(ConservativeRefiner::default())),
                SessionConfig::default(),
                0
            ),
            Err(SessionError::MissingInitial(_))
        ));
    }

    struct Failing;

    impl RefinementSegmenter for Failing {
        fn refine(&mut self, input: &RefineInput<'_>) -> Result<Plane<f32>, SegmenterError> {
            Ok(Plane::filled(crate::plane::Shape::new(1, 1), input.prev_mask.as_slice().len() as f32))
        }
    }

    #[test]
    fn failed_refine_commits_nothing() {
        let mut s = Session::start(
            scan(),
            None,
            Topology::System2,
            None,
            Some(Box::new(Failing)),
            SessionConfig::default(),
            0,
        )
        .unwrap();
        s.apply(FeedbackAction {
            slice: 0,
            action: Action::PositiveClick(Pixel::new(6, 6)),
        })
        .unwrap();
        assert!(matches!(s.refine(), Err(SessionError::Segmenter { slice: 0, .. })));
        assert_eq!(s.iteration(), 0);
        assert_eq!(s.dirty_slices().collect::<Vec<_>>(), vec![0]);
    }
}
