//! Batch driver for Systems 1, 2 and 3 with the simulated expert.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Manifest};
use crate::expert::{ExpertConfig, ExpertError, FeedbackAction, FeedbackPolicy, IdealExpert};
use crate::log::SessionLog;
use crate::metrics::{iou_stats, iteration_curves, CurveRow, FeedbackLedger, IoUStats, MetricsError};
use crate::seed::derive_seed;
use crate::segment::{
    ConservativeConfig, ConservativeRefiner, InitialSegmenter, NullSegmenter, OracleConfig, OracleRefiner,
    PluginCommand, PluginError, PluginSegmenter, RefinementSegmenter, ThresholdConfig, ThresholdSegmenter,
};
use crate::session::{Session, SessionConfig, SessionError, Topology};
use crate::split::{Split, SplitError};
use crate::volume::{MaskVolume, Volume};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid system spec: {0}")]
    InvalidSpec(String),
    #[error("unknown segmenter {0:?} (expected null, threshold, conservative, oracle or plugin:CMD)")]
    UnknownSegmenter(String),
    #[error("segmenter `{binding}` cannot act as {role}")]
    WrongRole { binding: SegmenterBinding, role: &'static str },
    #[error("scan {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// A segmenter named on the command line or in a config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SegmenterBinding {
    Null,
    Threshold,
    Conservative,
    Oracle,
    Plugin(String),
}

impl FromStr for SegmenterBinding {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "null" => Ok(Self::Null),
            "threshold" => Ok(Self::Threshold),
            "conservative" => Ok(Self::Conservative),
            "oracle" => Ok(Self::Oracle),
            _ => match s.strip_prefix("plugin:") {
                Some(cmd) if PluginCommand::parse(cmd).is_some() => Ok(Self::Plugin(cmd.to_string())),
                _ => Err(RunError::UnknownSegmenter(s.into())),
            },
        }
    }
}

impl TryFrom<String> for SegmenterBinding {
    type Error = RunError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SegmenterBinding> for String {
    fn from(b: SegmenterBinding) -> String {
        b.to_string()
    }
}

impl fmt::Display for SegmenterBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Null => f.write_str("null"),
            Self::Threshold => f.write_str("threshold"),
            Self::Conservative => f.write_str("conservative"),
            Self::Oracle => f.write_str("oracle"),
            Self::Plugin(cmd) => write!(f, "plugin:{cmd}"),
        }
    }
}

/// Parameters for the built-in segmenters and the plug-in client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterSettings {
    pub threshold: ThresholdConfig,
    pub conservative: ConservativeConfig,
    pub oracle: OracleConfig,
    pub plugin_timeout_ms: u64,
}

impl Default for SegmenterSettings {
    fn default() -> Self {
        Self {
            threshold: ThresholdConfig::default(),
            conservative: ConservativeConfig::default(),
            oracle: OracleConfig::default(),
            plugin_timeout_ms: 30_000,
        }
    }
}

impl SegmenterSettings {
    pub fn initial(&self, binding: &SegmenterBinding) -> Result<Box<dyn InitialSegmenter>, RunError> {
        Ok(match binding {
            SegmenterBinding::Null => Box::new(NullSegmenter),
            SegmenterBinding::Threshold => Box::new(ThresholdSegmenter {
                config: self.threshold,
            }),
            SegmenterBinding::Plugin(cmd) => Box::new(self.plugin(cmd)?),
            other => {
                return Err(RunError::WrongRole {
                    binding: other.clone(),
                    role: "initial segmenter",
                })
            }
        })
    }

    pub fn refinement(&self, binding: &SegmenterBinding) -> Result<Box<dyn RefinementSegmenter>, RunError> {
        Ok(match binding {
            SegmenterBinding::Conservative => Box::new(ConservativeRefiner {
                config: self.conservative,
            }),
            SegmenterBinding::Oracle => Box::new(OracleRefiner { config: self.oracle }),
            SegmenterBinding::Plugin(cmd) => Box::new(self.plugin(cmd)?),
            other => {
                return Err(RunError::WrongRole {
                    binding: other.clone(),
                    role: "refinement segmenter",
                })
            }
        })
    }

    fn plugin(&self, cmd: &str) -> Result<PluginSegmenter, RunError> {
        let cmd = PluginCommand::parse(cmd).ok_or_else(|| RunError::UnknownSegmenter(cmd.into()))?;
        Ok(PluginSegmenter::spawn(&cmd, Duration::from_millis(self.plugin_timeout_ms))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub topology: Topology,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<SegmenterBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<SegmenterBinding>,
}

impl SystemSpec {
    /// Builds a spec from a single `--segmenter` value: System 1 uses it as
    /// the initial segmenter, System 2 as the refiner, and System 3 pairs the
    /// threshold initial segmenter with it as refiner (or uses a plug-in for both).
    pub fn from_cli(topology: Topology, iterations: usize, segmenter: SegmenterBinding) -> Self {
        let (initial, refinement) = match topology {
            Topology::System1 => (Some(segmenter), None),
            Topology::System2 => (None, Some(segmenter)),
            Topology::System3 => {
                let initial = match &segmenter {
                    SegmenterBinding::Plugin(_) => segmenter.clone(),
                    _ => SegmenterBinding::Threshold,
                };
                (Some(initial), Some(segmenter))
            }
        };
        Self {
            topology,
            iterations,
            initial,
            refinement,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::InvalidSpec(m.into()));
        match self.topology {
            Topology::System1 if self.iterations != 0 => bad("system1 takes no iterations"),
            Topology::System2 if self.iterations == 0 => bad("system2 needs at least one iteration"),
            Topology::System1 | Topology::System3 if self.initial.is_none() => bad("missing initial segmenter"),
            Topology::System2 | Topology::System3 if self.refinement.is_none() => {
                bad("missing refinement segmenter")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub system: SystemSpec,
    pub session: SessionConfig,
    pub expert: ExpertConfig,
    pub segmenters: SegmenterSettings,
    pub seed: u64,
}

/// Final state of one simulated session.
#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub scan_id: String,
    pub mask: MaskVolume,
    pub log: SessionLog,
    pub ledger: FeedbackLedger,
    pub iou: Option<f64>,
}

impl ScanOutcome {
    fn from_session(session: Session) -> Self {
        let ledger = *session.ledger();
        let iou = session.iou();
        let scan_id = session.scan().scan_id.clone();
        let log = session.log().clone();
        Self {
            scan_id,
            mask: session.into_mask(),
            log,
            ledger,
            iou,
        }
    }
}

/// One round of expert feedback over every slice, followed by refinement.
/// Returns the accepted actions.
pub fn expert_round(
    session: &mut Session,
    expert: &dyn FeedbackPolicy,
    cold_start: bool,
) -> Result<Vec<FeedbackAction>, RunError> {
    session.maybe_reset_cache();
    let gt = session
        .gt()
        .ok_or_else(|| RunError::MissingGroundTruth(session.scan().scan_id.clone()))?
        .clone();
    let mut accepted = Vec::new();
    for k in 0..gt.dims().n_slices {
        let gt_k = gt.slice(k).map_err(SessionError::from)?;
        let action = if cold_start {
            expert.cold_start(k, &gt_k)
        } else {
            let pred_k = session.slice_mask(k)?;
            expert.decide(k, &gt_k, &pred_k, session.cache_view(k))?
        };
        if action.is_none() {
            continue;
        }
        if session.apply(action)? == crate::session::ApplyOutcome::Accepted {
            accepted.push(action);
        }
    }
    session.refine()?;
    Ok(accepted)
}

pub fn run_system1(
    scan: Arc<Volume>,
    gt: Option<Arc<MaskVolume>>,
    initial: &mut dyn InitialSegmenter,
    config: SessionConfig,
) -> Result<ScanOutcome, RunError> {
    let session = Session::start(scan, gt, Topology::System1, Some(initial), None, config, 0)?;
    Ok(ScanOutcome::from_session(session))
}

/// System 2: empty start, cold-start clicks in round 0, then `iterations - 1`
/// rounds of expert decisions.
pub fn run_system2(
    scan: Arc<Volume>,
    gt: Arc<MaskVolume>,
    refiner: Box<dyn RefinementSegmenter>,
    expert: &dyn FeedbackPolicy,
    iterations: usize,
    config: SessionConfig,
    rng_seed: u64,
) -> Result<ScanOutcome, RunError> {
    let mut session = Session::start(scan, Some(gt), Topology::System2, None, Some(refiner), config, rng_seed)?;
    for t in 0..iterations {
        expert_round(&mut session, expert, t == 0)?;
    }
    Ok(ScanOutcome::from_session(session))
}

/// System 3: initial prediction as iteration 0, then `iterations` rounds of
/// expert decisions.
#[allow(clippy::too_many_arguments)]
pub fn run_system3(
    scan: Arc<Volume>,
    gt: Arc<MaskVolume>,
    initial: &mut dyn InitialSegmenter,
    refiner: Box<dyn RefinementSegmenter>,
    expert: &dyn FeedbackPolicy,
    iterations: usize,
    config: SessionConfig,
    rng_seed: u64,
) -> Result<ScanOutcome, RunError> {
    let mut session = Session::start(
        scan,
        Some(gt),
        Topology::System3,
        Some(initial),
        Some(refiner),
        config,
        rng_seed,
    )?;
    for _ in 0..iterations {
        expert_round(&mut session, expert, false)?;
    }
    Ok(ScanOutcome::from_session(session))
}

pub fn run_scan(
    scan: Arc<Volume>,
    gt: Option<Arc<MaskVolume>>,
    settings: &RunSettings,
) -> Result<ScanOutcome, RunError> {
    let spec = &settings.system;
    spec.validate()?;
    let seed = derive_seed(settings.seed, &scan.scan_id);
    let expert = IdealExpert::new(ExpertConfig {
        rng_seed: derive_seed(settings.expert.rng_seed, &scan.scan_id),
        ..settings.expert
    });
    let need_gt = || gt.clone().ok_or_else(|| RunError::MissingGroundTruth(scan.scan_id.clone()));
    let seg = &settings.segmenters;
    match spec.topology {
        Topology::System1 => {
            let mut initial = seg.initial(spec.initial.as_ref().expect("validated"))?;
            run_system1(scan.clone(), gt.clone(), initial.as_mut(), settings.session)
        }
        Topology::System2 => {
            let gt = need_gt()?;
            let refiner = seg.refinement(spec.refinement.as_ref().expect("validated"))?;
            run_system2(scan, gt, refiner, &expert, spec.iterations, settings.session, seed)
        }
        Topology::System3 => {
            let gt = need_gt()?;
            let mut initial = seg.initial(spec.initial.as_ref().expect("validated"))?;
            let refiner = seg.refinement(spec.refinement.as_ref().expect("validated"))?;
            run_system3(
                scan,
                gt,
                initial.as_mut(),
                refiner,
                &expert,
                spec.iterations,
                settings.session,
                seed,
            )
        }
    }
}

/// Re-applies the actions of a recorded log to a fresh session. Each
/// recorded iteration becomes one batch of `apply` calls and one `refine`.
pub fn replay(
    scan: Arc<Volume>,
    gt: Option<Arc<MaskVolume>>,
    log: &SessionLog,
    initial: Option<&mut dyn InitialSegmenter>,
    refiner: Option<Box<dyn RefinementSegmenter>>,
    config: SessionConfig,
    rng_seed: u64,
) -> Result<Session, RunError> {
    let mut session = Session::start(scan, gt, log.topology, initial, refiner, config, rng_seed)?;
    let skip = session.iteration();
    for rec in log.iterations.iter().skip(skip) {
        session.maybe_reset_cache();
        for &a in &rec.actions {
            let outcome = session.apply(a)?;
            if outcome != crate::session::ApplyOutcome::Accepted {
                return Err(RunError::Replay(format!(
                    "iteration {}: action {a:?} was not accepted ({outcome:?})",
                    rec.t
                )));
            }
        }
        session.refine()?;
    }
    Ok(session)
}

/// Experiment file: the dataset, the system under test and every tunable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    /// Runs every manifest scan when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSpec,
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default)]
    pub expert: ExpertConfig,
    #[serde(default)]
    pub segmenters: SegmenterSettings,
}

impl ExperimentConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.split = cfg.split.map(|s| base.join(s));
        Ok(cfg)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            system: self.system.clone(),
            session: self.session,
            expert: self.expert,
            segmenters: self.segmenters,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerScanRow {
    pub scan_id: String,
    pub patient_id: String,
    pub iou: Option<f64>,
    pub n_pos: u64,
    pub n_neg: u64,
    pub n_erase: u64,
    pub score: f64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub n_pos: u64,
    pub n_neg: u64,
    pub n_erase: u64,
    pub score: f64,
}

impl From<&FeedbackLedger> for FeedbackSummary {
    fn from(l: &FeedbackLedger) -> Self {
        Self {
            n_pos: l.n_positive,
            n_neg: l.n_negative,
            n_erase: l.n_erasures,
            score: l.score(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub topology: Topology,
    pub iterations: usize,
    pub n_scans: usize,
    pub n_failed: usize,
    pub partial: bool,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub histogram: Vec<usize>,
    pub feedback: FeedbackSummary,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<PerScanRow>,
    pub summary: Summary,
    pub curves: Vec<CurveRow>,
    pub outcomes: Vec<ScanOutcome>,
}

pub const PER_SCAN_CSV: &str = "per_scan.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CURVES_CSV: &str = "curves.csv";
pub const SESSIONS_DIR: &str = "sessions";

/// Runs the configured system over the selected scans. Scan failures are
/// recorded in the report instead of aborting the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, RunError> {
    config.system.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    let scan_ids: Vec<String> = match &config.split {
        Some(p) => Split::load(p)?.test,
        None => manifest.entries.iter().map(|e| e.scan_id.clone()).collect(),
    };
    for id in &scan_ids {
        manifest.entry(id)?;
    }
    run_on_manifest(&manifest, &scan_ids, &config.settings())
}

pub fn run_on_manifest(manifest: &Manifest, scan_ids: &[String], settings: &RunSettings) -> Result<Report, RunError> {
    let results: Vec<(String, Result<ScanOutcome, RunError>)> = scan_ids
        .par_iter()
        .map(|id| {
            let result = manifest
                .load_scan(id)
                .map_err(RunError::from)
                .and_then(|(v, m)| run_scan(Arc::new(v), m.map(Arc::new), settings));
            (id.clone(), result)
        })
        .collect();
    build_report(manifest, results, settings)
}

fn build_report(
    manifest: &Manifest,
    results: Vec<(String, Result<ScanOutcome, RunError>)>,
    settings: &RunSettings,
) -> Result<Report, RunError> {
    let weights = settings.session.weights;
    let mut rows = Vec::with_capacity(results.len());
    let mut outcomes = Vec::new();
    let mut total = FeedbackLedger {
        weights,
        ..Default::default()
    };
    let mut ious = Vec::new();
    let mut n_failed = 0;
    for (scan_id, result) in results {
        let patient_id = manifest.entry(&scan_id).map(|e| e.patient_id.clone()).unwrap_or_default();
        match result {
            Ok(o) => {
                total = total + o.ledger;
                let f = FeedbackSummary::from(&o.ledger);
                match o.iou {
                    Some(v) => ious.push((scan_id.clone(), v)),
                    None => n_failed += 1,
                }
                rows.push(PerScanRow {
                    error: if o.iou.is_some() { String::new() } else { "no ground truth".into() },
                    scan_id,
                    patient_id,
                    iou: o.iou,
                    n_pos: f.n_pos,
                    n_neg: f.n_neg,
                    n_erase: f.n_erase,
                    score: f.score,
                });
                outcomes.push(o);
            }
            Err(e) => {
                n_failed += 1;
                rows.push(PerScanRow {
                    scan_id,
                    patient_id,
                    iou: None,
                    n_pos: 0,
                    n_neg: 0,
                    n_erase: 0,
                    score: 0.0,
                    error: e.to_string(),
                });
            }
        }
    }
    let stats: Option<IoUStats> = iou_stats(ious).ok();
    let curves = curves_for(&outcomes, settings)?;
    let summary = Summary {
        topology: settings.system.topology,
        iterations: settings.system.iterations,
        n_scans: rows.len(),
        n_failed,
        partial: n_failed > 0,
        mean: stats.as_ref().map(|s| s.mean),
        median: stats.as_ref().map(|s| s.median),
        q1: stats.as_ref().map(|s| s.q1),
        q3: stats.as_ref().map(|s| s.q3),
        histogram: stats.map(|s| s.histogram).unwrap_or_default(),
        feedback: FeedbackSummary::from(&total),
    };
    Ok(Report {
        rows,
        summary,
        curves,
        outcomes,
    })
}

fn curves_for(outcomes: &[ScanOutcome], settings: &RunSettings) -> Result<Vec<CurveRow>, RunError> {
    let scored: Vec<&ScanOutcome> = outcomes.iter().filter(|o| o.iou.is_some()).collect();
    if scored.is_empty() {
        return Ok(Vec::new());
    }
    if settings.system.topology == Topology::System1 {
        let n = scored.len() as f64;
        return Ok(vec![CurveRow {
            iteration: 0,
            mean_iou: scored.iter().map(|o| o.iou.unwrap_or(0.0)).sum::<f64>() / n,
            feedback_score: 0.0,
            n_positive: 0,
            n_negative: 0,
            n_erasures: 0,
        }]);
    }
    let logs: Vec<SessionLog> = scored.iter().map(|o| o.log.clone()).collect();
    Ok(iteration_curves(&logs, settings.session.weights)?)
}

impl Report {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), RunError> {
        let dir = dir.as_ref();
        let sessions = dir.join(SESSIONS_DIR);
        fs::create_dir_all(&sessions).map_err(|e| io_err(&sessions, e))?;

        let path = dir.join(PER_SCAN_CSV);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;

        let path = dir.join(CURVES_CSV);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for r in &self.curves {
            w.serialize(r).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;

        let path = dir.join(SUMMARY_JSON);
        let text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;

        for o in &self.outcomes {
            let path = sessions.join(format!("{}.jsonl", o.scan_id));
            fs::write(&path, o.log.to_jsonl()).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

/// Report files read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedReport {
    pub rows: Vec<PerScanRow>,
    pub summary: Summary,
    pub curves: Vec<CurveRow>,
}

pub fn load_report(dir: impl AsRef<Path>) -> Result<LoadedReport, RunError> {
    let dir = dir.as_ref();
    let read_csv = |name: &str| -> Result<csv::Reader<fs::File>, RunError> {
        let path = dir.join(name);
        csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))
    };
    let rows = read_csv(PER_SCAN_CSV)?
        .deserialize()
        .collect::<Result<Vec<PerScanRow>, _>>()
        .map_err(|e| io_err(&dir.join(PER_SCAN_CSV), e))?;
    let curves = read_csv(CURVES_CSV)?
        .deserialize()
        .collect::<Result<Vec<CurveRow>, _>>()
        .map_err(|e| io_err(&dir.join(CURVES_CSV), e))?;
    let path = dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let summary = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    Ok(LoadedReport { rows, summary, curves })
}

/// Recomputes IoU statistics from the per-scan rows of a report.
pub fn restate(report: &LoadedReport) -> Result<IoUStats, RunError> {
    let ious = report
        .rows
        .iter()
        .filter_map(|r| r.iou.map(|v| (r.scan_id.clone(), v)))
        .collect();
    Ok(iou_stats(ious)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binding_parsing() {
        assert_eq!("oracle".parse::<SegmenterBinding>().unwrap(), SegmenterBinding::Oracle);
        assert_eq!(
            "plugin:python3 seg.py".parse::<SegmenterBinding>().unwrap(),
            SegmenterBinding::Plugin("python3 seg.py".into())
        );
        assert!("plugin:".parse::<SegmenterBinding>().is_err());
        assert!("unet".parse::<SegmenterBinding>().is_err());
        let json = serde_json::to_string(&SegmenterBinding::Plugin("x y".into())).unwrap();
        assert_eq!(json, "\"plugin:x y\"");
    }

    #[test]
    fn spec_validation() {
        let s = SystemSpec::from_cli(Topology::System1, 0, SegmenterBinding::Threshold);
        assert!(s.validate().is_ok());
        assert!(SystemSpec { iterations: 2, ..s }.validate().is_err());
        let s = SystemSpec::from_cli(Topology::System2, 0, SegmenterBinding::Conservative);
        assert!(s.validate().is_err());
        let s = SystemSpec::from_cli(Topology::System3, 0, SegmenterBinding::Oracle);
        assert_eq!(s.initial, Some(SegmenterBinding::Threshold));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn roles_are_checked() {
        let s = SegmenterSettings::default();
        assert!(matches!(
            s.initial(&SegmenterBinding::Oracle),
            Err(RunError::WrongRole { .. })
        ));
        assert!(matches!(
            s.refinement(&SegmenterBinding::Threshold),
            Err(RunError::WrongRole { .. })
        ));
    }
}
