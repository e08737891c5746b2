//! Session logs and their JSONL form.
//!
//! One JSON object per line, tagged by `event`:
//!
//! ```text
//! {"event":"session","scan_id":"ph0003","topology":"system3"}
//! {"event":"action","t":1,"k":4,"action":"pos","i":30,"j":31}
//! {"event":"action","t":1,"k":9,"action":"erase"}
//! {"event":"iteration","t":1,"iou":0.93,"slice_digests":["…"],"n_pos":1,"n_neg":0,"n_erase":1}
//! ```
//!
//! Action lines for iteration `t` precede that iteration's summary line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::{Action, FeedbackAction};
use crate::plane::{BinaryPlane, Pixel};
use crate::session::Topology;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log has no session header")]
    MissingHeader,
    #[error("iteration {found} where {expected} was expected")]
    NonContiguous { expected: usize, found: usize },
    #[error("action at iteration {action_t} before summary of iteration {summary_t}")]
    Misplaced { action_t: usize, summary_t: usize },
    #[error("trailing actions without an iteration summary")]
    Dangling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub actions: Vec<FeedbackAction>,
    pub iou: Option<f64>,
    pub slice_digests: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub scan_id: String,
    pub topology: Topology,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Pos,
    Neg,
    Erase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Session {
        scan_id: String,
        topology: Topology,
    },
    Action {
        t: usize,
        k: usize,
        action: ActionKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        i: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        j: Option<usize>,
    },
    Iteration {
        t: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        iou: Option<f64>,
        slice_digests: Vec<String>,
        n_pos: u64,
        n_neg: u64,
        n_erase: u64,
    },
}

impl LogEvent {
    pub fn from_action(t: usize, a: &FeedbackAction) -> Option<Self> {
        let (action, pos) = match a.action {
            Action::PositiveClick(p) => (ActionKind::Pos, Some(p)),
            Action::NegativeClick(p) => (ActionKind::Neg, Some(p)),
            Action::Erase => (ActionKind::Erase, None),
            Action::NoAction => return None,
        };
        Some(LogEvent::Action {
            t,
            k: a.slice,
            action,
            i: pos.map(|p| p.i),
            j: pos.map(|p| p.j),
        })
    }
}

/// FNV-1a over the mask bits, used to compare slice masks across runs.
pub fn mask_digest(mask: &BinaryPlane) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for b in (mask.height() as u32).to_le_bytes() {
        feed(b);
    }
    for b in (mask.width() as u32).to_le_bytes() {
        feed(b);
    }
    for &v in mask.as_slice() {
        feed(v as u8);
    }
    h
}

impl SessionLog {
    pub fn new(scan_id: impl Into<String>, topology: Topology) -> Self {
        Self {
            scan_id: scan_id.into(),
            topology,
            iterations: Vec::new(),
        }
    }

    pub fn events(&self) -> Vec<LogEvent> {
        let mut out = vec![LogEvent::Session {
            scan_id: self.scan_id.clone(),
            topology: self.topology,
        }];
        for rec in &self.iterations {
            let (mut n_pos, mut n_neg, mut n_erase) = (0, 0, 0);
            for a in &rec.actions {
                match a.action {
                    Action::PositiveClick(_) => n_pos += 1,
                    Action::NegativeClick(_) => n_neg += 1,
                    Action::Erase => n_erase += 1,
                    Action::NoAction => {}
                }
                out.extend(LogEvent::from_action(rec.t, a));
            }
            out.push(LogEvent::Iteration {
                t: rec.t,
                iou: rec.iou,
                slice_digests: rec.slice_digests.iter().map(|d| format!("{d:016x}")).collect(),
                n_pos,
                n_neg,
                n_erase,
            });
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in self.events() {
            s.push_str(&serde_json::to_string(&e).expect("log events serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        let mut log: Option<SessionLog> = None;
        let mut pending: Vec<FeedbackAction> = Vec::new();
        let mut pending_t: Option<usize> = None;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: LogEvent = serde_json::from_str(line).map_err(|e| LogError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let parse_err = |message: &str| LogError::Parse {
                line: idx + 1,
                message: message.into(),
            };
            match event {
                LogEvent::Session { scan_id, topology } => {
                    if log.is_some() {
                        return Err(parse_err("duplicate session header"));
                    }
                    log = Some(SessionLog::new(scan_id, topology));
                }
                LogEvent::Action { t, k, action, i, j } => {
                    let log = log.as_ref().ok_or(LogError::MissingHeader)?;
                    let expected = log.iterations.len();
                    if t != expected || pending_t.is_some_and(|p| p != t) {
                        return Err(LogError::Misplaced {
                            action_t: t,
                            summary_t: expected,
                        });
                    }
                    let action = match (action, i, j) {
                        (ActionKind::Pos, Some(i), Some(j)) => Action::PositiveClick(Pixel::new(i, j)),
                        (ActionKind::Neg, Some(i), Some(j)) => Action::NegativeClick(Pixel::new(i, j)),
                        (ActionKind::Erase, None, None) => Action::Erase,
                        _ => return Err(parse_err("click actions need i and j; erase takes neither")),
                    };
                    pending_t = Some(t);
                    pending.push(FeedbackAction { slice: k, action });
                }
                LogEvent::Iteration { t, iou, slice_digests, .. } => {
                    let log = log.as_mut().ok_or(LogError::MissingHeader)?;
                    let expected = log.iterations.len();
                    if t != expected {
                        return Err(LogError::NonContiguous { expected, found: t });
                    }
                    let digests = slice_digests
                        .iter()
                        .map(|d| u64::from_str_radix(d, 16))
                        .collect::<Result<_, _>>()
                        .map_err(|_| parse_err("bad slice digest"))?;
                    log.iterations.push(IterationRecord {
                        t,
                        actions: std::mem::take(&mut pending),
                        iou,
                        slice_digests: digests,
                    });
                    pending_t = None;
                }
            }
        }
        if !pending.is_empty() {
            return Err(LogError::Dangling);
        }
        log.ok_or(LogError::MissingHeader)
    }
}
