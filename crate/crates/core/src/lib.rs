//! Interactive lesion segmentation with a simulated expert.
//!
//! The crate covers the volume model and file format, 2D region geometry,
//! click encoding, the simulated expert, reference segmenters and the
//! plug-in protocol, metrics, the batch runner for Systems 1 to 3, and
//! synthetic phantom data.

pub mod click;
pub mod dataset;
pub mod expert;
pub mod log;
pub mod lvol;
pub mod metrics;
pub mod phantom;
pub mod plane;
pub mod region;
pub mod rle;
pub mod runner;
pub mod seed;
pub mod segment;
pub mod session;
pub mod split;
pub mod volume;

pub use click::{Click, ClickCache, ClickEncoding, Polarity};
pub use dataset::{Manifest, ManifestEntry};
pub use expert::{Action, ExpertConfig, FeedbackAction, IdealExpert};
pub use metrics::{FeedbackLedger, IoUStats};
pub use plane::{BinaryPlane, Pixel, Plane, Shape};
pub use session::{Session, SessionConfig, Topology};
pub use volume::{Dims, MaskVolume, Spacing, Volume};
