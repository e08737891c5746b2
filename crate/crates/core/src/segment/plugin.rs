//! External-process segmenters.
//!
//! [`PluginSegmenter`] drives a child process through the framing in
//! [`super::wire`]; [`serve_plugin`] is the other end, for writing plug-ins
//! in Rust.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::wire::{
    self, FrameError, Handshake, Op, RequestHeader, ResponseHeader, DTYPE_F32LE,
};
use super::{
    conservative_refine, threshold_initial, validate_probabilities, ConservativeConfig,
    InitialSegmenter, RefineInput, RefinementSegmenter, SegmenterError, ThresholdConfig,
};
use crate::click::SliceClicks;
use crate::plane::{Plane, Shape};
use crate::volume::SliceWindow;

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("failed to start plug-in `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("plug-in handshake failed: {0}")]
    Handshake(String),
    #[error("plug-in does not offer the `{0}` role")]
    UnsupportedRole(&'static str),
    #[error("corrupt plug-in frame: {0}")]
    Frame(String),
    #[error("plug-in returned shape {got:?}, expected {expected:?}")]
    ShapeMismatch { expected: [usize; 2], got: [usize; 2] },
    #[error("plug-in returned value {0} outside [0, 1]")]
    OutOfRange(f32),
    #[error("plug-in reported an error: {0}")]
    Remote(String),
    #[error("plug-in did not answer within {0:?}")]
    Timeout(Duration),
    #[error("plug-in connection is closed")]
    Closed,
    #[error("plug-in i/o error: {0}")]
    Io(#[from] io::Error),
}

/// A plug-in program and its arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl PluginCommand {
    /// Splits a command line on whitespace. No quoting is supported.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

enum Reply {
    Frame(ResponseHeader, Vec<f32>),
    Failed(PluginError),
}

struct PluginProcess {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    replies: Receiver<Reply>,
    handshake: Handshake,
    timeout: Duration,
    closed: bool,
}

impl PluginProcess {
    fn spawn(cmd: &PluginCommand, timeout: Duration) -> Result<Self, PluginError> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| PluginError::Spawn {
                command: cmd.display(),
                source,
            })?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");

        let (hs_tx, hs_rx) = mpsc::channel();
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let hs = wire::read_handshake(&mut reader);
            let ok = hs.is_ok();
            let _ = hs_tx.send(hs);
            if !ok {
                return;
            }
            loop {
                let reply = match read_reply(&mut reader) {
                    Ok(Some((h, p))) => Reply::Frame(h, p),
                    Ok(None) => Reply::Failed(PluginError::Closed),
                    Err(e) => Reply::Failed(e),
                };
                let stop = matches!(reply, Reply::Failed(_));
                if tx.send(reply).is_err() || stop {
                    return;
                }
            }
        });

        let handshake = match hs_rx.recv_timeout(timeout) {
            Ok(Ok(hs)) => hs,
            Ok(Err(msg)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(PluginError::Handshake(msg));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(PluginError::Handshake(format!("no handshake within {timeout:?}")));
            }
        };
        Ok(Self {
            child,
            stdin,
            replies,
            handshake,
            timeout,
            closed: false,
        })
    }

    fn shutdown(&mut self) {
        self.closed = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn call(&mut self, header: &RequestHeader, payload: &[f32]) -> Result<(ResponseHeader, Vec<f32>), PluginError> {
        if self.closed {
            return Err(PluginError::Closed);
        }
        if let Err(e) = wire::write_frame(&mut self.stdin, header, payload) {
            self.shutdown();
            return Err(e.into());
        }
        match self.replies.recv_timeout(self.timeout) {
            Ok(Reply::Frame(h, p)) => Ok((h, p)),
            Ok(Reply::Failed(e)) => {
                self.shutdown();
                Err(e)
            }
            Err(RecvTimeoutError::Timeout) => {
                // A late reply would desynchronise the stream.
                self.shutdown();
                Err(PluginError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.shutdown();
                Err(PluginError::Closed)
            }
        }
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        if !self.closed {
            self.shutdown();
        }
    }
}

fn read_reply<R: Read>(r: &mut R) -> Result<Option<(ResponseHeader, Vec<f32>)>, PluginError> {
    let header: ResponseHeader = match wire::read_header(r) {
        Ok(h) => h,
        Err(FrameError::Eof) => return Ok(None),
        Err(FrameError::Corrupt(m)) => return Err(PluginError::Frame(m)),
        Err(FrameError::Io(e)) => return Err(e.into()),
    };
    if header.dtype != DTYPE_F32LE {
        return Err(PluginError::Frame(format!("unsupported dtype {:?}", header.dtype)));
    }
    let n = header.shape[0] * header.shape[1];
    match wire::read_payload(r, n) {
        Ok(p) => Ok(Some((header, p))),
        Err(FrameError::Io(e)) => Err(e.into()),
        Err(FrameError::Eof) | Err(FrameError::Corrupt(_)) => {
            Err(PluginError::Frame("payload shorter than declared shape".into()))
        }
    }
}

/// A segmenter backed by an external process. Clones share the process,
/// so one plug-in can serve as both the initial and the refinement model.
#[derive(Clone)]
pub struct PluginSegmenter {
    inner: Arc<Mutex<PluginProcess>>,
}

impl std::fmt::Debug for PluginSegmenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginSegmenter").finish_non_exhaustive()
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

impl PluginSegmenter {
    pub fn spawn(cmd: &PluginCommand, timeout: Duration) -> Result<Self, PluginError> {
        Ok(Self {
            inner: Arc::new(Mutex::new(PluginProcess::spawn(cmd, timeout)?)),
        })
    }

    pub fn handshake(&self) -> Handshake {
        self.lock().handshake.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, PluginProcess> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn request(
        &self,
        op: Op,
        shape: Shape,
        planes: &[&[f32]],
        clicks: Option<SliceClicks>,
    ) -> Result<Plane<f32>, SegmenterError> {
        let role = match op {
            Op::Predict => "predict",
            Op::Refine => "refine",
        };
        let mut proc = self.lock();
        if !proc.handshake.supports(role) {
            return Err(PluginError::UnsupportedRole(role).into());
        }
        let header = RequestHeader {
            op,
            shape: [planes.len(), shape.height, shape.width],
            dtype: DTYPE_F32LE.into(),
            clicks,
        };
        let payload: Vec<f32> = planes.iter().flat_map(|p| p.iter().copied()).collect();
        let (resp, values) = proc.call(&header, &payload)?;
        if let Some(msg) = resp.error {
            return Err(PluginError::Remote(msg).into());
        }
        let expected = [shape.height, shape.width];
        if resp.shape != expected {
            return Err(PluginError::ShapeMismatch {
                expected,
                got: resp.shape,
            }
            .into());
        }
        let plane = Plane::from_vec(shape, values).expect("payload sized from shape");
        validate_probabilities(&plane, shape).map_err(|e| match e {
            SegmenterError::OutOfRange(v) => PluginError::OutOfRange(v).into(),
            other => other,
        })?;
        Ok(plane)
    }
}

impl InitialSegmenter for PluginSegmenter {
    fn predict(&mut self, window: &SliceWindow) -> Result<Plane<f32>, SegmenterError> {
        let planes: Vec<&[f32]> = window.channels.iter().map(|c| c.as_slice()).collect();
        self.request(Op::Predict, window.shape(), &planes, None)
    }
}

impl RefinementSegmenter for PluginSegmenter {
    fn refine(&mut self, input: &RefineInput<'_>) -> Result<Plane<f32>, SegmenterError> {
        let pos: Vec<f32> = input.pos_mask.plane.as_slice().iter().map(|&v| v as f32).collect();
        let neg: Vec<f32> = input.neg_mask.plane.as_slice().iter().map(|&v| v as f32).collect();
        let prev: Vec<f32> = input.prev_mask.as_slice().iter().map(|&b| b as u8 as f32).collect();
        let mut planes: Vec<&[f32]> = input.window.channels.iter().map(|c| c.as_slice()).collect();
        planes.extend([pos.as_slice(), neg.as_slice(), prev.as_slice()]);
        self.request(Op::Refine, input.window.shape(), &planes, Some(input.clicks.clone()))
    }
}

/// A refine request as seen by the plug-in.
#[derive(Debug, Clone)]
pub struct RefineRequest {
    pub window: SliceWindow,
    pub pos_mask: Plane<f32>,
    pub neg_mask: Plane<f32>,
    pub prev_mask: Plane<f32>,
    pub clicks: Option<SliceClicks>,
}

/// Plug-in side of the protocol.
pub trait PluginHandler {
    fn handshake(&self) -> Handshake {
        Handshake::full()
    }

    fn predict(&mut self, window: SliceWindow) -> Result<Plane<f32>, String>;

    fn refine(&mut self, request: RefineRequest) -> Result<Plane<f32>, String>;
}

fn window_from(mut planes: Vec<Plane<f32>>) -> Result<SliceWindow, String> {
    if planes.len().is_multiple_of(2) {
        return Err(format!("window needs an odd channel count, got {}", planes.len()));
    }
    let radius = planes.len() / 2;
    Ok(SliceWindow {
        center_index: 0,
        radius,
        channels: std::mem::take(&mut planes),
    })
}

fn dispatch<H: PluginHandler + ?Sized>(
    handler: &mut H,
    header: &RequestHeader,
    payload: Vec<f32>,
) -> Result<Plane<f32>, String> {
    if header.dtype != DTYPE_F32LE {
        return Err(format!("unsupported dtype {:?}", header.dtype));
    }
    let [c, h, w] = header.shape;
    let shape = Shape::new(h, w);
    let mut planes: Vec<Plane<f32>> = payload
        .chunks(shape.len().max(1))
        .take(c)
        .map(|chunk| Plane::from_vec(shape, chunk.to_vec()).expect("chunk sized from shape"))
        .collect();
    match header.op {
        Op::Predict => handler.predict(window_from(planes)?),
        Op::Refine => {
            if c < 4 {
                return Err(format!("refine needs at least 4 channels, got {c}"));
            }
            let prev_mask = planes.pop().unwrap();
            let neg_mask = planes.pop().unwrap();
            let pos_mask = planes.pop().unwrap();
            handler.refine(RefineRequest {
                window: window_from(planes)?,
                pos_mask,
                neg_mask,
                prev_mask,
                clicks: header.clicks.clone(),
            })
        }
    }
}

/// Runs the plug-in loop until the input stream closes.
pub fn serve_plugin<R: Read, W: Write, H: PluginHandler + ?Sized>(
    input: R,
    output: W,
    handler: &mut H,
) -> io::Result<()> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    wire::write_handshake(&mut output, &handler.handshake())?;
    loop {
        let header: RequestHeader = match wire::read_header(&mut input) {
            Ok(h) => h,
            Err(FrameError::Eof) => return Ok(()),
            Err(FrameError::Io(e)) => return Err(e),
            Err(FrameError::Corrupt(m)) => return Err(io::Error::new(io::ErrorKind::InvalidData, m)),
        };
        let n: usize = header.shape.iter().product();
        let payload = match wire::read_payload(&mut input, n) {
            Ok(p) => p,
            Err(FrameError::Io(e)) => return Err(e),
            Err(_) => return Err(io::Error::new(io::ErrorKind::InvalidData, "short payload")),
        };
        match dispatch(handler, &header, payload) {
            Ok(plane) => {
                let resp = ResponseHeader {
                    shape: [plane.height(), plane.width()],
                    dtype: DTYPE_F32LE.into(),
                    error: None,
                };
                wire::write_frame(&mut output, &resp, plane.as_slice())?;
            }
            Err(msg) => {
                let resp = ResponseHeader {
                    shape: [0, 0],
                    dtype: DTYPE_F32LE.into(),
                    error: Some(msg),
                };
                wire::write_frame(&mut output, &resp, &[])?;
            }
        }
    }
}

/// Serves the reference threshold and conservative segmenters.
#[derive(Debug, Clone, Default)]
pub struct ReferencePlugin {
    pub threshold: ThresholdConfig,
    pub conservative: ConservativeConfig,
}

impl PluginHandler for ReferencePlugin {
    fn predict(&mut self, window: SliceWindow) -> Result<Plane<f32>, String> {
        Ok(threshold_initial(&window, &self.threshold))
    }

    fn refine(&mut self, request: RefineRequest) -> Result<Plane<f32>, String> {
        let clicks = request
            .clicks
            .ok_or("the reference refiner needs click coordinates in the request header")?;
        let prev = request.prev_mask.map(|&v| v > 0.5);
        Ok(conservative_refine(&request.window, &prev, &clicks, &self.conservative))
    }
}

/// Returns the previous mask unchanged; predicts background.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoPlugin;

impl PluginHandler for EchoPlugin {
    fn predict(&mut self, window: SliceWindow) -> Result<Plane<f32>, String> {
        Ok(Plane::filled(window.shape(), 0.0))
    }

    fn refine(&mut self, request: RefineRequest) -> Result<Plane<f32>, String> {
        Ok(request.prev_mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::Pixel;

    #[test]
    fn parse_command() {
        let c = PluginCommand::parse("  seg --mode echo ").unwrap();
        assert_eq!(c.program, "seg");
        assert_eq!(c.args, vec!["--mode", "echo"]);
        assert!(PluginCommand::parse("   ").is_none());
    }

    #[test]
    fn serve_loop_in_memory() {
        // Build a request stream by hand, run the server over it, and parse replies.
        let shape = Shape::new(2, 2);
        let mut input = Vec::new();
        let prev = [1.0f32, 0.0, 0.0, 1.0];
        let mut payload = vec![0.5f32; 4]; // one window channel
        payload.extend([0.0; 4]);
        payload.extend([0.0; 4]);
        payload.extend(prev);
        let header = RequestHeader {
            op: Op::Refine,
            shape: [4, shape.height, shape.width],
            dtype: DTYPE_F32LE.into(),
            clicks: Some(SliceClicks::default()),
        };
        wire::write_frame(&mut input, &header, &payload).unwrap();
        let mut output = Vec::new();
        serve_plugin(input.as_slice(), &mut output, &mut EchoPlugin).unwrap();

        let mut r = BufReader::new(output.as_slice());
        assert!(wire::read_handshake(&mut r).unwrap().supports("refine"));
        let (h, p) = read_reply(&mut r).unwrap().unwrap();
        assert_eq!(h.shape, [2, 2]);
        assert_eq!(p, prev);
        assert!(read_reply(&mut r).unwrap().is_none());
    }

    #[test]
    fn handler_errors_are_reported() {
        let mut input = Vec::new();
        let header = RequestHeader {
            op: Op::Refine,
            shape: [4, 1, 1],
            dtype: DTYPE_F32LE.into(),
            clicks: None,
        };
        wire::write_frame(&mut input, &header, &[0.0; 4]).unwrap();
        let mut output = Vec::new();
        serve_plugin(input.as_slice(), &mut output, &mut ReferencePlugin::default()).unwrap();
        let mut r = BufReader::new(output.as_slice());
        wire::read_handshake(&mut r).unwrap();
        let (h, _) = read_reply(&mut r).unwrap().unwrap();
        assert!(h.error.unwrap().contains("click coordinates"));
    }

    #[test]
    fn reference_plugin_matches_in_process() {
        let shape = Shape::new(8, 8);
        let img = Plane::from_fn(shape, |p| if p.i < 4 { 0.7f32 } else { 0.1 });
        let window = SliceWindow {
            center_index: 0,
            radius: 0,
            channels: vec![img],
        };
        let clicks = SliceClicks {
            positive: vec![Pixel::new(1, 1)],
            negative: vec![],
        };
        let prev = crate::plane::BinaryPlane::filled(shape, false);
        let expected = conservative_refine(&window, &prev, &clicks, &ConservativeConfig::default());
        let got = ReferencePlugin::default()
            .refine(RefineRequest {
                window,
                pos_mask: Plane::filled(shape, 0.0),
                neg_mask: Plane::filled(shape, 0.0),
                prev_mask: Plane::filled(shape, 0.0),
                clicks: Some(clicks),
            })
            .unwrap();
        assert_eq!(got, expected);
    }
}
