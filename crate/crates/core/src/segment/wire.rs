//! Framing for the segmenter plug-in protocol.
//!
//! A plug-in is an external process that talks over stdin/stdout. On
//! startup it prints one handshake line:
//!
//! ```text
//! {"protocol":1,"roles":["predict","refine"]}
//! ```
//!
//! After that every message in either direction is
//! `u32 LE header length | JSON header | raw little-endian f32 payload`.
//! Requests carry `{"op":"predict"|"refine","shape":[C,H,W],"dtype":"f32le"}`,
//! responses `{"shape":[H,W],"dtype":"f32le"}`. Refine channels are ordered
//! `[window slices..., positive clicks, negative clicks, previous mask]`.
//! Refine requests may also carry the click coordinates in a `clicks`
//! header field; plug-ins that work from the mask planes can ignore it.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::click::SliceClicks;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";
/// Upper bound on header size; anything larger is treated as corruption.
pub const MAX_HEADER_LEN: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub roles: Vec<String>,
}

impl Handshake {
    pub fn full() -> Self {
        Self {
            protocol: PROTOCOL_VERSION,
            roles: vec!["predict".into(), "refine".into()],
        }
    }

    pub fn supports(&self, role: &str) -> bool {
        self.roles.iter().any(|r| r == role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Predict,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub op: Op,
    pub shape: [usize; 3],
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clicks: Option<SliceClicks>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub shape: [usize; 2],
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub enum FrameError {
    Io(io::Error),
    /// Clean end of stream before a new frame started.
    Eof,
    Corrupt(String),
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Corrupt("stream ended mid-frame".into())
        } else {
            FrameError::Io(e)
        }
    }
}

pub fn write_frame<W: Write, H: Serialize>(w: &mut W, header: &H, payload: &[f32]) -> io::Result<()> {
    let json = serde_json::to_vec(header).map_err(io::Error::other)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut bytes = Vec::with_capacity(payload.len() * 4);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads one frame header. The payload length is decided by the caller
/// from the header's shape.
pub fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R) -> Result<H, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Eof),
            Ok(0) => return Err(FrameError::Corrupt("truncated length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_HEADER_LEN {
        return Err(FrameError::Corrupt(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| FrameError::Corrupt(format!("bad header: {e}")))
}

pub fn read_payload<R: Read>(r: &mut R, n_values: usize) -> Result<Vec<f32>, FrameError> {
    let mut bytes = vec![0u8; n_values * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_handshake<W: Write>(w: &mut W, hs: &Handshake) -> io::Result<()> {
    let mut line = serde_json::to_vec(hs).map_err(io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line)?;
    w.flush()
}

pub fn read_handshake<R: BufRead>(r: &mut R) -> Result<Handshake, String> {
    let mut line = String::new();
    match r.read_line(&mut line) {
        Ok(0) => Err("plug-in closed its output before the handshake".into()),
        Ok(_) => {
            let hs: Handshake =
                serde_json::from_str(line.trim()).map_err(|e| format!("bad handshake line {line:?}: {e}"))?;
            if hs.protocol != PROTOCOL_VERSION {
                return Err(format!("unsupported protocol version {}", hs.protocol));
            }
            Ok(hs)
        }
        Err(e) => Err(e.to_string()),
    }
}
