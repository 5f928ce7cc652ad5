//! Pixel-gradient exchange with an out-of-process guidance bridge.
//!
//! Frames are `u32 LE header length · JSON header · u32 LE payload length ·
//! payload`, where the payload is row-major little-endian `f32`.

use std::io::{self, Read, Write};
use std::net::TcpStream;
#[cfg(unix)]
use std::os::unix::net::UnixStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuffer;
use crate::scalar::Real;

/// Default read/write timeout of a bridge round trip.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

const MAX_HEADER_BYTES: u32 = 1 << 20;
const MAX_PAYLOAD_BYTES: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("timed out waiting for the bridge")]
    Timeout,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("gradient is {actual_width}x{actual_height}, render is {width}x{height}")]
    DimensionMismatch {
        width: u32,
        height: u32,
        actual_width: u32,
        actual_height: u32,
    },
    #[error("bridge reported an error: {0}")]
    Remote(String),
    #[error("cannot reach bridge at {address}: {source}")]
    Unreachable {
        address: String,
        #[source]
        source: io::Error,
    },
    #[error("bridge i/o: {0}")]
    Io(io::Error),
}

impl From<io::Error> for BridgeError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => BridgeError::Timeout,
            _ => BridgeError::Io(e),
        }
    }
}

/// JSON header of a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FrameHeader {
    GradRequest {
        view_id: String,
        width: u32,
        height: u32,
        iter_progress: f64,
    },
    GradResponse {
        view_id: String,
        width: u32,
        height: u32,
    },
    Error {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub payload: Vec<f32>,
}

pub fn encode_payload(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_payload(bytes: &[u8]) -> Result<Vec<f32>, BridgeError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(BridgeError::Protocol(format!(
            "payload of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_frame<W: Write>(w: &mut W, header: &FrameHeader, payload: &[f32]) -> Result<(), BridgeError> {
    let head = serde_json::to_vec(header).map_err(|e| BridgeError::Protocol(e.to_string()))?;
    let body = encode_payload(payload);
    let mut buf = Vec::with_capacity(8 + head.len() + body.len());
    buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
    buf.extend_from_slice(&head);
    buf.extend_from_slice(&(body.len() as u32).to_le_bytes());
    buf.extend_from_slice(&body);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_len<R: Read>(r: &mut R, limit: u32, what: &str) -> Result<usize, BridgeError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => BridgeError::Protocol(format!("stream closed before {what} length")),
        _ => e.into(),
    })?;
    let len = u32::from_le_bytes(len);
    if len > limit {
        return Err(BridgeError::Protocol(format!("{what} length {len} exceeds {limit}")));
    }
    Ok(len as usize)
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, BridgeError> {
    let head_len = read_len(r, MAX_HEADER_BYTES, "header")?;
    let mut head = vec![0u8; head_len];
    r.read_exact(&mut head)?;
    let header: FrameHeader =
        serde_json::from_slice(&head).map_err(|e| BridgeError::Protocol(format!("bad header: {e}")))?;
    let body_len = read_len(r, MAX_PAYLOAD_BYTES, "payload")?;
    let mut body = vec![0u8; body_len];
    r.read_exact(&mut body)?;
    Ok(Frame {
        header,
        payload: decode_payload(&body)?,
    })
}

/// Source of `∂L/∂I` for a rendered view.
pub trait GuidanceClient {
    fn request_gradient(
        &mut self,
        render: &ImageBuffer<f32>,
        view_id: &str,
        iter_progress: f64,
    ) -> Result<ImageBuffer<f32>, BridgeError>;
}

enum Stream {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            Stream::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            #[cfg(unix)]
            Stream::Unix(s) => s.flush(),
        }
    }
}

/// Bridge reached over a local stream socket: `host:port`, or `unix:/path`.
pub struct SocketBridge {
    stream: Stream,
}

impl SocketBridge {
    pub fn connect(address: &str, timeout: Duration) -> Result<Self, BridgeError> {
        let unreachable = |source| BridgeError::Unreachable {
            address: address.to_string(),
            source,
        };
        let stream = if let Some(path) = address.strip_prefix("unix:") {
            #[cfg(unix)]
            {
                let s = UnixStream::connect(path).map_err(unreachable)?;
                s.set_read_timeout(Some(timeout)).map_err(unreachable)?;
                s.set_write_timeout(Some(timeout)).map_err(unreachable)?;
                Stream::Unix(s)
            }
            #[cfg(not(unix))]
            {
                let _ = path;
                return Err(unreachable(io::Error::from(io::ErrorKind::Unsupported)));
            }
        } else {
            let s = TcpStream::connect(address).map_err(unreachable)?;
            s.set_read_timeout(Some(timeout)).map_err(unreachable)?;
            s.set_write_timeout(Some(timeout)).map_err(unreachable)?;
            s.set_nodelay(true).map_err(unreachable)?;
            Stream::Tcp(s)
        };
        Ok(Self { stream })
    }
}

impl GuidanceClient for SocketBridge {
    fn request_gradient(
        &mut self,
        render: &ImageBuffer<f32>,
        view_id: &str,
        iter_progress: f64,
    ) -> Result<ImageBuffer<f32>, BridgeError> {
        let (w, h) = (render.width() as u32, render.height() as u32);
        let request = FrameHeader::GradRequest {
            view_id: view_id.to_string(),
            width: w,
            height: h,
            iter_progress,
        };
        write_frame(&mut self.stream, &request, render.data())?;
        let frame = read_frame(&mut self.stream)?;
        match frame.header {
            FrameHeader::GradResponse {
                view_id: id,
                width,
                height,
            } => {
                if id != view_id {
                    return Err(BridgeError::Protocol(format!(
                        "response for view {id:?}, expected {view_id:?}"
                    )));
                }
                if (width, height) != (w, h) {
                    return Err(BridgeError::DimensionMismatch {
                        width: w,
                        height: h,
                        actual_width: width,
                        actual_height: height,
                    });
                }
                if frame.payload.len() != (w * h) as usize {
                    return Err(BridgeError::Protocol(format!(
                        "payload holds {} values, header says {}x{}",
                        frame.payload.len(),
                        width,
                        height
                    )));
                }
                Ok(ImageBuffer::from_vec(w as usize, h as usize, frame.payload).expect("length checked"))
            }
            FrameHeader::Error { message } => Err(BridgeError::Remote(message)),
            FrameHeader::GradRequest { .. } => Err(BridgeError::Protocol("bridge sent a request frame".into())),
        }
    }
}

/// Sends `render` for a view and returns the bridge's pixel gradient, in the
/// render's scalar type.
pub fn request_external_gradient<T: Real>(
    client: &mut dyn GuidanceClient,
    render: &ImageBuffer<T>,
    view_id: &str,
    iter_progress: f64,
) -> Result<ImageBuffer<T>, BridgeError> {
    let grad = client.request_gradient(&render.cast(), view_id, iter_progress)?;
    if grad.dims() != render.dims() {
        return Err(BridgeError::DimensionMismatch {
            width: render.width() as u32,
            height: render.height() as u32,
            actual_width: grad.width() as u32,
            actual_height: grad.height() as u32,
        });
    }
    Ok(grad.cast())
}
