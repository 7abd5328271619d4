//! Frame ingestion: the raster types that flow through the pipeline and the
//! pull-based sources that produce them.
//!
//! Every source implements [`FrameSource`], a single-consumer iterator of
//! `Result<Frame, FrameError>` that also exposes the stream geometry up front.
//! Frames are plain owned values; once yielded they can be moved to other
//! threads freely.

mod sequence;
mod y4m;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sequence::{open_image_sequence, ImageSequence, Manifest};
pub use y4m::{open_y4m, write_y4m, Y4mReader, Y4mWriter};

/// Seconds as an exact rational. Frame timestamps are `index / fps`.
pub type Seconds = Ratio<i64>;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("malformed Y4M header token `{token}`: {reason}")]
    Header { token: String, reason: String },
    #[error("Y4M header is missing the `{0}` field")]
    MissingField(char),
    #[error("frame {index}: truncated payload ({got} of {expected} bytes)")]
    Truncated {
        index: u64,
        expected: usize,
        got: usize,
    },
    #[error("frame {index}: malformed frame marker `{marker}`")]
    FrameMarker { index: u64, marker: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("frame {index}: cannot load image {path}: {message}")]
    Image {
        index: u64,
        path: String,
        message: String,
    },
    #[error(
        "frame {index} ({path}): dimensions {got_w}x{got_h} differ from stream {want_w}x{want_h}"
    )]
    DimensionMismatch {
        index: u64,
        path: String,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid frame geometry: {0}")]
    Geometry(String),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(u8),
    #[error("invalid frame rate `{0}`")]
    InvalidFps(String),
}

impl FrameError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        FrameError::Io {
            path: path.into(),
            source,
        }
    }
}

/// A positive frame rate `num / den` frames per second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fps {
    num: u32,
    den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self, FrameError> {
        if num == 0 || den == 0 {
            return Err(FrameError::InvalidFps(format!("{num}/{den}")));
        }
        Ok(Fps { num, den })
    }

    pub fn integer(fps: u32) -> Result<Self, FrameError> {
        Fps::new(fps, 1)
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact timestamp of frame `index`.
    pub fn timestamp(&self, index: u64) -> Seconds {
        self.frames_to_seconds(index)
    }

    /// Exact duration covered by `frames` frames.
    pub fn frames_to_seconds(&self, frames: u64) -> Seconds {
        Ratio::new(frames as i64 * self.den as i64, self.num as i64)
    }

    /// Period of one frame in wall-clock time.
    pub fn frame_period(&self) -> Duration {
        Duration::from_secs_f64(self.den as f64 / self.num as f64)
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fps {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FrameError::InvalidFps(s.to_string());
        match s.split_once(':').or_else(|| s.split_once('/')) {
            Some((n, d)) => Fps::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Fps::integer(s.trim().parse().map_err(|_| bad())?),
        }
    }
}

impl Serialize for Fps {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u32),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(n) => Fps::integer(n).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamInfo {
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
    /// `None` when the length is not known up front.
    pub frame_count: Option<u64>,
}

/// One raster frame, row-major, 8 bits per channel, 1 (luma) or 3 (RGB)
/// interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    index: u64,
    timestamp: Seconds,
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        index: u64,
        fps: Fps,
        width: u32,
        height: u32,
        channels: u8,
        pixels: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::Geometry(format!("{width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(FrameError::UnsupportedChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(FrameError::Geometry(format!(
                "{width}x{height}x{channels} needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Frame {
            index,
            timestamp: fps.timestamp(index),
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn timestamp(&self) -> Seconds {
        self.timestamp
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Single-channel working representation used by frame subtraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LumaFrame {
    pub index: u64,
    pub timestamp: Seconds,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl LumaFrame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(FrameError::Geometry(format!(
                "{width}x{height} luma plane with {} bytes",
                pixels.len()
            )));
        }
        Ok(LumaFrame {
            index: 0,
            timestamp: Seconds::from_integer(0),
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        LumaFrame::new(width, height, vec![value; width as usize * height as usize])
            .expect("filled plane has consistent geometry")
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[(y * self.width + x) as usize] = value;
    }
}

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up.
/// Computed in integer thousandths so the result is platform independent.
#[inline]
pub fn luma_of(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn to_luma(frame: &Frame) -> Result<LumaFrame, FrameError> {
    let pixels = match frame.channels {
        1 => frame.pixels.clone(),
        3 => frame
            .pixels
            .chunks_exact(3)
            .map(|p| luma_of(p[0], p[1], p[2]))
            .collect(),
        c => return Err(FrameError::UnsupportedChannels(c)),
    };
    Ok(LumaFrame {
        index: frame.index,
        timestamp: frame.timestamp,
        width: frame.width,
        height: frame.height,
        pixels,
    })
}

pub trait FrameSource: Iterator<Item = Result<Frame, FrameError>> {
    fn info(&self) -> &StreamInfo;
}

pub type BoxedSource = Box<dyn FrameSource + Send>;

impl FrameSource for BoxedSource {
    fn info(&self) -> &StreamInfo {
        (**self).info()
    }
}

/// A source over frames already held in memory.
pub struct MemorySource {
    info: StreamInfo,
    frames: std::vec::IntoIter<Frame>,
}

impl MemorySource {
    pub fn new(info: StreamInfo, frames: Vec<Frame>) -> Self {
        let info = StreamInfo {
            frame_count: Some(frames.len() as u64),
            ..info
        };
        MemorySource {
            info,
            frames: frames.into_iter(),
        }
    }

    /// Builds frames from luma planes, numbering them from zero.
    pub fn from_luma_planes(
        width: u32,
        height: u32,
        fps: Fps,
        planes: Vec<Vec<u8>>,
    ) -> Result<Self, FrameError> {
        let frames = planes
            .into_iter()
            .enumerate()
            .map(|(i, p)| Frame::new(i as u64, fps, width, height, 1, p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MemorySource::new(
            StreamInfo {
                width,
                height,
                fps,
                frame_count: None,
            },
            frames,
        ))
    }
}

impl Iterator for MemorySource {
    type Item = Result<Frame, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.frames.next().map(Ok)
    }
}

impl FrameSource for MemorySource {
    fn info(&self) -> &StreamInfo {
        &self.info
    }
}

/// Releases frames no faster than their timestamps, emulating a live feed.
pub struct Paced<S> {
    inner: S,
    started: Option<Instant>,
}

impl<S: FrameSource> Paced<S> {
    pub fn new(inner: S) -> Self {
        Paced {
            inner,
            started: None,
        }
    }
}

impl<S: FrameSource> Iterator for Paced<S> {
    type Item = Result<Frame, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.inner.next()?;
        let started = *self.started.get_or_insert_with(Instant::now);
        if let Ok(frame) = &item {
            let ts = frame.timestamp();
            let due = started + Duration::from_secs_f64(*ts.numer() as f64 / *ts.denom() as f64);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        Some(item)
    }
}

impl<S: FrameSource> FrameSource for Paced<S> {
    fn info(&self) -> &StreamInfo {
        self.inner.info()
    }
}
