//! The gated recording state machine.
//!
//! `Hybrid` starts a recording only when motion and a relevant object are
//! seen on the same frame, then keeps writing while less than `grace_seconds`
//! have elapsed since the last detection. Once the grace window has run out,
//! the next frame without a detection stops the recording (and is not
//! written). `MotionOnly` is the same machine with "motion" standing in for
//! "detection"; `Continuous` writes every frame.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::detect::Detection;
use crate::frame::{Fps, Seconds};

#[derive(Debug, Error, PartialEq)]
pub enum RecorderError {
    #[error("frame {index}: timestamp {got} precedes previous timestamp {prev}")]
    DecreasingTimestamp {
        index: u64,
        prev: Seconds,
        got: Seconds,
    },
    #[error("grace_seconds must be finite and nonnegative, got {0}")]
    Grace(f64),
}

/// Recording policy. Ordered so that each mode records a subset of the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hybrid,
    MotionOnly,
    Continuous,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Continuous, Mode::MotionOnly, Mode::Hybrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::MotionOnly => "motion_only",
            Mode::Continuous => "continuous",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hybrid" => Ok(Mode::Hybrid),
            "motion_only" | "motion" => Ok(Mode::MotionOnly),
            "continuous" => Ok(Mode::Continuous),
            _ => Err(format!(
                "unknown mode `{s}` (expected hybrid, motion-only or continuous)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecorderConfig {
    pub grace_seconds: f64,
    pub mode: Mode,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        RecorderConfig {
            grace_seconds: 20.0,
            mode: Mode::Hybrid,
        }
    }
}

impl RecorderConfig {
    pub fn new(mode: Mode, grace_seconds: f64) -> Self {
        RecorderConfig {
            grace_seconds,
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), RecorderError> {
        if !self.grace_seconds.is_finite() || self.grace_seconds < 0.0 {
            return Err(RecorderError::Grace(self.grace_seconds));
        }
        Ok(())
    }
}

pub(crate) fn seconds_f64(s: Seconds) -> f64 {
    *s.numer() as f64 / *s.denom() as f64
}

fn ser_seconds<S: Serializer>(s: &Seconds, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_f64(seconds_f64(*s))
}

/// A maximal run of written frames, both ends inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub start_index: u64,
    pub end_index: u64,
    #[serde(serialize_with = "ser_seconds")]
    pub start_time: Seconds,
    #[serde(serialize_with = "ser_seconds")]
    pub end_time: Seconds,
    pub frame_count: u64,
}

impl Segment {
    fn open(index: u64, time: Seconds) -> Self {
        Segment {
            start_index: index,
            end_index: index,
            start_time: time,
            end_time: time,
            frame_count: 1,
        }
    }

    fn extend(&mut self, index: u64, time: Seconds) {
        self.end_index = index;
        self.end_time = time;
        self.frame_count = index - self.start_index + 1;
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<u64> {
        self.start_index..=self.end_index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    StartAndWrite,
    Write,
    Stop,
}

impl Action {
    pub fn writes(&self) -> bool {
        matches!(self, Action::StartAndWrite | Action::Write)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecorderState {
    pub recording: bool,
    pub last_detection_time: Option<Seconds>,
    pub open_segment: Option<Segment>,
    last_timestamp: Option<Seconds>,
}

impl RecorderState {
    pub fn idle() -> Self {
        RecorderState::default()
    }
}

/// `elapsed < grace`, evaluated on the rational's integer parts.
fn within_grace(elapsed: Seconds, grace: f64) -> bool {
    (*elapsed.numer() as f64) < grace * (*elapsed.denom() as f64)
}

/// One transition of the state machine.
///
/// `detections` must already be restricted to relevant classes. In `Hybrid`
/// mode a recording starts only on `motion` with a nonempty detection list;
/// while recording, any nonempty list refreshes the last-detection time.
pub fn step(
    state: &RecorderState,
    config: &RecorderConfig,
    index: u64,
    timestamp: Seconds,
    motion: bool,
    detections: &[Detection],
) -> Result<(RecorderState, Action), RecorderError> {
    if let Some(prev) = state.last_timestamp {
        if timestamp < prev {
            return Err(RecorderError::DecreasingTimestamp {
                index,
                prev,
                got: timestamp,
            });
        }
    }
    let mut next = state.clone();
    next.last_timestamp = Some(timestamp);

    let (starts, refreshes) = match config.mode {
        Mode::Hybrid => (motion && !detections.is_empty(), !detections.is_empty()),
        Mode::MotionOnly => (motion, motion),
        Mode::Continuous => {
            let action = match next.open_segment.as_mut() {
                Some(seg) => {
                    seg.extend(index, timestamp);
                    Action::Write
                }
                None => {
                    next.open_segment = Some(Segment::open(index, timestamp));
                    next.recording = true;
                    Action::StartAndWrite
                }
            };
            return Ok((next, action));
        }
    };

    if !next.recording {
        if !starts {
            return Ok((next, Action::None));
        }
        next.recording = true;
        next.last_detection_time = Some(timestamp);
        next.open_segment = Some(Segment::open(index, timestamp));
        return Ok((next, Action::StartAndWrite));
    }

    let last = next
        .last_detection_time
        .expect("recording state always carries a detection time");
    if within_grace(timestamp - last, config.grace_seconds) || refreshes {
        if refreshes {
            next.last_detection_time = Some(timestamp);
        }
        if let Some(seg) = next.open_segment.as_mut() {
            seg.extend(index, timestamp);
        }
        Ok((next, Action::Write))
    } else {
        next.recording = false;
        next.last_detection_time = None;
        next.open_segment = None;
        Ok((next, Action::Stop))
    }
}

/// Manual stop. Returns the idle state and the segment that was open, closed
/// at its last written frame.
pub fn stop_button(state: &RecorderState) -> (RecorderState, Option<Segment>) {
    let closed = state.open_segment.clone();
    let next = RecorderState {
        recording: false,
        last_detection_time: None,
        open_segment: None,
        last_timestamp: state.last_timestamp,
    };
    (next, closed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameDecision {
    pub index: u64,
    pub motion: bool,
    pub detections: usize,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordingLog {
    pub mode: Mode,
    pub fps: crate::frame::Fps,
    pub grace_seconds: f64,
    pub segments: Vec<Segment>,
    pub recorded_frame_count: u64,
    pub total_frames_processed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<FrameDecision>,
}

impl RecordingLog {
    pub fn recorded_indices(&self) -> BTreeSet<u64> {
        self.segments.iter().flat_map(Segment::indices).collect()
    }

    pub fn recorded_duration(&self) -> Seconds {
        self.fps.frames_to_seconds(self.recorded_frame_count)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.trace.iter().map(|d| d.action).collect()
    }
}

/// Drives [`step`] over a stream and collects the resulting segments.
#[derive(Debug)]
pub struct Recorder {
    config: RecorderConfig,
    fps: Fps,
    state: RecorderState,
    segments: Vec<Segment>,
    processed: u64,
    trace: Option<Vec<FrameDecision>>,
}

impl Recorder {
    pub fn new(config: RecorderConfig, fps: Fps) -> Result<Self, RecorderError> {
        config.validate()?;
        Ok(Recorder {
            config,
            fps,
            state: RecorderState::idle(),
            segments: Vec::new(),
            processed: 0,
            trace: Some(Vec::new()),
        })
    }

    /// Disables the per-frame decision trace.
    pub fn without_trace(mut self) -> Self {
        self.trace = None;
        self
    }

    pub fn config(&self) -> &RecorderConfig {
        &self.config
    }

    pub fn state(&self) -> &RecorderState {
        &self.state
    }

    /// Whether the detector result matters for the next frame. Only `Hybrid`
    /// consults the detector, and only on frames with motion.
    pub fn wants_detections(&self, motion: bool) -> bool {
        self.config.mode == Mode::Hybrid && motion
    }

    pub fn push(
        &mut self,
        index: u64,
        timestamp: Seconds,
        motion: bool,
        detections: &[Detection],
    ) -> Result<Action, RecorderError> {
        let (next, action) = step(
            &self.state,
            &self.config,
            index,
            timestamp,
            motion,
            detections,
        )?;
        if action == Action::Stop {
            self.segments.extend(self.state.open_segment.take());
        }
        self.state = next;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(FrameDecision {
                index,
                motion,
                detections: detections.len(),
                action,
            });
        }
        Ok(action)
    }

    pub fn stop_button(&mut self) -> Option<Segment> {
        let (next, closed) = stop_button(&self.state);
        self.state = next;
        self.segments.extend(closed.clone());
        closed
    }

    /// Closes any open segment and returns the log.
    pub fn finish(mut self) -> RecordingLog {
        self.stop_button();
        let recorded_frame_count = self.segments.iter().map(|s| s.frame_count).sum();
        RecordingLog {
            mode: self.config.mode,
            fps: self.fps,
            grace_seconds: self.config.grace_seconds,
            segments: self.segments,
            recorded_frame_count,
            total_frames_processed: self.processed,
            trace: self.trace.unwrap_or_default(),
        }
    }
}

/// Runs a recorder over per-frame motion and detector flags, consulting the
/// detector flag only where [`Recorder::wants_detections`] says so.
pub fn record_flags(
    config: &RecorderConfig,
    fps: Fps,
    motion: &[bool],
    objects: &[bool],
) -> Result<RecordingLog, RecorderError> {
    use crate::detect::{BBox, ClassId};
    let marker = [Detection::new(
        ClassId::CAR,
        1.0,
        BBox::new(0.0, 0.0, 1.0, 1.0),
    )];
    let mut rec = Recorder::new(config.clone(), fps)?;
    for (i, (&m, &o)) in motion.iter().zip(objects).enumerate() {
        let dets: &[Detection] = if rec.wants_detections(m) && o {
            &marker
        } else {
            &[]
        };
        rec.push(i as u64, fps.timestamp(i as u64), m, dets)?;
    }
    Ok(rec.finish())
}
