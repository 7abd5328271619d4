//! Synthetic surveillance scenes with exact ground truth, and the boolean
//! timeline oracle used to cross-check the recorder.
//!
//! Objects are solid rectangles moving linearly between two positions; wind
//! is seeded, bounded, uniform per-pixel jitter over chosen time intervals.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::script::frame_rng;
use crate::detect::{BBox, ClassId, Detection, DetectorScript, ScriptRecord};
use crate::frame::{Fps, Frame, FrameError, FrameSource, StreamInfo};
use crate::recorder::{Action, Mode};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("object {index}: {reason}")]
    Object { index: usize, reason: String },
}

#[derive(Debug, Error, PartialEq)]
#[error("timeline lengths differ: {motion} motion flags vs {objects} object flags")]
pub struct OracleError {
    pub motion: usize,
    pub objects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEvent {
    pub class: ClassId,
    pub enter_time: f64,
    pub exit_time: f64,
    /// Top-left position at `enter_time`.
    pub start: [f64; 2],
    /// Top-left position as `exit_time` is approached.
    pub end: [f64; 2],
    pub size: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
}

impl ObjectEvent {
    pub fn color(&self) -> [u8; 3] {
        self.color.unwrap_or(match self.class {
            ClassId::CAR => [255, 255, 0],
            ClassId::PERSON => [0, 0, 64],
            _ => [230, 230, 230],
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindSpec {
    pub enabled: bool,
    /// Maximum absolute brightness offset, drawn per 4x4 block and frame.
    pub intensity: u8,
    /// Half-open `[start, end)` intervals in seconds.
    pub active_intervals: Vec<[f64; 2]>,
}

const WIND_BLOCK: usize = 4;

fn default_background() -> u8 {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub duration_seconds: f64,
    pub fps: Fps,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_background")]
    pub background: u8,
    #[serde(default)]
    pub objects: Vec<ObjectEvent>,
    #[serde(default)]
    pub wind: WindSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Integer rectangle of a rendered object on one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub class: ClassId,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    #[serde(skip)]
    pub color: [u8; 3],
}

impl Placement {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return bad(format!(
                "duration_seconds {} must be positive",
                self.duration_seconds
            ));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!(
                "canvas {}x{} must be nonempty",
                self.width, self.height
            ));
        }
        for (index, o) in self.objects.iter().enumerate() {
            let fail = |reason: String| Err(ScenarioError::Object { index, reason });
            if !(o.enter_time.is_finite() && o.exit_time.is_finite())
                || o.enter_time < 0.0
                || o.enter_time >= o.exit_time
                || o.exit_time > self.duration_seconds
            {
                return fail(format!(
                    "needs 0 <= enter_time < exit_time <= duration, got [{}, {}]",
                    o.enter_time, o.exit_time
                ));
            }
            if o.start.iter().chain(&o.end).any(|v| !v.is_finite()) {
                return fail("trajectory coordinates must be finite".into());
            }
            let [w, h] = o.size;
            if w == 0 || h == 0 || w > self.width || h > self.height {
                return fail(format!(
                    "size {w}x{h} cannot be placed on a {}x{} canvas",
                    self.width, self.height
                ));
            }
        }
        for iv in &self.wind.active_intervals {
            if !(iv[0].is_finite() && iv[1].is_finite() && iv[0] < iv[1]) {
                return bad(format!("wind interval [{}, {}] is empty", iv[0], iv[1]));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_seconds * self.fps.as_f64()).round() as u64
    }

    fn time_of(&self, index: u64) -> f64 {
        index as f64 * self.fps.den() as f64 / self.fps.num() as f64
    }

    /// Objects on screen at frame `index`, in drawing order.
    pub fn placements(&self, index: u64) -> Vec<Placement> {
        let t = self.time_of(index);
        self.objects
            .iter()
            .filter(|o| o.enter_time <= t && t < o.exit_time)
            .map(|o| {
                let frac = (t - o.enter_time) / (o.exit_time - o.enter_time);
                let [w, h] = o.size;
                let pos = |a: f64, b: f64, room: u32| {
                    (a + (b - a) * frac).round().clamp(0.0, room as f64) as u32
                };
                Placement {
                    class: o.class,
                    x: pos(o.start[0], o.end[0], self.width - w),
                    y: pos(o.start[1], o.end[1], self.height - h),
                    w,
                    h,
                    color: o.color(),
                }
            })
            .collect()
    }

    pub fn wind_active(&self, index: u64) -> bool {
        let t = self.time_of(index);
        self.wind.enabled
            && self.wind.intensity > 0
            && self
                .wind
                .active_intervals
                .iter()
                .any(|iv| iv[0] <= t && t < iv[1])
    }

    pub fn render(&self, index: u64) -> Frame {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut px = vec![self.background; w * h * 3];
        for p in self.placements(index) {
            for y in p.y as usize..(p.y + p.h) as usize {
                for x in p.x as usize..(p.x + p.w) as usize {
                    px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&p.color);
                }
            }
        }
        if self.wind_active(index) {
            // one brightness offset per block, like foliage swaying in patches
            let amp = self.wind.intensity as i16;
            let mut rng = frame_rng(self.seed ^ 0x5749_4E44, index);
            let bw = w.div_ceil(WIND_BLOCK);
            let offsets: Vec<i16> = (0..bw * h.div_ceil(WIND_BLOCK))
                .map(|_| rng.random_range(-amp..=amp))
                .collect();
            for (i, pixel) in px.chunks_exact_mut(3).enumerate() {
                let (x, y) = (i % w, i / w);
                let offset = offsets[(y / WIND_BLOCK) * bw + x / WIND_BLOCK];
                for c in pixel {
                    *c = (*c as i16 + offset).clamp(0, 255) as u8;
                }
            }
        }
        Frame::new(index, self.fps, self.width, self.height, 3, px)
            .expect("rendered frame matches canvas geometry")
    }

    /// A 10 minute, 10 fps, 160x90 scene: wind on the first half of every
    /// minute (50% of the timeline) and a moving car or person on the second
    /// half of minutes 0, 2, 4 and 6 (20% of the timeline).
    pub fn desk_scale() -> Self {
        let wind = (0..10)
            .map(|k| [60.0 * k as f64, 60.0 * k as f64 + 30.0])
            .collect();
        let objects = [0, 2, 4, 6]
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let enter = 60.0 * k as f64 + 30.0;
                ObjectEvent {
                    class: if i % 2 == 0 {
                        ClassId::CAR
                    } else {
                        ClassId::PERSON
                    },
                    enter_time: enter,
                    exit_time: enter + 30.0,
                    start: [0.0, 30.0 + 5.0 * i as f64],
                    end: [136.0, 40.0 - 5.0 * i as f64],
                    size: [24, 24],
                    color: None,
                }
            })
            .collect();
        ScenarioSpec {
            duration_seconds: 600.0,
            fps: Fps::integer(10).expect("nonzero"),
            width: 160,
            height: 90,
            background: 128,
            objects,
            wind: WindSpec {
                enabled: true,
                intensity: 40,
                active_intervals: wind,
            },
            seed: 2024,
        }
    }
}

/// Frames of a generated scenario, rendered on demand.
#[derive(Clone, Debug)]
pub struct ScenarioStream {
    spec: ScenarioSpec,
    info: StreamInfo,
    next: u64,
}

impl Iterator for ScenarioStream {
    type Item = Result<Frame, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.info.frame_count.unwrap_or(0) {
            return None;
        }
        let frame = self.spec.render(self.next);
        self.next += 1;
        Some(Ok(frame))
    }
}

impl FrameSource for ScenarioStream {
    fn info(&self) -> &StreamInfo {
        &self.info
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimelineEntry {
    pub index: u64,
    /// An object appeared, disappeared or moved since the previous frame.
    pub motion_expected: bool,
    pub objects: Vec<Placement>,
    pub wind_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundTruthTimeline {
    pub frames: Vec<TimelineEntry>,
}

impl GroundTruthTimeline {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn object_flags(&self) -> Vec<bool> {
        self.frames.iter().map(|f| !f.objects.is_empty()).collect()
    }

    /// Export in the detector-script line format plus motion/wind flags.
    pub fn to_records(&self) -> Vec<ScriptRecord> {
        self.frames
            .iter()
            .map(|f| ScriptRecord {
                index: f.index,
                detections: f
                    .objects
                    .iter()
                    .map(|p| Detection::new(p.class, 1.0, p.bbox()))
                    .collect(),
                motion: Some(f.motion_expected),
                wind: Some(f.wind_active),
            })
            .collect()
    }
}

/// Builds the frame stream, ground truth and a noise-free detector script
/// (every visible object at confidence 1.0).
pub fn generate_scenario(
    spec: &ScenarioSpec,
) -> Result<(ScenarioStream, GroundTruthTimeline, DetectorScript), ScenarioError> {
    spec.validate()?;
    let n = spec.frame_count();
    let mut frames = Vec::with_capacity(n as usize);
    let mut prev: Vec<Placement> = Vec::new();
    for index in 0..n {
        let objects = spec.placements(index);
        frames.push(TimelineEntry {
            index,
            motion_expected: index > 0 && objects != prev,
            wind_active: spec.wind_active(index),
            objects: objects.clone(),
        });
        prev = objects;
    }
    let timeline = GroundTruthTimeline { frames };
    let script = DetectorScript {
        entries: timeline
            .frames
            .iter()
            .filter(|f| !f.objects.is_empty())
            .map(|f| {
                let dets = f
                    .objects
                    .iter()
                    .map(|p| Detection::new(p.class, 1.0, p.bbox()))
                    .collect();
                (f.index, dets)
            })
            .collect(),
        ..Default::default()
    };
    let stream = ScenarioStream {
        info: StreamInfo {
            width: spec.width,
            height: spec.height,
            fps: spec.fps,
            frame_count: Some(n),
        },
        spec: spec.clone(),
        next: 0,
    };
    Ok((stream, timeline, script))
}

/// Smallest number of elapsed frames that is no longer "less than the grace
/// period", found by counting up.
fn grace_window_frames(fps: Fps, grace_seconds: f64) -> u64 {
    let mut k = 0u64;
    while ((k * fps.den() as u64) as f64) < grace_seconds * fps.num() as f64 {
        k += 1;
    }
    k
}

/// Per-frame actions of the recording policy over abstract boolean inputs.
///
/// `objects[i]` says whether the detector would report a relevant object on
/// frame `i`. The detector is only consulted on motion frames, so for
/// `Hybrid` the effective trigger is `motion[i] && objects[i]`.
pub fn timeline_oracle_trace(
    motion: &[bool],
    objects: &[bool],
    fps: Fps,
    grace_seconds: f64,
    mode: Mode,
) -> Result<Vec<Action>, OracleError> {
    if motion.len() != objects.len() {
        return Err(OracleError {
            motion: motion.len(),
            objects: objects.len(),
        });
    }
    if mode == Mode::Continuous {
        return Ok((0..motion.len())
            .map(|i| {
                if i == 0 {
                    Action::StartAndWrite
                } else {
                    Action::Write
                }
            })
            .collect());
    }
    let window = grace_window_frames(fps, grace_seconds);
    let mut actions = Vec::with_capacity(motion.len());
    let mut last_trigger: Option<usize> = None;
    for i in 0..motion.len() {
        let trigger = match mode {
            Mode::Hybrid => motion[i] && objects[i],
            _ => motion[i],
        };
        let action = match last_trigger {
            None if trigger => {
                last_trigger = Some(i);
                Action::StartAndWrite
            }
            None => Action::None,
            Some(t) if trigger || ((i - t) as u64) < window => {
                if trigger {
                    last_trigger = Some(i);
                }
                Action::Write
            }
            Some(_) => {
                last_trigger = None;
                Action::Stop
            }
        };
        actions.push(action);
    }
    Ok(actions)
}

/// Exact set of frame indices the recorder writes for the given timeline.
pub fn timeline_oracle(
    motion: &[bool],
    objects: &[bool],
    fps: Fps,
    grace_seconds: f64,
    mode: Mode,
) -> Result<BTreeSet<u64>, OracleError> {
    Ok(
        timeline_oracle_trace(motion, objects, fps, grace_seconds, mode)?
            .iter()
            .enumerate()
            .filter(|(_, a)| a.writes())
            .map(|(i, _)| i as u64)
            .collect(),
    )
}
