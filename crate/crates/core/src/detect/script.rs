//! Scripted (playback) detector and the line-delimited JSON record format
//! shared by detector scripts, ground-truth exports and evaluation inputs:
//!
//! ```text
//! {"index":5,"detections":[{"class":"car","confidence":0.9,"bbox":[10,20,30,40]}]}
//! ```
//!
//! Ground-truth timelines add optional `"motion"` and `"wind"` flags per line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_unit, BBox, ClassId, ConfigError, DetectError, Detection, Detector};
use crate::frame::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub index: u64,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<bool>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate index {index}")]
    Duplicate { line: usize, index: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses line-delimited records. Blank lines are skipped; each index may
/// appear at most once.
pub fn read_records(reader: impl BufRead) -> Result<Vec<ScriptRecord>, ScriptError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScriptRecord = serde_json::from_str(&line).map_err(|e| ScriptError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if let Some(bad) = record.detections.iter().find(|d| !d.is_valid()) {
            return Err(ScriptError::Parse {
                line: n + 1,
                message: format!(
                    "invalid detection (confidence {} bbox {:?})",
                    bad.confidence, bad.bbox
                ),
            });
        }
        if !seen.insert(record.index) {
            return Err(ScriptError::Duplicate {
                line: n + 1,
                index: record.index,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<'a>(
    mut out: impl Write,
    records: impl IntoIterator<Item = &'a ScriptRecord>,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Perturbations applied on playback.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability that each scripted detection is dropped.
    pub drop_probability: f64,
    /// Probability that a frame gains one spurious detection.
    pub spurious_rate: f64,
    /// Confidence is perturbed by a uniform offset in `[-jitter, jitter]`.
    pub confidence_jitter: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_unit("drop_probability", self.drop_probability)?;
        check_unit("spurious_rate", self.spurious_rate)?;
        check_unit("confidence_jitter", self.confidence_jitter)
    }

    fn is_zero(&self) -> bool {
        self.drop_probability == 0.0 && self.spurious_rate == 0.0 && self.confidence_jitter == 0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectorScript {
    pub entries: BTreeMap<u64, Vec<Detection>>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl DetectorScript {
    pub fn from_records(records: impl IntoIterator<Item = ScriptRecord>) -> Self {
        DetectorScript {
            entries: records
                .into_iter()
                .filter(|r| !r.detections.is_empty())
                .map(|r| (r.index, r.detections))
                .collect(),
            ..Default::default()
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec, seed: u64) -> Self {
        self.noise = noise;
        self.seed = seed;
        self
    }

    pub fn to_records(&self) -> Vec<ScriptRecord> {
        self.entries
            .iter()
            .map(|(&index, dets)| ScriptRecord {
                index,
                detections: dets.clone(),
                motion: None,
                wind: None,
            })
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-frame RNG derived from a seed; the result for a frame does not depend
/// on which other frames were queried before it.
pub(crate) fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

/// Plays back a [`DetectorScript`], optionally perturbed.
#[derive(Clone, Debug)]
pub struct ScriptedDetector {
    script: DetectorScript,
}

impl ScriptedDetector {
    pub fn new(script: DetectorScript) -> Result<Self, ConfigError> {
        script.noise.validate()?;
        Ok(ScriptedDetector { script })
    }

    /// Detections for frame `index` of a `width` x `height` stream.
    pub fn detections_at(&self, index: u64, width: u32, height: u32) -> Vec<Detection> {
        let scripted = self
            .script
            .entries
            .get(&index)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let noise = &self.script.noise;
        if noise.is_zero() {
            return scripted.to_vec();
        }
        let mut rng = frame_rng(self.script.seed, index);
        let mut out = Vec::with_capacity(scripted.len() + 1);
        for d in scripted {
            let dropped = rng.random::<f64>() < noise.drop_probability;
            let jitter = if noise.confidence_jitter > 0.0 {
                rng.random_range(-noise.confidence_jitter..=noise.confidence_jitter)
            } else {
                0.0
            };
            if !dropped {
                out.push(Detection {
                    confidence: (d.confidence + jitter).clamp(0.0, 1.0),
                    ..*d
                });
            }
        }
        if rng.random::<f64>() < noise.spurious_rate {
            let (fw, fh) = (width.max(1) as f64, height.max(1) as f64);
            let w = rng.random_range(1.0..=fw);
            let h = rng.random_range(1.0..=fh);
            let x = rng.random_range(0.0..=fw - w);
            let y = rng.random_range(0.0..=fh - h);
            let class = if rng.random::<bool>() {
                ClassId::CAR
            } else {
                ClassId::PERSON
            };
            out.push(Detection::new(
                class,
                rng.random::<f64>(),
                BBox::new(x, y, w, h),
            ));
        }
        out
    }
}

impl Detector for ScriptedDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError> {
        Ok(self.detections_at(frame.index(), frame.width(), frame.height()))
    }
}
