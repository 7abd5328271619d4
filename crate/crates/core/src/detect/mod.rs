//! Detection data model, post-processing (confidence/class filtering and
//! non-maximum suppression) and the detector contract.

pub(crate) mod script;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;

pub use script::{
    read_records, write_records, DetectorScript, NoiseSpec, ScriptError, ScriptRecord,
    ScriptedDetector,
};

/// Object class. `CAR` and `PERSON` are the relevant classes by default;
/// other ids are accepted and rendered as `class<N>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u16);

impl ClassId {
    pub const CAR: ClassId = ClassId(0);
    pub const PERSON: ClassId = ClassId(1);

    pub fn name(&self) -> String {
        match *self {
            ClassId::CAR => "car".into(),
            ClassId::PERSON => "person".into(),
            ClassId(n) => format!("class{n}"),
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for ClassId {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ClassId::CAR),
            "person" => Ok(ClassId::PERSON),
            other => other
                .strip_prefix("class")
                .unwrap_or(other)
                .parse()
                .map(ClassId)
                .map_err(|_| UnknownClass(s.to_string())),
        }
    }
}

impl Serialize for ClassId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ClassId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(u16),
            Name(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Id(n) => Ok(ClassId(n)),
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Axis-aligned box, top-left corner plus extent, in pixels.
/// Serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
            && self.w >= 0.0
            && self.h >= 0.0
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: ClassId,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(class: ClassId, confidence: f64, bbox: BBox) -> Self {
        Detection {
            class,
            confidence,
            bbox,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.confidence) && self.bbox.is_valid()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("max_detections must be positive")]
    ZeroMaxDetections,
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { name, value })
    }
}

pub fn default_relevant_classes() -> BTreeSet<ClassId> {
    [ClassId::CAR, ClassId::PERSON].into_iter().collect()
}

/// Post-processing applied to raw detector output before it gates recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Gating threshold. Evaluation sweeps use a much lower one (see `eval`).
    pub confidence_threshold: f64,
    pub iou_threshold: f64,
    pub max_detections: usize,
    pub relevant_classes: BTreeSet<ClassId>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            confidence_threshold: 0.25,
            iou_threshold: 0.5,
            max_detections: 300,
            relevant_classes: default_relevant_classes(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_unit("confidence_threshold", self.confidence_threshold)?;
        check_unit("iou_threshold", self.iou_threshold)?;
        if self.max_detections == 0 {
            return Err(ConfigError::ZeroMaxDetections);
        }
        Ok(())
    }
}

/// Keeps detections at or above the confidence threshold whose class is
/// relevant, preserving order.
pub fn filter_detections(dets: &[Detection], config: &DetectorConfig) -> Vec<Detection> {
    dets.iter()
        .filter(|d| {
            d.confidence >= config.confidence_threshold
                && config.relevant_classes.contains(&d.class)
        })
        .copied()
        .collect()
}

/// Indices of `dets` ordered by confidence (descending), then class id, then
/// input position.
pub(crate) fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(dets[a].class.cmp(&dets[b].class))
    });
    order
}

/// Greedy per-class non-maximum suppression.
///
/// A box is kept iff its IoU with every already-kept box of the same class is
/// at most `iou_threshold`. The result is in confidence order and capped at
/// `max_detections` across all classes.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_detections: usize) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in confidence_order(dets) {
        if kept.len() == max_detections {
            break;
        }
        let d = &dets[i];
        let clear = kept
            .iter()
            .filter(|k| k.class == d.class)
            .all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold);
        if clear {
            kept.push(*d);
        }
    }
    kept
}

/// Confidence/class filter followed by NMS, as used when gating recording.
pub fn postprocess(dets: &[Detection], config: &DetectorConfig) -> Vec<Detection> {
    nms(
        &filter_detections(dets, config),
        config.iou_threshold,
        config.max_detections,
    )
}

#[derive(Debug, Error)]
#[error("detector failed on frame {index}: {message}")]
pub struct DetectError {
    pub index: u64,
    pub message: String,
}

/// Anything that maps a frame to raw detections. Implementations may keep
/// state (a loaded model, a noise generator) and are used by one stream at a
/// time.
pub trait Detector {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError>;
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, DetectError> {
        (**self).detect(frame)
    }
}

/// Configuration for an external neural-network backend (for example an
/// exported ONNX model) plugged in behind [`Detector`]. No such backend ships
/// with this crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalBackendConfig {
    pub model_path: PathBuf,
    #[serde(default = "default_input_size")]
    pub input_size: [u32; 2],
}

fn default_input_size() -> [u32; 2] {
    [640, 640]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(class: ClassId, confidence: f64, b: [f64; 4]) -> Detection {
        Detection::new(class, confidence, b.into())
    }

    /// Counts unit cells covered by integer-aligned boxes.
    fn grid_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
        let inside = |r: [i32; 4], x: i32, y: i32| {
            x >= r[0] && x < r[0] + r[2] && y >= r[1] && y < r[1] + r[3]
        };
        let (mut inter, mut union) = (0, 0);
        for x in -50..100 {
            for y in -50..100 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as i32;
                union += (ia || ib) as i32;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 5.0, 5.0)), 0.0);
        let oracle = grid_iou([0, 0, 10, 10], [5, 5, 10, 10]);
        assert_eq!(oracle, 25.0 / 175.0);
        assert!((iou(&a, &BBox::new(5.0, 5.0, 10.0, 10.0)) - oracle).abs() < 1e-12);
        assert_eq!(
            iou(
                &BBox::new(1.0, 1.0, 0.0, 0.0),
                &BBox::new(1.0, 1.0, 0.0, 0.0)
            ),
            0.0
        );
    }

    #[test]
    fn filter_examples() {
        let cfg = DetectorConfig::default();
        assert!(filter_detections(&[], &cfg).is_empty());
        let input = [
            det(ClassId::CAR, 0.9, [0.0, 0.0, 1.0, 1.0]),
            det(ClassId::PERSON, 0.1, [0.0, 0.0, 1.0, 1.0]),
        ];
        assert_eq!(filter_detections(&input, &cfg), vec![input[0]]);
        let zero = DetectorConfig {
            confidence_threshold: 0.0,
            ..cfg.clone()
        };
        assert_eq!(filter_detections(&input, &zero), input.to_vec());
        let other = [det(ClassId(7), 0.99, [0.0, 0.0, 1.0, 1.0])];
        assert!(filter_detections(&other, &cfg).is_empty());
    }

    #[test]
    fn nms_suppresses_duplicates_within_class_only() {
        let b = [10.0, 10.0, 20.0, 20.0];
        let out = nms(
            &[det(ClassId::CAR, 0.8, b), det(ClassId::CAR, 0.9, b)],
            0.5,
            300,
        );
        assert_eq!(out, vec![det(ClassId::CAR, 0.9, b)]);
        let out = nms(
            &[det(ClassId::CAR, 0.8, b), det(ClassId::PERSON, 0.8, b)],
            0.5,
            300,
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].class, ClassId::CAR);
    }

    #[test]
    fn nms_caps_across_classes() {
        let dets: Vec<_> = (0..10)
            .map(|i| {
                det(
                    ClassId(i % 2),
                    0.1 * i as f64 / 2.0,
                    [i as f64 * 100.0, 0.0, 5.0, 5.0],
                )
            })
            .collect();
        let out = nms(&dets, 0.5, 3);
        assert_eq!(out.len(), 3);
        assert!(out.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    }

    #[test]
    fn class_names_round_trip() {
        for c in [ClassId::CAR, ClassId::PERSON, ClassId(9)] {
            assert_eq!(c.name().parse::<ClassId>().unwrap(), c);
        }
        assert!("truck".parse::<ClassId>().is_err());
        let d: Detection =
            serde_json::from_str(r#"{"class":"Person","confidence":0.5,"bbox":[1,2,3,4]}"#)
                .unwrap();
        assert_eq!(d, det(ClassId::PERSON, 0.5, [1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn detector_config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig {
            iou_threshold: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig {
            max_detections: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::ZeroMaxDetections));
    }

    fn boxes() -> impl Strategy<Value = BBox> {
        (0.0f64..50.0, 0.0f64..50.0, 0.5f64..30.0, 0.5f64..30.0)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_translation_invariant(a in boxes(), b in boxes(), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
            prop_assert!((iou(&a, &b) - iou(&b, &a)).abs() < 1e-12);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            let shift = |r: BBox| BBox::new(r.x + dx, r.y + dy, r.w, r.h);
            prop_assert!((iou(&a, &b) - iou(&shift(a), &shift(b))).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
        }

        #[test]
        fn filter_is_idempotent(confs in proptest::collection::vec((0u16..3, 0.0f64..=1.0), 0..20), t in 0.0f64..=1.0) {
            let dets: Vec<_> = confs.iter().map(|&(c, p)| det(ClassId(c), p, [0.0, 0.0, 1.0, 1.0])).collect();
            let cfg = DetectorConfig { confidence_threshold: t, ..Default::default() };
            let once = filter_detections(&dets, &cfg);
            prop_assert_eq!(filter_detections(&once, &cfg), once);
        }
    }
}
