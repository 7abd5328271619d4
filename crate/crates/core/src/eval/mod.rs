//! Detection metrics: greedy IoU matching, precision/recall, AP with
//! all-point or 101-point interpolation, per-class mAP reports, a confusion
//! matrix with a background class, and per-stage timing summaries.

mod confusion;
mod timing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{check_unit, iou, ClassId, ConfigError, Detection};

pub use confusion::{confusion_matrix, confusion_matrix_images, ConfusionMatrix};
pub use timing::{timing_report, StageSamples, StageTiming, TimingReport};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("image {image}: class `{class}` is not among the evaluated classes")]
    UnknownClass { image: u64, class: ClassId },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("iou_range must be nonempty and sorted ascending")]
    IouRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Exact area under the monotone precision envelope.
    AllPoint,
    /// Mean envelope precision at recall 0.00, 0.01, ..., 1.00.
    Grid101,
}

fn default_iou_range() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub confidence_threshold: f64,
    pub iou_threshold: f64,
    pub iou_range: Vec<f64>,
    pub max_detections: usize,
    pub interpolation: Interpolation,
    /// Minimum confidence for predictions counted in the confusion matrix.
    pub display_confidence: f64,
    pub classes: Vec<ClassId>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            confidence_threshold: 0.001,
            iou_threshold: 0.5,
            iou_range: default_iou_range(),
            max_detections: 300,
            interpolation: Interpolation::Grid101,
            display_confidence: 0.25,
            classes: vec![ClassId::CAR, ClassId::PERSON],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        check_unit("confidence_threshold", self.confidence_threshold)?;
        check_unit("iou_threshold", self.iou_threshold)?;
        check_unit("display_confidence", self.display_confidence)?;
        for &t in &self.iou_range {
            check_unit("iou_range", t)?;
        }
        if self.iou_range.is_empty() || self.iou_range.windows(2).any(|w| w[0] > w[1]) {
            return Err(EvalError::IouRange);
        }
        if self.max_detections == 0 {
            return Err(ConfigError::ZeroMaxDetections.into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    Tp,
    Fp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// One label per prediction, in input order.
    pub labels: Vec<MatchLabel>,
    /// Ground-truth index matched by each prediction.
    pub matched_gt: Vec<Option<usize>>,
    /// Ground truths left unmatched.
    pub fn_count: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.labels.iter().filter(|&&l| l == MatchLabel::Tp).count()
    }

    pub fn fp(&self) -> usize {
        self.labels.len() - self.tp()
    }
}

/// Prediction indices by confidence, highest first; ties keep input order.
fn by_confidence(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

/// Greedy matching in descending confidence: each prediction takes the
/// unmatched same-class ground truth with the highest IoU at or above the
/// threshold (lowest index on ties).
pub fn match_detections(preds: &[Detection], gts: &[Detection], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut matched_gt = vec![None; preds.len()];
    for p in by_confidence(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class != preds[p].class {
                continue;
            }
            let overlap = iou(&preds[p].bbox, &gt.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched_gt[p] = Some(g);
        }
    }
    MatchResult {
        labels: matched_gt
            .iter()
            .map(|m| {
                if m.is_some() {
                    MatchLabel::Tp
                } else {
                    MatchLabel::Fp
                }
            })
            .collect(),
        matched_gt,
        fn_count: taken.iter().filter(|&&t| !t).count(),
    }
}

/// Precision and recall over predictions with confidence at or above
/// `confidence_threshold`. `fn_count` is the number of ground truths no
/// prediction matched at all.
///
/// With no predictions, precision is 1 when there is also no ground truth and
/// 0 otherwise; with no ground truth, recall is 1.
pub fn precision_recall(
    scored: &[(f64, MatchLabel)],
    fn_count: usize,
    confidence_threshold: f64,
) -> (f64, f64) {
    let total_gt = scored.iter().filter(|(_, l)| *l == MatchLabel::Tp).count() + fn_count;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, l) in scored.iter().filter(|(c, _)| *c >= confidence_threshold) {
        match l {
            MatchLabel::Tp => tp += 1,
            MatchLabel::Fp => fp += 1,
        }
    }
    let precision = if tp + fp == 0 {
        if total_gt == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if total_gt == 0 {
        1.0
    } else {
        tp as f64 / total_gt as f64
    };
    (precision, recall)
}

/// AP from labels already ranked by descending confidence.
pub fn ap_from_ranked(ranked: &[MatchLabel], num_gt: usize, interpolation: Interpolation) -> f64 {
    if num_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, l) in ranked.iter().enumerate() {
        if *l == MatchLabel::Tp {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    match interpolation {
        Interpolation::AllPoint => {
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (p, r) in precision.iter().zip(&recall) {
                area += (r - prev_recall) * p;
                prev_recall = *r;
            }
            area
        }
        Interpolation::Grid101 => {
            let sum: f64 = (0..=100)
                .map(|t| {
                    let target = t as f64 / 100.0;
                    let k = recall.partition_point(|&r| r < target);
                    precision.get(k).copied().unwrap_or(0.0)
                })
                .sum();
            sum / 101.0
        }
    }
}

/// AP of one image's predictions against its ground truth, all classes ranked
/// together. Use [`map_report`] for per-class figures.
pub fn average_precision(
    preds: &[Detection],
    gts: &[Detection],
    iou_threshold: f64,
    interpolation: Interpolation,
) -> f64 {
    let m = match_detections(preds, gts, iou_threshold);
    let ranked: Vec<MatchLabel> = by_confidence(preds)
        .into_iter()
        .map(|i| m.labels[i])
        .collect();
    ap_from_ranked(&ranked, gts.len(), interpolation)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub instances: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub images: usize,
    pub instances: usize,
    pub overall: Metrics,
    pub classes: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// Trained-model figures published for the original car/person detector.
    /// Shipped to exercise report formatting; not reproducible here.
    pub fn reference_fixture() -> Self {
        let m = |precision, recall, map50, map50_95| Metrics {
            precision,
            recall,
            map50,
            map50_95,
        };
        MetricsReport {
            images: 0,
            instances: 0,
            overall: m(0.869, 0.824, 0.891, 0.558),
            classes: vec![
                ClassMetrics {
                    class: ClassId::CAR,
                    instances: 0,
                    metrics: m(0.855, 0.83, 0.899, 0.638),
                },
                ClassMetrics {
                    class: ClassId::PERSON,
                    instances: 0,
                    metrics: m(0.884, 0.819, 0.883, 0.478),
                },
            ],
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>9} {:>7} {:>7} {:>7} {:>9}",
            "Class", "Images", "Instances", "P", "R", "mAP50", "mAP50-95"
        );
        let mut row = |name: &str, instances: usize, m: &Metrics| {
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>9} {:>7.3} {:>7.3} {:>7.3} {:>9.3}",
                name, self.images, instances, m.precision, m.recall, m.map50, m.map50_95
            );
        };
        row("all", self.instances, &self.overall);
        for c in &self.classes {
            row(&c.class.name(), c.instances, &c.metrics);
        }
        out
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub(crate) fn check_classes(
    by_image: &BTreeMap<u64, Vec<Detection>>,
    classes: &[ClassId],
) -> Result<(), EvalError> {
    for (&image, dets) in by_image {
        if let Some(d) = dets.iter().find(|d| !classes.contains(&d.class)) {
            return Err(EvalError::UnknownClass {
                image,
                class: d.class,
            });
        }
    }
    Ok(())
}

/// Applies the evaluation confidence floor and per-image detection cap.
fn prepare_predictions(preds: &[Detection], config: &EvalConfig) -> Vec<Detection> {
    let kept: Vec<Detection> = preds
        .iter()
        .filter(|d| d.confidence >= config.confidence_threshold)
        .copied()
        .collect();
    by_confidence(&kept)
        .into_iter()
        .take(config.max_detections)
        .map(|i| kept[i])
        .collect()
}

struct ClassPool {
    /// (confidence, label) in global rank order.
    scored: Vec<(f64, MatchLabel)>,
    fn_count: usize,
    num_gt: usize,
}

fn pool_class(
    preds: &BTreeMap<u64, Vec<Detection>>,
    gts: &BTreeMap<u64, Vec<Detection>>,
    images: &BTreeSet<u64>,
    class: ClassId,
    iou_threshold: f64,
) -> ClassPool {
    let mut scored = Vec::new();
    let (mut fn_count, mut num_gt) = (0, 0);
    for image in images {
        let of_class = |m: &BTreeMap<u64, Vec<Detection>>| -> Vec<Detection> {
            m.get(image)
                .map(|v| v.iter().filter(|d| d.class == class).copied().collect())
                .unwrap_or_default()
        };
        let (p, g) = (of_class(preds), of_class(gts));
        let m = match_detections(&p, &g, iou_threshold);
        for i in by_confidence(&p) {
            scored.push((p[i].confidence, m.labels[i]));
        }
        fn_count += m.fn_count;
        num_gt += g.len();
    }
    // stable: equal confidences stay in image order, then per-image rank
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    ClassPool {
        scored,
        fn_count,
        num_gt,
    }
}

/// Per-class precision, recall, mAP at `iou_threshold` and mAP averaged over
/// `iou_range`, plus their unweighted class means.
///
/// Reported classes are those of `config.classes` that occur in either the
/// predictions or the ground truth.
pub fn map_report(
    preds_by_image: &BTreeMap<u64, Vec<Detection>>,
    gts_by_image: &BTreeMap<u64, Vec<Detection>>,
    config: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    config.validate()?;
    check_classes(preds_by_image, &config.classes)?;
    check_classes(gts_by_image, &config.classes)?;

    let preds: BTreeMap<u64, Vec<Detection>> = preds_by_image
        .iter()
        .map(|(&k, v)| (k, prepare_predictions(v, config)))
        .collect();
    let images: BTreeSet<u64> = preds.keys().chain(gts_by_image.keys()).copied().collect();
    let present: BTreeSet<ClassId> = preds
        .values()
        .chain(gts_by_image.values())
        .flatten()
        .map(|d| d.class)
        .collect();

    let mut classes = Vec::new();
    for &class in config.classes.iter().filter(|c| present.contains(c)) {
        let pool = pool_class(&preds, gts_by_image, &images, class, config.iou_threshold);
        let ranked = |p: &ClassPool| p.scored.iter().map(|(_, l)| *l).collect::<Vec<_>>();
        let (precision, recall) =
            precision_recall(&pool.scored, pool.fn_count, config.confidence_threshold);
        let map50 = ap_from_ranked(&ranked(&pool), pool.num_gt, config.interpolation);
        let map50_95 = mean(config.iou_range.iter().map(|&t| {
            let p = pool_class(&preds, gts_by_image, &images, class, t);
            ap_from_ranked(&ranked(&p), p.num_gt, config.interpolation)
        }));
        classes.push(ClassMetrics {
            class,
            instances: pool.num_gt,
            metrics: Metrics {
                precision,
                recall,
                map50,
                map50_95,
            },
        });
    }

    let overall = Metrics {
        precision: mean(classes.iter().map(|c| c.metrics.precision)),
        recall: mean(classes.iter().map(|c| c.metrics.recall)),
        map50: mean(classes.iter().map(|c| c.metrics.map50)),
        map50_95: mean(classes.iter().map(|c| c.metrics.map50_95)),
    };
    Ok(MetricsReport {
        images: images.len(),
        instances: classes.iter().map(|c| c.instances).sum(),
        overall,
        classes,
    })
}
