use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::{by_confidence, check_classes, EvalConfig, EvalError};
use crate::detect::{iou, ClassId, Detection};

/// Detection-level confusion counts over `classes` plus a trailing
/// background row/column. `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<ClassId>) -> Self {
        let n = classes.len() + 1;
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn background(&self) -> usize {
        self.classes.len()
    }

    fn slot(&self, class: ClassId) -> usize {
        self.classes
            .iter()
            .position(|&c| c == class)
            .expect("classes checked before accumulation")
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Share of all counted events that are correct class matches.
    pub fn diagonal_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.diagonal() as f64 / t as f64,
        }
    }

    /// Each row divided by its sum (rows that sum to zero stay zero).
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Each column divided by its sum.
    pub fn column_normalized(&self) -> Vec<Vec<f64>> {
        let n = self.counts.len();
        let sums: Vec<u64> = (0..n)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect();
        self.counts
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&sums)
                    .map(|(&c, &s)| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(
            self.classes, other.classes,
            "merging matrices over different classes"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn accumulate(&mut self, preds: &[Detection], gts: &[Detection], config: &EvalConfig) {
        let shown: Vec<Detection> = preds
            .iter()
            .filter(|d| d.confidence >= config.display_confidence)
            .copied()
            .collect();
        let bg = self.background();
        let mut taken = vec![false; gts.len()];
        for p in by_confidence(&shown) {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let overlap = iou(&shown[p].bbox, &gt.bbox);
                if overlap >= config.iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            let predicted = self.slot(shown[p].class);
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    let truth = self.slot(gts[g].class);
                    self.counts[truth][predicted] += 1;
                }
                None => self.counts[bg][predicted] += 1,
            }
        }
        for gt in gts.iter().zip(&taken).filter(|(_, &t)| !t).map(|(g, _)| g) {
            let truth = self.slot(gt.class);
            self.counts[truth][bg] += 1;
        }
    }

    pub fn to_table(&self) -> String {
        let mut names: Vec<String> = self.classes.iter().map(ClassId::name).collect();
        names.push("background".into());
        let width = names.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "true\\pred");
        for n in &names {
            let _ = write!(out, " {n:>width$}");
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            let _ = write!(out, "{name:<width$}");
            for c in row {
                let _ = write!(out, " {c:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Confusion matrix for one image. Predictions below
/// `config.display_confidence` are ignored; matching is greedy by confidence
/// on IoU alone, so a box of the wrong class still counts as a (confused)
/// match.
pub fn confusion_matrix(
    preds: &[Detection],
    gts: &[Detection],
    config: &EvalConfig,
) -> Result<ConfusionMatrix, EvalError> {
    let one = |d: &[Detection]| -> BTreeMap<u64, Vec<Detection>> {
        [(0, d.to_vec())].into_iter().collect()
    };
    confusion_matrix_images(&one(preds), &one(gts), config)
}

pub fn confusion_matrix_images(
    preds_by_image: &BTreeMap<u64, Vec<Detection>>,
    gts_by_image: &BTreeMap<u64, Vec<Detection>>,
    config: &EvalConfig,
) -> Result<ConfusionMatrix, EvalError> {
    check_classes(preds_by_image, &config.classes)?;
    check_classes(gts_by_image, &config.classes)?;
    let mut cm = ConfusionMatrix::new(config.classes.clone());
    let images: BTreeSet<u64> = preds_by_image
        .keys()
        .chain(gts_by_image.keys())
        .copied()
        .collect();
    for image in images {
        let get = |m: &BTreeMap<u64, Vec<Detection>>| m.get(&image).cloned().unwrap_or_default();
        cm.accumulate(&get(preds_by_image), &get(gts_by_image), config);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::BBox;

    fn d(class: ClassId, conf: f64, x: f64) -> Detection {
        Detection::new(class, conf, BBox::new(x, 0.0, 10.0, 10.0))
    }

    #[test]
    fn perfect_single_class_is_diagonal() {
        let gts: Vec<_> = (0..5)
            .map(|i| d(ClassId::CAR, 1.0, i as f64 * 20.0))
            .collect();
        let cm = confusion_matrix(&gts, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(cm.counts[0][0], 5);
        assert_eq!(cm.total(), 5);
        assert_eq!(cm.diagonal_fraction(), 1.0);
    }

    #[test]
    fn cross_class_match_is_recorded() {
        let cm = confusion_matrix(
            &[d(ClassId::CAR, 0.9, 0.0)],
            &[d(ClassId::PERSON, 1.0, 0.0)],
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(cm.counts[1][0], 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn unmatched_go_to_background() {
        let cm = confusion_matrix(
            &[d(ClassId::CAR, 0.9, 100.0), d(ClassId::CAR, 0.1, 0.0)],
            &[d(ClassId::PERSON, 1.0, 0.0)],
            &EvalConfig::default(),
        )
        .unwrap();
        let bg = cm.background();
        assert_eq!(cm.counts[bg][0], 1, "spurious car");
        assert_eq!(
            cm.counts[1][bg], 1,
            "missed person (matching car is below display threshold)"
        );
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn normalizations() {
        let mut cm = ConfusionMatrix::new(vec![ClassId::CAR]);
        cm.counts = vec![vec![3, 1], vec![1, 0]];
        assert_eq!(cm.row_normalized(), vec![vec![0.75, 0.25], vec![1.0, 0.0]]);
        assert_eq!(
            cm.column_normalized(),
            vec![vec![0.75, 1.0], vec![0.25, 0.0]]
        );
        let table = cm.to_table();
        assert!(table.contains("background"));
    }
}
