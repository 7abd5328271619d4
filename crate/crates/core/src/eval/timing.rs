use std::fmt::Write as _;

use serde::Serialize;

/// Raw per-frame stage durations in milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageSamples {
    pub preprocessing: Vec<f64>,
    pub inference: Vec<f64>,
    pub nms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    /// Absent when the stage never ran.
    pub mean_ms: Option<f64>,
    pub samples: usize,
}

impl StageTiming {
    fn from_samples(stage: &'static str, samples: &[f64]) -> Self {
        let mean_ms =
            (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64);
        StageTiming {
            stage,
            mean_ms,
            samples: samples.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub preprocessing: StageTiming,
    pub inference: StageTiming,
    pub nms: StageTiming,
}

pub const PREPROCESSING_LABEL: &str = "Pre-processing Time";
pub const INFERENCE_LABEL: &str = "Inference Time";
pub const NMS_LABEL: &str = "Non-Maximum Suppression (NMS) Time";

pub fn timing_report(samples: &StageSamples) -> TimingReport {
    TimingReport {
        preprocessing: StageTiming::from_samples(PREPROCESSING_LABEL, &samples.preprocessing),
        inference: StageTiming::from_samples(INFERENCE_LABEL, &samples.inference),
        nms: StageTiming::from_samples(NMS_LABEL, &samples.nms),
    }
}

impl TimingReport {
    pub fn stages(&self) -> [&StageTiming; 3] {
        [&self.preprocessing, &self.inference, &self.nms]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<36} {:>10} {:>8}", "Metric", "ms/frame", "frames");
        for s in self.stages() {
            let mean = s
                .mean_ms
                .map_or_else(|| "-".to_string(), |m| format!("{m:.3}"));
            let _ = writeln!(out, "{:<36} {:>10} {:>8}", s.stage, mean, s.samples);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_samples_pass_through() {
        let r = timing_report(&StageSamples {
            preprocessing: vec![0.5],
            inference: vec![25.1],
            nms: vec![5.2],
        });
        assert_eq!(r.preprocessing.mean_ms, Some(0.5));
        assert_eq!(r.inference.mean_ms, Some(25.1));
        assert_eq!(r.nms.mean_ms, Some(5.2));
    }

    #[test]
    fn empty_samples_have_no_mean() {
        let r = timing_report(&StageSamples::default());
        for s in r.stages() {
            assert_eq!(s.samples, 0);
            assert_eq!(s.mean_ms, None);
        }
        assert!(r.to_table().contains(" - "));
    }

    #[test]
    fn constant_samples() {
        let r = timing_report(&StageSamples {
            preprocessing: vec![2.0; 7],
            inference: vec![],
            nms: vec![0.25; 3],
        });
        assert_eq!(r.preprocessing.mean_ms, Some(2.0));
        assert_eq!(r.nms.mean_ms, Some(0.25));
        assert_eq!(r.preprocessing.samples, 7);
    }
}
