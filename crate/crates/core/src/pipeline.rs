//! End-to-end processing: frames → luma → motion gate → detector → recorder.
//!
//! Several recorders (one per mode) can share a single pass over the stream;
//! luma conversion and motion detection run once per frame and the detector
//! runs only when some recorder asks for it.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::detect::{postprocess, DetectError, Detection, Detector, DetectorConfig};
use crate::eval::StageSamples;
use crate::frame::{to_luma, FrameError, FrameSource, LumaFrame, StreamInfo, Y4mWriter};
use crate::motion::{MotionConfig, MotionDetector, MotionError};
use crate::recorder::{Action, Recorder, RecorderConfig, RecorderError, RecordingLog};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Stream(#[from] FrameError),
    #[error("frame {index}: {source}")]
    Motion {
        index: u64,
        #[source]
        source: MotionError,
    },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("recorder: {0}")]
    Recorder(#[from] RecorderError),
    #[error("writing {path}: {source}")]
    Dump {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOptions {
    /// Keep the per-frame decision trace in each log.
    pub keep_trace: bool,
    /// Write each recorded segment as `<dir>/<mode>/segment_NNNN.y4m`.
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct PipelineRun {
    pub info: StreamInfo,
    pub logs: Vec<RecordingLog>,
    pub samples: StageSamples,
}

struct SegmentDump {
    dir: PathBuf,
    count: usize,
    writer: Option<(PathBuf, Y4mWriter<BufWriter<File>>)>,
}

impl SegmentDump {
    fn new(dir: PathBuf) -> Self {
        SegmentDump {
            dir,
            count: 0,
            writer: None,
        }
    }

    fn on_action(
        &mut self,
        action: Action,
        luma: &LumaFrame,
        info: &StreamInfo,
    ) -> Result<(), PipelineError> {
        match action {
            Action::StartAndWrite => {
                self.close()?;
                let path = self.dir.join(format!("segment_{:04}.y4m", self.count));
                self.count += 1;
                let io = |source| PipelineError::Dump {
                    path: path.display().to_string(),
                    source,
                };
                std::fs::create_dir_all(&self.dir).map_err(io)?;
                let file = BufWriter::new(File::create(&path).map_err(io)?);
                let mut w = Y4mWriter::new(file, info.width, info.height, info.fps).map_err(io)?;
                w.write_luma(luma).map_err(io)?;
                self.writer = Some((path, w));
            }
            Action::Write => {
                if let Some((path, w)) = self.writer.as_mut() {
                    w.write_luma(luma).map_err(|source| PipelineError::Dump {
                        path: path.display().to_string(),
                        source,
                    })?;
                }
            }
            Action::Stop => self.close()?,
            Action::None => {}
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), PipelineError> {
        if let Some((path, w)) = self.writer.take() {
            w.finish().map_err(|source| PipelineError::Dump {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Runs every recorder configuration over one pass of `stream`.
pub fn run_modes<S, D>(
    mut stream: S,
    motion_config: &MotionConfig,
    detector: &mut D,
    detector_config: &DetectorConfig,
    recorders: &[RecorderConfig],
    options: &PipelineOptions,
) -> Result<PipelineRun, PipelineError>
where
    S: FrameSource,
    D: Detector + ?Sized,
{
    let info = stream.info().clone();
    let mut motion = MotionDetector::new(motion_config.clone())
        .map_err(|source| PipelineError::Motion { index: 0, source })?;
    let mut recs = recorders
        .iter()
        .map(|cfg| {
            let rec = Recorder::new(cfg.clone(), info.fps)?;
            Ok(if options.keep_trace {
                rec
            } else {
                rec.without_trace()
            })
        })
        .collect::<Result<Vec<_>, RecorderError>>()?;
    let mut dumps: Vec<Option<SegmentDump>> = recorders
        .iter()
        .map(|cfg| {
            options
                .dump_dir
                .as_deref()
                .map(|d: &Path| SegmentDump::new(d.join(cfg.mode.as_str())))
        })
        .collect();
    let mut samples = StageSamples::default();

    for frame in stream.by_ref() {
        let frame = frame?;
        let index = frame.index();

        let started = Instant::now();
        let luma = to_luma(&frame)?;
        let keep = dumps.iter().any(Option::is_some).then(|| luma.clone());
        let moved = motion
            .process(luma)
            .map_err(|source| PipelineError::Motion { index, source })?
            .motion;
        samples.preprocessing.push(elapsed_ms(started));

        let mut relevant: Vec<Detection> = Vec::new();
        if recs.iter().any(|r| r.wants_detections(moved)) {
            let started = Instant::now();
            let raw = detector.detect(&frame)?;
            samples.inference.push(elapsed_ms(started));
            let started = Instant::now();
            relevant = postprocess(&raw, detector_config);
            samples.nms.push(elapsed_ms(started));
        }

        for (rec, dump) in recs.iter_mut().zip(dumps.iter_mut()) {
            let dets: &[Detection] = if rec.wants_detections(moved) {
                &relevant
            } else {
                &[]
            };
            let action = rec.push(index, frame.timestamp(), moved, dets)?;
            if let (Some(dump), Some(luma)) = (dump.as_mut(), keep.as_ref()) {
                dump.on_action(action, luma, &info)?;
            }
        }
    }

    for dump in dumps.iter_mut().flatten() {
        dump.close()?;
    }
    Ok(PipelineRun {
        info,
        logs: recs.into_iter().map(Recorder::finish).collect(),
        samples,
    })
}

/// Single-mode convenience wrapper around [`run_modes`].
pub fn run_pipeline<S, D>(
    stream: S,
    motion_config: &MotionConfig,
    detector: &mut D,
    detector_config: &DetectorConfig,
    recorder_config: &RecorderConfig,
) -> Result<RecordingLog, PipelineError>
where
    S: FrameSource,
    D: Detector + ?Sized,
{
    let run = run_modes(
        stream,
        motion_config,
        detector,
        detector_config,
        std::slice::from_ref(recorder_config),
        &PipelineOptions {
            keep_trace: true,
            dump_dir: None,
        },
    )?;
    Ok(run
        .logs
        .into_iter()
        .next()
        .expect("one recorder configured"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{BBox, ClassId, DetectorScript, ScriptedDetector};
    use crate::frame::{Fps, MemorySource};
    use crate::recorder::Mode;

    fn static_stream(n: usize) -> MemorySource {
        MemorySource::from_luma_planes(8, 8, Fps::integer(1).unwrap(), vec![vec![50; 64]; n])
            .unwrap()
    }

    fn empty_detector() -> ScriptedDetector {
        ScriptedDetector::new(DetectorScript::default()).unwrap()
    }

    #[test]
    fn no_motion_means_no_segments() {
        let log = run_pipeline(
            static_stream(30),
            &MotionConfig::default(),
            &mut empty_detector(),
            &DetectorConfig::default(),
            &RecorderConfig::default(),
        )
        .unwrap();
        assert!(log.segments.is_empty());
        assert_eq!(log.total_frames_processed, 30);
    }

    #[test]
    fn continuous_is_one_segment() {
        let log = run_pipeline(
            static_stream(17),
            &MotionConfig::default(),
            &mut empty_detector(),
            &DetectorConfig::default(),
            &RecorderConfig::new(Mode::Continuous, 20.0),
        )
        .unwrap();
        assert_eq!(log.segments.len(), 1);
        assert_eq!(log.recorded_frame_count, 17);
    }

    /// Object appears on frame 1 (frame 0 cannot carry motion), visible for
    /// that frame only. Grace 20 s at 1 fps keeps frames 1..=20.
    #[test]
    fn single_sighting_records_grace_window() {
        let mut planes = vec![vec![0u8; 64]; 40];
        planes[1] = vec![255; 64];
        let stream =
            MemorySource::from_luma_planes(8, 8, Fps::integer(1).unwrap(), planes).unwrap();
        let car = Detection::new(ClassId::CAR, 1.0, BBox::new(0.0, 0.0, 8.0, 8.0));
        let script = DetectorScript {
            entries: [(1, vec![car])].into_iter().collect(),
            ..Default::default()
        };
        let log = run_pipeline(
            stream,
            &MotionConfig::default(),
            &mut ScriptedDetector::new(script).unwrap(),
            &DetectorConfig::default(),
            &RecorderConfig::default(),
        )
        .unwrap();
        assert_eq!(log.recorded_indices(), (1..=20).collect());
        assert_eq!(log.segments[0].frame_count, 20);
    }

    #[test]
    fn stream_errors_carry_frame_index() {
        let mut bytes = b"YUV4MPEG2 W2 H2 F1:1\nFRAME\n".to_vec();
        bytes.extend_from_slice(&[0; 6]);
        bytes.extend_from_slice(b"FRAME\n\x01");
        let reader = crate::frame::Y4mReader::new(bytes.as_slice()).unwrap();
        let err = run_pipeline(
            reader,
            &MotionConfig::default(),
            &mut empty_detector(),
            &DetectorConfig::default(),
            &RecorderConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn segments_dump_as_y4m() {
        let dir = tempfile::tempdir().unwrap();
        let mut planes: Vec<Vec<u8>> = (0..6).map(|i| vec![i as u8 * 40; 64]).collect();
        planes[5] = planes[4].clone();
        let stream =
            MemorySource::from_luma_planes(8, 8, Fps::integer(1).unwrap(), planes.clone()).unwrap();
        let run = run_modes(
            stream,
            &MotionConfig::default(),
            &mut empty_detector(),
            &DetectorConfig::default(),
            &[RecorderConfig::new(Mode::MotionOnly, 0.0)],
            &PipelineOptions {
                keep_trace: true,
                dump_dir: Some(dir.path().to_path_buf()),
            },
        )
        .unwrap();
        assert_eq!(run.logs[0].recorded_indices(), (1..=4).collect());
        let back: Vec<_> = crate::frame::open_y4m(dir.path().join("motion_only/segment_0000.y4m"))
            .unwrap()
            .map(|f| f.unwrap().pixels().to_vec())
            .collect();
        assert_eq!(back, planes[1..=4].to_vec());
    }
}
