use gatecam::detect::{BBox, ClassId, Detection, DetectorConfig, DetectorScript, ScriptedDetector};
use gatecam::frame::{to_luma, FrameSource};
use gatecam::frame::{Fps, MemorySource};
use gatecam::motion::{MotionConfig, MotionDetector};
use gatecam::pipeline::{run_modes, PipelineOptions};
use gatecam::recorder::{Mode, Recorder, RecorderConfig};
use gatecam::synth::{generate_scenario, timeline_oracle, ObjectEvent, ScenarioSpec, WindSpec};
use proptest::prelude::*;

fn flags(len: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), len)
}

fn timeline() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..120).prop_flat_map(|n| (flags(n), flags(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    /// Pixel-level frames built so that motion happens exactly where the
    /// flags say; the recorded sets must equal the oracle's.
    #[test]
    fn pipeline_matches_oracle(
        (mut motion, objects) in timeline(),
        rate in prop::sample::select(vec![1u32, 10, 30]),
        grace in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]),
    ) {
        motion[0] = false;
        let fps = Fps::integer(rate).unwrap();
        let mut level = 40u8;
        let planes = motion
            .iter()
            .map(|&m| {
                if m {
                    level = 240 - level;
                }
                vec![level; 12 * 10]
            })
            .collect();
        let source = MemorySource::from_luma_planes(12, 10, fps, planes).unwrap();
        let entries = objects
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(i, _)| (i as u64, vec![Detection::new(ClassId::CAR, 0.8, BBox::new(0.0, 0.0, 4.0, 4.0))]))
            .collect();
        let mut det = ScriptedDetector::new(DetectorScript { entries, ..Default::default() }).unwrap();
        let recorders: Vec<_> = Mode::ALL.iter().map(|&m| RecorderConfig::new(m, grace)).collect();
        let run = run_modes(source, &MotionConfig::default(), &mut det, &DetectorConfig::default(), &recorders, &PipelineOptions::default()).unwrap();
        for log in &run.logs {
            let want = timeline_oracle(&motion, &objects, fps, grace, log.mode).unwrap();
            prop_assert_eq!(log.recorded_indices(), want, "mode {}", log.mode);
        }
    }

    /// Without wind, a single object of at least 16x16 pixels triggers motion
    /// exactly on the frames where its rendered rectangle changes.
    #[test]
    fn single_object_motion_matches_ground_truth(
        class in prop::sample::select(vec![ClassId::CAR, ClassId::PERSON]),
        enter in 0.0f64..3.0,
        stay in 0.5f64..4.0,
        start in (0.0f64..80.0, 0.0f64..48.0),
        end in (0.0f64..80.0, 0.0f64..48.0),
        size in (16u32..=32, 16u32..=32),
    ) {
        let spec = ScenarioSpec {
            duration_seconds: 8.0,
            fps: Fps::integer(10).unwrap(),
            width: 96,
            height: 64,
            background: 128,
            objects: vec![ObjectEvent {
                class,
                enter_time: enter,
                exit_time: enter + stay,
                start: [start.0, start.1],
                end: [end.0, end.1],
                size: [size.0, size.1],
                color: None,
            }],
            wind: WindSpec::default(),
            seed: 0,
        };
        let (mut stream, truth, _) = generate_scenario(&spec).unwrap();
        let mut detector = MotionDetector::new(MotionConfig::default()).unwrap();
        for entry in &truth.frames {
            let frame = stream.next().unwrap().unwrap();
            let seen = detector.process(to_luma(&frame).unwrap()).unwrap().motion;
            prop_assert_eq!(seen, entry.motion_expected, "frame {}", entry.index);
        }
        prop_assert!(stream.next().is_none());
        prop_assert_eq!(stream.info().frame_count, Some(80));
    }

    /// Pressing stop closes the recording; what follows behaves like a fresh
    /// run over the remainder of the timeline.
    #[test]
    fn stop_button_restarts_from_idle(
        (motion, objects) in timeline(),
        stops in prop::collection::btree_set(0usize..120, 0..4),
        mode in prop::sample::select(vec![Mode::Hybrid, Mode::MotionOnly, Mode::Continuous]),
        grace in prop::sample::select(vec![0.0, 1.0, 3.0]),
    ) {
        let fps = Fps::integer(1).unwrap();
        let n = motion.len();
        let mut rec = Recorder::new(RecorderConfig::new(mode, grace), fps).unwrap();
        let marker = [Detection::new(ClassId::PERSON, 1.0, BBox::new(0.0, 0.0, 2.0, 2.0))];
        for i in 0..n {
            if stops.contains(&i) {
                rec.stop_button();
            }
            let dets: &[Detection] = if rec.wants_detections(motion[i]) && objects[i] { &marker } else { &[] };
            rec.push(i as u64, fps.timestamp(i as u64), motion[i], dets).unwrap();
        }
        let got = rec.finish().recorded_indices();

        let mut cuts: Vec<usize> = std::iter::once(0).chain(stops.iter().copied().filter(|&s| s > 0 && s < n)).collect();
        cuts.push(n);
        let mut want = std::collections::BTreeSet::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let part = timeline_oracle(&motion[a..b], &objects[a..b], fps, grace, mode).unwrap();
            want.extend(part.into_iter().map(|i| i + a as u64));
        }
        prop_assert_eq!(got, want);
    }
}
