//! Command-line front end: `run`, `simulate`, `eval` and `generate`.
//!
//! Every command reads an optional TOML config, applies flag overrides and
//! writes its reports plus a copy of the resolved config into `--out`.
//! Wall-clock timings go to `timing.json`/`timing.txt` only, so that every
//! other output is byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{
    postprocess, read_records, write_records, Detection, DetectorConfig, DetectorScript,
    ExternalBackendConfig, NoiseSpec, ScriptRecord, ScriptedDetector,
};
use crate::eval::{
    confusion_matrix_images, map_report, timing_report, ConfusionMatrix, EvalConfig, Interpolation,
    MetricsReport, TimingReport,
};
use crate::frame::{
    open_image_sequence, open_y4m, to_luma, write_y4m, BoxedSource, FrameSource, Paced,
};
use crate::motion::MotionConfig;
use crate::pipeline::{run_modes, PipelineError, PipelineOptions, PipelineRun};
use crate::recorder::{Mode, RecorderConfig, RecordingLog};
use crate::storage::{
    compare_modes, field_reference_note, segment_index, BitrateModel, SegmentEntry, StorageReport,
};
use crate::synth::{generate_scenario, timeline_oracle, GroundTruthTimeline, ScenarioSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Recorder(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Y4m(PathBuf),
    /// JSON image-sequence manifest.
    Manifest(PathBuf),
    /// Synthetic scenario spec (TOML or JSON).
    Scenario(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorChoice {
    /// JSONL detector script, played back by frame index.
    Script(PathBuf),
    External(ExternalBackendConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<InputSource>,
    /// Defaults to the scenario's own detections when the input is a scenario.
    pub detector: Option<DetectorChoice>,
    pub noise: NoiseSpec,
    pub motion: MotionConfig,
    pub detection: DetectorConfig,
    pub recorder: RecorderConfig,
    /// Modes compared by `simulate`; empty means all three.
    pub modes: Vec<Mode>,
    pub storage: BitrateModel,
    pub eval: EvalConfig,
    /// Overrides the scenario seed and seeds detector noise.
    pub seed: Option<u64>,
    pub paced: bool,
    /// Also write recorded segments as Y4M files.
    pub dump_segments: bool,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            detector: None,
            noise: NoiseSpec::default(),
            motion: MotionConfig::default(),
            detection: DetectorConfig::default(),
            recorder: RecorderConfig::default(),
            modes: Vec::new(),
            storage: BitrateModel::default(),
            eval: EvalConfig::default(),
            seed: None,
            paced: false,
            dump_segments: false,
            out: PathBuf::from("out"),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a TOML config; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        match &mut cfg.input {
            Some(InputSource::Y4m(p) | InputSource::Manifest(p) | InputSource::Scenario(p)) => {
                rebase(base, p)
            }
            None => {}
        }
        match &mut cfg.detector {
            Some(DetectorChoice::Script(p)) => rebase(base, p),
            Some(DetectorChoice::External(e)) => rebase(base, &mut e.model_path),
            None => {}
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.noise.validate().map_err(config_err)?;
        self.motion.validate().map_err(config_err)?;
        self.detection.validate().map_err(config_err)?;
        self.recorder.validate().map_err(config_err)?;
        self.storage.validate().map_err(config_err)?;
        self.eval.validate().map_err(config_err)?;
        if self.input.is_none() {
            return Err(config_err("no input source (use --input or --scenario)"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }
}

/// Flags shared by `run` and `simulate`.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML config file; flags below take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Y4M file or JSON image-sequence manifest.
    #[arg(long, conflicts_with = "scenario")]
    pub input: Option<PathBuf>,
    /// Synthetic scenario spec (TOML or JSON).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// JSONL detector script.
    #[arg(long)]
    pub detector_script: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Grace period in seconds.
    #[arg(long)]
    pub grace: Option<f64>,
    #[arg(long)]
    pub pixel_threshold: Option<u8>,
    /// Minimum changed-pixel fraction that counts as motion.
    #[arg(long)]
    pub area_threshold: Option<f64>,
    /// Detection confidence threshold for gating.
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub bitrate_kbps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Release frames no faster than real time.
    #[arg(long)]
    pub paced: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.input {
            let ext = p
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or("")
                .to_ascii_lowercase();
            cfg.input = Some(match ext.as_str() {
                "y4m" => InputSource::Y4m(p.clone()),
                "json" => InputSource::Manifest(p.clone()),
                _ => {
                    return Err(config_err(format!(
                        "{}: expected a .y4m file or a .json manifest",
                        p.display()
                    )))
                }
            });
        }
        if let Some(p) = &self.scenario {
            cfg.input = Some(InputSource::Scenario(p.clone()));
        }
        if let Some(p) = &self.detector_script {
            cfg.detector = Some(DetectorChoice::Script(p.clone()));
        }
        if let Some(m) = self.mode {
            cfg.recorder.mode = m;
        }
        if let Some(g) = self.grace {
            cfg.recorder.grace_seconds = g;
        }
        if let Some(t) = self.pixel_threshold {
            cfg.motion.pixel_threshold = t;
        }
        if let Some(a) = self.area_threshold {
            cfg.motion.area_fraction_threshold = a;
        }
        if let Some(c) = self.conf {
            cfg.detection.confidence_threshold = c;
        }
        if let Some(i) = self.iou {
            cfg.detection.iou_threshold = i;
        }
        if let Some(b) = self.bitrate_kbps {
            cfg.storage.bitrate_kbps = b;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.paced |= self.paced;
        Ok(cfg)
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| config_err(format!("{}: {e}", path.display())))
}

pub fn load_records(path: &Path) -> Result<Vec<ScriptRecord>, CliError> {
    let file = File::open(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    read_records(BufReader::new(file)).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

struct Prepared {
    source: BoxedSource,
    /// Present for synthetic inputs.
    truth: Option<GroundTruthTimeline>,
    detector: ScriptedDetector,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let mut truth = None;
    let mut scenario_script = None;
    let source: BoxedSource = match cfg.input.as_ref().expect("validated") {
        InputSource::Y4m(p) => Box::new(open_y4m(p).map_err(input_err)?),
        InputSource::Manifest(p) => Box::new(open_image_sequence(p).map_err(input_err)?),
        InputSource::Scenario(p) => {
            let mut spec = load_scenario(p)?;
            if let Some(seed) = cfg.seed {
                spec.seed = seed;
            }
            let (stream, timeline, script) = generate_scenario(&spec).map_err(config_err)?;
            truth = Some(timeline);
            scenario_script = Some((script, spec.seed));
            Box::new(stream)
        }
    };
    let source: BoxedSource = if cfg.paced {
        Box::new(Paced::new(source))
    } else {
        source
    };
    let (script, default_seed) = match (&cfg.detector, scenario_script) {
        (Some(DetectorChoice::Script(p)), _) => (DetectorScript::from_records(load_records(p)?), 0),
        (Some(DetectorChoice::External(e)), _) => {
            return Err(config_err(format!(
            "external detector backend ({}) is not built into this binary; use a detector script",
            e.model_path.display()
        )))
        }
        (None, Some(s)) => s,
        (None, None) => return Err(config_err("no detector (use --detector-script)")),
    };
    let seed = cfg.seed.unwrap_or(default_seed);
    let detector =
        ScriptedDetector::new(script.with_noise(cfg.noise.clone(), seed)).map_err(config_err)?;
    Ok(Prepared {
        source,
        truth,
        detector,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| input_err(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(&path, contents).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn without_trace(log: &RecordingLog) -> RecordingLog {
    RecordingLog {
        trace: Vec::new(),
        ..log.clone()
    }
}

fn write_timing(out: &Path, run: &PipelineRun) -> Result<TimingReport, CliError> {
    let timing = timing_report(&run.samples);
    write_file(out, "timing.json", &json(&timing))?;
    write_file(out, "timing.txt", &timing.to_table())?;
    Ok(timing)
}

fn storage_text(report: &StorageReport) -> String {
    format!("{}\n{}", report.to_table(), field_reference_note())
}

#[derive(Debug)]
pub struct RunOutcome {
    pub log: RecordingLog,
    pub segments: Vec<SegmentEntry>,
    pub storage: StorageReport,
    pub timing: TimingReport,
}

/// Records one mode over the configured input.
///
/// Writes `config.toml`, `log.json`, `segments.json`, `storage.json`,
/// `storage.txt`, `timing.json`, `timing.txt` and, with `dump_segments`,
/// `segments/<mode>/segment_NNNN.y4m`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let prepared = prepare(cfg)?;
    let mut detector = prepared.detector;
    let options = PipelineOptions {
        keep_trace: false,
        dump_dir: cfg.dump_segments.then(|| cfg.out.join("segments")),
    };
    let run = run_modes(
        prepared.source,
        &cfg.motion,
        &mut detector,
        &cfg.detection,
        std::slice::from_ref(&cfg.recorder),
        &options,
    )?;
    let log = run.logs[0].clone();
    let segments = segment_index(&log, &cfg.storage);
    let storage = compare_modes(std::slice::from_ref(&log), &cfg.storage)
        .map_err(|e| CliError::Invariant(e.to_string()))?;

    let out = &cfg.out;
    write_file(out, "config.toml", &cfg.to_toml())?;
    write_file(out, "log.json", &json(&log))?;
    write_file(out, "segments.json", &json(&segments))?;
    write_file(out, "storage.json", &json(&storage))?;
    write_file(out, "storage.txt", &storage_text(&storage))?;
    let timing = write_timing(out, &run)?;
    Ok(RunOutcome {
        log,
        segments,
        storage,
        timing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub mode: Mode,
    pub matches: bool,
    pub expected_frames: usize,
    pub recorded_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationChecks {
    pub frames: u64,
    pub motion_frames: u64,
    pub object_frames: u64,
    /// Only known for synthetic inputs.
    pub wind_frames: Option<u64>,
    /// Hybrid ⊆ MotionOnly ⊆ Continuous over the modes present.
    pub subset_holds: bool,
    pub subset_violations: Vec<String>,
    /// Recorded sets replayed through the reference timeline oracle, using
    /// the observed motion flags and the detector's per-frame output.
    pub oracle: Vec<OracleCheck>,
}

impl SimulationChecks {
    pub fn passed(&self) -> bool {
        self.subset_holds && self.oracle.iter().all(|c| c.matches)
    }
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub logs: Vec<RecordingLog>,
    pub storage: StorageReport,
    pub checks: SimulationChecks,
    pub timing: TimingReport,
}

fn simulation_modes(cfg: &RunConfig, modes: Option<&[Mode]>) -> Vec<Mode> {
    let mut modes: Vec<Mode> = match modes {
        Some(m) if !m.is_empty() => m.to_vec(),
        _ if !cfg.modes.is_empty() => cfg.modes.clone(),
        _ => Mode::ALL.to_vec(),
    };
    modes.sort();
    modes.dedup();
    modes
}

fn check_run(
    logs: &[RecordingLog],
    detector: &ScriptedDetector,
    cfg: &RunConfig,
    run: &PipelineRun,
    truth: Option<&GroundTruthTimeline>,
) -> SimulationChecks {
    // every log saw the same frames; the trace of any one carries the motion flags
    let trace = &logs[0].trace;
    let motion: Vec<bool> = trace.iter().map(|d| d.motion).collect();
    let objects: Vec<bool> = trace
        .iter()
        .map(|d| {
            let raw = detector.detections_at(d.index, run.info.width, run.info.height);
            !postprocess(&raw, &cfg.detection).is_empty()
        })
        .collect();

    let mut violations = Vec::new();
    for pair in logs.windows(2) {
        let (small, big) = (pair[0].recorded_indices(), pair[1].recorded_indices());
        let extra = small.difference(&big).count();
        if extra > 0 {
            violations.push(format!(
                "{} records {extra} frame(s) that {} does not",
                pair[0].mode, pair[1].mode
            ));
        }
    }
    let oracle = logs
        .iter()
        .map(|log| {
            let expected = timeline_oracle(&motion, &objects, log.fps, log.grace_seconds, log.mode)
                .expect("flags built from one trace");
            let recorded = log.recorded_indices();
            OracleCheck {
                mode: log.mode,
                matches: expected == recorded,
                expected_frames: expected.len(),
                recorded_frames: recorded.len(),
            }
        })
        .collect();
    let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as u64;
    SimulationChecks {
        frames: trace.len() as u64,
        motion_frames: count(&motion),
        object_frames: count(&objects),
        wind_frames: truth.map(|t| t.frames.iter().filter(|f| f.wind_active).count() as u64),
        subset_holds: violations.is_empty(),
        subset_violations: violations,
        oracle,
    }
}

/// Runs several modes over one pass of the input and compares them.
///
/// Writes `config.toml`, `logs/<mode>.json`, `segments/<mode>.json`,
/// `storage.json`, `storage.txt`, `checks.json`, the timing files and, for
/// synthetic inputs, `ground_truth.jsonl`. Fails with an invariant error
/// (after writing everything) if the subset or oracle checks fail.
pub fn cmd_simulate(cfg: &RunConfig, modes: Option<&[Mode]>) -> Result<SimulateOutcome, CliError> {
    let modes = simulation_modes(cfg, modes);
    let prepared = prepare(cfg)?;
    let mut detector = prepared.detector;
    let recorders: Vec<RecorderConfig> = modes
        .iter()
        .map(|&m| RecorderConfig::new(m, cfg.recorder.grace_seconds))
        .collect();
    let options = PipelineOptions {
        keep_trace: true,
        dump_dir: cfg.dump_segments.then(|| cfg.out.join("segments")),
    };
    let run = run_modes(
        prepared.source,
        &cfg.motion,
        &mut detector,
        &cfg.detection,
        &recorders,
        &options,
    )?;
    let storage =
        compare_modes(&run.logs, &cfg.storage).map_err(|e| CliError::Invariant(e.to_string()))?;
    let checks = check_run(&run.logs, &detector, cfg, &run, prepared.truth.as_ref());

    let out = &cfg.out;
    let mut resolved = cfg.clone();
    resolved.modes = modes;
    write_file(out, "config.toml", &resolved.to_toml())?;
    for log in &run.logs {
        write_file(
            out,
            &format!("logs/{}.json", log.mode),
            &json(&without_trace(log)),
        )?;
        write_file(
            out,
            &format!("segments/{}.json", log.mode),
            &json(&segment_index(log, &cfg.storage)),
        )?;
    }
    write_file(out, "storage.json", &json(&storage))?;
    write_file(out, "storage.txt", &storage_text(&storage))?;
    write_file(out, "checks.json", &json(&checks))?;
    if let Some(truth) = &prepared.truth {
        let mut buf = Vec::new();
        write_records(&mut buf, &truth.to_records()).map_err(input_err)?;
        write_file(
            out,
            "ground_truth.jsonl",
            &String::from_utf8(buf).expect("JSON is UTF-8"),
        )?;
    }
    let timing = write_timing(out, &run)?;

    if !checks.passed() {
        let mut problems = checks.subset_violations.clone();
        problems.extend(
            checks
                .oracle
                .iter()
                .filter(|c| !c.matches)
                .map(|c| format!("{} differs from the timeline oracle", c.mode)),
        );
        return Err(CliError::Invariant(problems.join("; ")));
    }
    Ok(SimulateOutcome {
        logs: run.logs.iter().map(without_trace).collect(),
        storage,
        checks,
        timing,
    })
}

#[derive(Args, Clone, Debug, Default)]
pub struct EvalArgs {
    /// Predictions, one JSON record per image.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth in the same format.
    #[arg(long)]
    pub gt: PathBuf,
    /// TOML file whose `[eval]` table configures the evaluation.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long, value_parser = parse_interpolation)]
    pub interpolation: Option<Interpolation>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_interpolation(s: &str) -> Result<Interpolation, String> {
    match s {
        "all_point" | "all-point" => Ok(Interpolation::AllPoint),
        "grid101" | "101" => Ok(Interpolation::Grid101),
        _ => Err(format!(
            "unknown interpolation `{s}` (expected all-point or grid101)"
        )),
    }
}

impl EvalArgs {
    pub fn resolve(&self) -> Result<EvalConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?.eval,
            None => EvalConfig::default(),
        };
        if let Some(c) = self.conf {
            cfg.confidence_threshold = c;
        }
        if let Some(i) = self.iou {
            cfg.iou_threshold = i;
        }
        if let Some(i) = self.interpolation {
            cfg.interpolation = i;
        }
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Serialize)]
struct ConfusionOut<'a> {
    classes: Vec<String>,
    counts: &'a [Vec<u64>],
    row_normalized: Vec<Vec<f64>>,
    column_normalized: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EvalConfigOut<'a> {
    eval: &'a EvalConfig,
}

fn by_image(records: Vec<ScriptRecord>) -> BTreeMap<u64, Vec<Detection>> {
    records
        .into_iter()
        .map(|r| (r.index, r.detections))
        .collect()
}

/// Scores predictions against ground truth. Writes `config.toml`,
/// `metrics.json`, `metrics.txt`, `confusion.json` and `confusion.txt`.
pub fn cmd_eval(
    pred: &Path,
    gt: &Path,
    cfg: &EvalConfig,
    out: &Path,
) -> Result<EvalOutcome, CliError> {
    cfg.validate().map_err(config_err)?;
    let preds = by_image(load_records(pred)?);
    let gts = by_image(load_records(gt)?);
    let metrics = map_report(&preds, &gts, cfg).map_err(input_err)?;
    let confusion = confusion_matrix_images(&preds, &gts, cfg).map_err(input_err)?;

    write_file(
        out,
        "config.toml",
        &toml::to_string(&EvalConfigOut { eval: cfg }).expect("eval config is TOML"),
    )?;
    write_file(out, "metrics.json", &json(&metrics))?;
    write_file(out, "metrics.txt", &metrics.to_table())?;
    let mut classes: Vec<String> = confusion.classes.iter().map(|c| c.name()).collect();
    classes.push("background".into());
    write_file(
        out,
        "confusion.json",
        &json(&ConfusionOut {
            classes,
            counts: &confusion.counts,
            row_normalized: confusion.row_normalized(),
            column_normalized: confusion.column_normalized(),
        }),
    )?;
    write_file(out, "confusion.txt", &confusion.to_table())?;
    Ok(EvalOutcome { metrics, confusion })
}

/// Renders a scenario to `frames.y4m` (luma) with its noise-free detector
/// script `detections.jsonl` and `ground_truth.jsonl`.
pub fn cmd_generate(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<u64, CliError> {
    let mut spec = load_scenario(scenario)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (stream, truth, script) = generate_scenario(&spec).map_err(config_err)?;
    let info = stream.info().clone();
    let frames = stream
        .map(|f| f.and_then(|f| to_luma(&f)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(input_err)?;
    std::fs::create_dir_all(out).map_err(|e| input_err(format!("{}: {e}", out.display())))?;
    let path = out.join("frames.y4m");
    write_y4m(&path, info.width, info.height, info.fps, &frames)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let mut buf = Vec::new();
    write_records(&mut buf, &script.to_records()).map_err(input_err)?;
    write_file(
        out,
        "detections.jsonl",
        &String::from_utf8(buf).expect("JSON is UTF-8"),
    )?;
    let mut buf = Vec::new();
    write_records(&mut buf, &truth.to_records()).map_err(input_err)?;
    write_file(
        out,
        "ground_truth.jsonl",
        &String::from_utf8(buf).expect("JSON is UTF-8"),
    )?;
    Ok(frames.len() as u64)
}

#[derive(Parser, Debug)]
#[command(
    name = "gatecam",
    version,
    about = "Motion- and object-gated recording with storage and detection-metric reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Record one mode over an input and write the segment index and reports.
    Run(Overrides),
    /// Run several modes over one input and compare recorded length and storage.
    Simulate {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated modes; defaults to the config's list, then `--mode`, then all.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<Mode>,
    },
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Render a scenario to Y4M plus its detector script and ground truth.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Executes a parsed command, printing its text report to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let r = cmd_run(&cfg)?;
            println!(
                "{} segment(s), {} frame(s) recorded\n",
                r.segments.len(),
                r.log.recorded_frame_count
            );
            print!("{}\n{}", r.storage.to_table(), r.timing.to_table());
        }
        Command::Simulate { overrides, modes } => {
            let cfg = overrides.resolve()?;
            let modes = if modes.is_empty() {
                overrides.mode.map(|m| vec![m])
            } else {
                Some(modes)
            };
            let r = cmd_simulate(&cfg, modes.as_deref())?;
            print!("{}\n{}", storage_text(&r.storage), r.timing.to_table());
            println!("\nsubset property holds; all modes match the timeline oracle");
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            let r = cmd_eval(&args.pred, &args.gt, &cfg, &args.out)?;
            print!("{}\n{}", r.metrics.to_table(), r.confusion.to_table());
        }
        Command::Generate {
            scenario,
            seed,
            out,
        } => {
            let n = cmd_generate(&scenario, seed, &out)?;
            println!("wrote {n} frames to {}", out.join("frames.y4m").display());
        }
    }
    Ok(())
}
