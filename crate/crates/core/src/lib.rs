//! Activity-gated video recording: frame ingestion, motion gating, object
//! gating, segment recording, storage accounting and detection metrics.

pub mod cli;
pub mod detect;
pub mod eval;
pub mod frame;
pub mod motion;
pub mod pipeline;
pub mod recorder;
pub mod storage;
pub mod synth;
