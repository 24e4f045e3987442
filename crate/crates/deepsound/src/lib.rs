//! DeepSound: a deterministic four-step video-to-audio reasoning pipeline.
//!
//! The pipeline generates coarse audio for a video, judges whether that audio
//! contains voice-over (in direct-QA or chain-of-thought mode), removes the
//! detected voice by time-frequency masking, and applies a silence-gated
//! fallback strategy. Alongside the pipeline it provides the tagged reasoning
//! document grammar with its format/keyword scoring, a generative-audio metric
//! suite (Fréchet distance, KL, Inception Score, IB-score and DeSync proxies),
//! and tooling for building and validating synthetic evaluation corpora.
//!
//! Large pretrained models are replaced by deterministic procedural stand-ins;
//! an HTTP backend contract allows plugging in real generators.

pub mod audio;
pub mod cot;
pub mod dataset;
pub mod detect;
pub mod edit;
pub mod metrics;
pub mod pipeline;

pub use audio::{BandSet, Spectrogram, Waveform};
pub use cot::{CotDetail, CotScores, CotStructure, PlanStep, StepId, VerdictLabel};
pub use detect::{JudgeMode, VideoDescriptor, VoiceOverVerdict};
pub use pipeline::{PipelineConfig, RunManifest, Strategy};
