//! Four-step pipeline execution: plan generation, pluggable generation
//! backends, voice-over judgment, voice removal, and silence-gated
//! fallbacks, with per-run artifact persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, write_wav, AudioError, Waveform, CANONICAL_SAMPLE_RATE};
use crate::cot::{CotStructure, PlanStep, StepId, VerdictLabel};
use crate::detect::{judge, DetectError, JudgeMode, VideoDescriptor, VoiceOverVerdict};
use crate::edit::{remove_voice, EditError};

/// Environment variable overriding the configured generation endpoint.
pub const ENDPOINT_ENV: &str = "DEEPSOUND_V2A_ENDPOINT";

/// Default negative prompt for suppressing voice content.
pub const DEFAULT_NEGATIVE_PROMPT: &str = "human voice";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("step {step} failed: {source}")]
    Step {
        step: StepId,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Generation and post-processing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Direct,
    DirectNeg,
    S3,
    S4Rm,
    S4Rep,
    S4Neg,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Direct,
        Strategy::DirectNeg,
        Strategy::S3,
        Strategy::S4Rm,
        Strategy::S4Rep,
        Strategy::S4Neg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::DirectNeg => "direct_neg",
            Strategy::S3 => "s3",
            Strategy::S4Rm => "s4_rm",
            Strategy::S4Rep => "s4_rep",
            Strategy::S4Neg => "s4_neg",
        }
    }

    /// Human-readable variant label for help text and reports.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Direct => "Direct",
            Strategy::DirectNeg => "Direct-neg",
            Strategy::S3 => "Ours-s3",
            Strategy::S4Rm => "Ours-s4-rm",
            Strategy::S4Rep => "Ours-s4-rep",
            Strategy::S4Neg => "Ours-s4-neg",
        }
    }

    /// True for strategies that run the judgment/removal steps.
    pub fn is_staged(self) -> bool {
        !matches!(self, Strategy::Direct | Strategy::DirectNeg)
    }

    /// True for strategies that scan for silent bars and apply a fallback.
    pub fn is_s4(self) -> bool {
        matches!(self, Strategy::S4Rm | Strategy::S4Rep | Strategy::S4Neg)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Strategy::Direct),
            "direct_neg" => Ok(Strategy::DirectNeg),
            "s3" => Ok(Strategy::S3),
            "s4_rm" => Ok(Strategy::S4Rm),
            "s4_rep" => Ok(Strategy::S4Rep),
            "s4_neg" => Ok(Strategy::S4Neg),
            other => Err(format!(
                "unknown strategy {other:?} (expected one of: direct, direct_neg, s3, s4_rm, s4_rep, s4_neg)"
            )),
        }
    }
}

/// Run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub silence_threshold_dbfs: f64,
    pub bar_len: f64,
    pub detector_mode: JudgeMode,
    pub backend: String,
    pub negative_prompt: String,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(strategy: Strategy) -> PipelineConfig {
        PipelineConfig {
            strategy,
            silence_threshold_dbfs: -60.0,
            bar_len: 1.0,
            detector_mode: JudgeMode::Cot,
            backend: "stub".into(),
            negative_prompt: DEFAULT_NEGATIVE_PROMPT.into(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.bar_len.is_finite() && self.bar_len > 0.0) {
            return Err(PipelineError::Config(format!(
                "bar length must be positive, got {}",
                self.bar_len
            )));
        }
        if !(self.silence_threshold_dbfs.is_finite() && self.silence_threshold_dbfs < 0.0) {
            return Err(PipelineError::Config(format!(
                "silence threshold must be negative dBFS, got {}",
                self.silence_threshold_dbfs
            )));
        }
        Ok(())
    }
}

/// Record of one pipeline run; audio fields are file names relative to the
/// run directory. `step_seconds` carries per-step wall times and is the one
/// field excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub video_id: String,
    pub instruction: String,
    pub strategy: Strategy,
    pub cot_structure: CotStructure,
    pub coarse_audio: Option<String>,
    pub verdict: Option<VoiceOverVerdict>,
    pub edited_audio: Option<String>,
    pub silent_bars: Vec<usize>,
    pub final_audio: Option<String>,
    pub step_seconds: Vec<(String, f64)>,
}

/// Generation request forwarded to a backend.
#[derive(Debug, Clone, Serialize)]
pub struct V2aRequest<'a> {
    pub video_descriptor: &'a VideoDescriptor,
    pub prompt: &'a str,
    pub negative_prompt: Option<&'a str>,
    pub seed: u64,
}

/// Step-1 audio generation backend.
pub trait V2aBackend: Send + Sync {
    fn generate(&self, request: &V2aRequest<'_>) -> Result<Waveform, BackendError>;
}

/// Named backends available to a run.
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn V2aBackend>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = BackendRegistry {
            backends: BTreeMap::new(),
        };
        r.register("stub", Arc::new(StubBackend));
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn V2aBackend>) {
        self.backends.insert(id.into(), backend);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn V2aBackend>, PipelineError> {
        self.backends
            .get(id)
            .ok_or_else(|| PipelineError::UnknownBackend(id.to_string()))
    }
}

/// Endpoint resolution: the environment variable wins over any configured
/// value.
pub fn resolve_endpoint(configured: Option<&str>) -> Option<String> {
    std::env::var(ENDPOINT_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .or_else(|| configured.map(str::to_string))
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in data {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

const STUB_VOICE_BASE_HZ: f64 = 250.0;
const STUB_VOICE_PARTIALS: usize = 4;
const STUB_VOICE_PARTIAL_AMP: f32 = 0.015;
const STUB_BURST_SECONDS: f64 = 0.08;
const STUB_FADE_SECONDS: f64 = 0.01;

/// Deterministic procedural generator standing in for a real
/// video-to-audio model: a seeded noise burst at each visual onset, plus a
/// harmonic voice layer when the descriptor or prompt calls for voice and
/// the negative prompt does not suppress it.
pub fn stub_v2a(
    video: &VideoDescriptor,
    prompt: &str,
    negative_prompt: Option<&str>,
    seed: u64,
) -> Waveform {
    let sr = CANONICAL_SAMPLE_RATE;
    let n = (video.duration * sr as f64).round() as usize;
    let mut samples = vec![0.0f32; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(video.id.as_bytes()));

    let burst_len = (STUB_BURST_SECONDS * sr as f64) as usize;
    for &onset in &video.onset_times {
        let start = (onset * sr as f64).round() as usize;
        let amp: f32 = 0.2 + 0.2 * rng.gen::<f32>();
        for i in 0..burst_len {
            let Some(slot) = samples.get_mut(start + i) else {
                break;
            };
            let decay = (-(i as f64) / (0.02 * sr as f64)).exp() as f32;
            *slot += amp * decay * (rng.gen::<f32>() * 2.0 - 1.0);
        }
    }

    let wants_voice = !video.person_segments.is_empty()
        || prompt.to_lowercase().contains("voice");
    let suppressed = negative_prompt
        .map(|np| np.to_lowercase().contains("voice"))
        .unwrap_or(false);
    if wants_voice && !suppressed {
        let segments: Vec<(f64, f64)> = if video.person_segments.is_empty() {
            vec![(0.0, video.duration)]
        } else {
            video.person_segments.clone()
        };
        let fade = (STUB_FADE_SECONDS * sr as f64) as usize;
        for (t0, t1) in segments {
            let i0 = (t0 * sr as f64).round() as usize;
            let i1 = ((t1 * sr as f64).round() as usize).min(n);
            for i in i0..i1 {
                let mut v = 0.0f64;
                for p in 1..=STUB_VOICE_PARTIALS {
                    let f = STUB_VOICE_BASE_HZ * p as f64;
                    v += (STUB_VOICE_PARTIAL_AMP as f64)
                        * (2.0 * std::f64::consts::PI * f * i as f64 / sr as f64).sin();
                }
                let edge = (i - i0).min(i1 - 1 - i);
                let gain = if edge < fade {
                    edge as f64 / fade as f64
                } else {
                    1.0
                };
                samples[i] += (v * gain) as f32;
            }
        }
    }

    Waveform::new(samples, sr)
}

struct StubBackend;

impl V2aBackend for StubBackend {
    fn generate(&self, request: &V2aRequest<'_>) -> Result<Waveform, BackendError> {
        Ok(stub_v2a(
            request.video_descriptor,
            request.prompt,
            request.negative_prompt,
            request.seed,
        ))
    }
}

/// Generation response wire format.
#[derive(Debug, Deserialize)]
struct V2aResponse {
    sample_rate: u32,
    samples_b64: String,
}

/// Decodes a backend response body into a canonical waveform.
pub fn decode_v2a_response(body: &str) -> Result<Waveform, BackendError> {
    let resp: V2aResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Payload(e.to_string()))?;
    if resp.sample_rate == 0 {
        return Err(BackendError::Payload("zero sample rate".into()));
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(resp.samples_b64.as_bytes())
        .map_err(|e| BackendError::Payload(format!("base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(BackendError::Payload(format!(
            "sample buffer length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(BackendError::Payload("non-finite sample".into()));
    }
    Ok(Waveform::new(samples, resp.sample_rate).to_canonical())
}

/// HTTP generation client speaking the JSON wire contract.
pub struct HttpBackend {
    endpoint: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> HttpBackend {
        HttpBackend::with_timeout(endpoint, Duration::from_secs(120))
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> HttpBackend {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpBackend {
            endpoint: endpoint.into(),
            timeout,
            agent,
        }
    }
}

impl V2aBackend for HttpBackend {
    fn generate(&self, request: &V2aRequest<'_>) -> Result<Waveform, BackendError> {
        let payload = serde_json::to_string(request)
            .map_err(|e| BackendError::Payload(e.to_string()))?;
        let result = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json")
            .send_string(&payload);
        match result {
            Ok(resp) => {
                let body = resp
                    .into_string()
                    .map_err(|e| BackendError::Payload(e.to_string()))?;
                decode_v2a_response(&body)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let body = body.chars().take(200).collect();
                Err(BackendError::Status { status, body })
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("timeout") {
                    Err(BackendError::Timeout(self.timeout))
                } else {
                    Err(BackendError::Transport(msg))
                }
            }
        }
    }
}

fn sanitize_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Deterministic plan for a run: one generation step for the direct
/// strategies, the full four-step sequence otherwise.
pub fn generate_structure(
    instruction: &str,
    video: &VideoDescriptor,
    strategy: Strategy,
) -> CotStructure {
    let scene = video
        .scene_tags
        .first()
        .map(|s| sanitize_line(s))
        .unwrap_or_else(|| "unlabeled footage".into());
    let instruction = sanitize_line(instruction);
    let generate = PlanStep {
        id: StepId::Generate,
        rationale: format!("synthesize coarse audio for {scene} following: {instruction}"),
    };
    let steps = if strategy.is_staged() {
        vec![
            generate,
            PlanStep {
                id: StepId::Detect,
                rationale: "judge whether the coarse audio carries a voice-over".into(),
            },
            PlanStep {
                id: StepId::Remove,
                rationale: "mask voice-band energy inside the voiced segments".into(),
            },
            PlanStep {
                id: StepId::SilenceCheck,
                rationale: format!(
                    "scan bars for silence and apply the {} fallback",
                    strategy.as_str()
                ),
            },
        ]
    } else {
        vec![generate]
    };
    CotStructure::new(steps).expect("templated plan satisfies plan invariants")
}

/// True iff the bar's RMS sits below the threshold.
pub fn is_silent(w: &Waveform, bar: (f64, f64), threshold_dbfs: f64) -> bool {
    let sr = w.sample_rate() as f64;
    let i0 = ((bar.0.max(0.0) * sr).round() as usize).min(w.len());
    let i1 = ((bar.1.max(0.0) * sr).round() as usize).min(w.len());
    if i1 <= i0 {
        return true;
    }
    let energy: f64 = w.samples()[i0..i1]
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum();
    let rms = (energy / (i1 - i0) as f64).sqrt();
    20.0 * (rms + 1e-12).log10() < threshold_dbfs
}

/// Splits `[0, duration)` into fixed bars plus a final partial bar.
pub fn bars(duration: f64, bar_len: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while t + 1e-9 < duration {
        out.push((t, (t + bar_len).min(duration)));
        t += bar_len;
    }
    out
}

/// Indices of bars of `w` that fall below the silence threshold.
pub fn silent_bar_indices(w: &Waveform, bar_len: f64, threshold_dbfs: f64) -> Vec<usize> {
    bars(w.duration(), bar_len)
        .into_iter()
        .enumerate()
        .filter(|&(_, bar)| is_silent(w, bar, threshold_dbfs))
        .map(|(i, _)| i)
        .collect()
}

/// Applies the strategy's fallback to the silent bars: excise them
/// (`s4_rm`), replace them with the corresponding coarse bars (`s4_rep`),
/// or replace them with negative-prompt audio bars (`s4_neg`). All other
/// strategies return the edited audio unchanged.
pub fn apply_fallback(
    edited: &Waveform,
    original: &Waveform,
    neg: Option<&Waveform>,
    silent_bars: &[usize],
    strategy: Strategy,
    bar_len: f64,
) -> Result<Waveform, PipelineError> {
    if !strategy.is_s4() || silent_bars.is_empty() {
        return Ok(edited.clone());
    }
    if edited.len() != original.len() {
        return Err(PipelineError::Argument(format!(
            "edited ({}) and original ({}) lengths differ",
            edited.len(),
            original.len()
        )));
    }
    if strategy == Strategy::S4Neg {
        match neg {
            None => {
                return Err(PipelineError::Argument(
                    "s4_neg requires negative-prompt audio".into(),
                ))
            }
            Some(n) if n.len() != edited.len() => {
                return Err(PipelineError::Argument(format!(
                    "negative-prompt audio length {} differs from edited {}",
                    n.len(),
                    edited.len()
                )));
            }
            Some(_) => {}
        }
    }

    let sr = edited.sample_rate() as f64;
    let all_bars = bars(edited.duration(), bar_len);
    for &b in silent_bars {
        if b >= all_bars.len() {
            return Err(PipelineError::Argument(format!(
                "silent bar index {b} out of range ({} bars)",
                all_bars.len()
            )));
        }
    }

    let range = |bar: (f64, f64)| {
        let i0 = ((bar.0 * sr).round() as usize).min(edited.len());
        let i1 = ((bar.1 * sr).round() as usize).min(edited.len());
        (i0, i1)
    };

    match strategy {
        Strategy::S4Rm => {
            let mut out = Vec::with_capacity(edited.len());
            for (i, &bar) in all_bars.iter().enumerate() {
                if silent_bars.contains(&i) {
                    continue;
                }
                let (i0, i1) = range(bar);
                out.extend_from_slice(&edited.samples()[i0..i1]);
            }
            Ok(Waveform::new(out, edited.sample_rate()))
        }
        Strategy::S4Rep | Strategy::S4Neg => {
            let source = if strategy == Strategy::S4Rep {
                original
            } else {
                neg.expect("verified above")
            };
            let mut out = edited.clone();
            for &i in silent_bars {
                let (i0, i1) = range(all_bars[i]);
                out.samples_mut()[i0..i1].copy_from_slice(&source.samples()[i0..i1]);
            }
            Ok(out)
        }
        _ => unreachable!("non-s4 strategies return early"),
    }
}

/// Executes the full pipeline for one clip and persists its artifacts under
/// `<out_root>/<video_id>/<strategy>/`. A step failure persists the partial
/// manifest before returning the error.
pub fn run_pipeline(
    video: &VideoDescriptor,
    instruction: &str,
    config: &PipelineConfig,
    out_root: &Path,
    registry: &BackendRegistry,
) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    video.validate()?;
    let backend = registry.get(&config.backend)?;

    let run_dir = out_root.join(&video.id).join(config.strategy.as_str());
    std::fs::create_dir_all(&run_dir)?;

    let plan = generate_structure(instruction, video, config.strategy);
    let mut manifest = RunManifest {
        video_id: video.id.clone(),
        instruction: instruction.to_string(),
        strategy: config.strategy,
        cot_structure: plan,
        coarse_audio: None,
        verdict: None,
        edited_audio: None,
        silent_bars: Vec::new(),
        final_audio: None,
        step_seconds: Vec::new(),
    };

    match execute_steps(video, instruction, config, &run_dir, backend, &mut manifest) {
        Ok(()) => {
            persist_manifest(&run_dir, &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            // Partial manifest records everything up to the failed step.
            let _ = persist_manifest(&run_dir, &manifest);
            Err(e)
        }
    }
}

fn persist_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(run_dir.join("manifest.json"), json)?;
    Ok(())
}

fn execute_steps(
    video: &VideoDescriptor,
    instruction: &str,
    config: &PipelineConfig,
    run_dir: &Path,
    backend: &Arc<dyn V2aBackend>,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let mut timer = StepTimer::new(&mut manifest.step_seconds);

    // Step 1: coarse generation. Only the direct_neg strategy passes the
    // negative prompt at generation time.
    timer.start(StepId::Generate);
    let negative = (config.strategy == Strategy::DirectNeg).then_some(config.negative_prompt.as_str());
    let coarse = backend
        .generate(&V2aRequest {
            video_descriptor: video,
            prompt: instruction,
            negative_prompt: negative,
            seed: config.seed,
        })
        .map_err(|source| PipelineError::Step {
            step: StepId::Generate,
            source,
        })?;
    write_wav(&run_dir.join("coarse.wav"), &coarse)?;
    manifest.coarse_audio = Some("coarse.wav".into());
    timer.stop();

    if !config.strategy.is_staged() {
        write_wav(&run_dir.join("final.wav"), &coarse)?;
        manifest.final_audio = Some("final.wav".into());
        return Ok(());
    }

    // Step 2: voice-over judgment.
    timer.start(StepId::Detect);
    let verdict = judge(video, &coarse, config.detector_mode)?;
    manifest.verdict = Some(verdict.clone());
    timer.stop();

    // Step 3: removal, gated on a Yes verdict.
    timer.start(StepId::Remove);
    let edited = if verdict.label == VerdictLabel::Yes {
        remove_voice(&coarse, &verdict.voiced_segments)?.audio
    } else {
        coarse.clone()
    };
    write_wav(&run_dir.join("edited.wav"), &edited)?;
    manifest.edited_audio = Some("edited.wav".into());
    timer.stop();

    // Step 4: silence scan and fallback, only for the s4 strategies.
    let final_audio = if config.strategy.is_s4() {
        timer.start(StepId::SilenceCheck);
        let silent = silent_bar_indices(&edited, config.bar_len, config.silence_threshold_dbfs);
        manifest.silent_bars = silent.clone();
        let neg = if config.strategy == Strategy::S4Neg && !silent.is_empty() {
            let neg_audio = backend
                .generate(&V2aRequest {
                    video_descriptor: video,
                    prompt: instruction,
                    negative_prompt: Some(config.negative_prompt.as_str()),
                    seed: config.seed,
                })
                .map_err(|source| PipelineError::Step {
                    step: StepId::SilenceCheck,
                    source,
                })?;
            write_wav(&run_dir.join("neg.wav"), &neg_audio)?;
            Some(neg_audio)
        } else {
            None
        };
        let out = apply_fallback(
            &edited,
            &coarse,
            neg.as_ref(),
            &silent,
            config.strategy,
            config.bar_len,
        )?;
        timer.stop();
        out
    } else {
        edited.clone()
    };

    write_wav(&run_dir.join("final.wav"), &final_audio)?;
    manifest.final_audio = Some("final.wav".into());
    Ok(())
}

struct StepTimer<'a> {
    log: &'a mut Vec<(String, f64)>,
    current: Option<(StepId, Instant)>,
}

impl<'a> StepTimer<'a> {
    fn new(log: &'a mut Vec<(String, f64)>) -> Self {
        StepTimer { log, current: None }
    }

    fn start(&mut self, step: StepId) {
        self.stop();
        self.current = Some((step, Instant::now()));
    }

    fn stop(&mut self) {
        if let Some((step, t0)) = self.current.take() {
            self.log
                .push((step.as_str().to_string(), t0.elapsed().as_secs_f64()));
        }
    }
}

impl Drop for StepTimer<'_> {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Loads a run's final audio given its manifest location.
pub fn load_run_audio(run_dir: &Path, manifest: &RunManifest) -> Result<Waveform, PipelineError> {
    let name = manifest
        .final_audio
        .as_ref()
        .ok_or_else(|| PipelineError::Argument("manifest has no final audio".into()))?;
    Ok(read_wav(&run_dir.join(name))?)
}

/// Conventional run directory for a clip and strategy.
pub fn run_dir(out_root: &Path, video_id: &str, strategy: Strategy) -> PathBuf {
    out_root.join(video_id).join(strategy.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cot::{parse_cot_structure, render_cot_structure};
    use crate::detect::{detect_voice_activity, DetectorProfile};

    fn descriptor(id: &str, duration: f64, onsets: &[f64]) -> VideoDescriptor {
        VideoDescriptor {
            id: id.into(),
            duration,
            person_segments: vec![],
            scene_tags: vec!["park".into()],
            onset_times: onsets.to_vec(),
        }
    }

    #[test]
    fn structure_step_counts_match_strategy() {
        let video = descriptor("v", 2.0, &[]);
        for strategy in Strategy::ALL {
            let plan = generate_structure("make sound", &video, strategy);
            let expected = if strategy.is_staged() { 4 } else { 1 };
            assert_eq!(plan.steps.len(), expected, "{strategy}");
            assert_eq!(plan.steps[0].id, StepId::Generate);
            // Plans must survive the plan grammar.
            let text = render_cot_structure(&plan);
            assert_eq!(parse_cot_structure(&text).unwrap(), plan);
        }
    }

    #[test]
    fn structure_is_deterministic_and_sanitized() {
        let video = descriptor("v", 2.0, &[]);
        let a = generate_structure("line one\nline two", &video, Strategy::S4Rep);
        let b = generate_structure("line one\nline two", &video, Strategy::S4Rep);
        assert_eq!(a, b);
        assert!(!a.steps[0].rationale.contains('\n'));
    }

    #[test]
    fn stub_bursts_without_voice() {
        let video = descriptor("v", 2.0, &[0.25, 1.0, 1.6]);
        let w = stub_v2a(&video, "ambient park sounds", None, 7);
        assert_eq!(w.len(), 32_000);
        // Energy present right after each onset, none in a quiet stretch.
        for &t in &video.onset_times {
            let i = (t * 16_000.0) as usize;
            let burst: f64 = w.samples()[i..i + 800].iter().map(|&x| (x * x) as f64).sum();
            assert!(burst > 0.0, "no burst at {t}");
        }
        let quiet: f64 = w.samples()[12_000..14_000].iter().map(|&x| (x * x) as f64).sum();
        assert_eq!(quiet, 0.0);
        assert!(detect_voice_activity(&w).is_empty());
    }

    #[test]
    fn stub_voice_prompt_adds_detectable_voice() {
        let video = descriptor("v", 2.0, &[0.25]);
        let plain = stub_v2a(&video, "ambient park sounds", None, 7);
        assert!(detect_voice_activity(&plain).is_empty());

        let voiced = stub_v2a(&video, "speech, a narrating voice", None, 7);
        assert!(!detect_voice_activity(&voiced).is_empty());

        let negated = stub_v2a(
            &video,
            "speech, a narrating voice",
            Some(DEFAULT_NEGATIVE_PROMPT),
            7,
        );
        assert!(detect_voice_activity(&negated).is_empty());
    }

    #[test]
    fn stub_person_segments_add_voice_inside_them() {
        let mut video = descriptor("v", 3.0, &[]);
        video.person_segments = vec![(1.0, 2.0)];
        let w = stub_v2a(&video, "ambient", None, 3);
        let segs = detect_voice_activity(&w);
        assert_eq!(segs.len(), 1);
        let (t0, t1) = segs[0];
        assert!(t0 >= 0.9 && t1 <= 2.1, "segment ({t0}, {t1})");
    }

    #[test]
    fn stub_is_deterministic_per_seed_and_id() {
        let video = descriptor("v", 1.5, &[0.2, 0.9]);
        let a = stub_v2a(&video, "p", None, 42);
        let b = stub_v2a(&video, "p", None, 42);
        assert_eq!(a.samples(), b.samples());
        let c = stub_v2a(&video, "p", None, 43);
        assert_ne!(a.samples(), c.samples());
        let other = descriptor("w", 1.5, &[0.2, 0.9]);
        let d = stub_v2a(&other, "p", None, 42);
        assert_ne!(a.samples(), d.samples());
    }

    #[test]
    fn silence_gate_thresholds() {
        let zero = Waveform::silence(2.0, 16_000);
        assert!(is_silent(&zero, (0.0, 1.0), -60.0));

        let mut loud = Waveform::silence(2.0, 16_000);
        for (i, s) in loud.samples_mut().iter_mut().enumerate() {
            *s = (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin() as f32;
        }
        assert!(!is_silent(&loud, (0.0, 1.0), -60.0));

        let quiet = Waveform::new(vec![10f32.powf(-70.0 / 20.0); 16_000], 16_000);
        assert!(is_silent(&quiet, (0.0, 1.0), -60.0));
    }

    #[test]
    fn bars_partition_with_partial_tail() {
        let b = bars(3.5, 1.0);
        assert_eq!(b, vec![(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 3.5)]);
        assert_eq!(bars(2.0, 1.0).len(), 2);
    }

    fn constant(duration: f64, value: f32) -> Waveform {
        Waveform::new(vec![value; (duration * 16_000.0) as usize], 16_000)
    }

    #[test]
    fn fallback_noop_without_silent_bars() {
        let edited = constant(4.0, 0.2);
        let original = constant(4.0, 0.4);
        let neg = constant(4.0, 0.1);
        for strategy in Strategy::ALL {
            let out =
                apply_fallback(&edited, &original, Some(&neg), &[], strategy, 1.0).unwrap();
            assert_eq!(out.samples(), edited.samples(), "{strategy}");
        }
    }

    #[test]
    fn fallback_replace_splices_original_bar() {
        let edited = constant(4.0, 0.2);
        let original = constant(4.0, 0.4);
        let out =
            apply_fallback(&edited, &original, None, &[2], Strategy::S4Rep, 1.0).unwrap();
        assert_eq!(out.len(), edited.len());
        for (i, &s) in out.samples().iter().enumerate() {
            let expected = if (32_000..48_000).contains(&i) { 0.4 } else { 0.2 };
            assert_eq!(s, expected, "sample {i}");
        }
    }

    #[test]
    fn fallback_remove_excises_bar() {
        let edited = constant(4.0, 0.2);
        let original = constant(4.0, 0.4);
        let out = apply_fallback(&edited, &original, None, &[1], Strategy::S4Rm, 1.0).unwrap();
        assert_eq!(out.len(), 3 * 16_000);
    }

    #[test]
    fn fallback_negative_replaces_from_neg_audio() {
        let edited = constant(2.0, 0.2);
        let original = constant(2.0, 0.4);
        let neg = constant(2.0, 0.05);
        let out =
            apply_fallback(&edited, &original, Some(&neg), &[0], Strategy::S4Neg, 1.0).unwrap();
        assert_eq!(out.samples()[0], 0.05);
        assert_eq!(out.samples()[16_000], 0.2);

        assert!(matches!(
            apply_fallback(&edited, &original, None, &[0], Strategy::S4Neg, 1.0),
            Err(PipelineError::Argument(_))
        ));
    }

    #[test]
    fn fallback_rejects_out_of_range_bar() {
        let edited = constant(2.0, 0.2);
        let original = constant(2.0, 0.4);
        assert!(matches!(
            apply_fallback(&edited, &original, None, &[5], Strategy::S4Rep, 1.0),
            Err(PipelineError::Argument(_))
        ));
    }

    /// Clip whose coarse audio is a voice-over (no person, voice prompt)
    /// with one burst in bar 0 and pure voice in bar 1, so removal leaves
    /// bar 1 silent.
    fn yes_fixture() -> (VideoDescriptor, &'static str) {
        (descriptor("yes-clip", 2.0, &[0.2]), "narrated with a voice")
    }

    #[test]
    fn run_s3_removes_voice_from_final() {
        let dir = tempfile::tempdir().unwrap();
        let (video, instruction) = yes_fixture();
        let config = PipelineConfig::new(Strategy::S3);
        let registry = BackendRegistry::default();
        let m = run_pipeline(&video, instruction, &config, dir.path(), &registry).unwrap();

        assert_eq!(m.verdict.as_ref().unwrap().label, VerdictLabel::Yes);
        assert!(m.silent_bars.is_empty());
        let rd = run_dir(dir.path(), &video.id, Strategy::S3);
        let final_audio = load_run_audio(&rd, &m).unwrap();
        assert!(detect_voice_activity(&final_audio).is_empty());
        assert!(detect_voice_activity_with_cot(&final_audio).is_empty());

        let edited = read_wav(&rd.join("edited.wav")).unwrap();
        assert_eq!(final_audio.samples(), edited.samples());
    }

    fn detect_voice_activity_with_cot(w: &Waveform) -> Vec<(f64, f64)> {
        crate::detect::detect_voice_activity_with(w, &DetectorProfile::cot())
    }

    #[test]
    fn run_no_verdict_keeps_coarse() {
        let dir = tempfile::tempdir().unwrap();
        let mut video = descriptor("no2-clip", 2.0, &[0.2]);
        video.person_segments = vec![(0.0, 2.0)];
        let config = PipelineConfig::new(Strategy::S3);
        let registry = BackendRegistry::default();
        let m = run_pipeline(&video, "ambient", &config, dir.path(), &registry).unwrap();

        assert_eq!(m.verdict.as_ref().unwrap().label, VerdictLabel::No2);
        let rd = run_dir(dir.path(), &video.id, Strategy::S3);
        let coarse = read_wav(&rd.join("coarse.wav")).unwrap();
        let final_audio = load_run_audio(&rd, &m).unwrap();
        assert_eq!(final_audio.samples(), coarse.samples());
    }

    #[test]
    fn run_s4_rep_restores_silenced_bar() {
        let dir = tempfile::tempdir().unwrap();
        let (video, instruction) = yes_fixture();
        let config = PipelineConfig::new(Strategy::S4Rep);
        let registry = BackendRegistry::default();
        let m = run_pipeline(&video, instruction, &config, dir.path(), &registry).unwrap();

        assert_eq!(m.silent_bars, vec![1]);
        let rd = run_dir(dir.path(), &video.id, Strategy::S4Rep);
        let coarse = read_wav(&rd.join("coarse.wav")).unwrap();
        let final_audio = load_run_audio(&rd, &m).unwrap();
        assert_eq!(final_audio.len(), coarse.len());
        assert_eq!(
            &final_audio.samples()[16_000..32_000],
            &coarse.samples()[16_000..32_000]
        );
    }

    #[test]
    fn run_s4_rm_shortens_output() {
        let dir = tempfile::tempdir().unwrap();
        let (video, instruction) = yes_fixture();
        let config = PipelineConfig::new(Strategy::S4Rm);
        let registry = BackendRegistry::default();
        let m = run_pipeline(&video, instruction, &config, dir.path(), &registry).unwrap();
        assert_eq!(m.silent_bars, vec![1]);
        let rd = run_dir(dir.path(), &video.id, Strategy::S4Rm);
        let final_audio = load_run_audio(&rd, &m).unwrap();
        assert_eq!(final_audio.len(), 16_000);
    }

    #[test]
    fn run_s4_neg_fills_bar_with_negative_audio() {
        let dir = tempfile::tempdir().unwrap();
        let (video, instruction) = yes_fixture();
        let config = PipelineConfig::new(Strategy::S4Neg);
        let registry = BackendRegistry::default();
        let m = run_pipeline(&video, instruction, &config, dir.path(), &registry).unwrap();
        assert_eq!(m.silent_bars, vec![1]);
        let rd = run_dir(dir.path(), &video.id, Strategy::S4Neg);
        let neg = read_wav(&rd.join("neg.wav")).unwrap();
        let final_audio = load_run_audio(&rd, &m).unwrap();
        assert_eq!(
            &final_audio.samples()[16_000..32_000],
            &neg.samples()[16_000..32_000]
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let (video, instruction) = yes_fixture();
        let registry = BackendRegistry::default();
        let mut finals: Vec<Vec<u8>> = Vec::new();
        let mut manifests: Vec<serde_json::Value> = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let config = PipelineConfig::new(Strategy::S4Rep);
            run_pipeline(&video, instruction, &config, dir.path(), &registry).unwrap();
            let rd = run_dir(dir.path(), &video.id, Strategy::S4Rep);
            finals.push(std::fs::read(rd.join("final.wav")).unwrap());
            let mut m: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(rd.join("manifest.json")).unwrap())
                    .unwrap();
            m.as_object_mut().unwrap().remove("step_seconds");
            manifests.push(m);
        }
        assert_eq!(finals[0], finals[1]);
        assert_eq!(manifests[0], manifests[1]);
    }

    #[test]
    fn failing_backend_persists_partial_manifest() {
        struct Failing;
        impl V2aBackend for Failing {
            fn generate(&self, _: &V2aRequest<'_>) -> Result<Waveform, BackendError> {
                Err(BackendError::Status {
                    status: 503,
                    body: "overloaded".into(),
                })
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let (video, instruction) = yes_fixture();
        let mut registry = BackendRegistry::default();
        registry.register("flaky", Arc::new(Failing));
        let mut config = PipelineConfig::new(Strategy::S3);
        config.backend = "flaky".into();

        let err = run_pipeline(&video, instruction, &config, dir.path(), &registry).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Step {
                step: StepId::Generate,
                source: BackendError::Status { status: 503, .. }
            }
        ));
        let rd = run_dir(dir.path(), &video.id, Strategy::S3);
        let m: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(rd.join("manifest.json")).unwrap())
                .unwrap();
        assert!(m.final_audio.is_none());
        assert!(m.coarse_audio.is_none());
    }

    #[test]
    fn unknown_backend_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (video, instruction) = yes_fixture();
        let mut config = PipelineConfig::new(Strategy::S3);
        config.backend = "nope".into();
        let registry = BackendRegistry::default();
        assert!(matches!(
            run_pipeline(&video, instruction, &config, dir.path(), &registry),
            Err(PipelineError::UnknownBackend(_))
        ));
    }

    #[test]
    fn decode_round_trips_and_rejects_garbage() {
        let samples: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin() as f32 * 0.5)
            .collect();
        let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        let b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
        let body = format!("{{\"sample_rate\":16000,\"samples_b64\":\"{b64}\"}}");
        let w = decode_v2a_response(&body).unwrap();
        assert_eq!(w.len(), samples.len());
        for (a, b) in w.samples().iter().zip(&samples) {
            assert!((a - b).abs() < 1e-6);
        }

        let truncated = format!(
            "{{\"sample_rate\":16000,\"samples_b64\":\"{}\"}}",
            &b64[..b64.len() - 3]
        );
        assert!(matches!(
            decode_v2a_response(&truncated),
            Err(BackendError::Payload(_))
        ));
        assert!(matches!(
            decode_v2a_response("{\"nope\": 1}"),
            Err(BackendError::Payload(_))
        ));
    }

    #[test]
    fn strategy_parsing_and_labels() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert!(!s.label().is_empty());
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
