//! Synthetic corpus tools: four-label corpus generation with gold judgment
//! documents, manifest validation, and label statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioError, Waveform, CANONICAL_SAMPLE_RATE};
use crate::cot::{parse_cot_detail, render_cot_detail, CotError, VerdictLabel};
use crate::detect::{judge, DetectError, JudgeMode, VideoDescriptor};
use crate::pipeline::{stub_v2a, DEFAULT_NEGATIVE_PROMPT};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid label mix: {0}")]
    Mix(String),
    #[error("corpus needs at least 4 items, got {0}")]
    TooSmall(usize),
    #[error("item {id}: gold label {expected} not recovered by the judge (got {got})")]
    ClosedLoop {
        id: String,
        expected: VerdictLabel,
        got: VerdictLabel,
    },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Cot(#[from] CotError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One corpus entry; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub descriptor: String,
    pub audio: String,
    pub cot: String,
    pub gold_label: VerdictLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub items: Vec<CorpusItem>,
    pub label_counts: BTreeMap<VerdictLabel, usize>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<CorpusManifest, DatasetError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<CorpusManifest, DatasetError> {
        CorpusManifest::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        Ok(std::fs::write(path, self.to_json())?)
    }
}

/// A validation finding for one manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    MissingFile { id: String, path: String },
    UnparsableCot { id: String, error: String },
    LabelMismatch {
        id: String,
        manifest_label: VerdictLabel,
        cot_label: VerdictLabel,
    },
    DuplicateId { id: String },
    CountMismatch {
        label: VerdictLabel,
        counted: usize,
        recorded: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingFile { id, path } => write!(f, "{id}: missing file {path}"),
            Violation::UnparsableCot { id, error } => {
                write!(f, "{id}: judgment document does not parse: {error}")
            }
            Violation::LabelMismatch {
                id,
                manifest_label,
                cot_label,
            } => write!(
                f,
                "{id}: manifest label {manifest_label} but document concludes {cot_label}"
            ),
            Violation::DuplicateId { id } => write!(f, "duplicate id {id}"),
            Violation::CountMismatch {
                label,
                counted,
                recorded,
            } => write!(
                f,
                "label {label}: {counted} items but manifest records {recorded}"
            ),
        }
    }
}

/// Splits `n` into four counts proportional to `mix` using largest-remainder
/// rounding (ties go to the earlier label).
pub fn largest_remainder(n: usize, mix: [f64; 4]) -> Result<[usize; 4], DatasetError> {
    let sum: f64 = mix.iter().sum();
    if mix.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
        return Err(DatasetError::Mix(format!(
            "proportions must lie in [0, 1], got {mix:?}"
        )));
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Mix(format!(
            "proportions sum to {sum}, expected 1"
        )));
    }
    let mut counts = [0usize; 4];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut assigned = 0usize;
    for i in 0..4 {
        let quota = n as f64 * mix[i];
        counts[i] = quota.floor() as usize;
        assigned += counts[i];
        remainders.push((i, quota - quota.floor()));
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(n - assigned) {
        counts[i] += 1;
    }
    Ok(counts)
}

const SCENE_VOCAB: [&str; 6] = ["park", "street", "kitchen", "workshop", "beach", "forest"];

fn synth_descriptor(rng: &mut ChaCha8Rng, id: &str, label: VerdictLabel) -> VideoDescriptor {
    let duration = 2.0 + 0.5 * rng.gen_range(0..3) as f64;
    let n_onsets = rng.gen_range(2..=3);
    let mut onsets: Vec<f64> = (0..n_onsets)
        .map(|_| rng.gen_range(0.15..duration - 0.15))
        .collect();
    onsets.sort_by(f64::total_cmp);
    let scene = SCENE_VOCAB[rng.gen_range(0..SCENE_VOCAB.len())].to_string();
    let person_segments = if matches!(label, VerdictLabel::No2 | VerdictLabel::No3) {
        let t0 = 0.2 * duration + rng.gen_range(0.0..0.1);
        vec![(t0, t0 + 0.4 * duration)]
    } else {
        vec![]
    };
    VideoDescriptor {
        id: id.to_string(),
        duration,
        person_segments,
        scene_tags: vec![scene],
        onset_times: onsets,
    }
}

fn synth_prompt(label: VerdictLabel, scene: &str) -> (String, Option<&'static str>) {
    match label {
        // Voice with nobody on screen: the prompt itself asks for narration.
        VerdictLabel::Yes => (
            format!("a narrating voice over {scene} ambience"),
            None,
        ),
        VerdictLabel::No1 => (format!("ambient {scene} sounds"), None),
        // A visible person speaking: the person segments supply the voice.
        VerdictLabel::No2 => (format!("ambient {scene} sounds"), None),
        // A visible person kept silent by the negative prompt.
        VerdictLabel::No3 => (
            format!("ambient {scene} sounds"),
            Some(DEFAULT_NEGATIVE_PROMPT),
        ),
    }
}

fn write_item(
    out_dir: &Path,
    video: &VideoDescriptor,
    audio: &Waveform,
    gold_label: VerdictLabel,
) -> Result<CorpusItem, DatasetError> {
    let verdict = judge(video, audio, JudgeMode::Cot)?;
    if verdict.label != gold_label {
        return Err(DatasetError::ClosedLoop {
            id: video.id.clone(),
            expected: gold_label,
            got: verdict.label,
        });
    }
    let doc = verdict.cot.as_ref().expect("judgment in CoT mode carries a document");
    let item_dir = out_dir.join(&video.id);
    std::fs::create_dir_all(&item_dir)?;
    video.save(&item_dir.join("descriptor.json"))?;
    write_wav(&item_dir.join("audio.wav"), audio)?;
    std::fs::write(item_dir.join("cot.txt"), render_cot_detail(doc))?;
    Ok(CorpusItem {
        id: video.id.clone(),
        descriptor: format!("{}/descriptor.json", video.id),
        audio: format!("{}/audio.wav", video.id),
        cot: format!("{}/cot.txt", video.id),
        gold_label,
    })
}

fn assemble_manifest(seed: u64, mut items: Vec<CorpusItem>) -> CorpusManifest {
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut label_counts = BTreeMap::new();
    for label in VerdictLabel::ALL {
        label_counts.insert(label, 0usize);
    }
    for item in &items {
        *label_counts.get_mut(&item.gold_label).expect("all labels present") += 1;
    }
    CorpusManifest {
        seed,
        items,
        label_counts,
    }
}

/// Builds an `n`-item corpus under `out_dir` with labels drawn to `mix`
/// (order Yes, No1, No2, No3). Every item's audio is synthesized to match
/// its label, the gold judgment document is the judge's own rendering, and
/// the judge is re-run as a closed-loop check before the item is accepted.
/// Writes `manifest.json` in `out_dir` and is byte-deterministic in
/// `(n, mix, seed)`.
pub fn build_corpus(
    n: usize,
    mix: [f64; 4],
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, DatasetError> {
    if n < 4 {
        return Err(DatasetError::TooSmall(n));
    }
    let counts = largest_remainder(n, mix)?;
    let mut labels: Vec<VerdictLabel> = Vec::with_capacity(n);
    for (label, &count) in VerdictLabel::ALL.iter().zip(&counts) {
        labels.extend(std::iter::repeat(*label).take(count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);

    std::fs::create_dir_all(out_dir)?;
    let mut items = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("item-{i:04}");
        let video = synth_descriptor(&mut rng, &id, label);
        let (prompt, negative) = synth_prompt(label, &video.scene_tags[0]);
        let audio = stub_v2a(&video, &prompt, negative, seed);
        items.push(write_item(out_dir, &video, &audio, label)?);
    }
    let manifest = assemble_manifest(seed, items);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Fraction of mixture energy inside the voice band for borderline items:
/// above the relaxed band-ratio gate, below the strict one.
const BORDERLINE_IN_BAND: f64 = 0.55;

/// Synthesizes audio that only the relaxed detector profile accepts: a
/// harmonic stack whose in-band energy fraction sits between the two
/// band-ratio gates, spanning most of the clip so its voice-energy ratio is
/// high.
pub fn borderline_audio(duration: f64) -> Waveform {
    let sr = CANONICAL_SAMPLE_RATE;
    let n = (duration * sr as f64).round() as usize;
    let harmonic_amp = 0.1f64;
    let in_band_energy = 3.0 * harmonic_amp * harmonic_amp / 2.0;
    let out_amp =
        (2.0 * in_band_energy * (1.0 - BORDERLINE_IN_BAND) / BORDERLINE_IN_BAND).sqrt();
    let i0 = (0.05 * n as f64) as usize;
    let i1 = (0.95 * n as f64) as usize;
    let mut samples = vec![0.0f32; n];
    for (i, s) in samples.iter_mut().enumerate().take(i1).skip(i0) {
        let t = i as f64 / sr as f64;
        let mut v = 0.0f64;
        for p in 1..=3 {
            v += harmonic_amp * (2.0 * std::f64::consts::PI * 250.0 * p as f64 * t).sin();
        }
        v += out_amp * (2.0 * std::f64::consts::PI * 5_000.0 * t).sin();
        *s = v as f32;
    }
    Waveform::new(samples, sr)
}

/// Builds a corpus of `standard_n` items in the usual four-label mix plus
/// `borderline_k` items whose voice is detected only by the relaxed
/// profile: their gold label (from the relaxed judge) is Yes while the
/// strict profile reports no voice.
pub fn build_borderline_corpus(
    standard_n: usize,
    borderline_k: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, DatasetError> {
    if standard_n < 4 {
        return Err(DatasetError::TooSmall(standard_n));
    }
    let base = build_corpus(standard_n, [0.25; 4], seed, out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut items = base.items;
    for i in 0..borderline_k {
        let id = format!("edge-{i:04}");
        let duration = 2.0 + 0.5 * rng.gen_range(0..2) as f64;
        let video = VideoDescriptor {
            id: id.clone(),
            duration,
            person_segments: vec![],
            scene_tags: vec!["studio".into()],
            onset_times: vec![],
        };
        let audio = borderline_audio(duration);
        items.push(write_item(out_dir, &video, &audio, VerdictLabel::Yes)?);
    }
    let manifest = assemble_manifest(seed, items);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads corpus items as (descriptor, audio) pairs for evaluation.
pub fn load_corpus_items(
    manifest_path: &Path,
) -> Result<Vec<(VideoDescriptor, Waveform)>, DatasetError> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let base = manifest_base(manifest_path);
    let mut out = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let video = VideoDescriptor::load(&base.join(&item.descriptor))?;
        let audio = crate::audio::read_wav(&base.join(&item.audio))?;
        out.push((video, audio));
    }
    Ok(out)
}

fn manifest_base(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Checks a manifest on disk: files exist, documents parse, document
/// conclusions match manifest labels, ids are unique, and recorded label
/// counts match the items. An empty list means the corpus is valid.
pub fn validate_manifest(manifest_path: &Path) -> Result<Vec<Violation>, DatasetError> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let base = manifest_base(manifest_path);
    let mut violations = Vec::new();

    let mut seen = HashSet::new();
    for item in &manifest.items {
        if !seen.insert(&item.id) {
            violations.push(Violation::DuplicateId {
                id: item.id.clone(),
            });
        }
        for rel in [&item.descriptor, &item.audio, &item.cot] {
            if !base.join(rel).is_file() {
                violations.push(Violation::MissingFile {
                    id: item.id.clone(),
                    path: rel.clone(),
                });
            }
        }
        let cot_path = base.join(&item.cot);
        if cot_path.is_file() {
            let text = std::fs::read_to_string(&cot_path)?;
            match parse_cot_detail(&text) {
                Ok(doc) => {
                    if doc.conclusion_label != item.gold_label {
                        violations.push(Violation::LabelMismatch {
                            id: item.id.clone(),
                            manifest_label: item.gold_label,
                            cot_label: doc.conclusion_label,
                        });
                    }
                }
                Err(e) => violations.push(Violation::UnparsableCot {
                    id: item.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    for label in VerdictLabel::ALL {
        let counted = manifest
            .items
            .iter()
            .filter(|i| i.gold_label == label)
            .count();
        let recorded = manifest.label_counts.get(&label).copied().unwrap_or(0);
        if counted != recorded {
            violations.push(Violation::CountMismatch {
                label,
                counted,
                recorded,
            });
        }
    }
    Ok(violations)
}

/// Exact per-label counts and proportions. An empty manifest yields zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub total: usize,
    pub counts: BTreeMap<VerdictLabel, usize>,
    pub proportions: BTreeMap<VerdictLabel, f64>,
}

pub fn label_stats(manifest: &CorpusManifest) -> LabelStats {
    let total = manifest.items.len();
    let mut counts = BTreeMap::new();
    let mut proportions = BTreeMap::new();
    for label in VerdictLabel::ALL {
        let count = manifest
            .items
            .iter()
            .filter(|i| i.gold_label == label)
            .count();
        counts.insert(label, count);
        let p = if total == 0 {
            0.0
        } else {
            count as f64 / total as f64
        };
        proportions.insert(label, p);
    }
    LabelStats {
        total,
        counts,
        proportions,
    }
}
