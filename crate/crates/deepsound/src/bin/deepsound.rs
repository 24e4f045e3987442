//! Operator command line: run pipelines, build and validate corpora, check
//! judgment documents, compute metrics, and render reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use deepsound::audio::{read_wav, AudioError, Waveform};
use deepsound::cot::parse_cot_detail;
use deepsound::dataset::{
    build_borderline_corpus, build_corpus, label_stats, load_corpus_items, validate_manifest,
    DatasetError,
};
use deepsound::detect::{DetectError, JudgeMode, VideoDescriptor};
use deepsound::metrics::{
    band_distribution, desync_proxy, embed_waveforms, emit_report, format_qa_cot_row,
    frechet_distance, gaussian_stats, ib_score, inception_score, kl_divergence, qa_cot_report,
    EmbeddingSet, MetricError, MetricReport, MetricRow,
};
use deepsound::pipeline::{
    resolve_endpoint, run_dir, run_pipeline, BackendRegistry, HttpBackend, PipelineConfig,
    PipelineError, Strategy,
};

const STRATEGY_HELP: &str = "generation strategy: direct, direct_neg, s3, s4_rm, s4_rep, s4_neg";

const AFTER_HELP: &str = "\
strategies: direct, direct_neg, s3, s4_rm, s4_rep, s4_neg\n\
            (display labels: Direct, Direct-neg, Ours-s3, Ours-s4-rm, Ours-s4-rep, Ours-s4-neg)\n\
modes:      QA, CoT\n\
\n\
exit codes: 0 success, 1 validation failure, 2 usage error, 3 backend or I/O error";

#[derive(Parser)]
#[command(
    name = "deepsound",
    version,
    about = "Video-to-audio pipeline with voice-over detection, removal, and evaluation",
    after_help = AFTER_HELP
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the four-step pipeline on one clip descriptor.
    Run {
        /// Clip descriptor JSON file.
        #[arg(long)]
        video: PathBuf,
        #[arg(long, value_parser = parse_strategy, help = STRATEGY_HELP)]
        strategy: Strategy,
        /// Judgment mode: QA or CoT.
        #[arg(long, default_value = "CoT", value_parser = parse_mode)]
        mode: JudgeMode,
        /// Output root; artifacts land in <out>/<video_id>/<strategy>/.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generation instruction; defaults to one derived from the scene tags.
        #[arg(long)]
        instruction: Option<String>,
        /// Remote generation endpoint (DEEPSOUND_V2A_ENDPOINT overrides).
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Score method output directories against a corpus.
    Eval {
        /// Corpus manifest JSON file.
        #[arg(long)]
        corpus: PathBuf,
        /// Method directories holding one <item-id>.wav per corpus item.
        /// A directory named like a strategy is labeled with its display name.
        #[arg(long, num_args = 1.., required_unless_present = "qa_cot")]
        methods: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also judge every item in both modes and report detection counts.
        #[arg(long)]
        qa_cot: bool,
    },
    /// Check judgment documents (a file or a directory of .txt files).
    CotValidate { path: PathBuf },
    /// Build a synthetic labeled corpus.
    DatasetGen {
        /// Item count (split across the four labels by --mix).
        #[arg(long)]
        n: usize,
        /// Label proportions Yes,No1,No2,No3 summing to 1.
        #[arg(long, default_value = "0.25,0.25,0.25,0.25")]
        mix: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Extra items detectable only in CoT mode, appended after the n standard items.
        #[arg(long, default_value_t = 0)]
        borderline: usize,
    },
    /// Re-render report files from a report.json dump.
    Report {
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<JudgeMode, String> {
    s.parse()
}

/// A command failure carrying its exit code: 1 validation, 3 backend/I-O.
struct Failure {
    code: u8,
    message: String,
}

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn io_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

fn from_detect(e: DetectError) -> Failure {
    match e {
        DetectError::Io(_) => io_failure(e.to_string()),
        _ => validation(e.to_string()),
    }
}

fn from_audio(e: AudioError) -> Failure {
    match e {
        AudioError::Io(_) | AudioError::Format(_) => io_failure(e.to_string()),
        _ => validation(e.to_string()),
    }
}

fn from_pipeline(e: PipelineError) -> Failure {
    match e {
        PipelineError::Step { .. } | PipelineError::Io(_) | PipelineError::Json(_) => {
            io_failure(e.to_string())
        }
        PipelineError::Audio(a) => from_audio(a),
        PipelineError::Detect(d) => from_detect(d),
        _ => validation(e.to_string()),
    }
}

fn from_dataset(e: DatasetError) -> Failure {
    match e {
        DatasetError::Io(_) | DatasetError::Json(_) => io_failure(e.to_string()),
        DatasetError::Audio(a) => from_audio(a),
        DatasetError::Detect(d) => from_detect(d),
        _ => validation(e.to_string()),
    }
}

fn from_metric(e: MetricError) -> Failure {
    match e {
        MetricError::Io(_) | MetricError::Json(_) => io_failure(e.to_string()),
        MetricError::Audio(a) => from_audio(a),
        MetricError::Detect(d) => from_detect(d),
        _ => validation(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run {
            video,
            strategy,
            mode,
            out,
            seed,
            instruction,
            endpoint,
        } => cmd_run(&video, strategy, mode, &out, seed, instruction, endpoint),
        Cmd::Eval {
            corpus,
            methods,
            out,
            qa_cot,
        } => cmd_eval(&corpus, &methods, &out, qa_cot),
        Cmd::CotValidate { path } => cmd_cot_validate(&path),
        Cmd::DatasetGen {
            n,
            mix,
            seed,
            out,
            borderline,
        } => cmd_dataset_gen(n, &mix, seed, &out, borderline),
        Cmd::Report { json, out } => cmd_report(&json, &out),
    }
}

fn cmd_run(
    video_path: &Path,
    strategy: Strategy,
    mode: JudgeMode,
    out: &Path,
    seed: u64,
    instruction: Option<String>,
    endpoint: Option<String>,
) -> Result<(), Failure> {
    let video = VideoDescriptor::load(video_path).map_err(from_detect)?;
    let instruction = instruction.unwrap_or_else(|| default_instruction(&video));

    let mut config = PipelineConfig::new(strategy);
    config.detector_mode = mode;
    config.seed = seed;
    let mut registry = BackendRegistry::default();
    if let Some(url) = resolve_endpoint(endpoint.as_deref()) {
        registry.register("http", Arc::new(HttpBackend::new(url)));
        config.backend = "http".into();
    }

    let manifest =
        run_pipeline(&video, &instruction, &config, out, &registry).map_err(from_pipeline)?;

    match &manifest.verdict {
        Some(v) => println!("verdict: {}", v.label),
        None => println!("verdict: none (single-step strategy)"),
    }
    println!("strategy: {} ({})", strategy, strategy.label());
    if strategy.is_s4() {
        println!("silent bars: {:?}", manifest.silent_bars);
    }
    let dir = run_dir(out, &video.id, strategy);
    println!(
        "final audio: {}",
        dir.join(manifest.final_audio.as_deref().unwrap_or("final.wav"))
            .display()
    );
    Ok(())
}

fn default_instruction(video: &VideoDescriptor) -> String {
    if video.scene_tags.is_empty() {
        "generate the soundtrack for the clip".to_string()
    } else {
        format!(
            "generate the soundtrack for {}",
            video.scene_tags.join(", ")
        )
    }
}

fn method_label(dir: &Path) -> String {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| dir.display().to_string());
    name.parse::<Strategy>()
        .map(|s| s.label().to_string())
        .unwrap_or(name)
}

/// Optional externally computed embeddings: a JSON array of equal-length
/// real vectors at `<dir>/embeddings.json`, one per corpus item in manifest
/// order.
fn external_embeddings(
    dir: &Path,
    expected: usize,
    source: &str,
) -> Result<Option<EmbeddingSet>, Failure> {
    let path = dir.join("embeddings.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| io_failure(e.to_string()))?;
    let vectors: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    if vectors.len() != expected {
        return Err(validation(format!(
            "{}: {} vectors for {} corpus items",
            path.display(),
            vectors.len(),
            expected
        )));
    }
    EmbeddingSet::new(vectors, source)
        .map(Some)
        .map_err(from_metric)
}

fn cmd_eval(
    corpus: &Path,
    methods: &[PathBuf],
    out: &Path,
    qa_cot: bool,
) -> Result<(), Failure> {
    let items = load_corpus_items(corpus).map_err(from_dataset)?;
    if items.is_empty() {
        return Err(validation("corpus has no items"));
    }
    let corpus_dir = corpus.parent().unwrap_or_else(|| Path::new("."));

    if !methods.is_empty() {
        let ref_audio: Vec<Waveform> = items.iter().map(|(_, a)| a.clone()).collect();
        let ref_embs = match external_embeddings(corpus_dir, items.len(), "reference")? {
            Some(e) => e,
            None => embed_waveforms(&ref_audio, "reference").map_err(from_metric)?,
        };
        let ref_stats = gaussian_stats(&ref_embs).map_err(from_metric)?;
        let ref_dists: Vec<Vec<f64>> = ref_audio
            .iter()
            .map(band_distribution)
            .collect::<Result<_, _>>()
            .map_err(from_metric)?;

        let mut report = MetricReport {
            rows: Vec::new(),
            footnotes: vec![
                "distribution and divergence scores use the built-in spectral embedder and \
                 octave-band distributions rather than pretrained scorers"
                    .into(),
                "binding and alignment scores are audio-side proxies".into(),
            ],
        };
        for dir in methods {
            report.rows.push(eval_method(
                dir, &items, &ref_embs, &ref_stats, &ref_dists,
            )?);
        }
        emit_report(&report, out).map_err(from_metric)?;
        let table =
            std::fs::read_to_string(out.join("report.txt")).map_err(|e| io_failure(e.to_string()))?;
        print!("{table}");
        println!("report written to {}", out.display());
    }

    if qa_cot {
        let label = corpus_dir
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "corpus".into());
        let row = qa_cot_report(&items, label).map_err(from_metric)?;
        let line = format_qa_cot_row(&row);
        println!("method, qa_ratio, cot_ratio, qa_num, cot_num, total");
        println!("{line}");
        std::fs::create_dir_all(out).map_err(|e| io_failure(e.to_string()))?;
        std::fs::write(out.join("qa_cot.txt"), format!("{line}\n"))
            .map_err(|e| io_failure(e.to_string()))?;
        let mut json =
            serde_json::to_string_pretty(&row).map_err(|e| io_failure(e.to_string()))?;
        json.push('\n');
        std::fs::write(out.join("qa_cot.json"), json).map_err(|e| io_failure(e.to_string()))?;
    }
    Ok(())
}

fn eval_method(
    dir: &Path,
    items: &[(VideoDescriptor, Waveform)],
    ref_embs: &EmbeddingSet,
    ref_stats: &deepsound::metrics::GaussianStats,
    ref_dists: &[Vec<f64>],
) -> Result<MetricRow, Failure> {
    let missing: Vec<&str> = items
        .iter()
        .filter(|(v, _)| !dir.join(format!("{}.wav", v.id)).is_file())
        .map(|(v, _)| v.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(validation(format!(
            "{}: missing audio for ids: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let audios: Vec<Waveform> = items
        .iter()
        .map(|(v, _)| read_wav(&dir.join(format!("{}.wav", v.id))))
        .collect::<Result<_, _>>()
        .map_err(from_audio)?;

    let label = method_label(dir);
    let embs = match external_embeddings(dir, items.len(), label.as_str())? {
        Some(e) => e,
        None => embed_waveforms(&audios, label.as_str()).map_err(from_metric)?,
    };
    let stats = gaussian_stats(&embs).map_err(from_metric)?;

    let mut row = MetricRow::new(label);
    row.fd.insert(
        "toy".into(),
        frechet_distance(&stats, ref_stats).map_err(from_metric)?,
    );
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = audios
        .iter()
        .zip(ref_dists)
        .map(|(a, r)| Ok((band_distribution(a).map_err(from_metric)?, r.clone())))
        .collect::<Result<_, Failure>>()?;
    let dists: Vec<Vec<f64>> = pairs.iter().map(|(p, _)| p.clone()).collect();
    row.kl
        .insert("band".into(), kl_divergence(&pairs).map_err(from_metric)?);
    row.is_score = inception_score(&dists).map_err(from_metric)?;
    row.ib_score = ib_score(ref_embs, &embs).map_err(from_metric)?;
    row.desync = items
        .iter()
        .zip(&audios)
        .map(|((v, _), a)| desync_proxy(a, &v.onset_times))
        .sum::<f64>()
        / items.len() as f64;
    Ok(row)
}

fn cmd_cot_validate(path: &Path) -> Result<(), Failure> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io_failure(format!("{}: {e}", path.display())))?
            .filter_map(|r| r.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        entries.sort();
        entries
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(io_failure(format!("no such file: {}", path.display())));
    };

    if files.is_empty() {
        println!("no .txt files under {}", path.display());
        return Ok(());
    }
    let mut failed = 0usize;
    for file in &files {
        let text =
            std::fs::read_to_string(file).map_err(|e| io_failure(format!("{}: {e}", file.display())))?;
        match parse_cot_detail(&text) {
            Ok(_) => println!("{}: pass", file.display()),
            Err(e) => {
                println!("{}: fail: {e}", file.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(validation(format!(
            "{failed} of {} documents failed validation",
            files.len()
        )));
    }
    Ok(())
}

fn parse_mix(s: &str) -> Result<[f64; 4], Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(validation(format!(
            "mix needs 4 comma-separated proportions, got {}",
            parts.len()
        )));
    }
    let mut mix = [0.0f64; 4];
    for (slot, part) in mix.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| validation(format!("bad proportion {part:?}: {e}")))?;
    }
    Ok(mix)
}

fn cmd_dataset_gen(
    n: usize,
    mix: &str,
    seed: u64,
    out: &Path,
    borderline: usize,
) -> Result<(), Failure> {
    let mix = parse_mix(mix)?;
    let manifest = if borderline > 0 {
        build_borderline_corpus(n, borderline, seed, out).map_err(from_dataset)?
    } else {
        build_corpus(n, mix, seed, out).map_err(from_dataset)?
    };
    let stats = label_stats(&manifest);
    println!(
        "built {} items under {} (seed {seed})",
        manifest.items.len(),
        out.display()
    );
    for (label, count) in &stats.counts {
        println!("  {label}: {count}");
    }
    let violations = validate_manifest(&out.join("manifest.json")).map_err(from_dataset)?;
    if violations.is_empty() {
        println!("manifest valid");
        Ok(())
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Err(validation(format!("{} violations", violations.len())))
    }
}

fn cmd_report(json: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(json).map_err(|e| io_failure(e.to_string()))?;
    let report: MetricReport =
        serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", json.display())))?;
    emit_report(&report, out).map_err(from_metric)?;
    println!("report written to {}", out.display());
    Ok(())
}
