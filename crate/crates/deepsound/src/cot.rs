//! Tagged reasoning documents: parsing, canonical rendering, and scoring.
//!
//! Two document kinds live here. Detail documents carry four tagged
//! sections (`<SUMMARY>`, `<CAPTION>`, `<REASONING>` with exactly four
//! `Step k.` items, `<CONCLUSION>` ending in an `Answer: <label>` line).
//! Plan documents are line-oriented, one `Plan k: <step> — <rationale>`
//! line per pipeline step.
//!
//! Scoring compares a candidate document against a gold one and decomposes
//! into a structural violation count, per-stage normalized token edit
//! distances, and per-stage keyword-set distances.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Four-way voice-over verdict.
///
/// `Yes`: voice without a visible person (a voice-over). `No1`: neither
/// person nor voice. `No2`: both. `No3`: person without voice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerdictLabel {
    Yes,
    No1,
    No2,
    No3,
}

impl VerdictLabel {
    pub const ALL: [VerdictLabel; 4] = [
        VerdictLabel::Yes,
        VerdictLabel::No1,
        VerdictLabel::No2,
        VerdictLabel::No3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Yes => "Yes",
            VerdictLabel::No1 => "No1",
            VerdictLabel::No2 => "No2",
            VerdictLabel::No3 => "No3",
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictLabel {
    type Err = CotError;

    fn from_str(s: &str) -> Result<Self, CotError> {
        match s {
            "Yes" => Ok(VerdictLabel::Yes),
            "No1" => Ok(VerdictLabel::No1),
            "No2" => Ok(VerdictLabel::No2),
            "No3" => Ok(VerdictLabel::No3),
            other => Err(CotError::UnknownLabel(other.to_string())),
        }
    }
}

/// Pipeline step identifiers usable in a plan, in their required order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepId {
    Generate,
    Detect,
    Remove,
    SilenceCheck,
}

impl StepId {
    pub const ALL: [StepId; 4] = [
        StepId::Generate,
        StepId::Detect,
        StepId::Remove,
        StepId::SilenceCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepId::Generate => "generate",
            StepId::Detect => "detect",
            StepId::Remove => "remove",
            StepId::SilenceCheck => "silence_check",
        }
    }

    fn parse(s: &str) -> Option<StepId> {
        match s {
            "generate" => Some(StepId::Generate),
            "detect" => Some(StepId::Detect),
            "remove" => Some(StepId::Remove),
            "silence_check" => Some(StepId::SilenceCheck),
            _ => None,
        }
    }

    fn rank(self) -> u8 {
        match self {
            StepId::Generate => 0,
            StepId::Detect => 1,
            StepId::Remove => 2,
            StepId::SilenceCheck => 3,
        }
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CotError {
    #[error("missing <{0}> tag")]
    MissingTag(String),
    #[error("section {0} is not closed")]
    UnclosedTag(String),
    #[error("tag {0} out of order")]
    MisorderedTag(String),
    #[error("section {0} is empty")]
    EmptySection(String),
    #[error("text before Step 1 in REASONING")]
    ReasoningPreamble,
    #[error("expected 4 reasoning steps, found {got}")]
    StepCount { got: usize },
    #[error("expected Step {expected}, found Step {got}")]
    StepNumber { expected: usize, got: usize },
    #[error("missing Answer line in CONCLUSION")]
    MissingAnswer,
    #[error("unknown verdict label {0:?}")]
    UnknownLabel(String),
    #[error("text contains reserved marker {0:?}")]
    ReservedText(String),
    #[error("plan has no steps")]
    EmptyPlan,
    #[error("line {line}: not a valid plan line")]
    BadPlanLine { line: usize },
    #[error("line {line}: expected Plan {expected}, found Plan {got}")]
    PlanNumber {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: unknown step {got:?}")]
    UnknownStep { line: usize, got: String },
    #[error("duplicate step {0}")]
    DuplicatePlanStep(StepId),
    #[error("step {0} out of order")]
    PlanOrder(StepId),
}

const SECTION_TAGS: [&str; 4] = ["SUMMARY", "CAPTION", "REASONING", "CONCLUSION"];

fn open_tag(name: &str) -> String {
    format!("<{name}>")
}

fn close_tag(name: &str) -> String {
    format!("</{name}>")
}

/// Detail document: summary, caption, exactly four reasoning steps, and a
/// conclusion whose verdict is restated on the final `Answer:` line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotDetail {
    pub summary: String,
    pub caption: String,
    pub reasoning: Vec<String>,
    pub conclusion: String,
    pub conclusion_label: VerdictLabel,
}

impl CotDetail {
    /// Validating constructor: sections non-empty, exactly four steps, and
    /// no text containing markers that would corrupt the rendered form
    /// (section tags, `Answer:` lines in the conclusion, `Step k.` line
    /// starts inside step texts).
    pub fn new(
        summary: impl Into<String>,
        caption: impl Into<String>,
        reasoning: Vec<String>,
        conclusion: impl Into<String>,
        conclusion_label: VerdictLabel,
    ) -> Result<CotDetail, CotError> {
        let doc = CotDetail {
            summary: summary.into(),
            caption: caption.into(),
            reasoning,
            conclusion: conclusion.into(),
            conclusion_label,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), CotError> {
        if self.summary.is_empty() {
            return Err(CotError::EmptySection("SUMMARY".into()));
        }
        if self.caption.is_empty() {
            return Err(CotError::EmptySection("CAPTION".into()));
        }
        if self.reasoning.len() != 4 {
            return Err(CotError::StepCount {
                got: self.reasoning.len(),
            });
        }
        if self.conclusion.trim().is_empty() {
            return Err(CotError::EmptySection("CONCLUSION".into()));
        }
        for text in self
            .reasoning
            .iter()
            .chain([&self.summary, &self.caption, &self.conclusion])
        {
            for name in SECTION_TAGS {
                for tag in [open_tag(name), close_tag(name)] {
                    if text.contains(&tag) {
                        return Err(CotError::ReservedText(tag));
                    }
                }
            }
        }
        for step in &self.reasoning {
            if step.lines().any(|l| parse_step_start(l).is_some()) {
                return Err(CotError::ReservedText("Step k.".into()));
            }
        }
        if self
            .conclusion
            .lines()
            .any(|l| l.trim_start().starts_with("Answer:"))
        {
            return Err(CotError::ReservedText("Answer:".into()));
        }
        Ok(())
    }

    fn stage_text(&self, stage: Stage) -> String {
        match stage {
            Stage::Sm => self.summary.clone(),
            Stage::Cp => self.caption.clone(),
            Stage::Rn => self
                .reasoning
                .iter()
                .enumerate()
                .map(|(i, s)| format!("Step {}. {}", i + 1, s))
                .collect::<Vec<_>>()
                .join("\n"),
            Stage::Cc => format!("{}\nAnswer: {}", self.conclusion, self.conclusion_label),
        }
    }
}

/// Ordered plan of pipeline steps with one rationale per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotStructure {
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: StepId,
    pub rationale: String,
}

impl CotStructure {
    /// Validating constructor: non-empty, begins with `generate`, no
    /// duplicates, step order strictly ascending.
    pub fn new(steps: Vec<PlanStep>) -> Result<CotStructure, CotError> {
        if steps.is_empty() {
            return Err(CotError::EmptyPlan);
        }
        if steps[0].id != StepId::Generate {
            return Err(CotError::PlanOrder(steps[0].id));
        }
        let mut seen = BTreeSet::new();
        let mut prev_rank = None;
        for step in &steps {
            if !seen.insert(step.id) {
                return Err(CotError::DuplicatePlanStep(step.id));
            }
            if let Some(prev) = prev_rank {
                if step.id.rank() <= prev {
                    return Err(CotError::PlanOrder(step.id));
                }
            }
            prev_rank = Some(step.id.rank());
        }
        Ok(CotStructure { steps })
    }

    pub fn step_ids(&self) -> Vec<StepId> {
        self.steps.iter().map(|s| s.id).collect()
    }
}

/// Parses a detail document. Sections must appear as matched tag pairs in
/// the order SUMMARY, CAPTION, REASONING, CONCLUSION; errors name the
/// offending tag or construct.
pub fn parse_cot_detail(text: &str) -> Result<CotDetail, CotError> {
    // Locate all eight tag tokens, then verify their global order before
    // looking at any section content.
    let mut marks: Vec<(usize, &str)> = Vec::with_capacity(8);
    let mut inners: Vec<String> = Vec::with_capacity(4);
    for name in SECTION_TAGS {
        let open = open_tag(name);
        let close = close_tag(name);
        let o = text
            .find(&open)
            .ok_or_else(|| CotError::MissingTag(name.to_string()))?;
        let after = o + open.len();
        let c = text[after..]
            .find(&close)
            .map(|i| after + i)
            .ok_or_else(|| CotError::UnclosedTag(name.to_string()))?;
        marks.push((o, name));
        marks.push((c, name));
        inners.push(strip_block(&text[after..c]));
    }
    for i in 1..marks.len() {
        if marks[i].0 <= marks[i - 1].0 {
            return Err(CotError::MisorderedTag(marks[i].1.to_string()));
        }
    }

    let summary = inners[0].clone();
    if summary.is_empty() {
        return Err(CotError::EmptySection("SUMMARY".into()));
    }
    let caption = inners[1].clone();
    if caption.is_empty() {
        return Err(CotError::EmptySection("CAPTION".into()));
    }
    let reasoning = parse_steps(&inners[2])?;
    let (conclusion, conclusion_label) = parse_conclusion(&inners[3])?;

    Ok(CotDetail {
        summary,
        caption,
        reasoning,
        conclusion,
        conclusion_label,
    })
}

/// Canonical rendering: tags on their own lines, steps prefixed `Step k.`,
/// verdict on a final `Answer:` line, LF endings throughout.
pub fn render_cot_detail(doc: &CotDetail) -> String {
    let mut out = String::new();
    out.push_str("<SUMMARY>\n");
    out.push_str(&doc.summary);
    out.push_str("\n</SUMMARY>\n<CAPTION>\n");
    out.push_str(&doc.caption);
    out.push_str("\n</CAPTION>\n<REASONING>\n");
    for (i, step) in doc.reasoning.iter().enumerate() {
        out.push_str(&format!("Step {}. {}\n", i + 1, step));
    }
    out.push_str("</REASONING>\n<CONCLUSION>\n");
    out.push_str(&doc.conclusion);
    out.push_str(&format!("\nAnswer: {}\n</CONCLUSION>\n", doc.conclusion_label));
    out
}

/// Separator between a plan step id and its rationale.
pub const PLAN_SEPARATOR: &str = " — ";

/// Parses a plan document: numbered `Plan k:` lines, known step ids,
/// starting with `generate`, no duplicates, ascending step order.
pub fn parse_cot_structure(text: &str) -> Result<CotStructure, CotError> {
    let mut steps = Vec::new();
    let mut count = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        count += 1;
        let line = idx + 1;
        let bad = || CotError::BadPlanLine { line };
        let rest = raw.strip_prefix("Plan ").ok_or_else(bad)?;
        let colon = rest.find(':').ok_or_else(bad)?;
        let got: usize = rest[..colon].parse().map_err(|_| bad())?;
        if got != count {
            return Err(CotError::PlanNumber {
                line,
                expected: count,
                got,
            });
        }
        let after = rest[colon + 1..].strip_prefix(' ').unwrap_or(&rest[colon + 1..]);
        let (id_str, rationale) = after.split_once(PLAN_SEPARATOR).ok_or_else(bad)?;
        let id = StepId::parse(id_str.trim()).ok_or_else(|| CotError::UnknownStep {
            line,
            got: id_str.trim().to_string(),
        })?;
        steps.push(PlanStep {
            id,
            rationale: rationale.to_string(),
        });
    }
    CotStructure::new(steps)
}

pub fn render_cot_structure(plan: &CotStructure) -> String {
    let mut out = String::new();
    for (i, step) in plan.steps.iter().enumerate() {
        out.push_str(&format!(
            "Plan {}: {}{}{}\n",
            i + 1,
            step.id,
            PLAN_SEPARATOR,
            step.rationale
        ));
    }
    out
}

/// Strips the single leading and trailing newline that canonical rendering
/// places around a section body.
fn strip_block(s: &str) -> String {
    let s = s.strip_prefix('\n').unwrap_or(s);
    let s = s.strip_suffix('\n').unwrap_or(s);
    s.to_string()
}

/// Recognizes a `Step k. text` line start; returns the number and the text
/// after the dot (one following space consumed).
fn parse_step_start(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix("Step ")?;
    let dot = rest.find('.')?;
    let num: usize = rest[..dot].parse().ok()?;
    let after = &rest[dot + 1..];
    Some((num, after.strip_prefix(' ').unwrap_or(after)))
}

fn parse_steps(inner: &str) -> Result<Vec<String>, CotError> {
    let mut steps: Vec<String> = Vec::new();
    for line in inner.lines() {
        if let Some((num, text)) = parse_step_start(line) {
            let expected = steps.len() + 1;
            if num != expected {
                return Err(CotError::StepNumber { expected, got: num });
            }
            steps.push(text.to_string());
        } else if let Some(last) = steps.last_mut() {
            last.push('\n');
            last.push_str(line);
        } else if !line.trim().is_empty() {
            return Err(CotError::ReasoningPreamble);
        }
    }
    if steps.len() != 4 {
        return Err(CotError::StepCount { got: steps.len() });
    }
    Ok(steps)
}

fn parse_conclusion(inner: &str) -> Result<(String, VerdictLabel), CotError> {
    let mut lines: Vec<&str> = inner.lines().collect();
    while matches!(lines.last(), Some(l) if l.trim().is_empty()) {
        lines.pop();
    }
    let last = lines
        .pop()
        .ok_or_else(|| CotError::EmptySection("CONCLUSION".into()))?;
    let rest = last
        .trim_start()
        .strip_prefix("Answer:")
        .ok_or(CotError::MissingAnswer)?;
    let label: VerdictLabel = rest.trim().parse()?;
    let body = lines.join("\n");
    if body.trim().is_empty() {
        return Err(CotError::EmptySection("CONCLUSION".into()));
    }
    Ok((body, label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Sm,
    Cp,
    Rn,
    Cc,
}

/// Default keyword lexicon for keyword scoring.
pub const DEFAULT_LEXICON: [&str; 8] = [
    "person",
    "people",
    "human",
    "voice",
    "speech",
    "voice-over",
    "silent",
    "rule",
];

/// Lowercase tokens split on non-alphanumeric characters.
pub fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn token_edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized token edit distance in [0, 1]; a missing candidate stage
/// scores 1.
fn stage_distance(candidate: Option<&str>, gold: &str) -> f64 {
    let Some(candidate) = candidate else {
        return 1.0;
    };
    let a = tokens(candidate);
    let b = tokens(gold);
    let denom = a.len().max(b.len());
    if denom == 0 {
        0.0
    } else {
        token_edit_distance(&a, &b) as f64 / denom as f64
    }
}

/// Extracts a section body leniently: first matched tag pair regardless of
/// the global section order.
fn extract_section(text: &str, name: &str) -> Option<String> {
    let open = open_tag(name);
    let close = close_tag(name);
    let o = text.find(&open)?;
    let after = o + open.len();
    let c = text[after..].find(&close)? + after;
    Some(strip_block(&text[after..c]))
}

/// Counts structural violations in a raw candidate document: each missing
/// tag token, each out-of-order tag, a wrong reasoning step count, a
/// missing or unparseable Answer line.
fn structure_violations(text: &str) -> usize {
    let mut violations = 0usize;
    let mut positions: Vec<Option<usize>> = Vec::with_capacity(8);
    for name in SECTION_TAGS {
        for tag in [open_tag(name), close_tag(name)] {
            let p = text.find(&tag);
            if p.is_none() {
                violations += 1;
            }
            positions.push(p);
        }
    }
    let mut prev = None;
    for p in positions.into_iter().flatten() {
        match prev {
            Some(q) if p <= q => violations += 1,
            _ => prev = Some(p),
        }
    }
    if let Some(rn) = extract_section(text, "REASONING") {
        let starts = rn.lines().filter(|l| parse_step_start(l).is_some()).count();
        if starts != 4 {
            violations += 1;
        }
    }
    if let Some(cc) = extract_section(text, "CONCLUSION") {
        let answer = cc
            .lines()
            .rev()
            .find_map(|l| l.trim_start().strip_prefix("Answer:"));
        match answer {
            None => violations += 1,
            Some(rest) => {
                if rest.trim().parse::<VerdictLabel>().is_err() {
                    violations += 1;
                }
            }
        }
    }
    violations
}

/// Format score components: a structural violation count plus per-stage
/// normalized token edit distances against the gold document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormatScore {
    pub structure: f64,
    pub sm: f64,
    pub cp: f64,
    pub rn: f64,
    pub cc: f64,
}

impl FormatScore {
    pub fn total(&self) -> f64 {
        self.structure + self.sm + self.cp + self.rn + self.cc
    }
}

/// Scores a raw candidate document against a gold one. Candidates that do
/// not parse still score: absent stages count 1.0 each and the structure
/// component counts the violations.
pub fn format_score(candidate: &str, gold: &CotDetail) -> FormatScore {
    let dist = |name: &str, stage: Stage| {
        stage_distance(
            extract_section(candidate, name).as_deref(),
            &gold.stage_text(stage),
        )
    };
    FormatScore {
        structure: structure_violations(candidate) as f64,
        sm: dist("SUMMARY", Stage::Sm),
        cp: dist("CAPTION", Stage::Cp),
        rn: dist("REASONING", Stage::Rn),
        cc: dist("CONCLUSION", Stage::Cc),
    }
}

/// Keyword score components for the caption, reasoning, and conclusion
/// stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeywordScore {
    pub cp: f64,
    pub rn: f64,
    pub cc: f64,
}

impl KeywordScore {
    pub fn sum(&self) -> f64 {
        self.cp + self.rn + self.cc
    }
}

/// Lexicon entries present in the text; multi-token entries must appear as
/// contiguous token runs.
fn lexicon_keywords(text: &str, lexicon: &[&str]) -> BTreeSet<String> {
    let toks = tokens(text);
    lexicon
        .iter()
        .filter(|entry| {
            let needle = tokens(entry);
            !needle.is_empty()
                && (toks.len() >= needle.len()
                    && toks.windows(needle.len()).any(|w| w == needle.as_slice()))
        })
        .map(|e| e.to_string())
        .collect()
}

/// 1 − Jaccard similarity of the lexicon keyword sets; two empty sets count
/// as identical (score 0).
fn keyword_distance(candidate: Option<&str>, gold: &str, lexicon: &[&str]) -> f64 {
    let a = candidate
        .map(|c| lexicon_keywords(c, lexicon))
        .unwrap_or_default();
    let b = lexicon_keywords(gold, lexicon);
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(&b).count() as f64;
    let union = a.union(&b).count() as f64;
    1.0 - inter / union
}

/// Keyword scores between two parsed documents over the caption, reasoning,
/// and conclusion stages. An empty lexicon scores 0 everywhere.
pub fn keyword_score(candidate: &CotDetail, gold: &CotDetail, lexicon: &[&str]) -> KeywordScore {
    let stage = |st: Stage| {
        keyword_distance(
            Some(candidate.stage_text(st).as_str()),
            &gold.stage_text(st),
            lexicon,
        )
    };
    KeywordScore {
        cp: stage(Stage::Cp),
        rn: stage(Stage::Rn),
        cc: stage(Stage::Cc),
    }
}

/// Full score decomposition of a candidate against a gold document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotScores {
    pub format_structure: f64,
    pub format_sm: f64,
    pub format_cp: f64,
    pub format_rn: f64,
    pub format_cc: f64,
    pub format_total: f64,
    pub keyword_cp: f64,
    pub keyword_rn: f64,
    pub keyword_cc: f64,
    pub total: f64,
}

/// Aggregate score of a raw candidate document: format components plus
/// keyword components. Zero iff the candidate reproduces the gold document
/// up to tokenization.
pub fn cot_total_score(candidate: &str, gold: &CotDetail, lexicon: &[&str]) -> CotScores {
    let f = format_score(candidate, gold);
    let kw = |name: &str, stage: Stage| {
        keyword_distance(
            extract_section(candidate, name).as_deref(),
            &gold.stage_text(stage),
            lexicon,
        )
    };
    let keyword_cp = kw("CAPTION", Stage::Cp);
    let keyword_rn = kw("REASONING", Stage::Rn);
    let keyword_cc = kw("CONCLUSION", Stage::Cc);
    let format_total = f.total();
    CotScores {
        format_structure: f.structure,
        format_sm: f.sm,
        format_cp: f.cp,
        format_rn: f.rn,
        format_cc: f.cc,
        format_total,
        keyword_cp,
        keyword_rn,
        keyword_cc,
        total: format_total + keyword_cp + keyword_rn + keyword_cc,
    }
}
