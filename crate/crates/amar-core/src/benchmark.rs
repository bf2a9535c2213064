//! Benchmark data model: items with reference chain-of-thought steps and
//! grounding tags, dataset validation, statistics, painting filtering, and
//! model-backed item construction.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ModelRequest, Purpose, RequestPart};
use crate::error::{AmarError, Result};
use crate::ingest::tokenize;
use crate::planner::{ArtworkMetadata, ArtworkRecord, EvidenceType, ValidationReport, PARSE_RETRIES};

/// Marker sentence of the construction prompt; the item payload must follow
/// this output instruction.
pub const QA_OUTPUT_MARKER: &str = "exactly one benchmark item as JSON";

/// Difficulty label of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    High,
    Medium,
}

impl Difficulty {
    pub fn label(self) -> &'static str {
        match self {
            Difficulty::High => "High",
            Difficulty::Medium => "Medium",
        }
    }
}

/// One reference reasoning step with its single grounding tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotStep {
    pub text: String,
    pub grounding: EvidenceType,
}

/// One benchmark record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub question: String,
    pub reference_answer: String,
    pub cot_steps: Vec<CotStep>,
    pub evidence_types: BTreeSet<EvidenceType>,
    pub difficulty: Difficulty,
    pub planning_complexity: String,
    pub painting_id: String,
    pub image_path: String,
    pub metadata: ArtworkMetadata,
    pub description: String,
}

impl BenchmarkItem {
    /// The artwork this item asks about, in pipeline form.
    pub fn artwork(&self) -> ArtworkRecord {
        ArtworkRecord {
            painting_id: self.painting_id.clone(),
            image_ref: if self.image_path.trim().is_empty() {
                None
            } else {
                Some(self.image_path.clone())
            },
            metadata: self.metadata.clone(),
            description: if self.description.trim().is_empty() {
                None
            } else {
                Some(self.description.clone())
            },
        }
    }
}

/// Load a dataset file: one item per JSON line.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchmarkItem>> {
    let file = File::open(path).map_err(|e| AmarError::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AmarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(&line).map_err(|e| AmarError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        items.push(item);
    }
    Ok(items)
}

pub fn save_dataset(items: &[BenchmarkItem], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| AmarError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| AmarError::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| AmarError::io(path, e))?;
    }
    out.flush().map_err(|e| AmarError::io(path, e))?;
    Ok(())
}

/// Structural validation constraints for items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaConstraints {
    pub allowed_tags: BTreeSet<EvidenceType>,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for QaConstraints {
    fn default() -> Self {
        QaConstraints {
            allowed_tags: EvidenceType::ALL.into_iter().collect(),
            min_steps: 4,
            max_steps: 5,
        }
    }
}

/// Check one item: tags within the allowed set, step count within bounds,
/// `evidence_types` consistent with the tags actually used, non-empty fields.
/// Violations are data, not errors.
pub fn validate_item(item: &BenchmarkItem, constraints: &QaConstraints) -> ValidationReport {
    let mut report = ValidationReport::default();
    if item.question.trim().is_empty() {
        report.push("question is empty");
    }
    if item.reference_answer.trim().is_empty() {
        report.push("reference_answer is empty");
    }
    if item.painting_id.trim().is_empty() {
        report.push("painting_id is empty");
    }
    if item.cot_steps.is_empty() {
        report.push("cot_steps is empty");
    }
    let t = item.cot_steps.len();
    if t < constraints.min_steps {
        report.push(format!("T={} < {}", t, constraints.min_steps));
    }
    if t > constraints.max_steps {
        report.push(format!("T={} > {}", t, constraints.max_steps));
    }
    let mut used = BTreeSet::new();
    for (i, step) in item.cot_steps.iter().enumerate() {
        if step.text.trim().is_empty() {
            report.push(format!("step {} has empty text", i + 1));
        }
        if !constraints.allowed_tags.contains(&step.grounding) {
            report.push(format!(
                "step {} uses disallowed tag {}",
                i + 1,
                step.grounding.label()
            ));
        }
        used.insert(step.grounding);
    }
    if used != item.evidence_types {
        let missing: Vec<&str> = used
            .difference(&item.evidence_types)
            .map(|e| e.label())
            .collect();
        let extra: Vec<&str> = item
            .evidence_types
            .difference(&used)
            .map(|e| e.label())
            .collect();
        report.push(format!(
            "evidence_types inconsistent with used tags (missing: [{}], unused: [{}])",
            missing.join(", "),
            extra.join(", ")
        ));
    }
    report
}

/// min / max / mean triple. Means are reported to one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleStat {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

fn triple(values: &[usize]) -> TripleStat {
    let min = *values.iter().min().expect("non-empty");
    let max = *values.iter().max().expect("non-empty");
    let mean = values.iter().sum::<usize>() as f64 / values.len() as f64;
    TripleStat {
        min,
        max,
        mean: (mean * 10.0).round() / 10.0,
    }
}

/// Dataset statistics. Lengths are word counts under whitespace tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_questions: usize,
    pub n_paintings: usize,
    pub difficulty_high: usize,
    pub difficulty_medium: usize,
    pub multi_hop: usize,
    pub steps: TripleStat,
    pub question_words: TripleStat,
    pub answer_words: TripleStat,
}

/// Compute dataset statistics. Paintings are counted as distinct ids.
pub fn compute_stats(items: &[BenchmarkItem]) -> Result<DatasetStats> {
    if items.is_empty() {
        return Err(AmarError::EmptyDataset);
    }
    let paintings: BTreeSet<&str> = items.iter().map(|i| i.painting_id.as_str()).collect();
    let steps: Vec<usize> = items.iter().map(|i| i.cot_steps.len()).collect();
    let question_words: Vec<usize> = items.iter().map(|i| tokenize(&i.question).len()).collect();
    let answer_words: Vec<usize> = items
        .iter()
        .map(|i| tokenize(&i.reference_answer).len())
        .collect();
    Ok(DatasetStats {
        n_questions: items.len(),
        n_paintings: paintings.len(),
        difficulty_high: items.iter().filter(|i| i.difficulty == Difficulty::High).count(),
        difficulty_medium: items
            .iter()
            .filter(|i| i.difficulty == Difficulty::Medium)
            .count(),
        multi_hop: items
            .iter()
            .filter(|i| i.planning_complexity == "multi-hop")
            .count(),
        steps: triple(&steps),
        question_words: triple(&question_words),
        answer_words: triple(&answer_words),
    })
}

/// Painting filter thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_desc_words: usize,
    /// At least one must appear in the description (case-insensitive).
    pub required_keywords: Vec<String>,
    /// Every listed perspective must appear as a `name:` section marker
    /// (case-insensitive).
    pub required_perspectives: Vec<String>,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_desc_words: 100,
            required_keywords: ["symbolism", "depiction", "context", "meaning"]
                .map(String::from)
                .to_vec(),
            required_perspectives: ["content", "context"].map(String::from).to_vec(),
        }
    }
}

/// Does one record pass the filter? All metadata fields non-empty, the
/// description at least `min_desc_words` words (boundary inclusive), at least
/// one required keyword present, and every required perspective section
/// present.
pub fn passes_filter(record: &ArtworkRecord, thresholds: &FilterThresholds) -> bool {
    if !record.metadata.all_present() {
        return false;
    }
    let Some(description) = record.description.as_deref() else {
        return false;
    };
    if tokenize(description).len() < thresholds.min_desc_words {
        return false;
    }
    let lower = description.to_lowercase();
    if !thresholds
        .required_keywords
        .iter()
        .any(|k| lower.contains(&k.to_lowercase()))
    {
        return false;
    }
    thresholds
        .required_perspectives
        .iter()
        .all(|p| lower.contains(&format!("{}:", p.to_lowercase())))
}

/// Keep the records that pass the filter.
pub fn filter_paintings(
    records: &[ArtworkRecord],
    thresholds: &FilterThresholds,
) -> Vec<ArtworkRecord> {
    records
        .iter()
        .filter(|r| passes_filter(r, thresholds))
        .cloned()
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QaWire {
    question: String,
    reference_answer: String,
    cot_steps: Vec<CotStepWire>,
    evidence_types: Vec<String>,
    difficulty: String,
    planning_complexity: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CotStepWire {
    text: String,
    grounding: String,
}

fn parse_qa_payload(raw: &str, record: &ArtworkRecord) -> Result<BenchmarkItem> {
    let wire: QaWire =
        serde_json::from_str(raw.trim()).map_err(|e| AmarError::MalformedModelOutput {
            expected: "benchmark item",
            detail: e.to_string(),
        })?;
    let mut cot_steps = Vec::with_capacity(wire.cot_steps.len());
    for (i, step) in wire.cot_steps.into_iter().enumerate() {
        let grounding = EvidenceType::parse(&step.grounding).map_err(|_| {
            AmarError::UnknownEvidenceLabel {
                step: i + 1,
                label: step.grounding.clone(),
            }
        })?;
        cot_steps.push(CotStep {
            text: step.text,
            grounding,
        });
    }
    let mut evidence_types = BTreeSet::new();
    for label in &wire.evidence_types {
        evidence_types.insert(EvidenceType::parse(label)?);
    }
    let difficulty = match wire.difficulty.as_str() {
        "High" => Difficulty::High,
        "Medium" => Difficulty::Medium,
        other => {
            return Err(AmarError::MalformedModelOutput {
                expected: "benchmark item",
                detail: format!("unknown difficulty `{other}`"),
            })
        }
    };
    Ok(BenchmarkItem {
        question: wire.question,
        reference_answer: wire.reference_answer,
        cot_steps,
        evidence_types,
        difficulty,
        planning_complexity: wire.planning_complexity,
        painting_id: record.painting_id.clone(),
        image_path: record.image_ref.clone().unwrap_or_default(),
        metadata: record.metadata.clone(),
        description: record.description.clone().unwrap_or_default(),
    })
}

/// The construction request: image (when present), metadata, the formatted
/// description, and the construction constraints.
pub fn build_qa_request(record: &ArtworkRecord, constraints: &QaConstraints) -> ModelRequest {
    let tags = constraints
        .allowed_tags
        .iter()
        .map(|e| e.label())
        .collect::<Vec<_>>()
        .join(", ");
    let prompt = format!(
        "You construct a reasoning-intensive question-answer pair about the painting below.\n\
         Constraints:\n\
         1. The question must require multi-step reasoning; no direct factual question \
         answerable from metadata alone.\n\
         2. The answer must be fully supported by the provided metadata, description, and \
         visible content.\n\
         3. Each chain-of-thought step carries exactly one grounding tag from: {tags}.\n\
         4. Difficulty and planning-complexity labels must be consistent with the number of \
         steps ({}..={}) and evidence types used.\n\
         5. Vary the question phrasing; avoid template-like wording.\n\
         Artwork metadata:\n{}\n\
         Description:\n{}\n\
         Output {QA_OUTPUT_MARKER} of the form {{\"question\":\"...\",\
         \"reference_answer\":\"...\",\"cot_steps\":[{{\"text\":\"...\",\
         \"grounding\":\"Visual\"}}],\"evidence_types\":[\"...\"],\"difficulty\":\
         \"High\",\"planning_complexity\":\"multi-hop\"}}.",
        constraints.min_steps,
        constraints.max_steps,
        record.metadata.prompt_block(),
        record.description.as_deref().unwrap_or_default(),
    );
    let mut parts = Vec::new();
    if let Some(image) = record.image_ref.as_deref().filter(|r| !r.trim().is_empty()) {
        parts.push(RequestPart::ImageRef(image.to_string()));
    }
    parts.push(RequestPart::Text(prompt));
    ModelRequest {
        purpose: Purpose::Generate,
        parts,
    }
}

/// Construct one benchmark item for a filtered painting record. Off-spec
/// model outputs are discarded and retried a bounded number of times.
pub fn construct_qa(
    record: &ArtworkRecord,
    backend: &dyn Backend,
    constraints: &QaConstraints,
    thresholds: &FilterThresholds,
) -> Result<BenchmarkItem> {
    if !passes_filter(record, thresholds) {
        return Err(AmarError::FilterPrecondition(record.painting_id.clone()));
    }
    let request = build_qa_request(record, constraints);
    for _ in 0..=PARSE_RETRIES {
        let raw = backend.complete(&request)?;
        let Ok(item) = parse_qa_payload(&raw, record) else {
            continue;
        };
        if validate_item(&item, constraints).is_valid() {
            return Ok(item);
        }
    }
    Err(AmarError::ConstructionExhausted(PARSE_RETRIES + 1))
}
