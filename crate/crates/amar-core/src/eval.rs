//! Evaluation: lexical overlap metrics, the judged 1-5 rubric over five
//! dimensions, and report aggregation.
//!
//! `bleu_n` is sentence-level modified n-gram precision at one order with
//! clipping against the reference multiset maximum, times the brevity
//! penalty, without smoothing. `rouge_l` is the LCS F-measure with beta = 1.
//! The judge model must differ from the generation model; which dimensions
//! apply depends on the pipeline mode (retrieval dimensions need retrieval,
//! reasoning dimensions need a chain-of-thought contract, i.e. the
//! no-retrieval and fully planned modes).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ModelRequest, Purpose};
use crate::benchmark::BenchmarkItem;
use crate::error::{AmarError, Result};
use crate::generation::{PipelineMode, PromptRecord, RunRecord};
use crate::ingest::tokenize;
use crate::planner::PARSE_RETRIES;

/// Marker line prefix the judge prompt uses to list the dimensions to score.
pub const JUDGE_DIMENSIONS_MARKER: &str = "Score these dimensions from 1 to 5: ";

/// Lexical overlap scores for one candidate/reference pair, in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapScores {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
}

impl OverlapScores {
    pub fn compute(candidate: &str, references: &[String]) -> Result<OverlapScores> {
        Ok(OverlapScores {
            bleu_1: bleu_n(candidate, references, 1)?,
            bleu_2: bleu_n(candidate, references, 2)?,
            bleu_3: bleu_n(candidate, references, 3)?,
            bleu_4: bleu_n(candidate, references, 4)?,
            rouge_l: rouge_l(
                candidate,
                references.first().map(String::as_str).unwrap_or_default(),
            )?,
        })
    }

    pub fn bleu(&self, n: usize) -> Option<f64> {
        match n {
            1 => Some(self.bleu_1),
            2 => Some(self.bleu_2),
            3 => Some(self.bleu_3),
            4 => Some(self.bleu_4),
            _ => None,
        }
    }
}

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<String> = window.iter().map(|t| t.to_string()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU at a single order n: modified n-gram precision (candidate
/// counts clipped by the per-reference maximum) times the brevity penalty
/// `exp(1 - r/c)` when the candidate is shorter than the reference. With
/// several references, the brevity reference length is the one closest to
/// the candidate length (ties toward the shorter).
pub fn bleu_n(candidate: &str, references: &[String], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(AmarError::InvalidBleuOrder(n));
    }
    let cand_tokens = tokenize(candidate);
    if cand_tokens.is_empty() {
        return Err(AmarError::EmptyCandidateText);
    }
    if references.is_empty() || references.iter().all(|r| tokenize(r).is_empty()) {
        return Err(AmarError::EmptyMetricInput);
    }
    let total = cand_tokens.len().saturating_sub(n - 1);
    if total == 0 {
        return Ok(0.0);
    }
    let cand_counts = ngram_counts(&cand_tokens, n);
    let mut max_ref_counts: HashMap<Vec<String>, usize> = HashMap::new();
    for reference in references {
        let tokens = tokenize(reference);
        for (gram, count) in ngram_counts(&tokens, n) {
            let slot = max_ref_counts.entry(gram).or_insert(0);
            *slot = (*slot).max(count);
        }
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(gram, count)| (*count).min(*max_ref_counts.get(gram).unwrap_or(&0)))
        .sum();
    let precision = clipped as f64 / total as f64;

    let c = cand_tokens.len();
    let r = references
        .iter()
        .map(|reference| tokenize(reference).len())
        .filter(|len| *len > 0)
        .min_by_key(|len| (len.abs_diff(c), *len))
        .expect("non-empty reference exists");
    let brevity = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(precision * brevity)
}

fn lcs_length(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ta in a {
        for (j, tb) in b.iter().enumerate() {
            cur[j + 1] = if ta == tb {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure: P = LCS/|candidate|, R = LCS/|reference|,
/// F = 2PR/(P+R), and 0 when the LCS is empty.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64> {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return Err(AmarError::EmptyMetricInput);
    }
    let lcs = lcs_length(&cand, &reference);
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Judged scores on the 1-5 scale; a dimension is absent when it does not
/// apply to the run's mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_completeness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faithfulness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgraph_relevance: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_coverage: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_quality: Option<u8>,
}

impl JudgeScores {
    pub fn get(&self, dimension: &str) -> Option<u8> {
        match dimension {
            "step_completeness" => self.step_completeness,
            "faithfulness" => self.faithfulness,
            "subgraph_relevance" => self.subgraph_relevance,
            "evidence_coverage" => self.evidence_coverage,
            "answer_quality" => self.answer_quality,
            _ => None,
        }
    }

    fn set(&mut self, dimension: &str, value: u8) {
        match dimension {
            "step_completeness" => self.step_completeness = Some(value),
            "faithfulness" => self.faithfulness = Some(value),
            "subgraph_relevance" => self.subgraph_relevance = Some(value),
            "evidence_coverage" => self.evidence_coverage = Some(value),
            "answer_quality" => self.answer_quality = Some(value),
            _ => {}
        }
    }
}

pub const JUDGE_DIMENSIONS: [&str; 5] = [
    "step_completeness",
    "faithfulness",
    "subgraph_relevance",
    "evidence_coverage",
    "answer_quality",
];

/// Which dimension families apply to a mode: (reasoning, retrieval, answer).
pub fn applicable_dimensions(mode: PipelineMode) -> (bool, bool, bool) {
    match mode {
        PipelineMode::MllmCot => (true, false, true),
        PipelineMode::StaticRetrieval | PipelineMode::TextOnlyPlanner => (false, true, true),
        PipelineMode::Amar => (true, true, true),
    }
}

fn render_answer_steps(record: &RunRecord) -> String {
    record
        .answer
        .steps
        .iter()
        .map(|s| format!("{}. [{}] {}", s.index, s.grounding.label(), s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn judge_group(
    backend: &dyn Backend,
    dimensions: &[&str],
    body: String,
    scores: &mut JudgeScores,
    prompts: &mut Vec<PromptRecord>,
) -> Result<()> {
    let prompt = format!(
        "{body}\n{JUDGE_DIMENSIONS_MARKER}{}\nOutput only a JSON object mapping each \
         dimension name to an integer score.",
        dimensions.join(", ")
    );
    let request = ModelRequest::text(Purpose::Judge, prompt);
    prompts.push(PromptRecord::from_request("judge", &request));
    let mut detail = String::new();
    for _ in 0..=PARSE_RETRIES {
        let raw = backend.complete(&request)?;
        match parse_judge_scores(&raw, dimensions) {
            Ok(parsed) => {
                for (dimension, value) in parsed {
                    scores.set(&dimension, value);
                }
                return Ok(());
            }
            Err(e) => detail = e.to_string(),
        }
    }
    Err(AmarError::UnparseableAfterRetries {
        expected: "judge scores",
        attempts: PARSE_RETRIES + 1,
        detail,
    })
}

fn parse_judge_scores(raw: &str, dimensions: &[&str]) -> Result<Vec<(String, u8)>> {
    let map: BTreeMap<String, i64> =
        serde_json::from_str(raw.trim()).map_err(|e| AmarError::MalformedModelOutput {
            expected: "judge scores",
            detail: e.to_string(),
        })?;
    let mut out = Vec::new();
    for dimension in dimensions {
        let value = *map
            .get(*dimension)
            .ok_or_else(|| AmarError::MalformedModelOutput {
                expected: "judge scores",
                detail: format!("missing dimension `{dimension}`"),
            })?;
        if !(1..=5).contains(&value) {
            return Err(AmarError::MalformedModelOutput {
                expected: "judge scores",
                detail: format!("{dimension}={value} outside 1..=5"),
            });
        }
        out.push((dimension.to_string(), value as u8));
    }
    Ok(out)
}

/// Judge one run against its benchmark item. One call per applicable
/// dimension group; the judge model must differ from the generation model.
pub fn judge(
    item: &BenchmarkItem,
    record: &RunRecord,
    judge_backend: &dyn Backend,
) -> Result<(JudgeScores, Vec<PromptRecord>)> {
    let generator = record
        .backends
        .get("generator")
        .map(String::as_str)
        .unwrap_or_default();
    if judge_backend.model_id() == generator {
        return Err(AmarError::JudgeEqualsGenerator(
            judge_backend.model_id().to_string(),
        ));
    }
    let (reasoning, retrieval, answer) = applicable_dimensions(record.mode);
    let mut scores = JudgeScores::default();
    let mut prompts = Vec::new();

    if reasoning {
        let reference_cot = item
            .cot_steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. [{}] {}", i + 1, s.grounding.label(), s.text))
            .collect::<Vec<_>>()
            .join("\n");
        let body = format!(
            "Judge the reasoning of the model answer against the reference chain of thought.\n\
             Question: {}\nReference chain of thought:\n{reference_cot}\n\
             Model answer steps:\n{}",
            item.question,
            render_answer_steps(record)
        );
        judge_group(
            judge_backend,
            &["step_completeness", "faithfulness"],
            body,
            &mut scores,
            &mut prompts,
        )?;
    }
    if retrieval {
        let context = record
            .final_context
            .as_ref()
            .map(|c| c.rendered_text.clone())
            .unwrap_or_default();
        let tags = item
            .evidence_types
            .iter()
            .map(|e| e.label())
            .collect::<Vec<_>>()
            .join(", ");
        let body = format!(
            "Judge the retrieved context for this question.\nQuestion: {}\n\
             Required evidence types: {tags}\nRetrieved context:\n{context}",
            item.question
        );
        judge_group(
            judge_backend,
            &["subgraph_relevance", "evidence_coverage"],
            body,
            &mut scores,
            &mut prompts,
        )?;
    }
    if answer {
        let body = format!(
            "Judge the final answer against the reference.\nQuestion: {}\n\
             Reference answer: {}\nModel answer: {}",
            item.question, item.reference_answer, record.answer.final_text
        );
        judge_group(
            judge_backend,
            &["answer_quality"],
            body,
            &mut scores,
            &mut prompts,
        )?;
    }
    Ok((scores, prompts))
}

/// One evaluated (item, run) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub item_id: String,
    pub mode: PipelineMode,
    pub overlap: OverlapScores,
    pub judge: JudgeScores,
    pub judge_prompts: Vec<PromptRecord>,
}

/// Per-mode means. Overlap columns are scaled x100 for display; judge columns
/// stay on the 1-5 scale. All means are rounded to two decimals and computed
/// over present values only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub n: usize,
    pub bleu_1: Option<f64>,
    pub bleu_2: Option<f64>,
    pub bleu_3: Option<f64>,
    pub bleu_4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub step_completeness: Option<f64>,
    pub faithfulness: Option<f64>,
    pub subgraph_relevance: Option<f64>,
    pub evidence_coverage: Option<f64>,
    pub answer_quality: Option<f64>,
}

impl ModeAggregate {
    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "bleu_1" => self.bleu_1,
            "bleu_2" => self.bleu_2,
            "bleu_3" => self.bleu_3,
            "bleu_4" => self.bleu_4,
            "rouge_l" => self.rouge_l,
            "step_completeness" => self.step_completeness,
            "faithfulness" => self.faithfulness,
            "subgraph_relevance" => self.subgraph_relevance,
            "evidence_coverage" => self.evidence_coverage,
            "answer_quality" => self.answer_quality,
            _ => None,
        }
    }
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "bleu_1",
    "bleu_2",
    "bleu_3",
    "bleu_4",
    "rouge_l",
    "step_completeness",
    "faithfulness",
    "subgraph_relevance",
    "evidence_coverage",
    "answer_quality",
];

/// Aggregated evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
    pub per_mode: BTreeMap<String, ModeAggregate>,
    /// Best mode per column, among modes where the column is present.
    pub best: BTreeMap<String, String>,
    pub judge_model: String,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(round2(values.iter().sum::<f64>() / values.len() as f64))
    }
}

/// Aggregate rows into per-mode means with best-per-column marks. Rows are
/// re-ordered deterministically by (item id, mode).
pub fn aggregate(rows: Vec<EvaluationRow>, judge_model: &str) -> Result<EvaluationReport> {
    if rows.is_empty() {
        return Err(AmarError::EmptyAggregate);
    }
    let mut rows = rows;
    rows.sort_by(|a, b| a.item_id.cmp(&b.item_id).then(a.mode.cmp(&b.mode)));

    let mut per_mode: BTreeMap<String, ModeAggregate> = BTreeMap::new();
    for mode in PipelineMode::ALL {
        let mode_rows: Vec<&EvaluationRow> = rows.iter().filter(|r| r.mode == mode).collect();
        if mode_rows.is_empty() {
            continue;
        }
        let collect_overlap = |f: fn(&OverlapScores) -> f64| -> Vec<f64> {
            mode_rows.iter().map(|r| f(&r.overlap) * 100.0).collect()
        };
        let collect_judge = |name: &str| -> Vec<f64> {
            mode_rows
                .iter()
                .filter_map(|r| r.judge.get(name).map(f64::from))
                .collect()
        };
        per_mode.insert(
            mode.label().to_string(),
            ModeAggregate {
                n: mode_rows.len(),
                bleu_1: mean(&collect_overlap(|o| o.bleu_1)),
                bleu_2: mean(&collect_overlap(|o| o.bleu_2)),
                bleu_3: mean(&collect_overlap(|o| o.bleu_3)),
                bleu_4: mean(&collect_overlap(|o| o.bleu_4)),
                rouge_l: mean(&collect_overlap(|o| o.rouge_l)),
                step_completeness: mean(&collect_judge("step_completeness")),
                faithfulness: mean(&collect_judge("faithfulness")),
                subgraph_relevance: mean(&collect_judge("subgraph_relevance")),
                evidence_coverage: mean(&collect_judge("evidence_coverage")),
                answer_quality: mean(&collect_judge("answer_quality")),
            },
        );
    }
    let mut best = BTreeMap::new();
    for column in REPORT_COLUMNS {
        let winner = per_mode
            .iter()
            .filter_map(|(mode, agg)| agg.column(column).map(|v| (mode.clone(), v)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((mode, _)) = winner {
            best.insert(column.to_string(), mode);
        }
    }
    Ok(EvaluationReport {
        rows,
        per_mode,
        best,
        judge_model: judge_model.to_string(),
    })
}

/// Plain-text aligned table; `*` marks the best value per column.
pub fn render_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let headers = [
        "mode", "n", "b1", "b2", "b3", "b4", "rougeL", "stepc", "faith", "subg", "evid", "answq",
    ];
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    let mut table: Vec<Vec<String>> = vec![headers.iter().map(|h| h.to_string()).collect()];
    for (mode, agg) in &report.per_mode {
        let mut row = vec![mode.clone(), agg.n.to_string()];
        for column in REPORT_COLUMNS {
            let cell = match agg.column(column) {
                Some(v) => {
                    let mark = if report.best.get(column) == Some(mode) {
                        "*"
                    } else {
                        ""
                    };
                    format!("{v:.2}{mark}")
                }
                None => "--".to_string(),
            };
            row.push(cell);
        }
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
        table.push(row);
    }
    for row in table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:>width$}", width = widths[i]))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out.push_str(&format!("judge model: {}\n", report.judge_model));
    out
}
