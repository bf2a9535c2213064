//! Plan-constrained answer generation and the four pipeline modes, producing
//! step-wise grounded answers and a fully traceable run record.
//!
//! The retrieved context is handed to the generator as one shared evidence
//! pool; the plan governs how it is used, one answer step per plan step with
//! a matching grounding tag. A tag that diverges from the plan is recorded as
//! a grounding violation rather than rejected: evaluation needs to observe it.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{hex, BackendSet, ModelRequest, Purpose, RequestPart};
use crate::config::EngineConfig;
use crate::error::{AmarError, Result};
use crate::graph::KnowledgeGraph;
use crate::index::VectorIndex;
use crate::planner::{
    derive_retrieval_intent, generate_plan, render_plan_step_line, ArtworkRecord, EvidenceType,
    ReasoningPlan, RetrievalIntent, PARSE_RETRIES,
};
use crate::retrieval::{
    assemble_context, coarse_retrieve, rerank, CoarseCandidate, RetrievedContext, ScoredCandidate,
};

/// The four pipeline variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineMode {
    /// Direct chain-of-thought generation, no retrieval, no plan.
    #[serde(rename = "mllm-cot")]
    MllmCot,
    /// Retrieval with the raw question as the query; no plan.
    #[serde(rename = "static-retrieval")]
    StaticRetrieval,
    /// Full pipeline with a planner that never sees the image.
    #[serde(rename = "text-only-planner")]
    TextOnlyPlanner,
    /// Full pipeline with the multimodal planner.
    #[serde(rename = "amar")]
    Amar,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 4] = [
        PipelineMode::MllmCot,
        PipelineMode::StaticRetrieval,
        PipelineMode::TextOnlyPlanner,
        PipelineMode::Amar,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PipelineMode::MllmCot => "mllm-cot",
            PipelineMode::StaticRetrieval => "static-retrieval",
            PipelineMode::TextOnlyPlanner => "text-only-planner",
            PipelineMode::Amar => "amar",
        }
    }

    pub fn parse(label: &str) -> Result<PipelineMode> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.label() == label)
            .ok_or_else(|| AmarError::Invalid(format!("unknown mode `{label}`")))
    }

    pub fn uses_retrieval(self) -> bool {
        !matches!(self, PipelineMode::MllmCot)
    }

    pub fn uses_plan(self) -> bool {
        matches!(self, PipelineMode::TextOnlyPlanner | PipelineMode::Amar)
    }
}

impl std::fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One step of a generated answer, carrying exactly one grounding tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerStep {
    pub index: usize,
    pub text: String,
    pub grounding: EvidenceType,
}

/// A structured answer: ordered steps plus the synthesized final text. When
/// the model output never parsed, `parse_failure` is set, the raw text lands
/// in `final_text`, and `steps` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseAnswer {
    pub steps: Vec<AnswerStep>,
    pub final_text: String,
    #[serde(default)]
    pub parse_failure: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerWire {
    steps: Vec<AnswerStepWire>,
    #[serde(rename = "final")]
    final_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerStepWire {
    step: usize,
    text: String,
    grounding: String,
}

/// Strict parse of a step-wise answer. When `expected_steps` is given, the
/// step count must match it exactly.
pub fn parse_stepwise(raw: &str, expected_steps: Option<usize>) -> Result<StepwiseAnswer> {
    let wire: AnswerWire =
        serde_json::from_str(raw.trim()).map_err(|e| AmarError::MalformedModelOutput {
            expected: "step-wise answer",
            detail: e.to_string(),
        })?;
    if let Some(expected) = expected_steps {
        if wire.steps.len() != expected {
            return Err(AmarError::StepCountMismatch {
                expected,
                got: wire.steps.len(),
            });
        }
    }
    let mut steps = Vec::with_capacity(wire.steps.len());
    for (i, step) in wire.steps.into_iter().enumerate() {
        if step.text.trim().is_empty() {
            return Err(AmarError::EmptySubGoal { step: i + 1 });
        }
        let grounding = EvidenceType::parse(&step.grounding).map_err(|_| {
            AmarError::UnknownEvidenceLabel {
                step: i + 1,
                label: step.grounding.clone(),
            }
        })?;
        steps.push(AnswerStep {
            index: i + 1,
            text: step.text,
            grounding,
        });
    }
    Ok(StepwiseAnswer {
        steps,
        final_text: wire.final_text,
        parse_failure: false,
    })
}

/// Deterministic generation prompt for a mode. Inputs must be consistent with
/// the mode: planned modes need a plan, retrieval modes a context, and the
/// no-retrieval mode must not receive either.
pub fn build_generation_prompt(
    artwork: &ArtworkRecord,
    question: &str,
    context: Option<&RetrievedContext>,
    plan: Option<&ReasoningPlan>,
    mode: PipelineMode,
) -> Result<String> {
    let mismatch = |detail: &str| AmarError::ModeInputMismatch {
        mode: mode.label().to_string(),
        detail: detail.to_string(),
    };
    match mode {
        PipelineMode::MllmCot => {
            if context.is_some() || plan.is_some() {
                return Err(mismatch("no context or plan allowed"));
            }
        }
        PipelineMode::StaticRetrieval => {
            if context.is_none() {
                return Err(mismatch("context required"));
            }
            if plan.is_some() {
                return Err(mismatch("no plan allowed"));
            }
        }
        PipelineMode::TextOnlyPlanner | PipelineMode::Amar => {
            if context.is_none() || plan.is_none() {
                return Err(mismatch("plan and context required"));
            }
        }
    }
    let mut prompt = String::from("You answer a question about an artwork.\n");
    if mode == PipelineMode::MllmCot {
        prompt.push_str("Reason step by step before giving the final answer.\n");
    }
    prompt.push_str(&format!("Question: {question}\n"));
    prompt.push_str("Artwork metadata:\n");
    prompt.push_str(&artwork.metadata.prompt_block());
    prompt.push('\n');
    if let Some(context) = context {
        prompt.push_str("Evidence:\n");
        prompt.push_str(&context.rendered_text);
        prompt.push('\n');
    }
    if let Some(plan) = plan {
        prompt.push_str(
            "Reasoning plan. Produce one answer step per plan step, in order, grounded in \
             that step's evidence type:\n",
        );
        for step in &plan.steps {
            prompt.push_str(&render_plan_step_line(step));
            prompt.push('\n');
        }
    }
    prompt.push_str(&format!(
        "Output only a JSON object of the form \
         {{\"steps\":[{{\"step\":1,\"text\":\"...\",\"grounding\":\"Visual\"}}],\"final\":\"...\"}} \
         with exactly one grounding tag per step, chosen from: {}.",
        EvidenceType::labels_joined()
    ));
    Ok(prompt)
}

/// One prompt trace entry of a run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub stage: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl PromptRecord {
    pub fn from_request(stage: &str, request: &ModelRequest) -> PromptRecord {
        PromptRecord {
            stage: stage.to_string(),
            text: request.text_joined(),
            image: request.image_ref().map(str::to_string),
        }
    }
}

/// Complete trace of one pipeline execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: PipelineMode,
    pub artwork: ArtworkRecord,
    pub question: String,
    pub plan: Option<ReasoningPlan>,
    pub intent: Option<RetrievalIntent>,
    pub coarse_candidates: Vec<CoarseCandidate>,
    /// Every coarse candidate with its raw, normalized, and fused scores, in
    /// final rank order. The per-family softmax sums hold over this batch.
    pub reranked_batch: Vec<ScoredCandidate>,
    pub final_context: Option<RetrievedContext>,
    pub generation_prompt: String,
    pub answer: StepwiseAnswer,
    pub grounding_violations: Vec<String>,
    pub prompts: Vec<PromptRecord>,
    pub timings_ms: BTreeMap<String, u64>,
    pub backends: BTreeMap<String, String>,
    pub seed: u64,
    pub config: EngineConfig,
}

impl RunRecord {
    /// Mode-consistency check: which optional stages must be present or
    /// absent for this record's mode. Violations are returned as data.
    pub fn mode_violations(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut expect = |name: &str, present: bool, wanted: bool| {
            if present != wanted {
                violations.push(format!(
                    "{}: {name} {}",
                    self.mode.label(),
                    if wanted { "missing" } else { "unexpectedly present" }
                ));
            }
        };
        let mode = self.mode;
        expect("plan", self.plan.is_some(), mode.uses_plan());
        expect("intent", self.intent.is_some(), mode.uses_retrieval());
        expect(
            "coarse_candidates",
            !self.coarse_candidates.is_empty(),
            mode.uses_retrieval(),
        );
        expect(
            "reranked_batch",
            !self.reranked_batch.is_empty(),
            mode.uses_retrieval(),
        );
        expect(
            "final_context",
            self.final_context.is_some(),
            mode.uses_retrieval(),
        );
        violations
    }
}

fn run_id_for(artwork: &ArtworkRecord, question: &str, mode: PipelineMode, config: &EngineConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(artwork.painting_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(question.as_bytes());
    hasher.update([0x1f]);
    hasher.update(mode.label().as_bytes());
    hasher.update([0x1f]);
    hasher.update(config.effective_seed().to_le_bytes());
    hasher.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    format!("r{}", &hex(&hasher.finalize())[..16])
}

fn generate_answer(
    prompt: &str,
    artwork: &ArtworkRecord,
    expected_steps: Option<usize>,
    backends: &BackendSet,
) -> Result<(StepwiseAnswer, ModelRequest)> {
    let mut parts = Vec::new();
    if let Some(image) = artwork.image_ref.as_deref().filter(|r| !r.trim().is_empty()) {
        parts.push(RequestPart::ImageRef(image.to_string()));
    }
    parts.push(RequestPart::Text(prompt.to_string()));
    let request = ModelRequest {
        purpose: Purpose::Generate,
        parts,
    };
    let mut last_raw = String::new();
    for _ in 0..=PARSE_RETRIES {
        last_raw = backends.generator.complete(&request)?;
        if let Ok(answer) = parse_stepwise(&last_raw, expected_steps) {
            return Ok((answer, request));
        }
    }
    // keep the row: raw text becomes the final answer, flagged
    Ok((
        StepwiseAnswer {
            steps: Vec::new(),
            final_text: last_raw,
            parse_failure: true,
        },
        request,
    ))
}

/// Execute one pipeline run and assemble the full trace.
pub fn run_pipeline(
    artwork: &ArtworkRecord,
    question: &str,
    graph: Option<&KnowledgeGraph>,
    index: Option<&VectorIndex>,
    config: &EngineConfig,
    mode: PipelineMode,
    backends: &BackendSet,
) -> Result<RunRecord> {
    artwork.validate()?;
    config.validate()?;
    let deterministic = backends.is_deterministic();
    let mut timings: BTreeMap<String, u64> = BTreeMap::new();
    let mut record_timing = |name: &str, started: Instant| {
        let elapsed = if deterministic {
            0
        } else {
            started.elapsed().as_millis() as u64
        };
        timings.insert(name.to_string(), elapsed);
    };
    let mut prompts: Vec<PromptRecord> = Vec::new();

    // planning
    let plan = if mode.uses_plan() {
        let started = Instant::now();
        let multimodal = mode == PipelineMode::Amar;
        let (plan, request) = generate_plan(artwork, question, backends.planner.as_ref(), multimodal)
            .map_err(|e| e.at_stage("plan"))?;
        record_timing("plan", started);
        prompts.push(PromptRecord::from_request("plan", &request));
        Some(plan)
    } else {
        None
    };

    // retrieval intent
    let intent = match (&plan, mode) {
        (Some(plan), _) => Some(derive_retrieval_intent(plan, artwork)),
        (None, PipelineMode::StaticRetrieval) => Some(RetrievalIntent {
            text: question.to_string(),
            evidence_mix: Vec::new(),
        }),
        (None, _) => None,
    };

    // retrieval (performed once per run)
    let (coarse, reranked_batch, context) = if mode.uses_retrieval() {
        let graph = graph.ok_or(AmarError::MissingResource {
            mode: mode.label().to_string(),
            resource: "a knowledge graph",
        })?;
        let index = index.ok_or(AmarError::MissingResource {
            mode: mode.label().to_string(),
            resource: "a vector index",
        })?;
        let intent = intent.as_ref().expect("retrieval modes carry an intent");
        let started = Instant::now();
        let coarse = coarse_retrieve(intent, index, backends.embedder.as_ref(), config.retrieval.k_coarse)
            .map_err(|e| e.at_stage("coarse_retrieve"))?;
        record_timing("coarse_retrieve", started);

        let started = Instant::now();
        // the text-only variant stays imageless end to end; the other
        // retrieval modes share the same scoring machinery
        let with_image = mode != PipelineMode::TextOnlyPlanner;
        let outcome = rerank(
            &coarse,
            artwork,
            intent,
            graph,
            index,
            backends,
            &config.retrieval,
            with_image,
        )
        .map_err(|e| e.at_stage("rerank"))?;
        record_timing("rerank", started);
        for request in &outcome.scorer_requests {
            prompts.push(PromptRecord::from_request("score", request));
        }

        let started = Instant::now();
        let context = assemble_context(&outcome.ranked, graph, config.retrieval.expansion_hops)
            .map_err(|e| e.at_stage("assemble_context"))?;
        record_timing("assemble_context", started);
        (coarse, outcome.scored_batch, Some(context))
    } else {
        (Vec::new(), Vec::new(), None)
    };

    // generation
    let prompt = build_generation_prompt(artwork, question, context.as_ref(), plan.as_ref(), mode)
        .map_err(|e| e.at_stage("generate"))?;
    let expected_steps = plan.as_ref().map(|p| p.len());
    let started = Instant::now();
    let (answer, request) = generate_answer(&prompt, artwork, expected_steps, backends)
        .map_err(|e| e.at_stage("generate"))?;
    record_timing("generate", started);
    prompts.push(PromptRecord::from_request("generate", &request));

    // grounding tags must follow the plan; divergence is recorded, not fatal
    let mut grounding_violations = Vec::new();
    if let Some(plan) = &plan {
        if !answer.parse_failure {
            for (plan_step, answer_step) in plan.steps.iter().zip(&answer.steps) {
                if plan_step.evidence_type != answer_step.grounding {
                    grounding_violations.push(format!(
                        "step {}: plan requires {}, answer grounded in {}",
                        plan_step.index,
                        plan_step.evidence_type.label(),
                        answer_step.grounding.label()
                    ));
                }
            }
        }
    }

    let mut backend_ids = BTreeMap::new();
    backend_ids.insert("planner".to_string(), backends.planner.model_id().to_string());
    backend_ids.insert("generator".to_string(), backends.generator.model_id().to_string());
    backend_ids.insert("embedder".to_string(), backends.embedder.model_id().to_string());
    backend_ids.insert("scorer".to_string(), backends.scorer.model_id().to_string());
    backend_ids.insert("judge".to_string(), backends.judge.model_id().to_string());

    let record = RunRecord {
        run_id: run_id_for(artwork, question, mode, config),
        mode,
        artwork: artwork.clone(),
        question: question.to_string(),
        plan,
        intent,
        coarse_candidates: coarse,
        reranked_batch,
        final_context: context,
        generation_prompt: prompt,
        answer,
        grounding_violations,
        prompts,
        timings_ms: timings,
        backends: backend_ids,
        seed: config.effective_seed(),
        config: config.clone(),
    };
    debug_assert!(record.mode_violations().is_empty());
    Ok(record)
}

/// One failed batch item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub index: usize,
    pub painting_id: String,
    pub error: String,
}

/// Batch output: records in input order, failures isolated per item.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<BatchFailure>,
}

/// Run a batch of (artwork, question) pairs. Items run independently with
/// bounded parallelism; output order equals input order regardless of
/// completion order.
pub fn run_batch(
    items: &[(ArtworkRecord, String)],
    graph: Option<&KnowledgeGraph>,
    index: Option<&VectorIndex>,
    config: &EngineConfig,
    mode: PipelineMode,
    backends: &BackendSet,
    parallelism: usize,
) -> Result<BatchOutcome> {
    if parallelism == 0 {
        return Err(AmarError::InvalidParallelism);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| AmarError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<std::result::Result<RunRecord, String>> = pool.install(|| {
        items
            .par_iter()
            .map(|(artwork, question)| {
                run_pipeline(artwork, question, graph, index, config, mode, backends)
                    .map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut outcome = BatchOutcome::default();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(record) => outcome.records.push(record),
            Err(error) => outcome.failures.push(BatchFailure {
                index: i,
                painting_id: items[i].0.painting_id.clone(),
                error,
            }),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::graph::{KnowledgeEdge, KnowledgeNode, NodeType};
    use crate::planner::parse_plan;

    fn artwork() -> ArtworkRecord {
        let mut art = ArtworkRecord::new("p042");
        art.image_ref = Some("images/p042.jpg".into());
        art.metadata.title = Some("View of Delft".into());
        art.metadata.author = Some("Johannes Vermeer".into());
        art.metadata.technique = Some("Oil on canvas".into());
        art.metadata.timeframe = Some("1660-1661".into());
        art.metadata.tags = Some("cityscape, harbor".into());
        art
    }

    fn small_world() -> (KnowledgeGraph, VectorIndex) {
        let mut g = KnowledgeGraph::new();
        for i in 0..12 {
            g.add_node(KnowledgeNode::new(
                format!("n{i:02}"),
                format!("Entity {i}"),
                NodeType::ALL[i % 5],
                format!("facts about entity {i}"),
            ))
            .unwrap();
        }
        for i in 1..12 {
            g.add_edge(KnowledgeEdge::new(
                format!("n{:02}", i - 1),
                format!("n{i:02}"),
                "related",
            ))
            .unwrap();
        }
        let embedder = MockBackend::new("mock-embedder", 42);
        let index = VectorIndex::build(&g, &embedder).unwrap();
        (g, index)
    }

    fn config() -> EngineConfig {
        EngineConfig::default()
    }

    #[test]
    fn parse_stepwise_accepts_well_formed() {
        let raw = r#"{"steps":[
            {"step":1,"text":"a","grounding":"Visual"},
            {"step":2,"text":"b","grounding":"Metadata"},
            {"step":3,"text":"c","grounding":"KG-Background"},
            {"step":4,"text":"d","grounding":"Common-Knowledge"}],
            "final":"done"}"#;
        let answer = parse_stepwise(raw, Some(4)).unwrap();
        assert_eq!(answer.steps.len(), 4);
        assert!(!answer.parse_failure);
    }

    #[test]
    fn parse_stepwise_step_count_mismatch() {
        let raw = r#"{"steps":[
            {"step":1,"text":"a","grounding":"Visual"},
            {"step":2,"text":"b","grounding":"Metadata"},
            {"step":3,"text":"c","grounding":"Visual"}],
            "final":"done"}"#;
        assert!(matches!(
            parse_stepwise(raw, Some(4)).unwrap_err(),
            AmarError::StepCountMismatch { expected: 4, got: 3 }
        ));
    }

    #[test]
    fn parse_stepwise_unknown_grounding() {
        let raw = r#"{"steps":[{"step":1,"text":"a","grounding":"Guesswork"}],"final":"x"}"#;
        assert!(matches!(
            parse_stepwise(raw, None).unwrap_err(),
            AmarError::UnknownEvidenceLabel { .. }
        ));
    }

    #[test]
    fn prompt_contains_plan_steps_verbatim_in_order() {
        let plan = parse_plan(
            r#"{"steps":[
                {"step":1,"goal":"inspect the brushwork","evidence":"Visual"},
                {"step":2,"goal":"anchor the timeframe","evidence":"Metadata"}]}"#,
        )
        .unwrap();
        let (g, index) = small_world();
        let backends = BackendSet::mock(1);
        let intent = derive_retrieval_intent(&plan, &artwork());
        let coarse = coarse_retrieve(&intent, &index, backends.embedder.as_ref(), 10).unwrap();
        let outcome = rerank(
            &coarse,
            &artwork(),
            &intent,
            &g,
            &index,
            &backends,
            &config().retrieval,
            false,
        )
        .unwrap();
        let context = assemble_context(&outcome.ranked, &g, 1).unwrap();
        let prompt = build_generation_prompt(
            &artwork(),
            "why harbors?",
            Some(&context),
            Some(&plan),
            PipelineMode::Amar,
        )
        .unwrap();
        let pos1 = prompt.find("step 1 [Visual]: inspect the brushwork").unwrap();
        let pos2 = prompt.find("step 2 [Metadata]: anchor the timeframe").unwrap();
        assert!(pos1 < pos2);
    }

    #[test]
    fn mllm_cot_prompt_has_no_context_block() {
        let prompt =
            build_generation_prompt(&artwork(), "q", None, None, PipelineMode::MllmCot).unwrap();
        assert!(!prompt.contains("Evidence:"));
        assert!(prompt.contains("step by step"));
    }

    #[test]
    fn static_retrieval_prompt_has_context_but_no_plan_block() {
        let (g, _) = small_world();
        let candidates = vec![ScoredCandidateFixture::new("n03")];
        let context = assemble_context(&candidates, &g, 0).unwrap();
        let prompt = build_generation_prompt(
            &artwork(),
            "q",
            Some(&context),
            None,
            PipelineMode::StaticRetrieval,
        )
        .unwrap();
        assert!(prompt.contains("Evidence:"));
        assert!(!prompt.contains("Reasoning plan"));
    }

    // small helper: candidate with neutral scores
    #[allow(non_snake_case)]
    mod ScoredCandidateFixture {
        use crate::retrieval::ScoredCandidate;
        pub fn new(id: &str) -> ScoredCandidate {
            ScoredCandidate {
                unit_id: id.into(),
                s_sem_raw: 0.0,
                s_str_raw: 0.0,
                s_sem_norm: 0.5,
                s_str_norm: 0.5,
                fused: 0.5,
            }
        }
    }

    #[test]
    fn mode_input_mismatch_is_rejected() {
        let plan = parse_plan(r#"{"steps":[{"step":1,"goal":"g","evidence":"Visual"}]}"#).unwrap();
        assert!(matches!(
            build_generation_prompt(&artwork(), "q", None, Some(&plan), PipelineMode::MllmCot)
                .unwrap_err(),
            AmarError::ModeInputMismatch { .. }
        ));
        assert!(matches!(
            build_generation_prompt(&artwork(), "q", None, None, PipelineMode::Amar).unwrap_err(),
            AmarError::ModeInputMismatch { .. }
        ));
    }

    #[test]
    fn amar_run_is_deterministic() {
        let (g, index) = small_world();
        let backends = BackendSet::mock(42);
        let config = config();
        let a = run_pipeline(
            &artwork(),
            "What makes the light remarkable?",
            Some(&g),
            Some(&index),
            &config,
            PipelineMode::Amar,
            &backends,
        )
        .unwrap();
        let b = run_pipeline(
            &artwork(),
            "What makes the light remarkable?",
            Some(&g),
            Some(&index),
            &config,
            PipelineMode::Amar,
            &backends,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(a.mode_violations().is_empty());
        assert!(a.coarse_candidates.len() <= 10);
        assert!(a.final_context.as_ref().unwrap().candidates.len() <= 5);
        assert!(a.grounding_violations.is_empty());
        // plan prompt recorded with its image (multimodal planner)
        let plan_prompt = a.prompts.iter().find(|p| p.stage == "plan").unwrap();
        assert!(plan_prompt.image.is_some());
    }

    #[test]
    fn text_only_planner_records_imageless_plan_prompt() {
        let (g, index) = small_world();
        let backends = BackendSet::mock(42);
        let record = run_pipeline(
            &artwork(),
            "q",
            Some(&g),
            Some(&index),
            &config(),
            PipelineMode::TextOnlyPlanner,
            &backends,
        )
        .unwrap();
        let plan_prompt = record.prompts.iter().find(|p| p.stage == "plan").unwrap();
        assert!(plan_prompt.image.is_none());
        assert!(record.mode_violations().is_empty());
    }

    #[test]
    fn remote_scorer_image_follows_the_mode() {
        let (g, index) = small_world();
        let backends = BackendSet::mock(42);
        let mut config = config();
        config.retrieval.scorer = crate::retrieval::ScorerKind::Remote;
        let score_images = |mode: PipelineMode| -> Vec<bool> {
            let record = run_pipeline(
                &artwork(),
                "q",
                Some(&g),
                Some(&index),
                &config,
                mode,
                &backends,
            )
            .unwrap();
            record
                .prompts
                .iter()
                .filter(|p| p.stage == "score")
                .map(|p| p.image.is_some())
                .collect()
        };
        // the text-only variant stays imageless; the others score with it
        assert!(score_images(PipelineMode::Amar).iter().all(|&with| with));
        assert!(score_images(PipelineMode::StaticRetrieval).iter().all(|&with| with));
        assert!(score_images(PipelineMode::TextOnlyPlanner).iter().all(|&with| !with));
    }

    #[test]
    fn static_retrieval_uses_question_verbatim_as_intent() {
        let (g, index) = small_world();
        let backends = BackendSet::mock(42);
        let record = run_pipeline(
            &artwork(),
            "what do the boats mean?",
            Some(&g),
            Some(&index),
            &config(),
            PipelineMode::StaticRetrieval,
            &backends,
        )
        .unwrap();
        assert_eq!(record.intent.as_ref().unwrap().text, "what do the boats mean?");
        assert!(record.intent.as_ref().unwrap().evidence_mix.is_empty());
        assert!(record.plan.is_none());
        assert!(record.mode_violations().is_empty());
    }

    #[test]
    fn mllm_cot_record_has_no_retrieval_fields() {
        let backends = BackendSet::mock(42);
        let record = run_pipeline(
            &artwork(),
            "q",
            None,
            None,
            &config(),
            PipelineMode::MllmCot,
            &backends,
        )
        .unwrap();
        assert!(record.coarse_candidates.is_empty());
        assert!(record.plan.is_none() && record.intent.is_none() && record.final_context.is_none());
        assert!(record.mode_violations().is_empty());
    }

    #[test]
    fn amar_without_graph_fails_with_stage() {
        let backends = BackendSet::mock(42);
        let err = run_pipeline(
            &artwork(),
            "q",
            None,
            None,
            &config(),
            PipelineMode::Amar,
            &backends,
        )
        .unwrap_err();
        assert!(matches!(err, AmarError::MissingResource { .. }));
    }

    #[test]
    fn amar_without_image_fails_at_plan_stage() {
        let (g, index) = small_world();
        let backends = BackendSet::mock(42);
        let mut art = artwork();
        art.image_ref = None;
        let err = run_pipeline(
            &art,
            "q",
            Some(&g),
            Some(&index),
            &config(),
            PipelineMode::Amar,
            &backends,
        )
        .unwrap_err();
        match err {
            AmarError::Stage { stage, source } => {
                assert_eq!(stage, "plan");
                assert!(matches!(*source, AmarError::MissingImage));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let (g, index) = small_world();
        let backends = BackendSet::mock(42);
        let mut broken = artwork();
        broken.painting_id = "p-broken".into();
        broken.image_ref = None; // amar requires an image
        let items = vec![
            (artwork(), "q one".to_string()),
            (broken, "q two".to_string()),
            (artwork(), "q three".to_string()),
        ];
        let outcome = run_batch(
            &items,
            Some(&g),
            Some(&index),
            &config(),
            PipelineMode::Amar,
            &backends,
            2,
        )
        .unwrap();
        assert_eq!(outcome.records.len(), 2);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].index, 1);
        assert_eq!(outcome.records[0].question, "q one");
        assert_eq!(outcome.records[1].question, "q three");
        // re-running the batch reproduces identical records
        let again = run_batch(
            &items,
            Some(&g),
            Some(&index),
            &config(),
            PipelineMode::Amar,
            &backends,
            1,
        )
        .unwrap();
        assert_eq!(outcome.records, again.records);
    }

    #[test]
    fn batch_rejects_zero_parallelism() {
        let backends = BackendSet::mock(42);
        assert!(matches!(
            run_batch(&[], None, None, &config(), PipelineMode::MllmCot, &backends, 0).unwrap_err(),
            AmarError::InvalidParallelism
        ));
    }

    #[test]
    fn parse_fallback_keeps_the_row() {
        struct ProseBackend;
        impl crate::backend::Backend for ProseBackend {
            fn model_id(&self) -> &str {
                "prose"
            }
            fn complete(&self, _: &ModelRequest) -> Result<String> {
                Ok("free prose, not a structured answer".into())
            }
            fn embed(&self, _: &str) -> Result<crate::index::EmbeddingVector> {
                unreachable!()
            }
        }
        let mut backends = BackendSet::mock(1);
        backends.generator = std::sync::Arc::new(ProseBackend);
        let (answer, _) = generate_answer("prompt", &artwork(), None, &backends).unwrap();
        assert!(answer.parse_failure);
        assert!(answer.steps.is_empty());
        assert_eq!(answer.final_text, "free prose, not a structured answer");
    }
}
