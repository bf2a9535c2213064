//! Reasoning and planning: produce, parse, and validate the structured plan
//! that conditions retrieval, and derive the retrieval intent from it.
//!
//! A plan is an ordered list of (sub-goal, evidence-type) steps. The planner
//! backend is asked for a machine-readable plan in a restricted output space
//! and its output is gated through [`parse_plan`]; a plan violating the type
//! invariants is never returned.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ModelRequest, Purpose, RequestPart};
use crate::error::{AmarError, Result};

/// Number of extra attempts after a first unparseable model output.
pub const PARSE_RETRIES: usize = 2;

/// Closed set of evidence categories a step can be grounded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvidenceType {
    Visual,
    Metadata,
    Description,
    #[serde(rename = "KG-Background")]
    KgBackground,
    #[serde(rename = "Common-Knowledge")]
    CommonKnowledge,
}

impl EvidenceType {
    pub const ALL: [EvidenceType; 5] = [
        EvidenceType::Visual,
        EvidenceType::Metadata,
        EvidenceType::Description,
        EvidenceType::KgBackground,
        EvidenceType::CommonKnowledge,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvidenceType::Visual => "Visual",
            EvidenceType::Metadata => "Metadata",
            EvidenceType::Description => "Description",
            EvidenceType::KgBackground => "KG-Background",
            EvidenceType::CommonKnowledge => "Common-Knowledge",
        }
    }

    pub fn parse(label: &str) -> Result<EvidenceType> {
        EvidenceType::ALL
            .into_iter()
            .find(|e| e.label() == label)
            .ok_or_else(|| AmarError::UnknownEvidenceLabel {
                step: 0,
                label: label.to_string(),
            })
    }

    /// Comma-separated list of all labels, for prompt templates.
    pub fn labels_joined() -> String {
        EvidenceType::ALL
            .iter()
            .map(|e| e.label())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl std::fmt::Display for EvidenceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One reasoning step: a sub-goal and the evidence type it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningStep {
    /// 1-based position in the plan.
    pub index: usize,
    pub sub_goal: String,
    pub evidence_type: EvidenceType,
}

/// Ordered reasoning plan with contiguous 1..T indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanWire", into = "PlanWire")]
pub struct ReasoningPlan {
    pub steps: Vec<ReasoningStep>,
}

impl ReasoningPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Check the structural invariants: at least one step, contiguous 1..T
    /// indices, non-empty sub-goals.
    pub fn check_invariants(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(AmarError::EmptyPlan);
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(AmarError::Invalid(format!(
                    "step at position {} carries index {}",
                    i + 1,
                    step.index
                )));
            }
            if step.sub_goal.trim().is_empty() {
                return Err(AmarError::EmptySubGoal { step: i + 1 });
            }
        }
        Ok(())
    }
}

/// Serialized plan shape: {"steps": [{"step", "goal", "evidence"}]}.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanWire {
    steps: Vec<PlanStepWire>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanStepWire {
    step: usize,
    goal: String,
    evidence: String,
}

impl From<ReasoningPlan> for PlanWire {
    fn from(plan: ReasoningPlan) -> Self {
        PlanWire {
            steps: plan
                .steps
                .into_iter()
                .map(|s| PlanStepWire {
                    step: s.index,
                    goal: s.sub_goal,
                    evidence: s.evidence_type.label().to_string(),
                })
                .collect(),
        }
    }
}

impl TryFrom<PlanWire> for ReasoningPlan {
    type Error = AmarError;

    fn try_from(wire: PlanWire) -> Result<Self> {
        if wire.steps.is_empty() {
            return Err(AmarError::EmptyPlan);
        }
        let mut steps = Vec::with_capacity(wire.steps.len());
        for (i, step) in wire.steps.into_iter().enumerate() {
            let evidence_type = EvidenceType::parse(&step.evidence).map_err(|_| {
                AmarError::UnknownEvidenceLabel {
                    step: step.step,
                    label: step.evidence.clone(),
                }
            })?;
            if step.goal.trim().is_empty() {
                return Err(AmarError::EmptySubGoal { step: step.step });
            }
            // re-index 1..T preserving order; incoming numbering is advisory
            steps.push(ReasoningStep {
                index: i + 1,
                sub_goal: step.goal,
                evidence_type,
            });
        }
        Ok(ReasoningPlan { steps })
    }
}

/// Strict structural parse of a model-emitted plan.
pub fn parse_plan(raw: &str) -> Result<ReasoningPlan> {
    serde_json::from_str::<ReasoningPlan>(raw.trim()).map_err(|e| match find_domain_error(raw) {
        Some(domain) => domain,
        None => AmarError::MalformedModelOutput {
            expected: "reasoning plan",
            detail: e.to_string(),
        },
    })
}

// Serde funnels TryFrom errors through its own error type; re-derive the
// domain error for the messages worth surfacing precisely.
fn find_domain_error(raw: &str) -> Option<AmarError> {
    let wire: PlanWire = serde_json::from_str(raw.trim()).ok()?;
    ReasoningPlan::try_from(wire).err()
}

/// Canonical serialization of a plan; inverse of [`parse_plan`].
pub fn render_plan(plan: &ReasoningPlan) -> String {
    serde_json::to_string(plan).expect("plan serializes")
}

/// One plan step as a prompt line: `step N [Evidence]: goal`.
pub fn render_plan_step_line(step: &ReasoningStep) -> String {
    format!(
        "step {} [{}]: {}",
        step.index,
        step.evidence_type.label(),
        step.sub_goal
    )
}

/// Inverse of [`render_plan_step_line`], tolerant of surrounding text lines.
pub fn parse_plan_step_line(line: &str) -> Option<(usize, EvidenceType, String)> {
    let rest = line.strip_prefix("step ")?;
    let (number, rest) = rest.split_once(" [")?;
    let (label, goal) = rest.split_once("]: ")?;
    let index: usize = number.trim().parse().ok()?;
    let evidence = EvidenceType::parse(label).ok()?;
    Some((index, evidence, goal.to_string()))
}

/// Fixed metadata key set of an artwork record. Values may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkMetadata {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub author: Option<String>,
    #[serde(default)]
    pub technique: Option<String>,
    #[serde(default)]
    pub timeframe: Option<String>,
    #[serde(default)]
    pub tags: Option<String>,
}

impl ArtworkMetadata {
    /// (key, value) pairs for the fields that are present and non-empty.
    pub fn present_fields(&self) -> Vec<(&'static str, &str)> {
        [
            ("title", &self.title),
            ("author", &self.author),
            ("technique", &self.technique),
            ("timeframe", &self.timeframe),
            ("tags", &self.tags),
        ]
        .into_iter()
        .filter_map(|(k, v)| match v {
            Some(s) if !s.trim().is_empty() => Some((k, s.as_str())),
            _ => None,
        })
        .collect()
    }

    pub fn all_present(&self) -> bool {
        self.present_fields().len() == 5
    }

    /// Multi-line `key: value` block for prompts.
    pub fn prompt_block(&self) -> String {
        self.present_fields()
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// The artwork under discussion: identifier, opaque image reference,
/// metadata, and optional curated description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkRecord {
    pub painting_id: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub metadata: ArtworkMetadata,
    #[serde(default)]
    pub description: Option<String>,
}

impl ArtworkRecord {
    pub fn new(painting_id: impl Into<String>) -> Self {
        ArtworkRecord {
            painting_id: painting_id.into(),
            image_ref: None,
            metadata: ArtworkMetadata::default(),
            description: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.painting_id.trim().is_empty() {
            return Err(AmarError::Invalid("painting_id is empty".into()));
        }
        Ok(())
    }
}

/// Query derived from the whole plan: what evidence is required, not how the
/// question was phrased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIntent {
    pub text: String,
    pub evidence_mix: Vec<EvidenceType>,
}

/// Deterministic composition of the retrieval intent: title and author when
/// present, then every step rendered in plan order, all joined by "; ".
pub fn derive_retrieval_intent(plan: &ReasoningPlan, artwork: &ArtworkRecord) -> RetrievalIntent {
    let mut parts: Vec<String> = Vec::new();
    if let Some(title) = &artwork.metadata.title {
        if !title.trim().is_empty() {
            parts.push(title.clone());
        }
    }
    if let Some(author) = &artwork.metadata.author {
        if !author.trim().is_empty() {
            parts.push(author.clone());
        }
    }
    for step in &plan.steps {
        parts.push(render_plan_step_line(step));
    }
    RetrievalIntent {
        text: parts.join("; "),
        evidence_mix: plan.steps.iter().map(|s| s.evidence_type).collect(),
    }
}

/// Step-count constraints checked by [`validate_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConstraints {
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for PlanConstraints {
    fn default() -> Self {
        PlanConstraints {
            min_steps: 4,
            max_steps: 5,
        }
    }
}

/// Violations found by a validation pass. Violations are data, not errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, violation: impl Into<String>) {
        self.violations.push(violation.into());
    }
}

/// Check a plan against step-count bounds and the structural rules.
pub fn validate_plan(plan: &ReasoningPlan, constraints: PlanConstraints) -> ValidationReport {
    let mut report = ValidationReport::default();
    let t = plan.steps.len();
    if t < constraints.min_steps {
        report.push(format!("T={} < {}", t, constraints.min_steps));
    }
    if t > constraints.max_steps {
        report.push(format!("T={} > {}", t, constraints.max_steps));
    }
    for (i, step) in plan.steps.iter().enumerate() {
        if step.sub_goal.trim().is_empty() {
            report.push(format!("step {} has an empty sub-goal", i + 1));
        }
        if step.index != i + 1 {
            report.push(format!(
                "step at position {} carries index {}",
                i + 1,
                step.index
            ));
        }
    }
    report
}

/// Build the planning request: question, metadata, the closed evidence-type
/// list, output-format instructions, and the image when planning
/// multimodally.
pub fn build_plan_request(
    artwork: &ArtworkRecord,
    question: &str,
    multimodal: bool,
) -> Result<ModelRequest> {
    let mut prompt = String::from(
        "You plan the reasoning needed to answer a question about an artwork. \
         Do not answer the question.\n",
    );
    prompt.push_str("Artwork metadata:\n");
    prompt.push_str(&artwork.metadata.prompt_block());
    prompt.push_str(&format!("\nQuestion: {question}\n"));
    prompt.push_str(&format!(
        "Allowed evidence types: {}\n",
        EvidenceType::labels_joined()
    ));
    prompt.push_str(
        "Output only a JSON object of the form \
         {\"steps\":[{\"step\":1,\"goal\":\"...\",\"evidence\":\"Visual\"}]} \
         listing each reasoning sub-goal with the single evidence type it needs.",
    );
    let mut parts = Vec::new();
    if multimodal {
        let image = artwork
            .image_ref
            .as_deref()
            .filter(|r| !r.trim().is_empty())
            .ok_or(AmarError::MissingImage)?;
        parts.push(RequestPart::ImageRef(image.to_string()));
    }
    parts.push(RequestPart::Text(prompt));
    Ok(ModelRequest {
        purpose: Purpose::Plan,
        parts,
    })
}

/// Ask the planner backend for a plan and gate it through [`parse_plan`],
/// retrying a bounded number of times. Never returns a partial plan.
pub fn generate_plan(
    artwork: &ArtworkRecord,
    question: &str,
    backend: &dyn Backend,
    multimodal: bool,
) -> Result<(ReasoningPlan, ModelRequest)> {
    let request = build_plan_request(artwork, question, multimodal)?;
    let mut detail = String::new();
    for _ in 0..=PARSE_RETRIES {
        let raw = backend.complete(&request)?;
        match parse_plan(&raw) {
            Ok(plan) => return Ok((plan, request)),
            Err(e) => detail = e.to_string(),
        }
    }
    Err(AmarError::UnparseableAfterRetries {
        expected: "reasoning plan",
        attempts: PARSE_RETRIES + 1,
        detail,
    })
}
