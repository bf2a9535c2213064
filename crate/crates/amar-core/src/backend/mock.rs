//! Deterministic mock backend.
//!
//! Every response is a pure function of (seed, request): the canonical
//! request form is hashed together with the seed, and the hash words drive a
//! per-purpose output template. Templates emit exactly the structured payloads
//! the corresponding parsers expect, so offline pipelines run end to end.
//! Image parts are hashed as reference strings; no file is ever read.

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::benchmark::QA_OUTPUT_MARKER;
use crate::error::{AmarError, Result};
use crate::eval::JUDGE_DIMENSIONS_MARKER;
use crate::graph::NodeType;
use crate::index::EmbeddingVector;
use crate::planner::{parse_plan_step_line, EvidenceType};

use super::{Backend, ModelRequest, Purpose, DEFAULT_EMBED_DIMENSION};

/// Fixed pool the mock extractor draws entities from. Small on purpose:
/// repeated draws across chunks collide, which exercises node merging.
const ENTITY_POOL: [(&str, NodeType, &str); 16] = [
    ("Claude Monet", NodeType::Artist, "French painter of light and atmosphere"),
    ("Rembrandt van Rijn", NodeType::Artist, "Dutch master of portraiture and shadow"),
    ("Johannes Vermeer", NodeType::Artist, "Delft painter of quiet interiors"),
    ("Gustave Courbet", NodeType::Artist, "painter of unidealized everyday subjects"),
    ("Working-class life", NodeType::Theme, "labor and daily routine as subject matter"),
    ("Spiritual devotion", NodeType::Theme, "religious feeling expressed in imagery"),
    ("Pastoral landscape", NodeType::Theme, "idealized countryside scenery"),
    ("Dutch Golden Age", NodeType::CultureHistory, "seventeenth-century Dutch flourishing of the arts"),
    ("Flemish Renaissance", NodeType::CultureHistory, "northern renaissance current in Flanders"),
    ("Christian iconography", NodeType::CultureHistory, "conventional religious symbol vocabulary"),
    ("Oil on canvas", NodeType::ArtStyleTechnique, "pigment in drying oil on stretched fabric"),
    ("Chiaroscuro", NodeType::ArtStyleTechnique, "strong contrast of light and dark"),
    ("Linear perspective", NodeType::ArtStyleTechnique, "geometric depth construction"),
    ("Impressionism", NodeType::ArtMovementSchool, "movement favoring fleeting optical impressions"),
    ("Realism", NodeType::ArtMovementSchool, "movement depicting subjects without embellishment"),
    ("Florentine School", NodeType::ArtMovementSchool, "painters active in renaissance Florence"),
];

/// Pure, seeded stand-in for a hosted model.
#[derive(Debug, Clone)]
pub struct MockBackend {
    model_id: String,
    seed: u64,
    dimension: usize,
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>, seed: u64) -> Self {
        MockBackend {
            model_id: model_id.into(),
            seed,
            dimension: DEFAULT_EMBED_DIMENSION,
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The n-th hash word for this (seed, payload) pair.
    fn word(&self, payload: &str, salt: u32) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(salt.to_le_bytes());
        hasher.update(payload.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is wide enough"))
    }

    fn plan_response(&self, canonical: &str) -> String {
        let steps = [
            (EvidenceType::Visual, "examine the visual composition and principal motifs"),
            (EvidenceType::Metadata, "relate the title, author and timeframe to the subject"),
            (EvidenceType::KgBackground, "connect the work to its movement and cultural background"),
            (EvidenceType::CommonKnowledge, "synthesize an interpretation of the work"),
        ];
        let rendered: Vec<serde_json::Value> = steps
            .iter()
            .enumerate()
            .map(|(i, (evidence, goal))| {
                let w = self.word(canonical, i as u32);
                json!({
                    "step": i + 1,
                    "goal": format!("{goal} ({:08x})", w as u32),
                    "evidence": evidence.label(),
                })
            })
            .collect();
        json!({ "steps": rendered }).to_string()
    }

    fn extract_response(&self, canonical: &str) -> String {
        let count = 3 + (self.word(canonical, 0) % 3) as usize;
        let mut picked: Vec<usize> = Vec::new();
        let mut salt = 1u32;
        while picked.len() < count && salt < 64 {
            let idx = (self.word(canonical, salt) % ENTITY_POOL.len() as u64) as usize;
            if !picked.contains(&idx) {
                picked.push(idx);
            }
            salt += 1;
        }
        let entities: Vec<serde_json::Value> = picked
            .iter()
            .map(|&idx| {
                let (name, node_type, desc) = ENTITY_POOL[idx];
                let w = self.word(canonical, 100 + idx as u32);
                json!({
                    "name": name,
                    "type": node_type.label(),
                    "description": format!("{desc} ({:08x})", w as u32),
                })
            })
            .collect();
        let relations: Vec<serde_json::Value> = picked
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let w = self.word(canonical, 200 + i as u32);
                json!({
                    "source": ENTITY_POOL[pair[0]].0,
                    "target": ENTITY_POOL[pair[1]].0,
                    "description": format!("linked in the source passage ({:08x})", w as u32),
                })
            })
            .collect();
        json!({ "entities": entities, "relations": relations }).to_string()
    }

    fn generate_response(&self, canonical: &str, prompt_text: &str) -> String {
        if prompt_text.contains(QA_OUTPUT_MARKER) {
            return self.qa_response(canonical);
        }
        // echo the plan when the prompt carries one
        let plan_steps: Vec<(usize, EvidenceType, String)> = prompt_text
            .lines()
            .filter_map(parse_plan_step_line)
            .collect();
        let steps: Vec<(EvidenceType, String)> = if plan_steps.is_empty() {
            [
                EvidenceType::Visual,
                EvidenceType::Description,
                EvidenceType::CommonKnowledge,
            ]
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let w = self.word(canonical, 10 + i as u32);
                (*e, format!("reasoning step about the artwork ({:08x})", w as u32))
            })
            .collect()
        } else {
            plan_steps
                .into_iter()
                .map(|(i, evidence, goal)| {
                    let w = self.word(canonical, 10 + i as u32);
                    (evidence, format!("finding for `{goal}` ({:08x})", w as u32))
                })
                .collect()
        };
        let rendered: Vec<serde_json::Value> = steps
            .iter()
            .enumerate()
            .map(|(i, (evidence, text))| {
                json!({ "step": i + 1, "text": text, "grounding": evidence.label() })
            })
            .collect();
        let w = self.word(canonical, 99);
        json!({
            "steps": rendered,
            "final": format!(
                "Deterministic synthesis across {} grounded steps ({:08x}).",
                steps.len(),
                w as u32
            ),
        })
        .to_string()
    }

    fn qa_response(&self, canonical: &str) -> String {
        let steps = [
            (EvidenceType::Visual, "identify the dominant visual elements"),
            (EvidenceType::Metadata, "situate the work through its recorded attributes"),
            (EvidenceType::KgBackground, "bring in contextual art-historical knowledge"),
            (EvidenceType::CommonKnowledge, "draw the interpretive conclusion"),
        ];
        let cot: Vec<serde_json::Value> = steps
            .iter()
            .enumerate()
            .map(|(i, (evidence, text))| {
                let w = self.word(canonical, 300 + i as u32);
                json!({
                    "text": format!("{text} ({:08x})", w as u32),
                    "grounding": evidence.label(),
                })
            })
            .collect();
        let mut tags: Vec<&str> = steps.iter().map(|(e, _)| e.label()).collect();
        tags.sort_unstable();
        let w = self.word(canonical, 310);
        let difficulty = if w % 4 < 3 { "High" } else { "Medium" };
        json!({
            "question": format!(
                "What chain of evidence connects the visible scene to its wider meaning ({:08x})?",
                w as u32
            ),
            "reference_answer": format!(
                "The composition foregrounds its subject, the recorded attributes anchor it in time, \
                 contextual knowledge links it to a movement, and together these support a grounded \
                 interpretation ({:08x}).",
                self.word(canonical, 311) as u32
            ),
            "cot_steps": cot,
            "evidence_types": tags,
            "difficulty": difficulty,
            "planning_complexity": "multi-hop",
        })
        .to_string()
    }

    fn judge_response(&self, canonical: &str, prompt_text: &str) -> Result<String> {
        let dims_line = prompt_text
            .lines()
            .find_map(|l| l.strip_prefix(JUDGE_DIMENSIONS_MARKER))
            .ok_or_else(|| {
                AmarError::InvalidRequest("judge request lists no dimensions".into())
            })?;
        let mut scores = serde_json::Map::new();
        for (i, name) in dims_line.split(',').map(str::trim).enumerate() {
            if name.is_empty() {
                continue;
            }
            let value = 1 + (self.word(canonical, 400 + i as u32) % 5);
            scores.insert(name.to_string(), json!(value));
        }
        Ok(serde_json::Value::Object(scores).to_string())
    }

    fn score_response(&self, canonical: &str) -> String {
        let w = self.word(canonical, 500);
        format!("{:.4}", (w % 10_001) as f64 / 10_000.0)
    }

    fn embed_vector(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(AmarError::EmptyEmbedText);
        }
        let payload = format!("embed\u{1f}{text}");
        let mut values = Vec::with_capacity(self.dimension);
        for i in 0..self.dimension {
            let w = self.word(&payload, 1000 + i as u32);
            values.push((w as f64 / u64::MAX as f64) * 2.0 - 1.0);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(AmarError::ZeroVector);
        }
        for v in &mut values {
            *v /= norm;
        }
        EmbeddingVector::new(values)
    }
}

impl Backend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ModelRequest) -> Result<String> {
        request.validate()?;
        let canonical = request.canonical();
        match request.purpose {
            Purpose::Plan => Ok(self.plan_response(&canonical)),
            Purpose::Extract => Ok(self.extract_response(&canonical)),
            Purpose::Generate => Ok(self.generate_response(&canonical, &request.text_joined())),
            Purpose::Score => Ok(self.score_response(&canonical)),
            Purpose::Judge => self.judge_response(&canonical, &request.text_joined()),
            Purpose::Embed => {
                let vector = self.embed_vector(&request.text_joined())?;
                serde_json::to_string(vector.values())
                    .map_err(|e| AmarError::BackendRequest(e.to_string()))
            }
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.embed_vector(text)
    }
}
