//! Reasoning-conditioned two-stage retrieval: coarse dense candidates, then
//! semantic + structural reranking with per-family softmax normalization and
//! convex score fusion, then context assembly around the survivors.
//!
//! Softmax runs separately over the semantic batch and the structural batch
//! so both terms live on a common probability scale before fusion. The fused
//! score is exactly `lambda * s_sem_norm + (1 - lambda) * s_str_norm`.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendSet, ModelRequest, Purpose, RequestPart};
use crate::error::{AmarError, Result};
use crate::graph::KnowledgeGraph;
use crate::index::{cosine, VectorIndex};
use crate::planner::{ArtworkRecord, RetrievalIntent};

/// How the semantic relevance score is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Cosine of candidate text vs intent text in the embedding space.
    /// Fully offline; the default.
    Embedding,
    /// A remote model rates candidate relevance, optionally seeing the image.
    Remote,
}

/// How the structural importance score is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralKind {
    /// degree / (|nodes| - 1); the default.
    DegreeCentrality,
    /// Raw degree.
    Degree,
}

/// Retrieval budget and fusion weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_k_coarse")]
    pub k_coarse: usize,
    #[serde(default = "default_m_fine")]
    pub m_fine: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_expansion_hops")]
    pub expansion_hops: usize,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerKind,
    #[serde(default = "default_structural")]
    pub structural: StructuralKind,
}

fn default_k_coarse() -> usize {
    10
}

fn default_m_fine() -> usize {
    5
}

fn default_lambda() -> f64 {
    0.5
}

fn default_expansion_hops() -> usize {
    1
}

fn default_scorer() -> ScorerKind {
    ScorerKind::Embedding
}

fn default_structural() -> StructuralKind {
    StructuralKind::DegreeCentrality
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_coarse: default_k_coarse(),
            m_fine: default_m_fine(),
            lambda: default_lambda(),
            expansion_hops: default_expansion_hops(),
            scorer: default_scorer(),
            structural: default_structural(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_fine < 1 || self.m_fine > self.k_coarse {
            return Err(AmarError::InvalidRetrievalConfig(format!(
                "need 1 <= m_fine <= k_coarse, got m_fine={} k_coarse={}",
                self.m_fine, self.k_coarse
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(AmarError::InvalidLambda(self.lambda));
        }
        Ok(())
    }
}

/// One coarse-stage candidate with its cosine against the intent embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseCandidate {
    pub unit_id: String,
    pub score: f64,
}

/// One reranked candidate with every intermediate value retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub unit_id: String,
    pub s_sem_raw: f64,
    pub s_str_raw: f64,
    pub s_sem_norm: f64,
    pub s_str_norm: f64,
    pub fused: f64,
}

/// Retrieved evidence handed to generation: ranked candidates, the
/// hop-expanded subgraph around them, and the rendered text block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub candidates: Vec<ScoredCandidate>,
    pub subgraph: KnowledgeGraph,
    pub rendered_text: String,
}

/// Embed the intent text and take the exact top-k of the index.
pub fn coarse_retrieve(
    intent: &RetrievalIntent,
    index: &VectorIndex,
    embedder: &dyn Backend,
    k: usize,
) -> Result<Vec<CoarseCandidate>> {
    let query = embedder.embed(&intent.text)?;
    let hits = index.top_k(&query, k)?;
    Ok(hits
        .into_iter()
        .map(|(unit_id, score)| CoarseCandidate { unit_id, score })
        .collect())
}

/// Semantic relevance of one candidate. The embedding scorer never sees the
/// image; the remote scorer attaches it when `with_image` is set and the
/// artwork has one. Returns the score and, for the remote scorer, the request
/// for the run trace.
pub fn semantic_score(
    artwork: &ArtworkRecord,
    intent: &RetrievalIntent,
    candidate_text: &str,
    backends: &BackendSet,
    kind: ScorerKind,
    with_image: bool,
) -> Result<(f64, Option<ModelRequest>)> {
    match kind {
        ScorerKind::Embedding => {
            let a = backends.embedder.embed(candidate_text)?;
            let b = backends.embedder.embed(&intent.text)?;
            Ok((cosine(&a, &b)?, None))
        }
        ScorerKind::Remote => {
            let prompt = format!(
                "Rate how relevant the candidate evidence is to the retrieval intent for \
                 this artwork, as a single number between 0 and 1.\n\
                 Intent: {}\nCandidate: {}\nOutput only the number.",
                intent.text, candidate_text
            );
            let mut parts = Vec::new();
            if with_image {
                if let Some(image) = artwork.image_ref.as_deref().filter(|r| !r.trim().is_empty()) {
                    parts.push(RequestPart::ImageRef(image.to_string()));
                }
            }
            parts.push(RequestPart::Text(prompt));
            let request = ModelRequest {
                purpose: Purpose::Score,
                parts,
            };
            let raw = backends.scorer.complete(&request)?;
            let score: f64 = raw.trim().parse().map_err(|_| AmarError::MalformedModelOutput {
                expected: "relevance score",
                detail: format!("`{raw}` is not a number"),
            })?;
            if !score.is_finite() {
                return Err(AmarError::NonFiniteScore);
            }
            Ok((score, Some(request)))
        }
    }
}

/// Structural importance of one candidate node.
pub fn structural_score(
    unit_id: &str,
    graph: &KnowledgeGraph,
    kind: StructuralKind,
) -> Result<f64> {
    match kind {
        StructuralKind::DegreeCentrality => graph.degree_centrality(unit_id),
        StructuralKind::Degree => Ok(graph.degree(unit_id)? as f64),
    }
}

/// Numerically stable softmax: p_i = exp(s_i - max) / sum. Strictly
/// order-preserving; every output is positive and the outputs sum to one.
pub fn softmax_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(AmarError::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AmarError::NonFiniteScore);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Convex combination of the two normalized scores.
pub fn fuse(s_sem_norm: f64, s_str_norm: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AmarError::InvalidLambda(lambda));
    }
    Ok(lambda * s_sem_norm + (1.0 - lambda) * s_str_norm)
}

/// Output of [`rerank`]: the ranked cut, the full scored batch (the softmax
/// normalization invariants hold over this batch), and any scorer requests
/// made, for the run trace.
#[derive(Debug, Clone)]
pub struct RerankOutcome {
    pub ranked: Vec<ScoredCandidate>,
    pub scored_batch: Vec<ScoredCandidate>,
    pub scorer_requests: Vec<ModelRequest>,
}

/// Score every candidate semantically and structurally, softmax-normalize
/// each family across the batch, fuse, sort descending (ties by unit id),
/// and cut to `m_fine`.
pub fn rerank(
    candidates: &[CoarseCandidate],
    artwork: &ArtworkRecord,
    intent: &RetrievalIntent,
    graph: &KnowledgeGraph,
    index: &VectorIndex,
    backends: &BackendSet,
    config: &RetrievalConfig,
    with_image: bool,
) -> Result<RerankOutcome> {
    if candidates.is_empty() {
        return Err(AmarError::EmptyCandidates);
    }
    config.validate()?;
    let mut sem_raw = Vec::with_capacity(candidates.len());
    let mut str_raw = Vec::with_capacity(candidates.len());
    let mut scorer_requests = Vec::new();
    for candidate in candidates {
        let text = index
            .entries()
            .iter()
            .find(|e| e.unit_id == candidate.unit_id)
            .map(|e| e.text.clone())
            .ok_or_else(|| AmarError::UnknownNode(candidate.unit_id.clone()))?;
        let (sem, request) =
            semantic_score(artwork, intent, &text, backends, config.scorer, with_image)?;
        if let Some(request) = request {
            scorer_requests.push(request);
        }
        sem_raw.push(sem);
        str_raw.push(structural_score(&candidate.unit_id, graph, config.structural)?);
    }
    let sem_norm = softmax_normalize(&sem_raw)?;
    let str_norm = softmax_normalize(&str_raw)?;
    let mut ranked: Vec<ScoredCandidate> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(ScoredCandidate {
                unit_id: c.unit_id.clone(),
                s_sem_raw: sem_raw[i],
                s_str_raw: str_raw[i],
                s_sem_norm: sem_norm[i],
                s_str_norm: str_norm[i],
                fused: fuse(sem_norm[i], str_norm[i], config.lambda)?,
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.fused.total_cmp(&a.fused).then_with(|| a.unit_id.cmp(&b.unit_id)));
    let scored_batch = ranked.clone();
    ranked.truncate(config.m_fine);
    Ok(RerankOutcome {
        ranked,
        scored_batch,
        scorer_requests,
    })
}

/// Expand the final candidates into their neighborhood and render the
/// evidence block: candidates in rank order, then the subgraph's edges.
pub fn assemble_context(
    final_candidates: &[ScoredCandidate],
    graph: &KnowledgeGraph,
    expansion_hops: usize,
) -> Result<RetrievedContext> {
    let seed_ids: Vec<String> = final_candidates.iter().map(|c| c.unit_id.clone()).collect();
    let subgraph = graph.neighborhood(&seed_ids, expansion_hops)?;
    let mut lines = Vec::new();
    for candidate in final_candidates {
        let node = subgraph
            .node(&candidate.unit_id)
            .ok_or_else(|| AmarError::UnknownNode(candidate.unit_id.clone()))?;
        lines.push(format!(
            "{} ({}): {} [s={:.4}]",
            node.name,
            node.node_type.label(),
            node.description,
            candidate.fused
        ));
    }
    for edge in subgraph.edges() {
        let source = &subgraph.node(&edge.source_id).expect("endpoint in subgraph").name;
        let target = &subgraph.node(&edge.target_id).expect("endpoint in subgraph").name;
        lines.push(format!("{source} \u{2014}({})\u{2192} {target}", edge.description));
    }
    Ok(RetrievedContext {
        candidates: final_candidates.to_vec(),
        subgraph,
        rendered_text: lines.join("\n"),
    })
}
