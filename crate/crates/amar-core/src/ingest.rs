//! Corpus ingestion: whitespace tokenization, sliding-window chunking,
//! model-backed entity/relation extraction, and merge into the graph.
//!
//! Tokens are whitespace-delimited words, which keeps chunk geometry
//! independent of any particular model tokenizer. Window and overlap are
//! config-exposed; defaults are a 1000-token window with 100 tokens of
//! overlap (step 900).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{hex, Backend, ModelRequest, Purpose};
use crate::error::{AmarError, Result};
use crate::graph::{KnowledgeEdge, KnowledgeGraph, KnowledgeNode, NodeType};
use crate::planner::PARSE_RETRIES;

pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 100;

/// Split on Unicode whitespace. Empty text yields an empty list.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// One window of a document, in token units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub start_token: usize,
}

impl DocumentChunk {
    pub fn new(
        doc_id: impl Into<String>,
        chunk_index: usize,
        text: impl Into<String>,
        start_token: usize,
    ) -> Result<DocumentChunk> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(AmarError::EmptyChunk);
        }
        Ok(DocumentChunk {
            doc_id: doc_id.into(),
            chunk_index,
            text,
            start_token,
        })
    }
}

/// Cut a document into overlapping windows. Window starts step by
/// `window - overlap`; the final window is emitted even when shorter, and a
/// non-empty document shorter than one window yields exactly one chunk.
pub fn chunk_document(
    doc_id: &str,
    text: &str,
    window: usize,
    overlap: usize,
) -> Result<Vec<DocumentChunk>> {
    if overlap >= window {
        return Err(AmarError::InvalidChunking { window, overlap });
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let step = window - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(tokens.len());
        chunks.push(DocumentChunk::new(
            doc_id,
            chunks.len(),
            tokens[start..end].join(" "),
            start,
        )?);
        if start + window >= tokens.len() {
            break;
        }
        start += step;
    }
    Ok(chunks)
}

/// Entity emitted by extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedEntity {
    pub name: String,
    pub node_type: NodeType,
    pub description: String,
}

/// Relation emitted by extraction; endpoints are entity names from the same
/// result.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedRelation {
    pub source: String,
    pub target: String,
    pub description: String,
}

/// Parsed extraction output. Every relation endpoint is guaranteed to appear
/// among `entities`; anything else was dropped and counted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionResult {
    pub entities: Vec<ExtractedEntity>,
    pub relations: Vec<ExtractedRelation>,
    pub dropped_entities: usize,
    pub dropped_relations: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractionWire {
    entities: Vec<EntityWire>,
    #[serde(default)]
    relations: Vec<RelationWire>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityWire {
    name: String,
    #[serde(rename = "type")]
    node_type: String,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationWire {
    source: String,
    target: String,
    #[serde(default)]
    description: String,
}

/// Strict structural parse of extraction output. An unknown entity type
/// rejects that entity only; a result with zero entities is valid; a
/// structurally malformed payload is an error.
pub fn parse_extraction(raw: &str) -> Result<ExtractionResult> {
    let wire: ExtractionWire =
        serde_json::from_str(raw.trim()).map_err(|e| AmarError::MalformedModelOutput {
            expected: "extraction result",
            detail: e.to_string(),
        })?;
    let mut result = ExtractionResult::default();
    for entity in wire.entities {
        let name_ok = !entity.name.trim().is_empty();
        match (name_ok, NodeType::parse(&entity.node_type)) {
            (true, Ok(node_type)) => result.entities.push(ExtractedEntity {
                name: entity.name,
                node_type,
                description: entity.description,
            }),
            _ => result.dropped_entities += 1,
        }
    }
    let known: Vec<String> = result
        .entities
        .iter()
        .map(|e| e.name.trim().to_lowercase())
        .collect();
    for relation in wire.relations {
        let src = relation.source.trim().to_lowercase();
        let dst = relation.target.trim().to_lowercase();
        if known.contains(&src) && known.contains(&dst) {
            result.relations.push(ExtractedRelation {
                source: relation.source,
                target: relation.target,
                description: relation.description,
            });
        } else {
            result.dropped_relations += 1;
        }
    }
    Ok(result)
}

/// The extraction request for one chunk: entity-type list, chunk text, and
/// output-format instructions.
pub fn build_extract_request(chunk: &DocumentChunk) -> ModelRequest {
    let types = NodeType::ALL
        .iter()
        .map(|t| t.label())
        .collect::<Vec<_>>()
        .join(", ");
    let prompt = format!(
        "Identify all entities of the listed types in the document chunk, then all \
         relationships among the identified entities.\n\
         Entity types: {types}\n\
         Document chunk:\n{}\n\
         Output only a JSON object of the form \
         {{\"entities\":[{{\"name\":\"...\",\"type\":\"Artist\",\"description\":\"...\"}}],\
         \"relations\":[{{\"source\":\"...\",\"target\":\"...\",\"description\":\"...\"}}]}}.",
        chunk.text
    );
    ModelRequest::text(Purpose::Extract, prompt)
}

/// Run extraction for one chunk through the backend with bounded retries.
pub fn extract(chunk: &DocumentChunk, backend: &dyn Backend) -> Result<ExtractionResult> {
    let request = build_extract_request(chunk);
    let mut detail = String::new();
    for _ in 0..=PARSE_RETRIES {
        let raw = backend.complete(&request)?;
        match parse_extraction(&raw) {
            Ok(result) => return Ok(result),
            Err(e) => detail = e.to_string(),
        }
    }
    Err(AmarError::UnparseableAfterRetries {
        expected: "extraction result",
        attempts: PARSE_RETRIES + 1,
        detail,
    })
}

/// Content-addressed node id: a stable function of (name, type) so that the
/// same entity ingested in any order lands on the same id.
pub fn node_id_for(name: &str, node_type: NodeType) -> String {
    let mut hasher = Sha256::new();
    hasher.update(name.trim().to_lowercase().as_bytes());
    hasher.update([0x1f]);
    hasher.update(node_type.label().as_bytes());
    let digest = hasher.finalize();
    format!("k{}", &hex(&digest)[..16])
}

/// A corpus document, or the reason it could not be read.
#[derive(Debug, Clone)]
pub struct LoadedDoc {
    pub doc_id: String,
    pub text: std::result::Result<String, String>,
}

/// Read a corpus: either a directory of UTF-8 `.txt` files (file stem is the
/// doc id) or a JSON Lines manifest of `{"doc_id", "text"}`. Per-document
/// read failures are carried in the result, not raised.
pub fn load_corpus(path: &Path) -> Result<Vec<LoadedDoc>> {
    if path.is_dir() {
        let mut names: Vec<std::path::PathBuf> = std::fs::read_dir(path)
            .map_err(|e| AmarError::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        names.sort();
        return Ok(names
            .into_iter()
            .map(|p| {
                let doc_id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let text = std::fs::read_to_string(&p).map_err(|e| e.to_string());
                LoadedDoc { doc_id, text }
            })
            .collect());
    }
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct ManifestLine {
        doc_id: String,
        text: String,
    }
    let file = File::open(path).map_err(|e| AmarError::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AmarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| AmarError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        docs.push(LoadedDoc {
            doc_id: parsed.doc_id,
            text: Ok(parsed.text),
        });
    }
    Ok(docs)
}

/// Counters of one ingestion run. Printed by the CLI as a single JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub docs: usize,
    pub chunks: usize,
    pub entities: usize,
    pub relations: usize,
    pub dropped_entities: usize,
    pub dropped_relations: usize,
    pub failed_docs: usize,
    pub failures: Vec<String>,
    pub merged_duplicates: usize,
}

/// Chunk, extract, and merge a corpus into `graph`. Backend and read errors
/// are isolated per document: processing continues and the failure is
/// recorded in the stats.
pub fn ingest_corpus(
    docs: &[LoadedDoc],
    graph: &mut KnowledgeGraph,
    backend: &dyn Backend,
    window: usize,
    overlap: usize,
) -> Result<IngestStats> {
    if overlap >= window {
        return Err(AmarError::InvalidChunking { window, overlap });
    }
    let mut stats = IngestStats::default();
    for doc in docs {
        let text = match &doc.text {
            Ok(text) => text,
            Err(reason) => {
                stats.failed_docs += 1;
                stats.failures.push(format!("{}: {reason}", doc.doc_id));
                continue;
            }
        };
        let chunks = chunk_document(&doc.doc_id, text, window, overlap)?;
        let mut doc_failed = false;
        for chunk in &chunks {
            let extraction = match extract(chunk, backend) {
                Ok(extraction) => extraction,
                Err(e) => {
                    stats.failures.push(format!(
                        "{} chunk {}: {e}",
                        doc.doc_id, chunk.chunk_index
                    ));
                    doc_failed = true;
                    break;
                }
            };
            stats.chunks += 1;
            stats.dropped_entities += extraction.dropped_entities;
            stats.dropped_relations += extraction.dropped_relations;
            // resolve names to ids within this extraction result only
            let mut local: Vec<(String, String)> = Vec::new();
            for entity in &extraction.entities {
                let node = KnowledgeNode::new(
                    node_id_for(&entity.name, entity.node_type),
                    entity.name.clone(),
                    entity.node_type,
                    entity.description.clone(),
                )
                .with_source(doc.doc_id.clone(), chunk.chunk_index);
                let id = graph.add_node(node)?;
                stats.entities += 1;
                local.push((entity.name.trim().to_lowercase(), id));
            }
            for relation in &extraction.relations {
                let find = |name: &str| {
                    let needle = name.trim().to_lowercase();
                    local
                        .iter()
                        .find(|(n, _)| *n == needle)
                        .map(|(_, id)| id.clone())
                };
                let (Some(source), Some(target)) =
                    (find(&relation.source), find(&relation.target))
                else {
                    stats.dropped_relations += 1;
                    continue;
                };
                if source == target {
                    stats.dropped_relations += 1;
                    continue;
                }
                graph.add_edge(KnowledgeEdge::new(source, target, relation.description.clone()))?;
                stats.relations += 1;
            }
        }
        if doc_failed {
            stats.failed_docs += 1;
        } else {
            stats.docs += 1;
        }
    }
    Ok(stats)
}
