//! Dense retrieval over knowledge units: exact top-k cosine search in a
//! shared embedding space.
//!
//! The index is brute force on purpose. Graphs here are thousands of nodes at
//! most, exactness keeps retrieval reproducible, and every query is checkable
//! against a full sort.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{AmarError, Result};
use crate::graph::{KnowledgeGraph, KnowledgeNode};

/// Fixed-length, finite embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<EmbeddingVector> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AmarError::NonFiniteVector);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity clamped to [-1, 1] against round-off. Zero vectors and
/// mismatched dimensions are errors.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(AmarError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(AmarError::ZeroVector);
    }
    Ok((dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0))
}

/// One indexed knowledge unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub unit_id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Brute-force vector index. Entries are kept sorted by unit id so that a
/// rebuilt or reloaded index is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
}

/// Text handed to the encoder for one node: "name (type): description".
pub fn render_node_text(node: &KnowledgeNode) -> String {
    format!(
        "{} ({}): {}",
        node.name,
        node.node_type.label(),
        node.description
    )
}

impl VectorIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Embed every node of the graph. Any failure aborts the build; a partial
    /// index is never returned.
    pub fn build(graph: &KnowledgeGraph, backend: &dyn Backend) -> Result<VectorIndex> {
        if graph.is_empty() {
            return Err(AmarError::EmptyGraph);
        }
        let mut entries = Vec::with_capacity(graph.node_count());
        let mut dimension = None;
        for node in graph.nodes().values() {
            let text = render_node_text(node);
            let vector = backend.embed(&text)?;
            match dimension {
                None => dimension = Some(vector.dimension()),
                Some(d) if d != vector.dimension() => {
                    return Err(AmarError::DimensionMismatch {
                        left: d,
                        right: vector.dimension(),
                    })
                }
                Some(_) => {}
            }
            entries.push(IndexEntry {
                unit_id: node.id.clone(),
                text,
                vector,
            });
        }
        Ok(VectorIndex {
            dimension: dimension.expect("non-empty graph yields a dimension"),
            entries,
        })
    }

    /// Exact top-k by cosine, sorted by score descending with ties broken by
    /// unit id ascending. Returns all entries when `k` exceeds the index.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(AmarError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(AmarError::DimensionMismatch {
                left: query.dimension(),
                right: self.dimension,
            });
        }
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .map(|e| cosine(&e.vector, query).map(|s| (e.unit_id.clone(), s)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Write as JSON Lines: a `{"dimension": D}` header, then one entry per
    /// line with the vector printed to 17 significant digits so that reload
    /// reproduces every f64 bit-for-bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| AmarError::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{{\"dimension\":{}}}", self.dimension).map_err(|e| AmarError::io(path, e))?;
        for entry in &self.entries {
            let numbers: Vec<String> = entry
                .vector
                .values()
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            let line = format!(
                "{{\"unit_id\":{},\"text\":{},\"vector\":[{}]}}",
                serde_json::to_string(&entry.unit_id).expect("string serializes"),
                serde_json::to_string(&entry.text).expect("string serializes"),
                numbers.join(",")
            );
            out.write_all(line.as_bytes())
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| AmarError::io(path, e))?;
        }
        out.flush().map_err(|e| AmarError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<VectorIndex> {
        #[derive(Deserialize)]
        struct Header {
            dimension: usize,
        }
        #[derive(Deserialize)]
        struct Line {
            unit_id: String,
            text: String,
            vector: Vec<f64>,
        }

        let file = File::open(path).map_err(|e| AmarError::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| AmarError::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| AmarError::MalformedFile {
                    path: path.to_path_buf(),
                    line: 1,
                    detail: format!("bad header: {e}"),
                })?
            }
            None => {
                return Err(AmarError::MalformedFile {
                    path: path.to_path_buf(),
                    line: 1,
                    detail: "missing dimension header".into(),
                })
            }
        };
        let mut entries = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in lines {
            let line = line.map_err(|e| AmarError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| AmarError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
            if parsed.vector.len() != header.dimension {
                return Err(AmarError::MalformedFile {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!(
                        "vector has dimension {}, header says {}",
                        parsed.vector.len(),
                        header.dimension
                    ),
                });
            }
            if !seen.insert(parsed.unit_id.clone()) {
                return Err(AmarError::MalformedFile {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!("duplicate unit_id `{}`", parsed.unit_id),
                });
            }
            entries.push(IndexEntry {
                unit_id: parsed.unit_id,
                text: parsed.text,
                vector: EmbeddingVector::new(parsed.vector).map_err(|e| {
                    AmarError::MalformedFile {
                        path: path.to_path_buf(),
                        line: i + 1,
                        detail: e.to_string(),
                    }
                })?,
            });
        }
        entries.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        Ok(VectorIndex {
            dimension: header.dimension,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::graph::{KnowledgeEdge, KnowledgeNode, NodeType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec_of(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn fixture_graph(n: usize) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for i in 0..n {
            let t = NodeType::ALL[i % NodeType::ALL.len()];
            g.add_node(KnowledgeNode::new(
                format!("n{i:03}"),
                format!("Unit {i}"),
                t,
                format!("unit number {i}"),
            ))
            .unwrap();
        }
        for i in 1..n {
            g.add_edge(KnowledgeEdge::new(format!("n{:03}", i - 1), format!("n{i:03}"), "next"))
                .unwrap();
        }
        g
    }

    #[test]
    fn cosine_identity() {
        let v = vec_of(&[0.3, -1.2, 4.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine(&vec_of(&[1.0, 0.0]), &vec_of(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_45_degrees() {
        // hand computation: 1/sqrt(2)
        let got = cosine(&vec_of(&[1.0, 1.0]), &vec_of(&[1.0, 0.0])).unwrap();
        assert!((got - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&vec_of(&[0.0, 0.0]), &vec_of(&[1.0, 0.0])).unwrap_err(),
            AmarError::ZeroVector
        ));
        assert!(matches!(
            cosine(&vec_of(&[1.0]), &vec_of(&[1.0, 0.0])).unwrap_err(),
            AmarError::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn cosine_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = vec_of(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            let b = vec_of(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_vector_rejected() {
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn build_over_fixture_is_deterministic() {
        let g = fixture_graph(5);
        let backend = MockBackend::new("e", 9);
        let a = VectorIndex::build(&g, &backend).unwrap();
        let b = VectorIndex::build(&g, &backend).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a.dimension(), 64);
    }

    #[test]
    fn build_over_empty_graph_fails() {
        let g = KnowledgeGraph::new();
        let backend = MockBackend::new("e", 9);
        assert!(matches!(
            VectorIndex::build(&g, &backend).unwrap_err(),
            AmarError::EmptyGraph
        ));
    }

    #[test]
    fn top_k_equal_to_size_returns_everything_sorted() {
        let g = fixture_graph(6);
        let backend = MockBackend::new("e", 9);
        let index = VectorIndex::build(&g, &backend).unwrap();
        let query = backend.embed("Unit 3").unwrap();
        let got = index.top_k(&query, 6).unwrap();
        assert_eq!(got.len(), 6);
        for pair in got.windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
    }

    #[test]
    fn top_k_finds_exact_match() {
        let g = fixture_graph(4);
        let backend = MockBackend::new("e", 9);
        let index = VectorIndex::build(&g, &backend).unwrap();
        let query = backend.embed(&index.entries()[2].text).unwrap();
        let got = index.top_k(&query, 1).unwrap();
        assert_eq!(got[0].0, index.entries()[2].unit_id);
        assert!((got[0].1 - 1.0).abs() < 1e-12);
    }

    /// Independent oracle: score every entry with a separately written
    /// cosine, full-sort, and cut.
    fn top_k_oracle(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
        fn cos(a: &[f64], b: &[f64]) -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
        let mut all: Vec<(String, f64)> = index
            .entries()
            .iter()
            .map(|e| (e.unit_id.clone(), cos(e.vector.values(), query.values())))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.into_iter().take(k).collect()
    }

    #[test]
    fn top_k_matches_full_sort_oracle_on_random_indexes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..200 {
            let n = rng.gen_range(1..=30);
            let entries: Vec<IndexEntry> = (0..n)
                .map(|i| IndexEntry {
                    unit_id: format!("u{i:03}"),
                    text: format!("text {i}"),
                    vector: vec_of(
                        &(0..16)
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect::<Vec<_>>(),
                    ),
                })
                .collect();
            let index = VectorIndex {
                dimension: 16,
                entries,
            };
            let query = vec_of(&(0..16).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            for k in [1usize, 5, 10] {
                let got = index.top_k(&query, k).unwrap();
                let want = top_k_oracle(&index, &query, k);
                assert_eq!(got.len(), want.len(), "trial {trial} k {k}");
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.0, w.0, "trial {trial} k {k}");
                    assert!((g.1 - w.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn top_k_prefix_property() {
        let g = fixture_graph(12);
        let backend = MockBackend::new("e", 4);
        let index = VectorIndex::build(&g, &backend).unwrap();
        let query = backend.embed("prefix probe").unwrap();
        for k in 1..12 {
            let small = index.top_k(&query, k).unwrap();
            let big = index.top_k(&query, k + 1).unwrap();
            assert_eq!(small[..], big[..k]);
        }
    }

    #[test]
    fn save_load_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        let g = fixture_graph(7);
        let backend = MockBackend::new("e", 13);
        let index = VectorIndex::build(&g, &backend).unwrap();
        index.save(&path).unwrap();
        let loaded = VectorIndex::load(&path).unwrap();
        assert_eq!(index, loaded);
        // identical bytes on re-save
        let path2 = dir.path().join("index2.jsonl");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        // identical query results
        let query = backend.embed("après la pluie").unwrap();
        assert_eq!(index.top_k(&query, 3).unwrap(), loaded.top_k(&query, 3).unwrap());
    }

    #[test]
    fn mixed_dimension_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"dimension\":2}\n{\"unit_id\":\"a\",\"text\":\"t\",\"vector\":[1.0,2.0]}\n{\"unit_id\":\"b\",\"text\":\"t\",\"vector\":[1.0]}\n",
        )
        .unwrap();
        match VectorIndex::load(&path).unwrap_err() {
            AmarError::MalformedFile { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
