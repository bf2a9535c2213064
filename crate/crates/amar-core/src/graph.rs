//! Art context knowledge graph: typed nodes, described undirected edges,
//! fuzzy-name deduplication, degree centrality, and neighborhood extraction.
//!
//! The graph is built single-writer during ingestion, deduplicated once, and
//! then treated as immutable by retrieval and generation. Persisted form is
//! JSON Lines: one node or edge object per line, nodes first, both sorted, so
//! that equal graphs serialize to identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AmarError, Result};

/// Separator used when merging node or edge descriptions.
pub const DESCRIPTION_SEPARATOR: &str = "\n";

/// Closed taxonomy of knowledge node types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Artist,
    Theme,
    #[serde(rename = "Culture & History")]
    CultureHistory,
    #[serde(rename = "Art Style & Technique")]
    ArtStyleTechnique,
    #[serde(rename = "Art Movement & School")]
    ArtMovementSchool,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Artist,
        NodeType::Theme,
        NodeType::CultureHistory,
        NodeType::ArtStyleTechnique,
        NodeType::ArtMovementSchool,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NodeType::Artist => "Artist",
            NodeType::Theme => "Theme",
            NodeType::CultureHistory => "Culture & History",
            NodeType::ArtStyleTechnique => "Art Style & Technique",
            NodeType::ArtMovementSchool => "Art Movement & School",
        }
    }

    /// Parse a serialized label. Any label outside the closed set is an error.
    pub fn parse(label: &str) -> Result<NodeType> {
        NodeType::ALL
            .into_iter()
            .find(|t| t.label() == label)
            .ok_or_else(|| AmarError::UnknownNodeType(label.to_string()))
    }
}

impl std::fmt::Display for NodeType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Where a node was extracted from: document id plus chunk ordinal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceRef {
    pub doc_id: String,
    pub chunk_index: usize,
}

/// A typed entity of the knowledge graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub id: String,
    pub name: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub description: String,
    pub source_refs: Vec<SourceRef>,
}

impl KnowledgeNode {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        node_type: NodeType,
        description: impl Into<String>,
    ) -> Self {
        KnowledgeNode {
            id: id.into(),
            name: name.into(),
            node_type,
            description: description.into(),
            source_refs: Vec::new(),
        }
    }

    pub fn with_source(mut self, doc_id: impl Into<String>, chunk_index: usize) -> Self {
        self.source_refs.push(SourceRef {
            doc_id: doc_id.into(),
            chunk_index,
        });
        self
    }
}

/// A described relation between two nodes. Storage is keyed by the unordered
/// id pair; `source_id`/`target_id` keep the phrasing direction of the first
/// extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEdge {
    pub source_id: String,
    pub target_id: String,
    pub description: String,
}

impl KnowledgeEdge {
    pub fn new(
        source_id: impl Into<String>,
        target_id: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        KnowledgeEdge {
            source_id: source_id.into(),
            target_id: target_id.into(),
            description: description.into(),
        }
    }
}

/// Outcome of [`KnowledgeGraph::add_edge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeStatus {
    Inserted,
    Merged,
}

/// One node merge performed by deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedPair {
    pub survivor: String,
    pub removed: String,
}

/// Report of a de-duplication pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub merges: Vec<MergedPair>,
}

impl MergeReport {
    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// In-memory knowledge graph. Adjacency is derived from the edge set and kept
/// consistent with it at all times.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(try_from = "GraphData", into = "GraphData")]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, KnowledgeNode>,
    edges: BTreeMap<(String, String), KnowledgeEdge>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
    name_index: BTreeMap<(String, NodeType), String>,
}

// graph equality is node/edge set comparison; the other fields are derived
impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

/// Flat serialized shape used inside run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphData {
    nodes: Vec<KnowledgeNode>,
    edges: Vec<KnowledgeEdge>,
}

impl From<KnowledgeGraph> for GraphData {
    fn from(g: KnowledgeGraph) -> Self {
        GraphData {
            nodes: g.nodes.into_values().collect(),
            edges: g.edges.into_values().collect(),
        }
    }
}

impl TryFrom<GraphData> for KnowledgeGraph {
    type Error = AmarError;

    fn try_from(data: GraphData) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        for node in data.nodes {
            g.insert_node_exact(node)?;
        }
        for edge in data.edges {
            g.add_edge(edge)?;
        }
        Ok(g)
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        KnowledgeGraph::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&KnowledgeNode> {
        self.nodes.get(id)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes keyed by id, in id order.
    pub fn nodes(&self) -> &BTreeMap<String, KnowledgeNode> {
        &self.nodes
    }

    /// Edges in unordered-key order.
    pub fn edges(&self) -> impl Iterator<Item = &KnowledgeEdge> {
        self.edges.values()
    }

    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(id)
    }

    pub fn degree(&self, id: &str) -> Result<usize> {
        if !self.nodes.contains_key(id) {
            return Err(AmarError::UnknownNode(id.to_string()));
        }
        Ok(self.adjacency.get(id).map_or(0, |n| n.len()))
    }

    /// Insert a node verbatim, without name-based merging. Used by loading
    /// and by graph reconstruction.
    fn insert_node_exact(&mut self, node: KnowledgeNode) -> Result<()> {
        let trimmed = node.name.trim();
        if trimmed.is_empty() {
            return Err(AmarError::EmptyName);
        }
        if self.nodes.contains_key(&node.id) {
            return Err(AmarError::DuplicateId(node.id));
        }
        let key = (trimmed.to_lowercase(), node.node_type);
        self.name_index.entry(key).or_insert_with(|| node.id.clone());
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Add a node, merging into an existing node when name (case-insensitive,
    /// trimmed) and type already exist. Returns the id that now houses the
    /// entity.
    pub fn add_node(&mut self, node: KnowledgeNode) -> Result<String> {
        let trimmed = node.name.trim();
        if trimmed.is_empty() {
            return Err(AmarError::EmptyName);
        }
        let key = (trimmed.to_lowercase(), node.node_type);
        if let Some(existing_id) = self.name_index.get(&key).cloned() {
            let existing = self
                .nodes
                .get_mut(&existing_id)
                .expect("name index points at a live node");
            merge_description(&mut existing.description, &node.description);
            for r in node.source_refs {
                if !existing.source_refs.contains(&r) {
                    existing.source_refs.push(r);
                }
            }
            return Ok(existing_id);
        }
        let id = node.id.clone();
        self.insert_node_exact(node)?;
        Ok(id)
    }

    /// Add an edge between two existing nodes. A duplicate unordered pair
    /// merges descriptions instead of inserting a second edge.
    pub fn add_edge(&mut self, edge: KnowledgeEdge) -> Result<EdgeStatus> {
        if !self.nodes.contains_key(&edge.source_id) {
            return Err(AmarError::UnknownNode(edge.source_id));
        }
        if !self.nodes.contains_key(&edge.target_id) {
            return Err(AmarError::UnknownNode(edge.target_id));
        }
        if edge.source_id == edge.target_id {
            return Err(AmarError::SelfLoop(edge.source_id));
        }
        let key = unordered(&edge.source_id, &edge.target_id);
        if let Some(existing) = self.edges.get_mut(&key) {
            merge_description(&mut existing.description, &edge.description);
            return Ok(EdgeStatus::Merged);
        }
        self.adjacency
            .entry(edge.source_id.clone())
            .or_default()
            .insert(edge.target_id.clone());
        self.adjacency
            .entry(edge.target_id.clone())
            .or_default()
            .insert(edge.source_id.clone());
        self.edges.insert(key, edge);
        Ok(EdgeStatus::Inserted)
    }

    /// Normalized degree: degree(node) / (|nodes| - 1).
    pub fn degree_centrality(&self, id: &str) -> Result<f64> {
        if !self.nodes.contains_key(id) {
            return Err(AmarError::UnknownNode(id.to_string()));
        }
        let n = self.nodes.len();
        if n < 2 {
            return Err(AmarError::SingletonGraph);
        }
        let degree = self.adjacency.get(id).map_or(0, |s| s.len());
        Ok(degree as f64 / (n - 1) as f64)
    }

    /// Induced subgraph over every node within `hops` edges of any seed,
    /// including all edges among the retained nodes. `hops = 0` keeps the
    /// seeds only.
    pub fn neighborhood(&self, seeds: &[String], hops: usize) -> Result<KnowledgeGraph> {
        for seed in seeds {
            if !self.nodes.contains_key(seed) {
                return Err(AmarError::UnknownNode(seed.clone()));
            }
        }
        let mut included: BTreeSet<String> = seeds.iter().cloned().collect();
        let mut frontier: BTreeSet<String> = included.clone();
        for _ in 0..hops {
            let mut next = BTreeSet::new();
            for id in &frontier {
                if let Some(neighbors) = self.adjacency.get(id) {
                    for n in neighbors {
                        if included.insert(n.clone()) {
                            next.insert(n.clone());
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        let mut sub = KnowledgeGraph::new();
        for id in &included {
            sub.insert_node_exact(self.nodes[id].clone())?;
        }
        for (key, edge) in &self.edges {
            if included.contains(&key.0) && included.contains(&key.1) {
                sub.add_edge(edge.clone())?;
            }
        }
        Ok(sub)
    }

    /// Merge near-duplicate nodes until no same-type pair has a name
    /// similarity at or above `threshold`. The survivor of each merge is the
    /// node with the longer description, ties broken by lexicographically
    /// smaller id. Edges are re-pointed to the survivor; self-loops produced
    /// by a merge are dropped.
    pub fn merge_duplicates(&mut self, threshold: f64) -> Result<MergeReport> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(AmarError::InvalidThreshold(threshold));
        }
        let mut report = MergeReport::default();
        while let Some((a, b)) = self.find_duplicate_pair(threshold) {
            let survivor_first = {
                let na = &self.nodes[&a];
                let nb = &self.nodes[&b];
                match na.description.len().cmp(&nb.description.len()) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => a < b,
                }
            };
            let (survivor, removed) = if survivor_first { (a, b) } else { (b, a) };
            self.merge_node_into(&survivor, &removed);
            report.merges.push(MergedPair {
                survivor,
                removed,
            });
        }
        Ok(report)
    }

    fn find_duplicate_pair(&self, threshold: f64) -> Option<(String, String)> {
        let ids: Vec<&String> = self.nodes.keys().collect();
        for (i, a) in ids.iter().enumerate() {
            let na = &self.nodes[*a];
            let a_norm = na.name.trim().to_lowercase();
            let a_len = a_norm.chars().count();
            for b in ids.iter().skip(i + 1) {
                let nb = &self.nodes[*b];
                if na.node_type != nb.node_type {
                    continue;
                }
                let b_norm = nb.name.trim().to_lowercase();
                let b_len = b_norm.chars().count();
                // edit distance is at least the length difference
                let max_len = a_len.max(b_len);
                if max_len > 0 {
                    let diff = a_len.abs_diff(b_len);
                    if 1.0 - (diff as f64) / (max_len as f64) < threshold {
                        continue;
                    }
                }
                if name_similarity(&na.name, &nb.name) >= threshold {
                    return Some(((*a).clone(), (*b).clone()));
                }
            }
        }
        None
    }

    fn merge_node_into(&mut self, survivor: &str, removed: &str) {
        let removed_node = self.nodes.remove(removed).expect("removed node exists");
        {
            let s = self
                .nodes
                .get_mut(survivor)
                .expect("survivor node exists");
            merge_description(&mut s.description, &removed_node.description);
            for r in removed_node.source_refs {
                if !s.source_refs.contains(&r) {
                    s.source_refs.push(r);
                }
            }
        }
        self.name_index.retain(|_, id| id != removed);

        // re-point edges touching the removed node
        let affected: Vec<(String, String)> = self
            .edges
            .keys()
            .filter(|(x, y)| x == removed || y == removed)
            .cloned()
            .collect();
        for key in affected {
            let mut edge = self.edges.remove(&key).expect("edge key exists");
            self.detach(&key.0, &key.1);
            if edge.source_id == removed {
                edge.source_id = survivor.to_string();
            }
            if edge.target_id == removed {
                edge.target_id = survivor.to_string();
            }
            if edge.source_id == edge.target_id {
                continue; // self-loop produced by the merge
            }
            let new_key = unordered(&edge.source_id, &edge.target_id);
            if let Some(existing) = self.edges.get_mut(&new_key) {
                merge_description(&mut existing.description, &edge.description);
            } else {
                self.adjacency
                    .entry(edge.source_id.clone())
                    .or_default()
                    .insert(edge.target_id.clone());
                self.adjacency
                    .entry(edge.target_id.clone())
                    .or_default()
                    .insert(edge.source_id.clone());
                self.edges.insert(new_key, edge);
            }
        }
        self.adjacency.remove(removed);
    }

    fn detach(&mut self, a: &str, b: &str) {
        if let Some(s) = self.adjacency.get_mut(a) {
            s.remove(b);
        }
        if let Some(s) = self.adjacency.get_mut(b) {
            s.remove(a);
        }
    }

    /// Write the graph as JSON Lines: node lines sorted by id, then edge
    /// lines sorted by unordered key. LF endings, UTF-8.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| AmarError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for node in self.nodes.values() {
            let line = GraphLine::Node {
                id: node.id.clone(),
                name: node.name.clone(),
                node_type: node.node_type,
                description: node.description.clone(),
                source_refs: node.source_refs.clone(),
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| AmarError::io(path, e.into()))?;
            out.write_all(b"\n").map_err(|e| AmarError::io(path, e))?;
        }
        for edge in self.edges.values() {
            let line = GraphLine::Edge {
                source: edge.source_id.clone(),
                target: edge.target_id.clone(),
                description: edge.description.clone(),
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| AmarError::io(path, e.into()))?;
            out.write_all(b"\n").map_err(|e| AmarError::io(path, e))?;
        }
        out.flush().map_err(|e| AmarError::io(path, e))?;
        Ok(())
    }

    /// Load a graph from JSON Lines. Malformed lines are reported with their
    /// 1-based line number. An empty file loads as an empty graph.
    pub fn load(path: &Path) -> Result<KnowledgeGraph> {
        let file = File::open(path).map_err(|e| AmarError::io(path, e))?;
        let reader = BufReader::new(file);
        let mut graph = KnowledgeGraph::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| AmarError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: GraphLine = serde_json::from_str(&line).map_err(|e| {
                AmarError::MalformedFile {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: e.to_string(),
                }
            })?;
            let apply = |graph: &mut KnowledgeGraph| -> Result<()> {
                match parsed {
                    GraphLine::Node {
                        id,
                        name,
                        node_type,
                        description,
                        source_refs,
                    } => graph.insert_node_exact(KnowledgeNode {
                        id,
                        name,
                        node_type,
                        description,
                        source_refs,
                    }),
                    GraphLine::Edge {
                        source,
                        target,
                        description,
                    } => graph
                        .add_edge(KnowledgeEdge::new(source, target, description))
                        .map(|_| ()),
                }
            };
            apply(&mut graph).map_err(|e| AmarError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(graph)
    }
}

fn merge_description(existing: &mut String, incoming: &str) {
    if incoming.is_empty() || existing.as_str() == incoming {
        return;
    }
    if existing.is_empty() {
        existing.push_str(incoming);
    } else {
        existing.push_str(DESCRIPTION_SEPARATOR);
        existing.push_str(incoming);
    }
}

/// Serialized line shape of the graph file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
enum GraphLine {
    #[serde(rename = "node")]
    Node {
        id: String,
        name: String,
        #[serde(rename = "type")]
        node_type: NodeType,
        description: String,
        source_refs: Vec<SourceRef>,
    },
    #[serde(rename = "edge")]
    Edge {
        source: String,
        target: String,
        description: String,
    },
}

/// Name similarity in [0, 1]: 1 - edit_distance / max_len over lowercased,
/// trimmed inputs. Two empty strings compare as 1.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.trim().to_lowercase().chars().collect();
    let b: Vec<char> = b.trim().to_lowercase().chars().collect();
    let max_len = a.len().max(b.len());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / max_len as f64
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, name: &str, t: NodeType) -> KnowledgeNode {
        KnowledgeNode::new(id, name, t, format!("description of {name}"))
    }

    fn star() -> KnowledgeGraph {
        // center c with leaves l1..l3
        let mut g = KnowledgeGraph::new();
        g.add_node(node("c", "Center", NodeType::Theme)).unwrap();
        for i in 1..=3 {
            g.add_node(node(&format!("l{i}"), &format!("Leaf {i}"), NodeType::Artist))
                .unwrap();
            g.add_edge(KnowledgeEdge::new("c", format!("l{i}"), "spoke"))
                .unwrap();
        }
        g
    }

    // Independent edit-distance oracle: memoized recursion over suffixes.
    fn edit_distance_oracle(a: &str, b: &str) -> usize {
        fn rec(
            a: &[char],
            b: &[char],
            memo: &mut std::collections::HashMap<(usize, usize), usize>,
        ) -> usize {
            match (a.split_first(), b.split_first()) {
                (None, _) => b.len(),
                (_, None) => a.len(),
                (Some((ca, ra)), Some((cb, rb))) => {
                    let key = (a.len(), b.len());
                    if let Some(&hit) = memo.get(&key) {
                        return hit;
                    }
                    let result = if ca == cb {
                        rec(ra, rb, memo)
                    } else {
                        1 + rec(ra, rb, memo)
                            .min(rec(ra, b, memo))
                            .min(rec(a, rb, memo))
                    };
                    memo.insert(key, result);
                    result
                }
            }
        }
        let a: Vec<char> = a.trim().to_lowercase().chars().collect();
        let b: Vec<char> = b.trim().to_lowercase().chars().collect();
        rec(&a, &b, &mut std::collections::HashMap::new())
    }

    #[test]
    fn identical_name_merge_keeps_one_node() {
        let mut g = KnowledgeGraph::new();
        let id1 = g
            .add_node(node("a", "Impressionism", NodeType::ArtMovementSchool))
            .unwrap();
        let id2 = g
            .add_node(KnowledgeNode::new(
                "b",
                "impressionism ",
                NodeType::ArtMovementSchool,
                "light and color",
            ))
            .unwrap();
        assert_eq!(id1, id2);
        assert_eq!(g.node_count(), 1);
        let merged = g.node(&id1).unwrap();
        assert!(merged.description.contains("description of Impressionism"));
        assert!(merged.description.contains("light and color"));
    }

    #[test]
    fn add_node_to_empty_graph() {
        let mut g = KnowledgeGraph::new();
        g.add_node(node("m", "Claude Monet", NodeType::Artist)).unwrap();
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn empty_name_rejected() {
        let mut g = KnowledgeGraph::new();
        let err = g
            .add_node(KnowledgeNode::new("x", "   ", NodeType::Theme, ""))
            .unwrap_err();
        assert!(matches!(err, AmarError::EmptyName));
    }

    #[test]
    fn unordered_pair_merge() {
        let mut g = KnowledgeGraph::new();
        g.add_node(node("a", "A", NodeType::Theme)).unwrap();
        g.add_node(node("b", "B", NodeType::Theme)).unwrap();
        assert_eq!(
            g.add_edge(KnowledgeEdge::new("a", "b", "first")).unwrap(),
            EdgeStatus::Inserted
        );
        assert_eq!(
            g.add_edge(KnowledgeEdge::new("b", "a", "second")).unwrap(),
            EdgeStatus::Merged
        );
        assert_eq!(g.edge_count(), 1);
        let edge = g.edges().next().unwrap();
        assert!(edge.description.contains("first") && edge.description.contains("second"));
    }

    #[test]
    fn self_loop_and_unknown_endpoint_rejected() {
        let mut g = KnowledgeGraph::new();
        g.add_node(node("a", "A", NodeType::Theme)).unwrap();
        assert!(matches!(
            g.add_edge(KnowledgeEdge::new("a", "a", "x")).unwrap_err(),
            AmarError::SelfLoop(_)
        ));
        assert!(matches!(
            g.add_edge(KnowledgeEdge::new("a", "nope", "x")).unwrap_err(),
            AmarError::UnknownNode(_)
        ));
    }

    #[test]
    fn similarity_identical() {
        assert_eq!(name_similarity("Monet", "Monet"), 1.0);
        assert_eq!(name_similarity("  Monet ", "monet"), 1.0);
    }

    #[test]
    fn similarity_abc_abd() {
        // oracle: distance 1 over max length 3
        assert_eq!(edit_distance_oracle("abc", "abd"), 1);
        let got = name_similarity("abc", "abd");
        assert!((got - 2.0 / 3.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn similarity_empty_cases() {
        assert_eq!(name_similarity("", "x"), 0.0);
        assert_eq!(name_similarity("", ""), 1.0);
    }

    #[test]
    fn similarity_matches_oracle_and_is_symmetric() {
        let samples = [
            "Paul Cezanne",
            "Paul Cézanne",
            "Dutch Golden Age",
            "dutch golden age ",
            "Oil on canvas",
            "Fresco",
            "a",
            "",
        ];
        for a in &samples {
            for b in &samples {
                let d = edit_distance_oracle(a, b);
                let max_len = a
                    .trim()
                    .to_lowercase()
                    .chars()
                    .count()
                    .max(b.trim().to_lowercase().chars().count());
                let expect = if max_len == 0 {
                    1.0
                } else {
                    1.0 - d as f64 / max_len as f64
                };
                let got = name_similarity(a, b);
                assert!((got - expect).abs() < 1e-12, "{a:?} vs {b:?}");
                assert_eq!(got, name_similarity(b, a));
                assert!((0.0..=1.0).contains(&got));
            }
        }
    }

    #[test]
    fn near_duplicate_artists_merge_and_edges_repoint() {
        // names long enough that a one-character edit stays above 0.95
        let a = "Michelangelo Buonarroti";
        let b = "Michelangelo Buonarrotti";
        assert!(name_similarity(a, b) >= 0.95, "fixture must clear threshold");

        let mut g = KnowledgeGraph::new();
        g.add_node(KnowledgeNode::new("n1", a, NodeType::Artist, "short")).unwrap();
        g.add_node(KnowledgeNode::new("n2", b, NodeType::Artist, "a longer description"))
            .unwrap();
        g.add_node(node("t", "Renaissance sculpture", NodeType::Theme)).unwrap();
        g.add_edge(KnowledgeEdge::new("n1", "t", "works in")).unwrap();
        g.add_edge(KnowledgeEdge::new("n2", "t", "famous for")).unwrap();

        let report = g.merge_duplicates(0.95).unwrap();
        assert_eq!(report.len(), 1);
        // survivor has the longer description
        assert_eq!(report.merges[0].survivor, "n2");
        assert_eq!(report.merges[0].removed, "n1");
        assert!(!g.contains_node("n1"));
        assert_eq!(g.edge_count(), 1); // both edges collapse onto (n2, t)
        assert_eq!(g.degree("n2").unwrap(), 1);
        // all endpoints still valid
        for e in g.edges() {
            assert!(g.contains_node(&e.source_id) && g.contains_node(&e.target_id));
        }
    }

    #[test]
    fn different_types_never_merge() {
        let mut g = KnowledgeGraph::new();
        g.add_node(KnowledgeNode::new("a", "Dürer", NodeType::Artist, "")).unwrap();
        g.add_node(KnowledgeNode::new("b", "Dürer", NodeType::Theme, "")).unwrap();
        let report = g.merge_duplicates(0.95).unwrap();
        assert!(report.is_empty());
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn merge_duplicates_is_idempotent() {
        let mut g = KnowledgeGraph::new();
        g.add_node(KnowledgeNode::new("a", "Dutch Golden Age painting", NodeType::CultureHistory, "xx")).unwrap();
        g.add_node(KnowledgeNode::new("b", "Dutch Golden Age paintings", NodeType::CultureHistory, "x")).unwrap();
        let first = g.merge_duplicates(0.95).unwrap();
        assert_eq!(first.len(), 1);
        let second = g.merge_duplicates(0.95).unwrap();
        assert!(second.is_empty());
    }

    #[test]
    fn threshold_out_of_range_rejected() {
        let mut g = KnowledgeGraph::new();
        assert!(matches!(
            g.merge_duplicates(0.0).unwrap_err(),
            AmarError::InvalidThreshold(_)
        ));
        assert!(matches!(
            g.merge_duplicates(1.5).unwrap_err(),
            AmarError::InvalidThreshold(_)
        ));
    }

    #[test]
    fn star_centralities() {
        let g = star();
        assert_eq!(g.degree_centrality("c").unwrap(), 1.0);
        let leaf = g.degree_centrality("l1").unwrap();
        assert!((leaf - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn isolated_node_centrality_is_zero() {
        let mut g = star();
        g.add_node(node("i", "Isolated", NodeType::Theme)).unwrap();
        assert_eq!(g.degree_centrality("i").unwrap(), 0.0);
    }

    #[test]
    fn centrality_errors() {
        let mut g = KnowledgeGraph::new();
        g.add_node(node("a", "A", NodeType::Theme)).unwrap();
        assert!(matches!(
            g.degree_centrality("a").unwrap_err(),
            AmarError::SingletonGraph
        ));
        assert!(matches!(
            g.degree_centrality("zz").unwrap_err(),
            AmarError::UnknownNode(_)
        ));
    }

    #[test]
    fn degree_sum_equals_twice_edges() {
        let g = star();
        let total: usize = g.nodes().keys().map(|id| g.degree(id).unwrap()).sum();
        assert_eq!(total, 2 * g.edge_count());
    }

    #[test]
    fn neighborhood_hops_zero_and_one() {
        let g = star();
        let zero = g.neighborhood(&["c".into()], 0).unwrap();
        assert_eq!(zero.node_count(), 1);
        assert_eq!(zero.edge_count(), 0);
        let one = g.neighborhood(&["c".into()], 1).unwrap();
        assert_eq!(one.node_count(), 4);
        assert_eq!(one.edge_count(), 3);
    }

    #[test]
    fn neighborhood_on_path() {
        // A - B - C - D, seeded {A}, hops 2 -> {A, B, C}
        let mut g = KnowledgeGraph::new();
        for id in ["A", "B", "C", "D"] {
            g.add_node(node(id, &format!("Name {id}"), NodeType::Theme)).unwrap();
        }
        g.add_edge(KnowledgeEdge::new("A", "B", "")).unwrap();
        g.add_edge(KnowledgeEdge::new("B", "C", "")).unwrap();
        g.add_edge(KnowledgeEdge::new("C", "D", "")).unwrap();
        let sub = g.neighborhood(&["A".into()], 2).unwrap();
        let ids: Vec<&String> = sub.nodes().keys().collect();
        assert_eq!(ids, ["A", "B", "C"]);
        assert_eq!(sub.edge_count(), 2);
    }

    #[test]
    fn neighborhood_unknown_seed() {
        let g = star();
        assert!(matches!(
            g.neighborhood(&["zz".into()], 1).unwrap_err(),
            AmarError::UnknownNode(_)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.jsonl");
        let mut g = star();
        g.add_node(KnowledgeNode::new("u", "Umlauts äöü", NodeType::CultureHistory, "née")
            .with_source("doc1", 3))
            .unwrap();
        g.save(&path).unwrap();
        let loaded = KnowledgeGraph::load(&path).unwrap();
        assert_eq!(g, loaded);
        // saving the loaded graph reproduces identical bytes
        let path2 = dir.path().join("graph2.jsonl");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"kind\":\"node\",\"id\":\"a\",\"name\":\"A\",\"type\":\"Theme\",\"description\":\"\",\"source_refs\":[]}\n{\"kind\":\"edge\",\"sou",
        )
        .unwrap();
        match KnowledgeGraph::load(&path).unwrap_err() {
            AmarError::MalformedFile { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let g = KnowledgeGraph::load(&path).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn node_type_labels_round_trip() {
        for t in NodeType::ALL {
            assert_eq!(NodeType::parse(t.label()).unwrap(), t);
        }
        assert!(matches!(
            NodeType::parse("Animal").unwrap_err(),
            AmarError::UnknownNodeType(_)
        ));
    }
}
