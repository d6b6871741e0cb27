//! Is-a concept hierarchies: loading, anchor-level discovery, category
//! counts and concept documents.
//!
//! Files are a minimal RF2-like TSV pair. `concepts.tsv` has the header
//! `id\tterm\tactive`, `relationships.tsv` has `child\tparent\tactive`.
//! Rows with `active = 0` are ignored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::Document;

#[derive(Debug, Error, PartialEq)]
pub enum OntologyError {
    #[error("malformed row at {file}:{line}: {reason}")]
    MalformedRow { file: String, line: usize, reason: String },
    #[error("cycle detected through concept {0}")]
    CycleDetected(ConceptId),
    #[error("edge {0} -> {1} references an unknown concept")]
    DanglingEdge(ConceptId, ConceptId),
    #[error("graph has no root concept")]
    NoRoot,
    #[error("graph has multiple roots: {0:?}")]
    MultipleRoots(Vec<ConceptId>),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Concept identifier. Numeric ids (SNOMED style) order numerically,
/// everything else lexicographically after them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub String);

impl ConceptId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric_key(&self) -> Option<&str> {
        let s = self.0.as_str();
        if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
            let t = s.trim_start_matches('0');
            Some(if t.is_empty() { "0" } else { t })
        } else {
            None
        }
    }
}

impl Ord for ConceptId {
    fn cmp(&self, other: &Self) -> Ordering {
        let primary = match (self.numeric_key(), other.numeric_key()) {
            (Some(a), Some(b)) => a.len().cmp(&b.len()).then_with(|| a.cmp(b)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        primary.then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for ConceptId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConceptId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Directed acyclic is-a graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGraph {
    concepts: BTreeMap<ConceptId, String>,
    parents: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
    children: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
}

impl ConceptGraph {
    /// Build from in-memory concepts and `(child, parent)` edges, validating
    /// referential integrity and acyclicity.
    pub fn from_parts(
        concepts: BTreeMap<ConceptId, String>,
        edges: impl IntoIterator<Item = (ConceptId, ConceptId)>,
    ) -> Result<Self, OntologyError> {
        let mut parents: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
        let mut children: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
        for (child, parent) in edges {
            if !concepts.contains_key(&child) || !concepts.contains_key(&parent) {
                return Err(OntologyError::DanglingEdge(child, parent));
            }
            if child == parent {
                return Err(OntologyError::CycleDetected(child));
            }
            parents.entry(child.clone()).or_default().insert(parent.clone());
            children.entry(parent).or_default().insert(child);
        }
        let graph = Self {
            concepts,
            parents,
            children,
        };
        graph.check_acyclic()?;
        Ok(graph)
    }

    fn check_acyclic(&self) -> Result<(), OntologyError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<&ConceptId, u8> = BTreeMap::new();
        for start in self.concepts.keys() {
            if state.get(start).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(&ConceptId, Vec<&ConceptId>)> = vec![(start, self.parents_of(start).collect())];
            state.insert(start, 1);
            while let Some((node, pending)) = stack.last_mut() {
                if let Some(next) = pending.pop() {
                    match state.get(next).copied().unwrap_or(0) {
                        0 => {
                            state.insert(next, 1);
                            let ps = self.parents_of(next).collect();
                            stack.push((next, ps));
                        }
                        1 => return Err(OntologyError::CycleDetected(next.clone())),
                        _ => {}
                    }
                } else {
                    state.insert(node, 2);
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.values().map(BTreeSet::len).sum()
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.concepts.contains_key(id)
    }

    pub fn term(&self, id: &ConceptId) -> Option<&str> {
        self.concepts.get(id).map(String::as_str)
    }

    pub fn concepts(&self) -> impl Iterator<Item = (&ConceptId, &str)> {
        self.concepts.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &ConceptId> {
        self.concepts.keys()
    }

    pub fn parents_of<'a>(&'a self, id: &ConceptId) -> impl Iterator<Item = &'a ConceptId> + 'a {
        self.parents.get(id).into_iter().flatten()
    }

    pub fn children_of<'a>(&'a self, id: &ConceptId) -> impl Iterator<Item = &'a ConceptId> + 'a {
        self.children.get(id).into_iter().flatten()
    }

    /// All `(child, parent)` edges in id order.
    pub fn edges(&self) -> impl Iterator<Item = (&ConceptId, &ConceptId)> {
        self.parents.iter().flat_map(|(c, ps)| ps.iter().map(move |p| (c, p)))
    }

    /// Concepts without a parent.
    pub fn roots(&self) -> Vec<ConceptId> {
        self.concepts
            .keys()
            .filter(|id| self.parents.get(*id).is_none_or(BTreeSet::is_empty))
            .cloned()
            .collect()
    }

    pub fn root(&self) -> Result<ConceptId, OntologyError> {
        let mut roots = self.roots();
        match roots.len() {
            0 => Err(OntologyError::NoRoot),
            1 => Ok(roots.remove(0)),
            _ => Err(OntologyError::MultipleRoots(roots)),
        }
    }

    /// Breadth-first distances from `id` to every ancestor-or-self.
    pub fn ancestor_distances(&self, id: &ConceptId) -> BTreeMap<ConceptId, usize> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(id.clone(), 0);
        queue.push_back(id.clone());
        while let Some(node) = queue.pop_front() {
            let d = dist[&node];
            for p in self.parents_of(&node) {
                if !dist.contains_key(p) {
                    dist.insert(p.clone(), d + 1);
                    queue.push_back(p.clone());
                }
            }
        }
        dist
    }

    /// Strict ancestors ordered by (distance, id).
    pub fn ancestors(&self, id: &ConceptId) -> Vec<ConceptId> {
        let mut v: Vec<(usize, ConceptId)> = self
            .ancestor_distances(id)
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(c, d)| (d, c))
            .collect();
        v.sort();
        v.into_iter().map(|(_, c)| c).collect()
    }

    /// Descendants-or-self of `id`, in id order.
    pub fn descendants_or_self(&self, id: &ConceptId) -> BTreeSet<ConceptId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(node) = stack.pop() {
            if out.insert(node.clone()) {
                stack.extend(self.children_of(&node).cloned());
            }
        }
        out
    }

    /// Undirected adjacency lists over a dense node index (ids in sorted order).
    pub fn undirected_adjacency(&self) -> (Vec<ConceptId>, Vec<Vec<usize>>) {
        let ids: Vec<ConceptId> = self.concepts.keys().cloned().collect();
        let index: BTreeMap<&ConceptId, usize> = ids.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let mut adj = vec![BTreeSet::new(); ids.len()];
        for (c, p) in self.edges() {
            let (ci, pi) = (index[c], index[p]);
            adj[ci].insert(pi);
            adj[pi].insert(ci);
        }
        let adj = adj.into_iter().map(|s| s.into_iter().collect()).collect();
        (ids, adj)
    }

    pub fn concepts_tsv(&self) -> String {
        let mut out = String::from("id\tterm\tactive\n");
        for (id, term) in &self.concepts {
            out.push_str(&format!("{id}\t{term}\t1\n"));
        }
        out
    }

    pub fn relationships_tsv(&self) -> String {
        let mut out = String::from("child\tparent\tactive\n");
        for (c, p) in self.edges() {
            out.push_str(&format!("{c}\t{p}\t1\n"));
        }
        out
    }

    pub fn save(&self, concepts_file: &Path, relationships_file: &Path) -> Result<(), OntologyError> {
        write_file(concepts_file, &self.concepts_tsv())?;
        write_file(relationships_file, &self.relationships_tsv())
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), OntologyError> {
    fs::write(path, content).map_err(|e| OntologyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read_file(path: &Path) -> Result<String, OntologyError> {
    fs::read_to_string(path).map_err(|e| OntologyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load a concept graph from the two TSV files.
pub fn load_concept_graph(concepts_file: &Path, relationships_file: &Path) -> Result<ConceptGraph, OntologyError> {
    let concepts = read_file(concepts_file)?;
    let relationships = read_file(relationships_file)?;
    parse_concept_graph(&concepts, &relationships)
}

/// Parse the two TSV payloads directly.
pub fn parse_concept_graph(concepts_tsv: &str, relationships_tsv: &str) -> Result<ConceptGraph, OntologyError> {
    let mut concepts = BTreeMap::new();
    for (line, cols) in tsv_rows(concepts_tsv, "concepts", &["id", "term", "active"])? {
        if !parse_active(&cols[2], "concepts", line)? {
            continue;
        }
        let id = ConceptId::new(cols[0].clone());
        if concepts.insert(id, cols[1].clone()).is_some() {
            return Err(malformed("concepts", line, "duplicate concept id"));
        }
    }
    let mut edges = Vec::new();
    for (line, cols) in tsv_rows(relationships_tsv, "relationships", &["child", "parent", "active"])? {
        if parse_active(&cols[2], "relationships", line)? {
            edges.push((ConceptId::new(cols[0].clone()), ConceptId::new(cols[1].clone())));
        }
    }
    ConceptGraph::from_parts(concepts, edges)
}

fn malformed(file: &str, line: usize, reason: &str) -> OntologyError {
    OntologyError::MalformedRow {
        file: file.to_string(),
        line,
        reason: reason.to_string(),
    }
}

fn parse_active(s: &str, file: &str, line: usize) -> Result<bool, OntologyError> {
    match s {
        "1" => Ok(true),
        "0" => Ok(false),
        _ => Err(malformed(file, line, "active must be 0 or 1")),
    }
}

fn tsv_rows(text: &str, file: &str, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>, OntologyError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| malformed(file, 1, "missing header row"))?;
    let got: Vec<&str> = first.trim_end_matches('\r').split('\t').collect();
    if got != header {
        return Err(malformed(file, 1, &format!("expected header {}", header.join("\\t"))));
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = raw.split('\t').map(|c| c.trim().to_string()).collect();
        if cols.len() != header.len() {
            return Err(malformed(
                file,
                i + 1,
                &format!("expected {} columns, got {}", header.len(), cols.len()),
            ));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(malformed(file, i + 1, "empty field"));
        }
        rows.push((i + 1, cols));
    }
    Ok(rows)
}

/// Anchor assignment of one concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub level1: ConceptId,
    pub level2: Option<ConceptId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMap {
    pub level1: BTreeSet<ConceptId>,
    pub level2: BTreeSet<ConceptId>,
    pub assignment: BTreeMap<ConceptId, Assignment>,
}

impl LevelMap {
    /// Anchors in column order: level 1 ids, then level 2 ids.
    pub fn anchors(&self) -> Vec<ConceptId> {
        self.level1.iter().chain(self.level2.iter()).cloned().collect()
    }

    pub fn anchor_count(&self) -> usize {
        self.level1.len() + self.level2.len()
    }
}

/// Level 1 = children of the root; level 2 = children of level-1 anchors
/// that are not themselves level 1. Every non-root concept is assigned its
/// nearest level-2 ancestor-or-self (ties to the smallest id) and a level-1
/// parent of that anchor; concepts with no level-2 ancestor get their
/// nearest level-1 ancestor-or-self.
pub fn discover_levels(graph: &ConceptGraph) -> Result<LevelMap, OntologyError> {
    let root = graph.root()?;
    let level1: BTreeSet<ConceptId> = graph.children_of(&root).cloned().collect();
    let level2: BTreeSet<ConceptId> = level1
        .iter()
        .flat_map(|a| graph.children_of(a))
        .filter(|c| !level1.contains(*c))
        .cloned()
        .collect();

    let nearest = |dist: &BTreeMap<ConceptId, usize>, set: &BTreeSet<ConceptId>| {
        dist.iter()
            .filter(|(c, _)| set.contains(*c))
            .min_by(|(ca, da), (cb, db)| da.cmp(db).then_with(|| ca.cmp(cb)))
            .map(|(c, _)| c.clone())
    };

    let mut assignment = BTreeMap::new();
    for id in graph.ids() {
        if *id == root {
            continue;
        }
        let dist = graph.ancestor_distances(id);
        let l2 = nearest(&dist, &level2);
        let l1 = match &l2 {
            Some(anchor) => graph.parents_of(anchor).find(|p| level1.contains(*p)).cloned(),
            None => nearest(&dist, &level1),
        };
        if let Some(level1) = l1 {
            assignment.insert(id.clone(), Assignment { level1, level2: l2 });
        }
    }
    Ok(LevelMap {
        level1,
        level2,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub stay_id: String,
    pub counts: BTreeMap<ConceptId, u32>,
    pub unmapped: u32,
}

impl CategoryCounts {
    /// Counts in [`LevelMap::anchors`] order.
    pub fn to_vector(&self, levels: &LevelMap) -> Vec<f64> {
        levels
            .anchors()
            .iter()
            .map(|a| f64::from(self.counts.get(a).copied().unwrap_or(0)))
            .collect()
    }
}

/// Tally the codes of one stay under their anchors. Unknown codes (and the
/// root itself, which has no anchor) go to `unmapped`.
pub fn category_counts(graph: &ConceptGraph, levels: &LevelMap, codes: &[ConceptId], stay_id: &str) -> CategoryCounts {
    let mut counts: BTreeMap<ConceptId, u32> = levels.anchors().into_iter().map(|a| (a, 0)).collect();
    let mut unmapped = 0;
    for code in codes {
        match levels.assignment.get(code).filter(|_| graph.contains(code)) {
            Some(a) => {
                *counts.entry(a.level1.clone()).or_default() += 1;
                if let Some(l2) = &a.level2 {
                    *counts.entry(l2.clone()).or_default() += 1;
                }
            }
            None => unmapped += 1,
        }
    }
    CategoryCounts {
        stay_id: stay_id.to_string(),
        counts,
        unmapped,
    }
}

/// Render each allowed concept as a short text document, sorted by id.
pub fn slice_documents(graph: &ConceptGraph, allow_list: &BTreeSet<ConceptId>) -> Vec<Document> {
    let mut docs = Vec::new();
    for id in allow_list {
        let Some(term) = graph.term(id) else {
            log::warn!("slice_documents: unknown concept {id} skipped");
            continue;
        };
        let parents: Vec<&str> = graph.parents_of(id).filter_map(|p| graph.term(p)).collect();
        let ancestors: Vec<String> = graph
            .ancestors(id)
            .iter()
            .filter_map(|a| graph.term(a).map(str::to_string))
            .collect();
        let mut text = format!("{term} ({id})");
        if parents.is_empty() {
            text.push_str(" is the top-level concept");
        } else {
            text.push_str(&format!(" is-a {}", parents.join(", ")));
        }
        if !ancestors.is_empty() {
            text.push_str(&format!("; ancestors: {}", ancestors.join(", ")));
        }
        docs.push(
            Document::new(format!("concept:{id}"), text)
                .with_meta("kind", "concept")
                .with_meta("concept_id", id.as_str()),
        );
    }
    docs
}

/// The bundled ~50-concept heart-failure-flavoured toy hierarchy.
pub fn builtin_toy_ontology() -> ConceptGraph {
    parse_concept_graph(
        include_str!("../data/ontology/concepts.tsv"),
        include_str!("../data/ontology/relationships.tsv"),
    )
    .expect("bundled ontology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ConceptId {
        ConceptId::from(s)
    }

    fn graph(concepts: &[&str], edges: &[(&str, &str)]) -> Result<ConceptGraph, OntologyError> {
        let c = concepts.iter().map(|c| (id(c), format!("term {c}"))).collect();
        ConceptGraph::from_parts(c, edges.iter().map(|(a, b)| (id(a), id(b))))
    }

    fn toy() -> ConceptGraph {
        graph(
            &["R", "A", "B", "A1", "A2", "C"],
            &[
                ("A", "R"),
                ("B", "R"),
                ("A1", "A"),
                ("A2", "A"),
                ("C", "A1"),
                ("C", "A2"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn minimal_dag() {
        let g = graph(&["R", "A", "B"], &[("A", "R"), ("B", "R")]).unwrap();
        assert_eq!(g.root().unwrap(), id("R"));
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn self_loop_is_cycle() {
        let tsv_c = "id\tterm\tactive\nA\tAlpha\t1\n";
        let tsv_r = "child\tparent\tactive\nA\tA\t1\n";
        assert_eq!(
            parse_concept_graph(tsv_c, tsv_r),
            Err(OntologyError::CycleDetected(id("A")))
        );
    }

    #[test]
    fn longer_cycle_detected() {
        let err = graph(&["A", "B", "C"], &[("A", "B"), ("B", "C"), ("C", "A")]).unwrap_err();
        assert!(matches!(err, OntologyError::CycleDetected(_)));
    }

    #[test]
    fn dangling_edge() {
        let err = graph(&["R", "A"], &[("X", "R")]).unwrap_err();
        assert_eq!(err, OntologyError::DanglingEdge(id("X"), id("R")));
    }

    #[test]
    fn inactive_rows_ignored_and_malformed_rejected() {
        let c = "id\tterm\tactive\nR\tRoot\t1\nA\tAlpha\t1\nZ\tGone\t0\n";
        let r = "child\tparent\tactive\nA\tR\t1\nZ\tR\t0\n";
        let g = parse_concept_graph(c, r).unwrap();
        assert_eq!(g.len(), 2);
        assert!(!g.contains(&id("Z")));

        let bad = "id\tterm\tactive\nR\tRoot\n";
        assert!(matches!(
            parse_concept_graph(bad, r),
            Err(OntologyError::MalformedRow { line: 2, .. })
        ));
        let bad_active = "id\tterm\tactive\nR\tRoot\tyes\n";
        assert!(matches!(
            parse_concept_graph(bad_active, "child\tparent\tactive\n"),
            Err(OntologyError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn numeric_ids_order_numerically() {
        let mut v = vec![id("100"), id("9"), id("B"), id("20"), id("A")];
        v.sort();
        assert_eq!(v, vec![id("9"), id("20"), id("100"), id("A"), id("B")]);
    }

    #[test]
    fn two_layer_levels() {
        let g = toy();
        let lv = discover_levels(&g).unwrap();
        assert_eq!(lv.level1, [id("A"), id("B")].into_iter().collect());
        assert_eq!(lv.level2, [id("A1"), id("A2")].into_iter().collect());
        assert_eq!(
            lv.assignment[&id("A1")],
            Assignment {
                level1: id("A"),
                level2: Some(id("A1"))
            }
        );
        // multi-parent tie-break: A1 < A2
        assert_eq!(lv.assignment[&id("C")].level2, Some(id("A1")));
        assert_eq!(
            lv.assignment[&id("B")],
            Assignment {
                level1: id("B"),
                level2: None
            }
        );
        assert!(!lv.assignment.contains_key(&id("R")));
    }

    #[test]
    fn no_root_and_multiple_roots() {
        let g = graph(&["R", "S", "A"], &[("A", "R")]).unwrap();
        assert_eq!(
            discover_levels(&g),
            Err(OntologyError::MultipleRoots(vec![id("R"), id("S")]))
        );
        let empty = graph(&[], &[]).unwrap();
        assert_eq!(discover_levels(&empty), Err(OntologyError::NoRoot));
    }

    #[test]
    fn counts_direct_tally() {
        let g = toy();
        let lv = discover_levels(&g).unwrap();
        let c = category_counts(&g, &lv, &[id("A1"), id("A2"), id("A1")], "s1");
        assert_eq!(c.counts[&id("A")], 3);
        assert_eq!(c.counts[&id("A1")], 2);
        assert_eq!(c.counts[&id("A2")], 1);
        assert_eq!(c.counts[&id("B")], 0);
        assert_eq!(c.unmapped, 0);

        let empty = category_counts(&g, &lv, &[], "s2");
        assert!(empty.counts.values().all(|&v| v == 0));

        let unknown = category_counts(&g, &lv, &[id("Zunknown")], "s3");
        assert!(unknown.counts.values().all(|&v| v == 0));
        assert_eq!(unknown.unmapped, 1);
    }

    #[test]
    fn documents_single_chain_and_order() {
        let g = toy();
        let docs = slice_documents(&g, &[id("A1")].into_iter().collect());
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].text, "term A1 (A1) is-a term A; ancestors: term A, term R");

        assert!(slice_documents(&g, &BTreeSet::new()).is_empty());

        let two = slice_documents(&g, &[id("B"), id("A1"), id("nope")].into_iter().collect());
        let ids: Vec<&str> = two.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["concept:A1", "concept:B"]);
    }

    #[test]
    fn builtin_ontology_shape() {
        let g = builtin_toy_ontology();
        assert!((45..=60).contains(&g.len()));
        let lv = discover_levels(&g).unwrap();
        assert_eq!(lv.level1.len(), 4);
        assert_eq!(lv.level2.len(), 8);
        assert!(lv.level1.is_disjoint(&lv.level2));
    }
}
