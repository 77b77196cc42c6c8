//! Text-attributed graphs: loading, validation, neighbor queries and the
//! renormalized propagation operator used by the GCN.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::sparse::CsrMatrix;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

/// Undirected simple graph with one text document per node.
///
/// Node ids are dense `0..n`, the adjacency is stored in compressed-row form
/// with every neighbor list sorted ascending, and there are no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    nodes: Vec<NodeRecord>,
    indptr: Vec<usize>,
    indices: Vec<NodeId>,
}

impl TextAttributedGraph {
    /// Builds a graph from nodes (ids must be `0..n` in order) and an edge
    /// list. Returns the graph and the number of duplicate edges dropped.
    pub fn from_edges<I>(nodes: Vec<NodeRecord>, edges: I) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut builder = GraphBuilder::new(nodes)?;
        let mut dups = 0;
        for (u, v) in edges {
            if !builder.add_edge(u, v)? {
                dups += 1;
            }
        }
        Ok((builder.build(), dups))
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Undirected edge count.
    pub fn m(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, v: NodeId) -> &NodeRecord {
        &self.nodes[v]
    }

    pub fn text(&self, v: NodeId) -> &str {
        &self.nodes[v].text
    }

    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        if v >= self.n() {
            return Err(Error::NodeOutOfRange {
                node: v,
                n: self.n(),
            });
        }
        Ok(self.neighbors_unchecked(v))
    }

    pub(crate) fn neighbors_unchecked(&self, v: NodeId) -> &[NodeId] {
        &self.indices[self.indptr[v]..self.indptr[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.indptr[v + 1] - self.indptr[v]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.n() && v < self.n() && self.neighbors_unchecked(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors_unchecked(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> CsrMatrix {
        let inv_sqrt: Vec<f64> = (0..self.n())
            .map(|v| 1.0 / ((self.degree(v) + 1) as f64).sqrt())
            .collect();
        let rows = (0..self.n())
            .map(|u| {
                let mut row: Vec<(usize, f64)> = self
                    .neighbors_unchecked(u)
                    .iter()
                    .map(|&v| (v, inv_sqrt[u] * inv_sqrt[v]))
                    .collect();
                let pos = row.partition_point(|&(c, _)| c < u);
                row.insert(pos, (u, inv_sqrt[u] * inv_sqrt[u]));
                row
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    /// Histogram degree → node count.
    pub fn degree_distribution(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for v in 0..self.n() {
            *hist.entry(self.degree(v)).or_insert(0) += 1;
        }
        hist
    }

    pub fn to_builder(&self) -> GraphBuilder {
        let adj = (0..self.n())
            .map(|v| self.neighbors_unchecked(v).iter().copied().collect())
            .collect();
        GraphBuilder {
            nodes: self.nodes.clone(),
            adj,
        }
    }

    pub fn save(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        io::write_jsonl(nodes_path, self.nodes.iter())?;
        io::atomic_write_with(edges_path, |w| {
            for (u, v) in self.edges() {
                writeln!(w, "{u}\t{v}")?;
            }
            Ok(())
        })
    }
}

/// Mutable adjacency used while constructing or perturbing a graph.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<NodeRecord>,
    adj: Vec<BTreeSet<NodeId>>,
}

impl GraphBuilder {
    pub fn new(nodes: Vec<NodeRecord>) -> Result<Self> {
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::InvalidGraph(format!(
                    "node ids must be dense and ordered: position {i} holds id {}",
                    node.id
                )));
            }
        }
        let adj = vec![BTreeSet::new(); nodes.len()];
        Ok(GraphBuilder { nodes, adj })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Adds the undirected edge; returns false if it already existed.
    pub fn add_edge(&mut self, u: NodeId, v: NodeId) -> Result<bool> {
        let n = self.n();
        for x in [u, v] {
            if x >= n {
                return Err(Error::NodeOutOfRange { node: x, n });
            }
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
        }
        let fresh = self.adj[u].insert(v);
        self.adj[v].insert(u);
        Ok(fresh)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj[u].contains(&v)
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v].len()
    }

    pub fn neighbors(&self, v: NodeId) -> &BTreeSet<NodeId> {
        &self.adj[v]
    }

    pub fn text(&self, v: NodeId) -> &str {
        &self.nodes[v].text
    }

    pub fn set_text(&mut self, v: NodeId, text: String) {
        self.nodes[v].text = text;
    }

    pub fn build(self) -> TextAttributedGraph {
        let mut indptr = Vec::with_capacity(self.nodes.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for set in &self.adj {
            indices.extend(set.iter().copied());
            indptr.push(indices.len());
        }
        TextAttributedGraph {
            nodes: self.nodes,
            indptr,
            indices,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub allow_empty_text: bool,
}

/// Mapping from the ids found in the node file to dense ids.
pub type IdMap = BTreeMap<u64, NodeId>;

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: TextAttributedGraph,
    pub duplicate_edges: usize,
    /// Present when the node file's ids were not already `0..n`.
    pub id_map: Option<IdMap>,
}

#[derive(Deserialize)]
struct RawNode {
    id: u64,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

/// Loads `nodes.jsonl` + `edges.tsv`. Sparse ids are remapped to `0..n` in
/// ascending order and the mapping is written to `idmap.json` beside the
/// node file.
pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<LoadedGraph> {
    load_graph_with(nodes_path, edges_path, LoadOptions::default())
}

pub fn load_graph_with(
    nodes_path: &Path,
    edges_path: &Path,
    opts: LoadOptions,
) -> Result<LoadedGraph> {
    let file = io::open(nodes_path)?;
    let mut raw: Vec<(usize, RawNode)> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(nodes_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let node: RawNode = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: nodes_path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if node.text.is_empty() && !opts.allow_empty_text {
            return Err(Error::Malformed {
                path: nodes_path.to_path_buf(),
                line: i + 1,
                msg: format!("node {} has empty text", node.id),
            });
        }
        raw.push((i + 1, node));
    }
    raw.sort_by_key(|(_, n)| n.id);
    for pair in raw.windows(2) {
        if pair[0].1.id == pair[1].1.id {
            return Err(Error::Malformed {
                path: nodes_path.to_path_buf(),
                line: pair[1].0,
                msg: format!("duplicate node id {}", pair[1].1.id),
            });
        }
    }
    let id_map: IdMap = raw
        .iter()
        .enumerate()
        .map(|(dense, (_, n))| (n.id, dense))
        .collect();
    let remapped = raw
        .iter()
        .enumerate()
        .any(|(dense, (_, n))| n.id != dense as u64);
    let nodes: Vec<NodeRecord> = raw
        .into_iter()
        .enumerate()
        .map(|(dense, (_, n))| NodeRecord {
            id: dense,
            title: n.title,
            text: n.text,
        })
        .collect();

    let file = io::open(edges_path)?;
    let mut builder = GraphBuilder::new(nodes)?;
    let mut duplicate_edges = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(edges_path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: &str| Error::Malformed {
            path: edges_path.to_path_buf(),
            line: lineno,
            msg: msg.to_string(),
        };
        let mut parts = line.split('\t');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(malformed("expected two tab-separated node ids")),
        };
        let a: u64 = a.parse().map_err(|_| malformed("node id is not a decimal integer"))?;
        let b: u64 = b.parse().map_err(|_| malformed("node id is not a decimal integer"))?;
        if a == b {
            return Err(Error::SelfLoop {
                path: edges_path.to_path_buf(),
                line: lineno,
                node: a,
            });
        }
        let lookup = |id: u64| {
            id_map.get(&id).copied().ok_or(Error::UnknownEndpoint {
                path: edges_path.to_path_buf(),
                line: lineno,
                node: id,
            })
        };
        let (u, v) = (lookup(a)?, lookup(b)?);
        if !builder.add_edge(u, v)? {
            duplicate_edges += 1;
        }
    }
    if duplicate_edges > 0 {
        log::warn!(
            "{}: dropped {duplicate_edges} duplicate edge(s)",
            edges_path.display()
        );
    }
    let id_map = if remapped {
        let sidecar = nodes_path.with_file_name("idmap.json");
        let as_strings: BTreeMap<String, NodeId> =
            id_map.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        io::write_json_pretty(&sidecar, &as_strings)?;
        Some(id_map)
    } else {
        None
    };
    Ok(LoadedGraph {
        graph: builder.build(),
        duplicate_edges,
        id_map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Contextual,
    StructuralClique,
    StructuralEdge,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self != Label::Normal
    }

    pub fn is_structural(self) -> bool {
        matches!(self, Label::StructuralClique | Label::StructuralEdge)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Contextual => "contextual",
            Label::StructuralClique => "structural_clique",
            Label::StructuralEdge => "structural_edge",
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct LabelLine {
    id: NodeId,
    label: Label,
}

/// Per-node evaluation labels. Nodes without an entry are normal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    labels: BTreeMap<NodeId, Label>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&self, v: NodeId) -> Label {
        self.labels.get(&v).copied().unwrap_or(Label::Normal)
    }

    pub fn is_labeled(&self, v: NodeId) -> bool {
        self.labels.contains_key(&v)
    }

    pub fn set(&mut self, v: NodeId, label: Label) {
        self.labels.insert(v, label);
    }

    /// Merges `other` in; fails if a node would receive two labels.
    pub fn merge(&mut self, other: &GroundTruth) -> Result<()> {
        for (&v, &label) in &other.labels {
            if let Some(prev) = self.labels.insert(v, label) {
                return Err(Error::Injection(format!(
                    "node {v} labeled twice ({prev} and {label})"
                )));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Label)> + '_ {
        self.labels.iter().map(|(&v, &l)| (v, l))
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.values().filter(|&&l| l == label).count()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.values().filter(|l| l.is_anomalous()).count()
    }

    /// Binary view over `0..n`: true iff anomalous.
    pub fn binary(&self, n: usize) -> Vec<bool> {
        (0..n).map(|v| self.label(v).is_anomalous()).collect()
    }

    /// Writes one line per node `0..n` (unlabeled nodes as normal).
    pub fn save(&self, path: &Path, n: usize) -> Result<()> {
        let lines: Vec<LabelLine> = (0..n)
            .map(|id| LabelLine {
                id,
                label: self.label(id),
            })
            .collect();
        io::write_jsonl(path, lines.iter())
    }

    /// Loads `labels.jsonl`. With an id map, file ids are original ids.
    pub fn load(path: &Path, n: usize, id_map: Option<&IdMap>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            id: u64,
            label: Label,
        }
        let raw: Vec<Raw> = io::read_jsonl(path)?;
        let mut gt = GroundTruth::new();
        for (i, r) in raw.into_iter().enumerate() {
            let id = match id_map {
                Some(map) => map.get(&r.id).copied(),
                None => usize::try_from(r.id).ok().filter(|&v| v < n),
            };
            let id = id.ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("label for unknown node {}", r.id),
            })?;
            gt.set(id, r.label);
        }
        Ok(gt)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn nodes(n: usize) -> Vec<NodeRecord> {
        (0..n)
            .map(|id| NodeRecord {
                id,
                title: None,
                text: format!("node {id} text."),
            })
            .collect()
    }

    pub(crate) fn graph(n: usize, edges: &[(usize, usize)]) -> TextAttributedGraph {
        TextAttributedGraph::from_edges(nodes(n), edges.iter().copied())
            .unwrap()
            .0
    }

    fn write_files(dir: &Path, nodes: &str, edges: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let np = dir.join("nodes.jsonl");
        let ep = dir.join("edges.tsv");
        std::fs::write(&np, nodes).unwrap();
        std::fs::write(&ep, edges).unwrap();
        (np, ep)
    }

    const TWO_NODES: &str = "{\"id\": 0, \"title\": null, \"text\": \"a\"}\n{\"id\": 1, \"title\": \"t\", \"text\": \"b\"}\n";

    #[test]
    fn loads_smallest_graph() {
        let dir = tempfile::tempdir().unwrap();
        let (np, ep) = write_files(dir.path(), TWO_NODES, "0\t1\n");
        let loaded = load_graph(&np, &ep).unwrap();
        assert_eq!(loaded.graph.n(), 2);
        assert_eq!(loaded.graph.m(), 1);
        assert_eq!(loaded.graph.neighbors(0).unwrap(), &[1]);
        assert!(loaded.id_map.is_none());
    }

    #[test]
    fn rejects_self_loop() {
        let dir = tempfile::tempdir().unwrap();
        let (np, ep) = write_files(dir.path(), TWO_NODES, "0\t1\n0\t0\n");
        match load_graph(&np, &ep) {
            Err(Error::SelfLoop { line, node, .. }) => {
                assert_eq!((line, node), (2, 0));
            }
            other => panic!("expected self-loop error, got {other:?}"),
        }
    }

    #[test]
    fn deduplicates_edges() {
        let dir = tempfile::tempdir().unwrap();
        let (np, ep) = write_files(dir.path(), TWO_NODES, "0\t1\n0\t1\n");
        let loaded = load_graph(&np, &ep).unwrap();
        assert_eq!(loaded.graph.m(), 1);
        assert_eq!(loaded.duplicate_edges, 1);
    }

    #[test]
    fn reports_malformed_line_and_unknown_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let (np, ep) = write_files(dir.path(), TWO_NODES, "0\t1\n0 1\n");
        assert!(matches!(load_graph(&np, &ep), Err(Error::Malformed { line: 2, .. })));
        let (np, ep) = write_files(dir.path(), TWO_NODES, "0\t7\n");
        assert!(matches!(
            load_graph(&np, &ep),
            Err(Error::UnknownEndpoint { line: 1, node: 7, .. })
        ));
        let (np, ep) = write_files(dir.path(), "{\"id\": 0, \"text\": \"\"}\n", "");
        assert!(matches!(load_graph(&np, &ep), Err(Error::Malformed { line: 1, .. })));
        let loaded = load_graph_with(&np, &ep, LoadOptions { allow_empty_text: true }).unwrap();
        assert_eq!(loaded.graph.n(), 1);
    }

    #[test]
    fn remaps_sparse_ids_and_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = "{\"id\": 40, \"text\": \"x\"}\n{\"id\": 7, \"text\": \"y\"}\n{\"id\": 12, \"text\": \"z\"}\n";
        let (np, ep) = write_files(dir.path(), nodes, "40\t7\n12\t40\n");
        let loaded = load_graph(&np, &ep).unwrap();
        let map = loaded.id_map.unwrap();
        assert_eq!(map[&7], 0);
        assert_eq!(map[&12], 1);
        assert_eq!(map[&40], 2);
        assert_eq!(loaded.graph.node(2).text, "x");
        assert_eq!(loaded.graph.neighbors(2).unwrap(), &[0, 1]);
        let sidecar: BTreeMap<String, usize> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("idmap.json")).unwrap())
                .unwrap();
        assert_eq!(sidecar["40"], 2);
    }

    #[test]
    fn neighbor_queries() {
        let path = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(path.neighbors(1).unwrap(), &[0, 2]);
        let isolated = graph(2, &[]);
        assert!(isolated.neighbors(0).unwrap().is_empty());
        let star = graph(4, &[(0, 3), (0, 1), (0, 2)]);
        assert_eq!(star.neighbors(0).unwrap(), &[1, 2, 3]);
        assert!(matches!(
            star.neighbors(4),
            Err(Error::NodeOutOfRange { node: 4, n: 4 })
        ));
    }

    #[test]
    fn normalized_adjacency_closed_forms() {
        let pair = graph(2, &[(0, 1)]).normalized_adjacency().to_dense();
        for v in pair.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let single = graph(1, &[]).normalized_adjacency();
        assert_eq!(single.to_dense()[[0, 0]], 1.0);
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]).normalized_adjacency();
        assert_eq!(tri.nnz(), 9);
        for v in tri.to_dense().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    fn cycle(n: usize) -> TextAttributedGraph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        graph(n, &edges)
    }

    fn clique(n: usize) -> TextAttributedGraph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        graph(n, &edges)
    }

    #[test]
    fn row_sums_are_one_exactly_for_regular_graphs() {
        for g in [cycle(5), cycle(8), clique(4), clique(6)] {
            let a = g.normalized_adjacency();
            for r in 0..g.n() {
                let s: f64 = a.row(r).map(|(_, v)| v).sum();
                assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
            }
        }
        let path = graph(3, &[(0, 1), (1, 2)]).normalized_adjacency();
        let s0: f64 = path.row(0).map(|(_, v)| v).sum();
        assert!((s0 - 1.0).abs() > 1e-3);
    }

    #[test]
    fn degree_histograms() {
        let path = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(path.degree_distribution(), BTreeMap::from([(1, 2), (2, 1)]));
        assert_eq!(graph(3, &[]).degree_distribution(), BTreeMap::from([(0, 3)]));
        assert_eq!(clique(3).degree_distribution(), BTreeMap::from([(2, 3)]));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut gt = GroundTruth::new();
        gt.set(1, Label::Contextual);
        gt.set(3, Label::StructuralEdge);
        let path = dir.path().join("labels.jsonl");
        gt.save(&path, 4).unwrap();
        let back = GroundTruth::load(&path, 4, None).unwrap();
        assert_eq!(back.binary(4), vec![false, true, false, true]);
        assert_eq!(back.label(3), Label::StructuralEdge);
        assert!(GroundTruth::load(&path, 2, None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = TextAttributedGraph> {
            (2usize..12).prop_flat_map(|n| {
                proptest::collection::vec((0..n, 0..n), 0..40).prop_map(move |pairs| {
                    let edges: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
                    graph(n, &edges)
                })
            })
        }

        proptest! {
            #[test]
            fn adjacency_is_symmetric_and_round_trips(g in arb_graph()) {
                for u in 0..g.n() {
                    for &v in g.neighbors(u).unwrap() {
                        prop_assert!(g.has_edge(v, u));
                        prop_assert!(u != v);
                    }
                }
                let a = g.normalized_adjacency();
                for u in 0..g.n() {
                    for (v, x) in a.row(u) {
                        prop_assert_eq!(x.to_bits(), a.get(v, u).to_bits());
                        prop_assert!(x > 0.0 && x <= 1.0);
                    }
                }
                let dir = tempfile::tempdir().unwrap();
                let (np, ep) = (dir.path().join("n.jsonl"), dir.path().join("e.tsv"));
                g.save(&np, &ep).unwrap();
                let back = load_graph(&np, &ep).unwrap().graph;
                prop_assert_eq!(back, g);
            }
        }
    }
}
