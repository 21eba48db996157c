//! Knowledge-graph loading and preprocessing.
//!
//! A graph comes in as two TSV files (nodes, edges) describing a directed
//! multigraph. The pipeline then hydrates node names from a separate map,
//! collapses the graph to a simple undirected one, and removes nodes whose
//! degree falls outside a configured band. Node and edge type labels are
//! opaque strings; nothing here interprets them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:1: expected header {expected:?}, found {found:?}")]
    Header { path: String, expected: String, found: String },
    #[error("{path}:{line}: duplicate node id {id:?}")]
    DuplicateNode { path: String, line: usize, id: String },
    #[error("edges reference {count} unknown node id(s): {sample}")]
    DanglingEdges { count: usize, sample: String },
    #[error("{op} requires a simplified undirected graph; call simplify() first")]
    NotSimplified { op: &'static str },
    #[error("invalid degree bounds: min {min} exceeds max {max}")]
    InvalidDegreeBounds { min: usize, max: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> KgError {
    KgError::Io { path: path.display().to_string(), source }
}

pub const NODES_HEADER: &str = "id\ttype\tname";
pub const EDGES_HEADER: &str = "source\tedge_type\ttarget";
pub const HYDRATION_HEADER: &str = "id\tname";

/// Default degree band: nodes with degree below 3 or above 100 are removed.
pub const DEFAULT_MIN_DEGREE: usize = 3;
pub const DEFAULT_MAX_DEGREE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: String,
    pub name: Option<String>,
}

impl NodeRecord {
    pub fn is_named(&self) -> bool {
        self.name.as_deref().is_some_and(|n| !n.is_empty())
    }
}

/// One edge row. `edge_type` is `None` once the graph has been simplified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub edge_type: Option<String>,
}

/// In-memory graph. Node order is the load order of the nodes file, and
/// every derived graph (hydrated, simplified, reduced) preserves the
/// relative order of surviving nodes, so downstream enumeration is
/// reproducible from the input files alone.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<NodeRecord>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    directed: bool,
    multigraph: bool,
    node_types: BTreeSet<String>,
    edge_types: BTreeSet<String>,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn is_multigraph(&self) -> bool {
        self.multigraph
    }

    pub fn is_simplified(&self) -> bool {
        !self.directed && !self.multigraph
    }

    pub fn node(&self, idx: usize) -> &NodeRecord {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Neighbor indices. Sorted and duplicate-free once simplified; before
    /// that, out-neighbors with multiplicity.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.adjacency[idx].len()
    }

    /// Adjacency test on a simplified graph (neighbor lists are sorted).
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        debug_assert!(self.is_simplified());
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn node_types(&self) -> &BTreeSet<String> {
        &self.node_types
    }

    pub fn edge_types(&self) -> &BTreeSet<String> {
        &self.edge_types
    }

    /// True for nodes eligible as graphlet members: only named nodes are.
    pub fn named_mask(&self) -> Vec<bool> {
        self.nodes.iter().map(NodeRecord::is_named).collect()
    }

    /// Structural checksum over sorted nodes and normalized edges. Stable
    /// across load order and persistence round trips.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"graph-v1\n");
        let mut ids: Vec<usize> = (0..self.nodes.len()).collect();
        ids.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
        for idx in ids {
            let n = &self.nodes[idx];
            hasher.update(n.id.as_bytes());
            hasher.update(b"\t");
            hasher.update(n.node_type.as_bytes());
            hasher.update(b"\t");
            hasher.update(n.name.as_deref().unwrap_or("").as_bytes());
            hasher.update(b"\n");
        }
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = if self.directed {
                    (e.source, e.target)
                } else {
                    (e.source.min(e.target), e.source.max(e.target))
                };
                format!(
                    "{}\t{}\t{}",
                    self.nodes[a].id,
                    e.edge_type.as_deref().unwrap_or(""),
                    self.nodes[b].id
                )
            })
            .collect();
        lines.sort();
        for line in lines {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }

    /// Collapses to a simple undirected graph: self-loops dropped, parallel
    /// and reciprocal edges merged, edge-type labels discarded. The node set
    /// is unchanged. Idempotent.
    pub fn simplify(&self) -> Graph {
        let n = self.nodes.len();
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for e in &self.edges {
            if e.source == e.target {
                continue;
            }
            let (a, b) = (e.source.min(e.target), e.source.max(e.target));
            pairs.insert((a, b));
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in &pairs {
            adjacency[a].push(b);
            adjacency[b].push(a);
            edges.push(Edge { source: a, target: b, edge_type: None });
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Graph {
            nodes: self.nodes.clone(),
            index: self.index.clone(),
            edges,
            adjacency,
            directed: false,
            multigraph: false,
            node_types: self.node_types.clone(),
            edge_types: self.edge_types.clone(),
        }
    }

    /// Removes nodes whose degree lies outside `[min_degree, max_degree]`.
    /// A single pass over the input: membership is decided on pre-removal
    /// degrees, so cascades do not occur. Survivors isolated by the removal
    /// stay in the node set.
    pub fn reduce_by_degree(&self, min_degree: usize, max_degree: usize) -> Result<Graph, KgError> {
        if !self.is_simplified() {
            return Err(KgError::NotSimplified { op: "reduce_by_degree" });
        }
        if min_degree > max_degree {
            return Err(KgError::InvalidDegreeBounds { min: min_degree, max: max_degree });
        }
        let keep: Vec<bool> = (0..self.nodes.len())
            .map(|v| {
                let d = self.degree(v);
                d >= min_degree && d <= max_degree
            })
            .collect();
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        for (old, node) in self.nodes.iter().enumerate() {
            if keep[old] {
                remap[old] = nodes.len();
                index.insert(node.id.clone(), nodes.len());
                nodes.push(node.clone());
            }
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::new();
        for e in &self.edges {
            if keep[e.source] && keep[e.target] {
                let (a, b) = (remap[e.source], remap[e.target]);
                adjacency[a].push(b);
                adjacency[b].push(a);
                edges.push(Edge { source: a, target: b, edge_type: None });
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Graph {
            nodes,
            index,
            edges,
            adjacency,
            directed: false,
            multigraph: false,
            node_types: self.node_types.clone(),
            edge_types: self.edge_types.clone(),
        })
    }

    /// Degree distribution of a simplified graph.
    pub fn degree_histogram(&self) -> Result<DegreeHistogram, KgError> {
        if !self.is_simplified() {
            return Err(KgError::NotSimplified { op: "degree_histogram" });
        }
        let mut buckets: BTreeMap<usize, usize> = BTreeMap::new();
        for v in 0..self.nodes.len() {
            *buckets.entry(self.degree(v)).or_insert(0) += 1;
        }
        let min = buckets.keys().next().copied().unwrap_or(0);
        let max = buckets.keys().next_back().copied().unwrap_or(0);
        let mean = if self.nodes.is_empty() {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.nodes.len() as f64
        };
        Ok(DegreeHistogram { buckets, min, max, mean })
    }

    /// Writes the graph back out in the input TSV formats. Simplified graphs
    /// carry no edge types, so that column is left empty; `load_graph` on the
    /// pair followed by `simplify` reproduces this graph exactly.
    pub fn save_tsv(&self, nodes_path: &Path, edges_path: &Path) -> Result<(), KgError> {
        let file = File::create(nodes_path).map_err(|e| io_err(nodes_path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{NODES_HEADER}").map_err(|e| io_err(nodes_path, e))?;
        for n in &self.nodes {
            writeln!(w, "{}\t{}\t{}", n.id, n.node_type, n.name.as_deref().unwrap_or(""))
                .map_err(|e| io_err(nodes_path, e))?;
        }
        w.flush().map_err(|e| io_err(nodes_path, e))?;

        let file = File::create(edges_path).map_err(|e| io_err(edges_path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{EDGES_HEADER}").map_err(|e| io_err(edges_path, e))?;
        for e in &self.edges {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.nodes[e.source].id,
                e.edge_type.as_deref().unwrap_or(""),
                self.nodes[e.target].id
            )
            .map_err(|e| io_err(edges_path, e))?;
        }
        w.flush().map_err(|e| io_err(edges_path, e))
    }

    /// Applies an `id -> name` map. Mapped nodes gain (or replace) their
    /// name; ids in the map but not in the graph are ignored. The report
    /// lists graph nodes the map did not cover and nodes left unnamed
    /// entirely; only named nodes are eligible for graphlet sampling.
    pub fn apply_hydration(&self, map_path: &Path) -> Result<(Graph, HydrationReport), KgError> {
        let name_map = load_hydration_map(map_path)?;
        let mut graph = self.clone();
        let mut resolved = 0usize;
        let mut unresolved_ids = Vec::new();
        for node in &mut graph.nodes {
            match name_map.get(&node.id) {
                Some(name) => {
                    node.name = Some(name.clone());
                    resolved += 1;
                }
                None => unresolved_ids.push(node.id.clone()),
            }
        }
        let total = graph.nodes.len();
        let mut names_seen: HashSet<&str> = HashSet::new();
        let mut named_nodes = 0usize;
        let mut unnamed_ids = Vec::new();
        for node in &graph.nodes {
            if node.is_named() {
                named_nodes += 1;
                names_seen.insert(node.name.as_deref().unwrap());
            } else {
                unnamed_ids.push(node.id.clone());
            }
        }
        let report = HydrationReport {
            total_nodes: total,
            resolved,
            resolved_fraction: if total == 0 { 0.0 } else { resolved as f64 / total as f64 },
            unresolved_ids,
            named_nodes,
            unique_names: names_seen.len(),
            unnamed_ids,
        };
        Ok((graph, report))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HydrationReport {
    pub total_nodes: usize,
    pub resolved: usize,
    pub resolved_fraction: f64,
    pub unresolved_ids: Vec<String>,
    pub named_nodes: usize,
    pub unique_names: usize,
    pub unnamed_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeHistogram {
    pub buckets: BTreeMap<usize, usize>,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl DegreeHistogram {
    /// `degree<TAB>count` rows in ascending degree order.
    pub fn write_tsv(&self, path: &Path) -> Result<(), KgError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "degree\tcount").map_err(|e| io_err(path, e))?;
        for (degree, count) in &self.buckets {
            writeln!(w, "{degree}\t{count}").map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>, KgError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))
}

fn check_header(path: &Path, lines: &[String], expected: &str) -> Result<(), KgError> {
    match lines.first() {
        Some(h) if h == expected => Ok(()),
        other => Err(KgError::Header {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found: other.cloned().unwrap_or_default(),
        }),
    }
}

fn split_row<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    columns: usize,
) -> Result<Vec<&'a str>, KgError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != columns {
        return Err(KgError::Parse {
            path: path.display().to_string(),
            line: line_no,
            message: format!("expected {columns} tab-separated columns, found {}", fields.len()),
        });
    }
    Ok(fields)
}

/// Loads the node and edge TSV files into a directed multigraph. All edge
/// rows are preserved, including self-loops and parallel edges. Fails on a
/// malformed row, a duplicate node id, or an edge endpoint that matches no
/// node id.
pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<Graph, KgError> {
    let node_lines = read_lines(nodes_path)?;
    check_header(nodes_path, &node_lines, NODES_HEADER)?;
    let mut nodes = Vec::new();
    let mut index = HashMap::new();
    let mut node_types = BTreeSet::new();
    for (offset, line) in node_lines.iter().enumerate().skip(1) {
        let line_no = offset + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_row(nodes_path, line_no, line, 3)?;
        let (id, node_type, name) = (fields[0], fields[1], fields[2]);
        if id.is_empty() {
            return Err(KgError::Parse {
                path: nodes_path.display().to_string(),
                line: line_no,
                message: "empty node id".to_string(),
            });
        }
        if index.contains_key(id) {
            return Err(KgError::DuplicateNode {
                path: nodes_path.display().to_string(),
                line: line_no,
                id: id.to_string(),
            });
        }
        index.insert(id.to_string(), nodes.len());
        node_types.insert(node_type.to_string());
        nodes.push(NodeRecord {
            id: id.to_string(),
            node_type: node_type.to_string(),
            name: if name.is_empty() { None } else { Some(name.to_string()) },
        });
    }

    let edge_lines = read_lines(edges_path)?;
    check_header(edges_path, &edge_lines, EDGES_HEADER)?;
    let mut edges = Vec::new();
    let mut edge_types = BTreeSet::new();
    let mut dangling: BTreeSet<String> = BTreeSet::new();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (offset, line) in edge_lines.iter().enumerate().skip(1) {
        let line_no = offset + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_row(edges_path, line_no, line, 3)?;
        let (source, edge_type, target) = (fields[0], fields[1], fields[2]);
        let s = index.get(source);
        let t = index.get(target);
        if s.is_none() {
            dangling.insert(source.to_string());
        }
        if t.is_none() {
            dangling.insert(target.to_string());
        }
        if let (Some(&s), Some(&t)) = (s, t) {
            adjacency[s].push(t);
            if !edge_type.is_empty() {
                edge_types.insert(edge_type.to_string());
            }
            edges.push(Edge {
                source: s,
                target: t,
                edge_type: if edge_type.is_empty() { None } else { Some(edge_type.to_string()) },
            });
        }
    }
    if !dangling.is_empty() {
        let sample: Vec<&String> = dangling.iter().take(8).collect();
        let mut sample = sample.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        if dangling.len() > 8 {
            sample.push_str(", ...");
        }
        return Err(KgError::DanglingEdges { count: dangling.len(), sample });
    }
    Ok(Graph {
        nodes,
        index,
        edges,
        adjacency,
        directed: true,
        multigraph: true,
        node_types,
        edge_types,
    })
}

fn load_hydration_map(path: &Path) -> Result<HashMap<String, String>, KgError> {
    let lines = read_lines(path)?;
    check_header(path, &lines, HYDRATION_HEADER)?;
    let mut map = HashMap::new();
    for (offset, line) in lines.iter().enumerate().skip(1) {
        let line_no = offset + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_row(path, line_no, line, 2)?;
        if fields[0].is_empty() {
            return Err(KgError::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: "empty node id".to_string(),
            });
        }
        map.insert(fields[0].to_string(), fields[1].to_string());
    }
    Ok(map)
}

/// Test helper: builds a simplified graph from explicit nodes and edges.
pub fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> Graph {
    let nodes: Vec<NodeRecord> = (0..n)
        .map(|i| NodeRecord {
            id: format!("n{i}"),
            node_type: "t".to_string(),
            name: Some(format!("node {i}")),
        })
        .collect();
    let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    let raw: Vec<Edge> = edges
        .iter()
        .map(|&(a, b)| Edge { source: a, target: b, edge_type: None })
        .collect();
    let adjacency = {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &raw {
            adj[e.source].push(e.target);
        }
        adj
    };
    let graph = Graph {
        nodes,
        index,
        edges: raw,
        adjacency,
        directed: true,
        multigraph: true,
        node_types: BTreeSet::from(["t".to_string()]),
        edge_types: BTreeSet::new(),
    };
    graph.simplify()
}
