//! Graphlet enumeration, classification, and quota sampling.
//!
//! A graphlet is a connected induced subgraph on 3 to 5 nodes of the
//! reduced knowledge graph. The catalog of isomorphism classes has 29
//! shapes: 2 of size 3, 6 of size 4, and 21 of size 5.

mod canon;
mod esu;
mod sample;

pub use canon::{canonical_form, edges_to_code, ShapeCatalog, ShapeId, MAX_SIZE, MIN_SIZE};
pub use esu::{enumerate_subgraphs, sample_subgraphs};
pub use sample::{
    count_shapes, sample_per_shape, write_census_tsv, GraphletSet, SamplingManifest,
    SamplingPlan, ShapeCensusRow, DEFAULT_TARGET_PER_SHAPE,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg::Graph;

#[derive(Debug, Error)]
pub enum GraphletError {
    #[error("subgraph size {size} outside supported range 3..=5")]
    InvalidSize { size: u8 },
    #[error("graph must be simplified before enumeration")]
    NotSimplified,
    #[error("subgraph is disconnected")]
    Disconnected,
    #[error("invalid edge ({i}, {j}) for a subgraph of size {size}")]
    InvalidEdge { i: u8, j: u8, size: u8 },
    #[error("invalid sampling plan: {message}")]
    InvalidPlan { message: String },
    #[error("node {id} has no name and cannot join a graphlet")]
    UnnamedNode { id: String },
    #[error("invalid graphlet: {message}")]
    InvalidGraphlet { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphletNode {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: String,
    pub name: String,
}

/// A sampled graphlet instance. `edges` holds local index pairs (i < j)
/// into `nodes`; node order follows host-graph load order. The id is a
/// content hash, so a graphlet keeps its identity across runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graphlet {
    pub graphlet_id: String,
    pub shape_ordinal: u8,
    pub shape_size: u8,
    pub nodes: Vec<GraphletNode>,
    pub edges: Vec<(u8, u8)>,
}

impl Graphlet {
    pub fn shape(&self) -> Option<ShapeId> {
        ShapeCatalog::global().by_ordinal(self.shape_ordinal)
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    /// Structural consistency check: size in range, non-empty names,
    /// distinct node ids, and an edge list whose canonical form matches the
    /// declared shape.
    pub fn validate(&self) -> Result<(), GraphletError> {
        let size = self.shape_size;
        if self.nodes.len() != size as usize {
            return Err(GraphletError::InvalidGraphlet {
                message: format!(
                    "declared size {size} but {} nodes present",
                    self.nodes.len()
                ),
            });
        }
        for node in &self.nodes {
            if node.name.is_empty() {
                return Err(GraphletError::UnnamedNode { id: node.id.clone() });
            }
        }
        let mut ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.nodes.len() {
            return Err(GraphletError::InvalidGraphlet {
                message: "duplicate node ids".to_string(),
            });
        }
        let shape = canonical_form(size, &self.edges)?;
        if shape.ordinal != self.shape_ordinal {
            return Err(GraphletError::InvalidGraphlet {
                message: format!(
                    "edge list classifies as shape {} but {} declared",
                    shape.ordinal, self.shape_ordinal
                ),
            });
        }
        Ok(())
    }
}

fn graphlet_id(shape_ordinal: u8, node_ids: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"graphlet-v1\n");
    hasher.update([shape_ordinal]);
    for id in node_ids {
        hasher.update(b"\n");
        hasher.update(id.as_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the persisted record for one sampled vertex set.
pub fn materialize(graph: &Graph, vertices: &[usize]) -> Result<Graphlet, GraphletError> {
    let size = vertices.len() as u8;
    if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
        return Err(GraphletError::InvalidSize { size });
    }
    let mut sorted = vertices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != vertices.len() {
        return Err(GraphletError::InvalidGraphlet {
            message: "duplicate vertices".to_string(),
        });
    }
    let mut nodes = Vec::with_capacity(sorted.len());
    for &v in &sorted {
        let record = graph.node(v);
        let name = record
            .name
            .clone()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| GraphletError::UnnamedNode { id: record.id.clone() })?;
        nodes.push(GraphletNode {
            id: record.id.clone(),
            node_type: record.node_type.clone(),
            name,
        });
    }
    let code = esu::induced_code(graph, &sorted);
    let shape = ShapeCatalog::global()
        .classify_raw(size, code)
        .ok_or(GraphletError::Disconnected)?;
    let mut edges = Vec::new();
    for i in 0..sorted.len() {
        for j in (i + 1)..sorted.len() {
            if graph.has_edge(sorted[i], sorted[j]) {
                edges.push((i as u8, j as u8));
            }
        }
    }
    let ids: Vec<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    Ok(Graphlet {
        graphlet_id: graphlet_id(shape.ordinal, &ids),
        shape_ordinal: shape.ordinal,
        shape_size: size,
        nodes,
        edges,
    })
}
