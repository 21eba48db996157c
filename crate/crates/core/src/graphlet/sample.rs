//! Per-shape census and quota sampling.
//!
//! Sampling runs the gated ESU scan per size, classifies each surviving
//! subgraph, and holds at most `target_per_shape` instances per shape in a
//! seeded reservoir, so over-represented shapes are capped while rare ones
//! are kept in full. The default plan leaves every depth open except the
//! last, whose probability is calibrated from a pilot census so the rarest
//! shape still expects to fill its quota.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::canon::{ShapeCatalog, MAX_SIZE, MIN_SIZE};
use super::esu::{induced_code, sample_subgraphs, scan_counts, validate_scan};
use super::{materialize, Graphlet, GraphletError};
use crate::kg::Graph;

pub const DEFAULT_TARGET_PER_SHAPE: u64 = 10_000;

/// Reservoir streams must not collide with per-root ESU streams, which use
/// the low 48 bits plus a size tag below 1 << 51.
const RESERVOIR_STREAM_BASE: u64 = 1 << 56;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Per-size survival probabilities; `probabilities[&k][d-1]` gates
    /// depth d of the size-k scan.
    pub probabilities: BTreeMap<u8, Vec<f64>>,
    pub target_per_shape: u64,
    pub seed: u64,
}

impl SamplingPlan {
    /// All probabilities 1 and no quota: plain exhaustive enumeration.
    pub fn exhaustive(seed: u64) -> Self {
        Self::with_unit_probabilities(u64::MAX, seed)
    }

    pub fn with_unit_probabilities(target_per_shape: u64, seed: u64) -> Self {
        let probabilities = (MIN_SIZE..=MAX_SIZE)
            .map(|k| (k, vec![1.0; k as usize]))
            .collect();
        SamplingPlan { probabilities, target_per_shape, seed }
    }

    /// Pilot-calibrated plan: exact census per size, then a final-depth gate
    /// q = min(1, target / rarest_shape_count), so the rarest shape of each
    /// size expects at least `target` survivors. Earlier depths stay open.
    pub fn calibrated(graph: &Graph, target_per_shape: u64, seed: u64) -> Result<Self, GraphletError> {
        if target_per_shape == 0 {
            return Err(GraphletError::InvalidPlan {
                message: "target_per_shape must be at least 1".to_string(),
            });
        }
        let mask = graph.named_mask();
        let mut probabilities = BTreeMap::new();
        for k in MIN_SIZE..=MAX_SIZE {
            validate_scan(graph, k, None)?;
            let counts = scan_counts(graph, k, Some(&mask), None, 0);
            let rarest = ShapeCatalog::global()
                .shapes()
                .iter()
                .filter(|s| s.size == k)
                .map(|s| counts[s.ordinal as usize])
                .filter(|&c| c > 0)
                .min();
            let q = match rarest {
                Some(c) if c > target_per_shape => target_per_shape as f64 / c as f64,
                _ => 1.0,
            };
            let mut probs = vec![1.0; k as usize];
            probs[k as usize - 1] = q;
            probabilities.insert(k, probs);
        }
        Ok(SamplingPlan { probabilities, target_per_shape, seed })
    }

    pub fn validate(&self) -> Result<(), GraphletError> {
        if self.target_per_shape == 0 {
            return Err(GraphletError::InvalidPlan {
                message: "target_per_shape must be at least 1".to_string(),
            });
        }
        for k in MIN_SIZE..=MAX_SIZE {
            let probs = self.probabilities.get(&k).ok_or_else(|| GraphletError::InvalidPlan {
                message: format!("missing probabilities for size {k}"),
            })?;
            if probs.len() != k as usize {
                return Err(GraphletError::InvalidPlan {
                    message: format!("size {k} needs {k} depth probabilities, found {}", probs.len()),
                });
            }
            for (d, &p) in probs.iter().enumerate() {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(GraphletError::InvalidPlan {
                        message: format!("size {k}: p_{} = {p} outside (0, 1]", d + 1),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCensusRow {
    pub shape_ordinal: u8,
    pub size: u8,
    /// Exact occurrence count when the size was scanned with all-unit
    /// probabilities, otherwise an inverse-probability estimate.
    pub count: u64,
    pub exact: bool,
    pub sampled: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingManifest {
    pub seed: u64,
    pub target_per_shape: u64,
    pub probabilities: BTreeMap<u8, Vec<f64>>,
    pub graph_checksum: String,
    pub total_nodes: usize,
    pub eligible_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphletSet {
    pub graphlets: Vec<Graphlet>,
    pub census: Vec<ShapeCensusRow>,
    pub manifest: SamplingManifest,
}

/// Exact per-shape counts of size-k subgraphs, keyed by catalog ordinal.
/// Every shape of that size appears, zero counts included.
pub fn count_shapes(graph: &Graph, k: u8) -> Result<BTreeMap<u8, u64>, GraphletError> {
    validate_scan(graph, k, None)?;
    let counts = scan_counts(graph, k, None, None, 0);
    Ok(ShapeCatalog::global()
        .shapes()
        .iter()
        .filter(|s| s.size == k)
        .map(|s| (s.ordinal, counts[s.ordinal as usize]))
        .collect())
}

struct Reservoir {
    cap: usize,
    seen: u64,
    items: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    fn new(cap: u64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Reservoir {
            cap: usize::try_from(cap).unwrap_or(usize::MAX),
            seen: 0,
            items: Vec::new(),
            rng,
        }
    }

    fn offer(&mut self, item: Vec<usize>) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(item);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = item;
            }
        }
    }
}

/// Samples graphlets of every size under `plan`, excluding unnamed nodes,
/// and caps each shape at `plan.target_per_shape` via reservoir sampling.
/// Deterministic for a fixed graph and plan.
pub fn sample_per_shape(graph: &Graph, plan: &SamplingPlan) -> Result<GraphletSet, GraphletError> {
    plan.validate()?;
    let catalog = ShapeCatalog::global();
    let mask = graph.named_mask();
    let eligible_nodes = mask.iter().filter(|&&m| m).count();

    let mut reservoirs: Vec<Reservoir> = (0..=catalog.len())
        .map(|ord| {
            Reservoir::new(
                plan.target_per_shape,
                plan.seed,
                RESERVOIR_STREAM_BASE | ord as u64,
            )
        })
        .collect();

    for k in MIN_SIZE..=MAX_SIZE {
        let probs = &plan.probabilities[&k];
        let subs = sample_subgraphs(graph, k, Some(&mask), probs, plan.seed)?;
        for sub in subs {
            let code = induced_code(graph, &sub);
            let shape = catalog
                .classify_raw(k, code)
                .expect("ESU emits connected subgraphs");
            reservoirs[shape.ordinal as usize].offer(sub);
        }
    }

    let census = catalog
        .shapes()
        .iter()
        .map(|shape| {
            let survival: f64 = plan.probabilities[&shape.size].iter().product();
            let exact = survival >= 1.0;
            let r = &reservoirs[shape.ordinal as usize];
            ShapeCensusRow {
                shape_ordinal: shape.ordinal,
                size: shape.size,
                count: if exact { r.seen } else { (r.seen as f64 / survival).round() as u64 },
                exact,
                sampled: r.items.len() as u64,
            }
        })
        .collect();

    let mut keyed: Vec<(u8, Vec<usize>)> = Vec::new();
    for shape in catalog.shapes() {
        for item in std::mem::take(&mut reservoirs[shape.ordinal as usize].items) {
            keyed.push((shape.ordinal, item));
        }
    }
    keyed.sort();
    let graphlets = keyed
        .iter()
        .map(|(_, vertices)| materialize(graph, vertices))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(GraphletSet {
        graphlets,
        census,
        manifest: SamplingManifest {
            seed: plan.seed,
            target_per_shape: plan.target_per_shape,
            probabilities: plan.probabilities.clone(),
            graph_checksum: graph.checksum(),
            total_nodes: graph.node_count(),
            eligible_nodes,
        },
    })
}

/// `shape_ordinal<TAB>size<TAB>exact_or_estimated_count<TAB>sampled_count`
/// rows for all 29 shapes in ordinal order.
pub fn write_census_tsv(rows: &[ShapeCensusRow], path: &Path) -> std::io::Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "shape_ordinal\tsize\texact_or_estimated_count\tsampled_count")?;
    for row in rows {
        writeln!(w, "{}\t{}\t{}\t{}", row.shape_ordinal, row.size, row.count, row.sampled)?;
    }
    w.flush()
}
