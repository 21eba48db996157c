//! Connected induced subgraph enumeration (ESU) and its randomized variant.
//!
//! ESU grows subgraphs from each root vertex, extending only through
//! vertices with a larger index than the root and only into exclusive
//! neighborhoods, so every connected induced k-subgraph is visited exactly
//! once. The randomized variant gates each expansion at depth d with
//! probability p_d; a k-subgraph therefore survives with probability
//! `p_1 * ... * p_k`, identical for every subgraph.
//!
//! Work is partitioned by root vertex. Each root draws its gate decisions
//! from its own seeded stream, so results are independent of worker
//! scheduling and merge deterministically in root order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::canon::{pair_bit, MAX_SIZE, MIN_SIZE};
use super::GraphletError;
use crate::kg::Graph;

/// Per-depth survival probabilities for one subgraph size; index d-1 holds
/// p_d. All entries must lie in (0, 1].
pub type DepthProbs = [f64];

pub(crate) fn validate_scan(graph: &Graph, k: u8, probs: Option<&DepthProbs>) -> Result<(), GraphletError> {
    if !(MIN_SIZE..=MAX_SIZE).contains(&k) {
        return Err(GraphletError::InvalidSize { size: k });
    }
    if !graph.is_simplified() {
        return Err(GraphletError::NotSimplified);
    }
    if let Some(probs) = probs {
        if probs.len() != k as usize {
            return Err(GraphletError::InvalidPlan {
                message: format!("size {k} needs {k} depth probabilities, found {}", probs.len()),
            });
        }
        for (d, &p) in probs.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GraphletError::InvalidPlan {
                    message: format!("p_{} = {p} outside (0, 1]", d + 1),
                });
            }
        }
    }
    Ok(())
}

fn stream_id(k: u8, root: usize) -> u64 {
    ((k as u64) << 48) | root as u64
}

struct Walker<'a> {
    graph: &'a Graph,
    mask: Option<&'a [bool]>,
    k: usize,
    probs: Option<&'a DepthProbs>,
    seed: u64,
    rng: Option<ChaCha8Rng>,
    blocked: Vec<bool>,
    sub: Vec<usize>,
}

impl<'a> Walker<'a> {
    fn new(
        graph: &'a Graph,
        mask: Option<&'a [bool]>,
        k: u8,
        probs: Option<&'a DepthProbs>,
        seed: u64,
    ) -> Self {
        Walker {
            graph,
            mask,
            k: k as usize,
            probs,
            seed,
            rng: None,
            blocked: vec![false; graph.node_count()],
            sub: Vec::with_capacity(k as usize),
        }
    }

    fn eligible(&self, v: usize) -> bool {
        self.mask.is_none_or(|m| m[v])
    }

    fn gate(&mut self, depth: usize) -> bool {
        match self.probs {
            None => true,
            Some(probs) => {
                let p = probs[depth - 1];
                p >= 1.0 || self.rng.as_mut().expect("rng set for gated walk").gen::<f64>() < p
            }
        }
    }

    /// Enumerates all k-subgraphs whose minimum vertex is `root`.
    fn run<F: FnMut(&[usize])>(&mut self, root: usize, emit: &mut F) {
        if !self.eligible(root) {
            return;
        }
        if self.probs.is_some() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(stream_id(self.k as u8, root));
            self.rng = Some(rng);
        }
        if !self.gate(1) {
            return;
        }
        self.blocked[root] = true;
        let mut undo = vec![root];
        let mut ext = Vec::new();
        for &u in self.graph.neighbors(root) {
            if !self.blocked[u] {
                self.blocked[u] = true;
                undo.push(u);
                if u > root && self.eligible(u) {
                    ext.push(u);
                }
            }
        }
        self.sub.push(root);
        self.extend(ext, root, emit);
        self.sub.pop();
        for u in undo {
            self.blocked[u] = false;
        }
    }

    fn extend<F: FnMut(&[usize])>(&mut self, mut ext: Vec<usize>, root: usize, emit: &mut F) {
        let depth = self.sub.len() + 1;
        while let Some(w) = ext.pop() {
            if !self.gate(depth) {
                continue;
            }
            if depth == self.k {
                self.sub.push(w);
                emit(&self.sub);
                self.sub.pop();
                continue;
            }
            // Children extend through w's exclusive neighborhood: vertices
            // adjacent to w but not to (or in) the current subgraph.
            let mut child = ext.clone();
            let mut undo = Vec::new();
            for &u in self.graph.neighbors(w) {
                if !self.blocked[u] {
                    self.blocked[u] = true;
                    undo.push(u);
                    if u > root && self.eligible(u) {
                        child.push(u);
                    }
                }
            }
            self.sub.push(w);
            self.extend(child, root, emit);
            self.sub.pop();
            for u in undo {
                self.blocked[u] = false;
            }
        }
    }
}

fn scan_collect(
    graph: &Graph,
    k: u8,
    mask: Option<&[bool]>,
    probs: Option<&DepthProbs>,
    seed: u64,
) -> Vec<Vec<usize>> {
    let per_root: Vec<Vec<Vec<usize>>> = (0..graph.node_count())
        .into_par_iter()
        .map_init(
            || Walker::new(graph, mask, k, probs, seed),
            |walker, root| {
                let mut out = Vec::new();
                walker.run(root, &mut |sub| {
                    let mut s = sub.to_vec();
                    s.sort_unstable();
                    out.push(s);
                });
                out
            },
        )
        .collect();
    per_root.into_iter().flatten().collect()
}

/// Exact ESU: every connected induced k-subgraph, each exactly once, as a
/// sorted vertex-index list. Order is deterministic for a fixed graph.
/// `mask` restricts enumeration to the induced subgraph on `true` vertices.
pub fn enumerate_subgraphs(
    graph: &Graph,
    k: u8,
    mask: Option<&[bool]>,
) -> Result<Vec<Vec<usize>>, GraphletError> {
    validate_scan(graph, k, None)?;
    Ok(scan_collect(graph, k, mask, None, 0))
}

/// Randomized ESU. Every k-subgraph is emitted with probability
/// `probs.iter().product()`, independently when only the final depth is
/// gated. A fixed seed yields an identical subgraph stream on every run.
pub fn sample_subgraphs(
    graph: &Graph,
    k: u8,
    mask: Option<&[bool]>,
    probs: &DepthProbs,
    seed: u64,
) -> Result<Vec<Vec<usize>>, GraphletError> {
    validate_scan(graph, k, Some(probs))?;
    Ok(scan_collect(graph, k, mask, Some(probs), seed))
}

/// Per-ordinal subgraph counts indexed by catalog ordinal (slot 0 unused).
/// Runs the same gated scan as [`sample_subgraphs`] without materializing
/// subgraphs; with `probs` of `None` the counts are exact.
pub(crate) fn scan_counts(
    graph: &Graph,
    k: u8,
    mask: Option<&[bool]>,
    probs: Option<&DepthProbs>,
    seed: u64,
) -> Vec<u64> {
    use super::canon::ShapeCatalog;
    let catalog = ShapeCatalog::global();
    let slots = catalog.len() + 1;
    (0..graph.node_count())
        .into_par_iter()
        .map_init(
            || Walker::new(graph, mask, k, probs, seed),
            |walker, root| {
                let mut counts = vec![0u64; slots];
                walker.run(root, &mut |sub| {
                    let mut s = [0usize; MAX_SIZE as usize];
                    s[..sub.len()].copy_from_slice(sub);
                    s[..sub.len()].sort_unstable();
                    let code = induced_code(graph, &s[..sub.len()]);
                    let shape = catalog
                        .classify_raw(k, code)
                        .expect("ESU emits connected subgraphs");
                    counts[shape.ordinal as usize] += 1;
                });
                counts
            },
        )
        .reduce(
            || vec![0u64; slots],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

/// Adjacency bitcode of the subgraph induced on sorted host vertices.
pub(crate) fn induced_code(graph: &Graph, sorted: &[usize]) -> u16 {
    let k = sorted.len();
    let mut code = 0u16;
    for i in 0..k {
        for j in (i + 1)..k {
            if graph.has_edge(sorted[i], sorted[j]) {
                code |= 1 << pair_bit(i, j, k);
            }
        }
    }
    code
}
