//! Canonical forms for connected graphs on 3 to 5 vertices.
//!
//! A subgraph on k vertices is encoded as a bitmask over the upper triangle
//! of its adjacency matrix: pair (i, j) with i < j occupies one bit, pairs
//! ordered lexicographically. The canonical code of a graph is the minimum
//! encoding over all vertex permutations, so two subgraphs share a canonical
//! code exactly when they are isomorphic. With at most C(5,2) = 10 bits, the
//! map from raw code to canonical code is precomputed per size.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::GraphletError;

pub const MIN_SIZE: u8 = 3;
pub const MAX_SIZE: u8 = 5;

/// One isomorphism class from the catalog. Ordinals run 1..=29 in
/// (size, canonical_code) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShapeId {
    pub size: u8,
    pub canonical_code: u16,
    pub ordinal: u8,
}

/// Bit position of pair (i, j), i < j, in the size-k encoding.
pub fn pair_bit(i: usize, j: usize, k: usize) -> u32 {
    debug_assert!(i < j && j < k);
    (i * (2 * k - i - 1) / 2 + (j - i - 1)) as u32
}

pub fn pair_count(k: usize) -> usize {
    k * (k - 1) / 2
}

/// Connectivity of the graph encoded by `code` on `k` vertices.
pub fn code_is_connected(k: usize, code: u16) -> bool {
    let mut adj = [0u8; 8];
    for i in 0..k {
        for j in (i + 1)..k {
            if code & (1 << pair_bit(i, j, k)) != 0 {
                adj[i] |= 1 << j;
                adj[j] |= 1 << i;
            }
        }
    }
    let mut seen: u8 = 1;
    let mut frontier: u8 = 1;
    while frontier != 0 {
        let v = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        let fresh = adj[v] & !seen;
        seen |= fresh;
        frontier |= fresh;
    }
    seen.count_ones() as usize == k
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for v in 0..k {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                rec(prefix, used, k, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], k, &mut out);
    out
}

fn relabel(code: u16, perm: &[usize], k: usize) -> u16 {
    let mut out = 0u16;
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
            if code & (1 << pair_bit(a, b, k)) != 0 {
                out |= 1 << pair_bit(i, j, k);
            }
        }
    }
    out
}

/// Precomputed classification tables for sizes 3, 4, and 5.
pub struct ShapeCatalog {
    shapes: Vec<ShapeId>,
    canon: [Vec<u16>; 3],
    ordinal: [Vec<Option<u8>>; 3],
}

impl ShapeCatalog {
    fn build() -> ShapeCatalog {
        let mut shapes = Vec::new();
        let mut canon_tables = Vec::new();
        let mut ordinal_tables = Vec::new();
        for k in MIN_SIZE..=MAX_SIZE {
            let k = k as usize;
            let codes = 1usize << pair_count(k);
            let perms = permutations(k);
            let canon: Vec<u16> = (0..codes)
                .map(|raw| {
                    perms.iter().map(|p| relabel(raw as u16, p, k)).min().unwrap()
                })
                .collect();
            let mut classes: Vec<u16> = (0..codes)
                .filter(|&raw| code_is_connected(k, raw as u16))
                .map(|raw| canon[raw])
                .collect();
            classes.sort_unstable();
            classes.dedup();
            let base = shapes.len() as u8;
            for (i, &code) in classes.iter().enumerate() {
                shapes.push(ShapeId {
                    size: k as u8,
                    canonical_code: code,
                    ordinal: base + i as u8 + 1,
                });
            }
            let mut ordinals = vec![None; codes];
            for raw in 0..codes {
                if code_is_connected(k, raw as u16) {
                    let pos = classes.binary_search(&canon[raw]).unwrap();
                    ordinals[raw] = Some(base + pos as u8 + 1);
                }
            }
            canon_tables.push(canon);
            ordinal_tables.push(ordinals);
        }
        ShapeCatalog {
            shapes,
            canon: canon_tables.try_into().map_err(|_| ()).unwrap(),
            ordinal: ordinal_tables.try_into().map_err(|_| ()).unwrap(),
        }
    }

    pub fn global() -> &'static ShapeCatalog {
        static CATALOG: OnceLock<ShapeCatalog> = OnceLock::new();
        CATALOG.get_or_init(ShapeCatalog::build)
    }

    /// All shapes in ordinal order.
    pub fn shapes(&self) -> &[ShapeId] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn by_ordinal(&self, ordinal: u8) -> Option<ShapeId> {
        self.shapes.get(ordinal.checked_sub(1)? as usize).copied()
    }

    /// Shape counts per size, in size order 3, 4, 5.
    pub fn size_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for s in &self.shapes {
            counts[(s.size - MIN_SIZE) as usize] += 1;
        }
        counts
    }

    /// O(1) classification of a raw adjacency code. `None` when the encoded
    /// graph is disconnected.
    pub fn classify_raw(&self, size: u8, raw: u16) -> Option<ShapeId> {
        debug_assert!((MIN_SIZE..=MAX_SIZE).contains(&size));
        let ordinal = self.ordinal[(size - MIN_SIZE) as usize][raw as usize]?;
        self.by_ordinal(ordinal)
    }

    pub fn canonical_code(&self, size: u8, raw: u16) -> u16 {
        self.canon[(size - MIN_SIZE) as usize][raw as usize]
    }
}

/// Raw adjacency code of an edge list over local vertices `0..size`.
/// Rejects out-of-range endpoints, self-loops, and duplicate pairs.
pub fn edges_to_code(size: u8, edges: &[(u8, u8)]) -> Result<u16, GraphletError> {
    let k = size as usize;
    let mut code = 0u16;
    for &(i, j) in edges {
        let (a, b) = (i.min(j) as usize, i.max(j) as usize);
        if i == j || b >= k {
            return Err(GraphletError::InvalidEdge { i, j, size });
        }
        let bit = 1u16 << pair_bit(a, b, k);
        if code & bit != 0 {
            return Err(GraphletError::InvalidEdge { i, j, size });
        }
        code |= bit;
    }
    Ok(code)
}

/// Classifies a small graph given as an edge list over vertices `0..size`.
/// The symmetric, zero-diagonal adjacency is implied by the pair encoding.
pub fn canonical_form(size: u8, edges: &[(u8, u8)]) -> Result<ShapeId, GraphletError> {
    if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
        return Err(GraphletError::InvalidSize { size });
    }
    let code = edges_to_code(size, edges)?;
    ShapeCatalog::global()
        .classify_raw(size, code)
        .ok_or(GraphletError::Disconnected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_expected_size_breakdown() {
        let catalog = ShapeCatalog::global();
        assert_eq!(catalog.size_counts(), [2, 6, 21]);
        assert_eq!(catalog.len(), 29);
    }

    #[test]
    fn ordinals_are_dense_and_sorted() {
        let shapes = ShapeCatalog::global().shapes();
        for (i, s) in shapes.iter().enumerate() {
            assert_eq!(s.ordinal as usize, i + 1);
        }
        for w in shapes.windows(2) {
            assert!((w[0].size, w[0].canonical_code) < (w[1].size, w[1].canonical_code));
        }
    }

    #[test]
    fn path_and_triangle_are_distinct() {
        let path = canonical_form(3, &[(0, 1), (1, 2)]).unwrap();
        let path2 = canonical_form(3, &[(0, 2), (2, 1)]).unwrap();
        let triangle = canonical_form(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(path, path2);
        assert_ne!(path, triangle);
        assert_eq!(path.ordinal, 1);
        assert_eq!(triangle.ordinal, 2);
    }

    #[test]
    fn isomorphic_relabelings_share_canonical_code() {
        // 4-star drawn with two different centers.
        let star_a = canonical_form(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let star_b = canonical_form(4, &[(2, 0), (2, 1), (2, 3)]).unwrap();
        assert_eq!(star_a, star_b);
        // Path P4 under a reflection.
        let p4_a = canonical_form(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let p4_b = canonical_form(4, &[(3, 2), (2, 1), (1, 0)]).unwrap();
        assert_eq!(p4_a, p4_b);
        assert_ne!(star_a, p4_a);
    }

    #[test]
    fn disconnected_input_is_rejected() {
        let err = canonical_form(4, &[(0, 1), (2, 3)]).unwrap_err();
        assert!(matches!(err, GraphletError::Disconnected));
    }

    #[test]
    fn invalid_edges_are_rejected() {
        assert!(matches!(
            canonical_form(3, &[(0, 0), (1, 2)]),
            Err(GraphletError::InvalidEdge { .. })
        ));
        assert!(matches!(
            canonical_form(3, &[(0, 3)]),
            Err(GraphletError::InvalidEdge { .. })
        ));
        assert!(matches!(
            canonical_form(3, &[(0, 1), (1, 0)]),
            Err(GraphletError::InvalidEdge { .. })
        ));
        assert!(matches!(
            canonical_form(6, &[]),
            Err(GraphletError::InvalidSize { size: 6 })
        ));
    }

    #[test]
    fn connectivity_check_matches_definition() {
        assert!(code_is_connected(3, 0b011));
        assert!(!code_is_connected(3, 0b001));
        assert!(!code_is_connected(3, 0));
        // K5 minus nothing.
        assert!(code_is_connected(5, 0b11_1111_1111));
    }
}
