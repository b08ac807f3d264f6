//! Cell trie used to prefilter conflict checks in greedy packing.
//!
//! Each point gets a short key of cell indices, one per feature. A feature is
//! one coordinate of one iterate, with a tolerance `tol` such that any conflicting
//! pair differs by at most `tol` in that coordinate. Cells are at least `tol` wide,
//! so conflicting pairs sit in equal or adjacent cells and a query only walks
//! neighbouring branches. The accept/reject decisions are exactly those of the
//! naive scan; only the set of pairs examined changes.

use rustc_hash::FxHashMap;

use crate::fiber::FiberKind;

/// Longest key kept per point.
pub(crate) const MAX_FEATURES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Feature {
    cells: u32,
    kind: FiberKind,
}

impl Feature {
    /// Feature for a coordinate of the given kind whose conflict tolerance is
    /// `tol`, or `None` when the cells would not prune anything.
    pub(crate) fn new(kind: FiberKind, tol: f64) -> Option<Self> {
        match kind {
            FiberKind::BinarySeq => (tol < 1.0).then_some(Self { cells: 2, kind }),
            FiberKind::CubeSeq | FiberKind::TorusSeq => {
                if !(tol > 0.0) {
                    return None;
                }
                let raw = (1.0 / (tol * (1.0 + 1e-9))).floor();
                let min_cells = if kind == FiberKind::TorusSeq { 4.0 } else { 3.0 };
                if raw < min_cells {
                    return None;
                }
                // Capped so that rounding in `v * cells` stays far below the
                // 1e-9 width margin.
                Some(Self {
                    cells: raw.min((1u32 << 20) as f64) as u32,
                    kind,
                })
            }
        }
    }

    /// Rough pruning power, used to rank candidate features.
    pub(crate) fn selectivity(&self) -> u32 {
        self.cells
    }

    #[inline]
    pub(crate) fn cell(&self, v: f64) -> u32 {
        match self.kind {
            FiberKind::BinarySeq => (v != 0.0) as u32,
            _ => ((v * self.cells as f64) as u32).min(self.cells - 1),
        }
    }

    #[inline]
    fn neighbours(&self, c: u32, out: &mut [u32; 3]) -> usize {
        match self.kind {
            FiberKind::BinarySeq => {
                out[0] = c;
                1
            }
            FiberKind::CubeSeq => {
                let mut k = 0;
                if c > 0 {
                    out[k] = c - 1;
                    k += 1;
                }
                out[k] = c;
                k += 1;
                if c + 1 < self.cells {
                    out[k] = c + 1;
                    k += 1;
                }
                k
            }
            FiberKind::TorusSeq => {
                out[0] = (c + self.cells - 1) % self.cells;
                out[1] = c;
                out[2] = (c + 1) % self.cells;
                3
            }
        }
    }
}

/// Per-point cell keys, `len * features.len()` values.
pub(crate) struct CellKeys {
    pub(crate) features: Vec<Feature>,
    pub(crate) keys: Vec<u32>,
}

impl CellKeys {
    /// Builds keys from `value(point, feature)`.
    pub(crate) fn build<V: Fn(usize, usize) -> f64 + Sync>(len: usize, features: Vec<Feature>, value: V) -> Self {
        let width = features.len();
        let rows = crate::exec::par_map_range(len, |i| {
            (0..width).map(|f| features[f].cell(value(i, f))).collect::<Vec<u32>>()
        });
        Self {
            features,
            keys: rows.concat(),
        }
    }

    fn key(&self, i: usize) -> &[u32] {
        let w = self.features.len();
        &self.keys[i * w..(i + 1) * w]
    }
}

struct CellTrie<'a> {
    keys: &'a CellKeys,
    children: FxHashMap<u64, u32>,
    leaves: Vec<Vec<u32>>,
    next_node: u32,
}

impl<'a> CellTrie<'a> {
    fn new(keys: &'a CellKeys) -> Self {
        Self {
            keys,
            children: FxHashMap::default(),
            leaves: Vec::new(),
            next_node: 1,
        }
    }

    fn insert(&mut self, i: usize) {
        let mut node = 0u32;
        for &c in self.keys.key(i) {
            let slot = ((node as u64) << 32) | c as u64;
            node = match self.children.get(&slot) {
                Some(&child) => child,
                None => {
                    let child = self.next_node;
                    self.next_node += 1;
                    self.children.insert(slot, child);
                    child
                }
            };
        }
        let node = node as usize;
        if self.leaves.len() <= node {
            self.leaves.resize_with(node + 1, Vec::new);
        }
        self.leaves[node].push(i as u32);
    }

    fn any<C: Fn(usize) -> bool>(&self, i: usize, conflict: &C) -> bool {
        let key = self.keys.key(i);
        let depth = key.len();
        let mut stack: Vec<(u32, usize)> = vec![(0, 0)];
        let mut nb = [0u32; 3];
        while let Some((node, d)) = stack.pop() {
            if d == depth {
                if let Some(leaf) = self.leaves.get(node as usize) {
                    if leaf.iter().any(|&p| conflict(p as usize)) {
                        return true;
                    }
                }
                continue;
            }
            let k = self.keys.features[d].neighbours(key[d], &mut nb);
            for &c in &nb[..k] {
                if let Some(&child) = self.children.get(&(((node as u64) << 32) | c as u64)) {
                    stack.push((child, d + 1));
                }
            }
        }
        false
    }
}

/// Greedy packing over `order`: a point is accepted unless `conflict(i, p)`
/// holds for an already accepted `p`. Returns accepted points in acceptance order.
pub(crate) fn greedy<C>(order: &[usize], keys: Option<&CellKeys>, conflict: C) -> Vec<usize>
where
    C: Fn(usize, usize) -> bool,
{
    let mut accepted = Vec::new();
    match keys {
        Some(keys) if !keys.features.is_empty() => {
            let mut trie = CellTrie::new(keys);
            for &i in order {
                if !trie.any(i, &|p| conflict(i, p)) {
                    trie.insert(i);
                    accepted.push(i);
                }
            }
        }
        _ => {
            for &i in order {
                if !accepted.iter().any(|&p| conflict(i, p)) {
                    accepted.push(i);
                }
            }
        }
    }
    accepted
}
