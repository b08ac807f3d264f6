//! Packing on product grids under the weighted sup metric.
//!
//! For a coordinatewise map, `d_n^ω(x, y) = max_a δ_a(x_a, y_a)` where the
//! per-axis Bowen distance is
//! `δ_a(u, v) = max_{j<n, a visible at time j} w_{k(a) - j·offset} ρ(φ_j u, φ_j v)`
//! and `φ_j` composes the first `j` coordinate operations. A pair conflicts iff it
//! conflicts on every axis, so greedy packing in lexicographic order accepts
//! exactly the product of the per-axis greedy sets: a point whose first
//! coordinate was rejected on its axis is covered by the earlier accepted block,
//! and a point whose first coordinate was accepted only competes within its own
//! block. Counts and separable partition functions then factor over axes.

use rustc_hash::FxHashMap;

use crate::base::BasePath;
use crate::error::{Error, Result};
use crate::fiber::{CandidateCloud, FiberKind, FiberSpaceSpec, MetricKind};
use crate::numeric::LogSumExp;
use crate::rds::{orbit_into, Potential, RandomMapSpec};

use super::index::{greedy, CellKeys, Feature, MAX_FEATURES};

/// `φ_j(v)` for every lattice value and `j < n`.
pub(crate) struct AxisOrbit {
    pub(crate) kind: FiberKind,
    pub(crate) lattice: Vec<f64>,
    pub(crate) n: usize,
    values: Vec<f64>,
}

impl AxisOrbit {
    pub(crate) fn build(kind: FiberKind, lattice: &[f64], map: &RandomMapSpec, path: &BasePath, n: usize) -> Self {
        let ops: Vec<_> = (0..n.saturating_sub(1)).map(|j| map.action(path.view(j)).op).collect();
        let mut values = Vec::with_capacity(lattice.len() * n);
        for &v in lattice {
            let mut u = v;
            values.push(u);
            for op in &ops {
                u = op.apply(u);
                values.push(u);
            }
        }
        Self {
            kind,
            lattice: lattice.to_vec(),
            n,
            values,
        }
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub(crate) fn len(&self) -> usize {
        self.lattice.len()
    }
}

/// Weight of axis `a` at each time; zero once the axis has left the window.
pub(crate) fn axis_weights(fiber: &FiberSpaceSpec, offset: usize, n: usize, a: usize) -> Vec<f64> {
    let k = a / fiber.symbol_dim;
    (0..n)
        .map(|j| {
            let lost = j * offset;
            if k >= lost {
                fiber.metric.weight(k - lost)
            } else {
                0.0
            }
        })
        .collect()
}

#[inline]
fn coord_dist(kind: FiberKind, a: f64, b: f64) -> f64 {
    match kind {
        FiberKind::CubeSeq => (a - b).abs(),
        FiberKind::TorusSeq => crate::numeric::circle_dist(a, b),
        FiberKind::BinarySeq => (a != b) as u8 as f64,
    }
}

/// Greedy on one axis in the given lattice order.
pub(crate) fn axis_greedy(orbit: &AxisOrbit, weights: &[f64], eps: f64, order: &[usize]) -> Vec<usize> {
    let eps = super::tie_threshold(eps);
    let active: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(j, w)| (j, *w))
        .collect();
    let conflict = |i: usize, p: usize| {
        active
            .iter()
            .all(|&(j, w)| w * coord_dist(orbit.kind, orbit.at(i, j), orbit.at(p, j)) <= eps)
    };
    let mut feats: Vec<(Feature, usize)> = active
        .iter()
        .filter_map(|&(j, w)| Feature::new(orbit.kind, eps / w).map(|f| (f, j)))
        .collect();
    feats.sort_by(|a, b| b.0.selectivity().cmp(&a.0.selectivity()).then(a.1.cmp(&b.1)));
    feats.truncate(MAX_FEATURES);
    if feats.is_empty() || orbit.len() < 64 {
        return greedy(order, None, conflict);
    }
    let times: Vec<usize> = feats.iter().map(|f| f.1).collect();
    let keys = CellKeys::build(orbit.len(), feats.into_iter().map(|f| f.0).collect(), |i, f| {
        orbit.at(i, times[f])
    });
    greedy(order, Some(&keys), conflict)
}

/// Whether the product path applies: sup metric and a lazy product cloud whose
/// axes share one lattice.
pub(crate) fn applicable(cloud: &CandidateCloud) -> bool {
    if cloud.spec().metric.kind != MetricKind::WeightedSup {
        return false;
    }
    match cloud.axes() {
        Some(axes) => !axes.is_empty() && axes.iter().all(|a| a == &axes[0]),
        None => false,
    }
}

/// Per-axis data shared by packing and partition-function evaluation.
pub(crate) struct ProductContext<'a> {
    pub(crate) fiber: FiberSpaceSpec,
    pub(crate) map: &'a RandomMapSpec,
    pub(crate) path: &'a BasePath,
    pub(crate) n: usize,
    pub(crate) orbit: AxisOrbit,
}

impl<'a> ProductContext<'a> {
    pub(crate) fn new(cloud: &CandidateCloud, map: &'a RandomMapSpec, path: &'a BasePath, n: usize) -> Result<Self> {
        let axes = cloud
            .axes()
            .ok_or_else(|| Error::Unsupported("product packing needs a product cloud".into()))?;
        let fiber = *cloud.spec();
        Ok(Self {
            fiber,
            map,
            path,
            n,
            orbit: AxisOrbit::build(fiber.kind, &axes[0], map, path, n),
        })
    }

    pub(crate) fn axes(&self) -> usize {
        self.fiber.dim()
    }

    pub(crate) fn weights(&self, a: usize) -> Vec<f64> {
        axis_weights(&self.fiber, self.map.offset(), self.n, a)
    }

    /// Canonical-order greedy on every axis; axes with equal weight profiles
    /// share one computation.
    pub(crate) fn greedy_all(&self, eps: f64) -> Vec<Vec<usize>> {
        let order: Vec<usize> = (0..self.orbit.len()).collect();
        let mut cache: FxHashMap<Vec<u64>, Vec<usize>> = FxHashMap::default();
        (0..self.axes())
            .map(|a| {
                let w = self.weights(a);
                let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
                cache
                    .entry(key)
                    .or_insert_with(|| axis_greedy(&self.orbit, &w, eps, &order))
                    .clone()
            })
            .collect()
    }

    /// Separable decomposition of `S_n f`: a constant plus one function per axis,
    /// tabulated over the lattice. `None` if `f` is not separable.
    pub(crate) fn birkhoff_tables(&self, f: &Potential) -> Option<(f64, Vec<Vec<f64>>)> {
        let dim = self.fiber.dim();
        let skip = self.map.offset() * self.fiber.symbol_dim;
        let mut zero_orbit = vec![0.0; self.n * dim];
        orbit_into(self.map, &self.fiber, self.path, self.n, &vec![0.0; dim], &mut zero_orbit);
        let mut constant = 0.0;
        let mut tables = vec![Vec::<f64>::new(); dim];
        for j in 0..self.n {
            let sep = f.separable(self.path.view(j))?;
            constant += sep.constant;
            for (b, g) in sep.terms {
                let source = b + j * skip;
                if source < dim {
                    let t = &mut tables[source];
                    if t.is_empty() {
                        t.resize(self.orbit.len(), 0.0);
                    }
                    for (i, slot) in t.iter_mut().enumerate() {
                        *slot += g.eval(self.orbit.at(i, j));
                    }
                } else {
                    constant += g.eval(zero_orbit[j * dim + b]);
                }
            }
        }
        Some((constant, tables))
    }
}

/// `log Σ_{v ∈ set} exp(scale · table[v])`, or `log |set|` for an empty table.
pub(crate) fn axis_log_sum(table: &[f64], set: &[usize], scale: f64) -> f64 {
    if table.is_empty() {
        return (set.len() as f64).ln();
    }
    let mut acc = LogSumExp::default();
    for &i in set {
        acc.push(scale * table[i]);
    }
    acc.value()
}

/// Lattice order by descending table value, ties by index.
pub(crate) fn descending_order(table: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table[b].total_cmp(&table[a]).then(a.cmp(&b)));
    order
}
