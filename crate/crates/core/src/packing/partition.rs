//! Partition pressures `Q_n` on grid partitions and box covers.
//!
//! A [`GridPartition`] splits each axis into cells whose contribution to `d` is at
//! most ε, so every refined cell `∩_j T^{-j} U_j` has `d_n^ω`-diameter at most ε
//! and holds at most one point of any `(ω, n, ε)`-separated set.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::base::BasePath;
use crate::error::{Error, Result};
use crate::fiber::{CandidateCloud, FiberKind, FiberSpaceSpec, MetricKind};
use crate::numeric::{circle_dist, LogSumExp};
use crate::rds::{modulus_from_values, OrbitTable, Potential, RandomMapSpec};

use super::{canonical_order, greedy_on_table, partition_function, LogPartitionValue};

/// Axis-aligned cells over the window, materialized together with the cloud they
/// partition.
#[derive(Clone, Debug)]
pub struct GridPartition {
    cloud: CandidateCloud,
    eps: f64,
    cells: Vec<u32>,
}

/// Largest per-axis extent a cell may have so that it adds at most ε to `d`.
fn axis_side(fiber: &FiberSpaceSpec, eps: f64, a: usize) -> f64 {
    match fiber.metric.kind {
        MetricKind::WeightedSup => eps / fiber.metric.weight(a / fiber.symbol_dim),
        MetricKind::WeightedSum => eps,
    }
}

impl GridPartition {
    pub fn new(cloud: &CandidateCloud, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Epsilon(eps));
        }
        let fiber = cloud.spec();
        let cells = (0..fiber.dim())
            .map(|a| {
                let side = axis_side(fiber, eps, a);
                match fiber.kind {
                    FiberKind::BinarySeq => {
                        if side >= 1.0 {
                            1
                        } else {
                            2
                        }
                    }
                    _ => ((1.0 / side) - 1e-9).ceil().clamp(1.0, (1u32 << 30) as f64) as u32,
                }
            })
            .collect();
        Ok(Self {
            cloud: cloud.clone(),
            eps,
            cells,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn cloud(&self) -> &CandidateCloud {
        &self.cloud
    }

    pub fn cells_per_axis(&self) -> &[u32] {
        &self.cells
    }

    #[inline]
    pub fn cell(&self, a: usize, v: f64) -> u32 {
        let nc = self.cells[a];
        match self.cloud.spec().kind {
            FiberKind::BinarySeq => {
                if nc == 1 {
                    0
                } else {
                    (v != 0.0) as u32
                }
            }
            _ => ((v * nc as f64) as u32).min(nc - 1),
        }
    }

    /// Number of base cells containing a cloud point.
    pub fn nonempty_cells(&self, cap: f64) -> Result<usize> {
        let pts = self.cloud.materialize(cap)?;
        let d = self.cloud.dim();
        let mut seen: FxHashMap<Vec<u32>, ()> = FxHashMap::default();
        for x in pts.chunks(d) {
            seen.insert((0..d).map(|a| self.cell(a, x[a])).collect(), ());
        }
        Ok(seen.len())
    }
}

/// Maximum of `S_n f` per nonempty refined cell, in sorted key order.
fn refined_cell_maxima(partition: &GridPartition, table: &OrbitTable, sums: &[f64]) -> Vec<f64> {
    let d = partition.cloud.dim();
    let mut best: FxHashMap<Vec<u32>, f64> = FxHashMap::default();
    for i in 0..table.len() {
        let mut key = Vec::with_capacity(table.n() * d);
        for j in 0..table.n() {
            let y = table.iterate(i, j);
            key.extend((0..d).map(|a| partition.cell(a, y[a])));
        }
        let e = best.entry(key).or_insert(f64::NEG_INFINITY);
        *e = e.max(sums[i]);
    }
    let mut entries: Vec<(Vec<u32>, f64)> = best.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries.into_iter().map(|e| e.1).collect()
}

/// `log Σ_C sup_{x ∈ C ∩ cloud} (1/ε)^{S_n f(ω,x)}` over the nonempty cells `C` of
/// the refined partition `∨_{j<n} T_ω^{-j}(partition)`.
pub fn qn_hat(
    partition: &GridPartition,
    map: &RandomMapSpec,
    path: &BasePath,
    n: usize,
    eps: f64,
    f: &Potential,
) -> Result<LogPartitionValue> {
    qn_hat_with_cap(partition, map, path, n, eps, f, crate::fiber::DEFAULT_CLOUD_CAP)
}

pub fn qn_hat_with_cap(
    partition: &GridPartition,
    map: &RandomMapSpec,
    path: &BasePath,
    n: usize,
    eps: f64,
    f: &Potential,
    cap: f64,
) -> Result<LogPartitionValue> {
    if (eps - partition.eps).abs() > 1e-15 * eps {
        return Err(Error::validation("eps", "partition was built for a different scale"));
    }
    let table = OrbitTable::from_cloud(map, path, n, &partition.cloud, cap)?;
    qn_hat_on_table(partition, &table, path, f)
}

/// [`qn_hat`] on a tabulated cloud.
pub fn qn_hat_on_table(
    partition: &GridPartition,
    table: &OrbitTable,
    path: &BasePath,
    f: &Potential,
) -> Result<LogPartitionValue> {
    let sums = if f.is_zero() {
        vec![0.0; table.len()]
    } else {
        table.birkhoff_sums(f, path)?
    };
    let maxima = refined_cell_maxima(partition, table, &sums);
    let l = (1.0 / partition.eps).ln();
    let mut acc = LogSumExp::default();
    maxima.iter().for_each(|s| acc.push(l * s));
    Ok(LogPartitionValue {
        log_value: acc.value(),
        term_count: maxima.len() as f64,
        eps: partition.eps,
        n: table.n(),
    })
}

/// Whether `T_{θ^j ω}` maps every cloud point back into the cloud for `j < steps`.
pub fn forward_invariant(cloud: &CandidateCloud, map: &RandomMapSpec, path: &BasePath, steps: usize, cap: f64) -> Result<bool> {
    let pts = cloud.materialize(cap)?;
    let fiber = cloud.spec();
    let d = cloud.dim();
    let member: FxHashMap<Vec<u64>, ()> = pts
        .chunks(d)
        .map(|x| (x.iter().map(|v| v.to_bits()).collect(), ()))
        .collect();
    let mut y = vec![0.0; d];
    for j in 0..steps.min(path.len()) {
        for x in pts.chunks(d) {
            map.eval_into(fiber, path.view(j), x, &mut y);
            let key: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
            if !member.contains_key(&key) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Terms of the box-cover analogue of the `Q_n ≤ (1/ε)^{Σγ} 4^{ΣB} P_n(ε/4)`
/// inequality. All values are natural logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverBound {
    /// `log Σ_{x∈F} sup_{y ∈ V(x)} (1/ε)^{S_n f(y)}` for the subcover induced by `F`.
    pub log_q: f64,
    pub log_p_quarter: f64,
    pub gamma_sum: f64,
    pub bound_sum: f64,
    /// Right-hand side `Σγ·log(1/ε) + ΣB·log 4 + log P_n(ε/4)`.
    pub rhs: f64,
    pub subcover_size: usize,
    /// Cloud points outside every induced box; 0 when the boxes form a subcover.
    pub uncovered: usize,
    pub invariant_cloud: bool,
}

impl CoverBound {
    pub fn holds(&self, slack: f64) -> bool {
        self.log_q <= self.rhs + slack
    }
}

/// Box cover with per-axis half-width `side/2` and centres `i/K`, `K = ⌈2/side⌉`:
/// each box has `d`-diameter at most ε, and any `d`-ball of radius ε/4 lies in one
/// box. A maximal `(ω, n, ε/4)`-separated set `F` picks, for each `x ∈ F`, the
/// boxes centred nearest to `T^j x`; their pullbacks cover the cloud and give
/// an element of the joined cover per `x`.
///
/// The bound is exact when the cloud is forward invariant, since the modulus
/// `γ` and the sups `B_j` are then taken over a set containing every orbit point
/// they are applied to; `invariant_cloud` records whether that was checked true.
pub fn cover_bound(
    cloud: &CandidateCloud,
    map: &RandomMapSpec,
    path: &BasePath,
    n: usize,
    eps: f64,
    f: &Potential,
    cap: f64,
) -> Result<CoverBound> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Epsilon(eps));
    }
    let fiber = *cloud.spec();
    if fiber.metric.kind != MetricKind::WeightedSup {
        return Err(Error::Unsupported("box covers are built for the weighted_sup metric".into()));
    }
    let d = fiber.dim();
    let table = OrbitTable::from_cloud(map, path, n, cloud, cap)?;
    let quarter = eps / 4.0;
    let centers = greedy_on_table(&table, quarter, &canonical_order(table.len()));
    let sums = table.birkhoff_sums(f, path)?;

    let sides: Vec<f64> = (0..d).map(|a| axis_side(&fiber, eps, a)).collect();
    let grid_k: Vec<f64> = sides.iter().map(|s| (2.0 / s).ceil().max(1.0)).collect();
    let in_box = |a: usize, center: f64, v: f64| -> bool {
        let h = sides[a] / 2.0;
        match fiber.kind {
            FiberKind::TorusSeq => circle_dist(center, v) <= h,
            FiberKind::CubeSeq => (center - v).abs() <= h,
            FiberKind::BinarySeq => h >= 1.0 || center == v,
        }
    };
    let nearest = |a: usize, v: f64| -> f64 {
        match fiber.kind {
            FiberKind::BinarySeq => v,
            FiberKind::CubeSeq => (v * grid_k[a]).round().clamp(0.0, grid_k[a]) / grid_k[a],
            FiberKind::TorusSeq => ((v * grid_k[a]).round() % grid_k[a]) / grid_k[a],
        }
    };

    let boxes: Vec<Vec<f64>> = centers
        .iter()
        .map(|&x| {
            (0..table.n())
                .flat_map(|j| {
                    let y = table.iterate(x, j);
                    (0..d).map(move |a| (a, y[a]))
                })
                .map(|(a, v)| nearest(a, v))
                .collect()
        })
        .collect();
    let mut best = vec![f64::NEG_INFINITY; centers.len()];
    let mut uncovered = 0usize;
    for i in 0..table.len() {
        let mut covered = false;
        for (c, bx) in boxes.iter().enumerate() {
            let inside = (0..table.n()).all(|j| {
                let y = table.iterate(i, j);
                (0..d).all(|a| in_box(a, bx[j * d + a], y[a]))
            });
            if inside {
                covered = true;
                best[c] = best[c].max(sums[i]);
            }
        }
        if !covered {
            uncovered += 1;
        }
    }
    let l = (1.0 / eps).ln();
    let mut acc = LogSumExp::default();
    best.iter().for_each(|s| acc.push(l * s));

    let pts = cloud.materialize(cap)?;
    let mut gamma_sum = 0.0;
    let mut bound_sum = 0.0;
    for j in 0..table.n() {
        let vals: Vec<f64> = pts.chunks(d).map(|x| f.eval(path.view(j), x)).collect();
        gamma_sum += modulus_from_values(&fiber, &pts, &vals, eps);
        bound_sum += vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    let log_p_quarter = partition_function(&table, &centers, f, path, quarter)?.log_value;
    Ok(CoverBound {
        log_q: acc.value(),
        log_p_quarter,
        gamma_sum,
        bound_sum,
        rhs: gamma_sum * l + bound_sum * 4f64.ln() + log_p_quarter,
        subcover_size: centers.len(),
        uncovered,
        invariant_cloud: forward_invariant(cloud, map, path, n, cap)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{make_path, sample_omega, BaseSystemSpec};
    use crate::fiber::{MetricSpec, DEFAULT_CLOUD_CAP};
    use crate::packing::pn_hat;

    fn path(n: usize) -> BasePath {
        let w = sample_omega(&BaseSystemSpec::bernoulli_half(2), 0).unwrap();
        make_path(&w, n).unwrap()
    }

    fn circle_cloud(m: usize) -> CandidateCloud {
        let s = FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup());
        CandidateCloud::product_lattice(&s, m).unwrap()
    }

    #[test]
    fn one_step_counts_base_cells() {
        let cloud = circle_cloud(64);
        let part = GridPartition::new(&cloud, 0.125).unwrap();
        let q = qn_hat(&part, &RandomMapSpec::DoublingCircle, &path(1), 1, 0.125, &Potential::zero()).unwrap();
        assert_eq!(q.term_count, 8.0);
        assert_eq!(part.nonempty_cells(DEFAULT_CLOUD_CAP).unwrap(), 8);
    }

    #[test]
    fn identity_refinement_is_stationary() {
        let cloud = circle_cloud(64);
        let part = GridPartition::new(&cloud, 0.125).unwrap();
        for n in 1..5 {
            let q = qn_hat(&part, &RandomMapSpec::Identity, &path(n), n, 0.125, &Potential::zero()).unwrap();
            assert_eq!(q.term_count, 8.0);
        }
    }

    #[test]
    fn doubling_refinement_splits_cells() {
        // Brute force: the refined cell of i/64 is (⌊8x⌋, ⌊8·2x mod 8⌋).
        let mut cells: Vec<(usize, usize)> = (0..64).map(|i| (i / 8, (2 * i % 64) / 8)).collect();
        cells.sort();
        cells.dedup();
        let cloud = circle_cloud(64);
        let part = GridPartition::new(&cloud, 0.125).unwrap();
        let q = qn_hat(&part, &RandomMapSpec::DoublingCircle, &path(2), 2, 0.125, &Potential::zero()).unwrap();
        assert_eq!(q.term_count, cells.len() as f64);
        assert_eq!(cells.len(), 16);
    }

    #[test]
    fn pn_is_below_qn_and_cover_bound_holds() {
        let cloud = circle_cloud(256);
        let p = path(4);
        let map = RandomMapSpec::DoublingCircle;
        let f = Potential::Spec(crate::rds::PotentialSpec::Trig {
            terms: vec![crate::rds::TrigTerm { coord: 0, amplitude: 0.4, frequency: 1.0, phase: 0.0 }],
        });
        let part = GridPartition::new(&cloud, 0.1).unwrap();
        let pn = pn_hat(&cloud, &map, &p, 3, 0.1, &f).unwrap();
        let qn = qn_hat(&part, &map, &p, 3, 0.1, &f).unwrap();
        assert!(pn.value.log_value <= qn.log_value + 1e-9);
        let cb = cover_bound(&cloud, &map, &p, 3, 0.1, &f, DEFAULT_CLOUD_CAP).unwrap();
        assert!(cb.invariant_cloud);
        assert_eq!(cb.uncovered, 0);
        assert!(cb.holds(1e-9), "{cb:?}");
    }

    #[test]
    fn rotation_clouds_are_not_invariant() {
        let s = FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 2, MetricSpec::sup());
        let cloud = CandidateCloud::product_lattice(&s, 8).unwrap();
        let p = path(3);
        assert!(forward_invariant(&cloud, &RandomMapSpec::Shift, &p, 3, 1e6).unwrap());
        assert!(!forward_invariant(&cloud, &RandomMapSpec::ShiftRandomRotation { scale: 1.0 }, &p, 3, 1e6).unwrap());
    }
}
