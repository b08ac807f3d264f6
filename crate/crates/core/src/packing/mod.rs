//! Maximal separated sets, log-domain partition functions `P_n` and
//! partition pressures `Q_n`.
//!
//! Greedy packing runs on one of two routes. Product clouds under the sup metric
//! go through [`product`], which never materializes the cloud. Everything else
//! materializes the cloud, tabulates orbits once and packs with a cell-trie
//! prefilter. Both routes accept exactly the points a naive scan would.

mod index;
pub mod partition;
mod product;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base::BasePath;
use crate::error::{Error, Result};
use crate::fiber::{CandidateCloud, FiberKind, FiberSpaceSpec, MetricKind, DEFAULT_CLOUD_CAP};
use crate::numeric::log_sum_exp;
use crate::rds::{OrbitTable, Potential, RandomMapSpec};

use index::{greedy, CellKeys, Feature, MAX_FEATURES};
use product::{applicable, axis_greedy, axis_log_sum, descending_order, ProductContext};

pub use partition::{qn_hat, GridPartition};

/// Points of a separated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Members {
    /// Indices into the cloud, in acceptance order.
    Explicit { points: Vec<usize> },
    /// Per-axis lattice indices; the set is their Cartesian product.
    Product { axes: Vec<Vec<usize>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedSet {
    pub eps: f64,
    pub n: usize,
    pub members: Members,
    /// Every rejected cloud point is within ε of an accepted one.
    pub certified: bool,
}

impl SeparatedSet {
    pub fn cardinality(&self) -> f64 {
        match &self.members {
            Members::Explicit { points } => points.len() as f64,
            Members::Product { axes } => axes.iter().map(|a| a.len() as f64).product(),
        }
    }

    pub fn log_cardinality(&self) -> f64 {
        match &self.members {
            Members::Explicit { points } => (points.len() as f64).ln(),
            Members::Product { axes } => axes.iter().map(|a| (a.len() as f64).ln()).sum(),
        }
    }

    /// Cloud indices of the members (product sets enumerate lexicographically).
    pub fn cloud_indices(&self, cloud: &CandidateCloud, cap: f64) -> Result<Vec<usize>> {
        match &self.members {
            Members::Explicit { points } => Ok(points.clone()),
            Members::Product { axes } => {
                let c = self.cardinality();
                if c > cap {
                    return Err(Error::CloudTooLarge { cardinality: c, cap });
                }
                let radix: Vec<usize> = cloud
                    .axes()
                    .ok_or_else(|| Error::Unsupported("product set on a non-product cloud".into()))?
                    .iter()
                    .map(|a| a.len())
                    .collect();
                let mut out = vec![0usize];
                for (chosen, &r) in axes.iter().zip(&radix) {
                    out = out
                        .iter()
                        .flat_map(|&base| chosen.iter().map(move |&v| base * r + v))
                        .collect();
                }
                Ok(out)
            }
        }
    }
}

/// `log Σ_{x∈F} (1/ε)^{S_n f(x)}` with its bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPartitionValue {
    pub log_value: f64,
    pub term_count: f64,
    pub eps: f64,
    pub n: usize,
}

impl LogPartitionValue {
    /// The sandwich `log|F| ± n·B·log(1/ε)` for a potential bounded by `bound`.
    pub fn within_bounds(&self, bound: f64) -> bool {
        let spread = self.n as f64 * bound * (1.0 / self.eps).ln();
        let lc = self.term_count.ln();
        let slack = 1e-9 * (1.0 + lc.abs() + spread);
        self.log_value >= lc - spread - slack && self.log_value <= lc + spread + slack
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Epsilon(eps))
    }
}

/// Log partition function from Birkhoff sums.
pub fn log_partition(sums: &[f64], eps: f64, n: usize) -> Result<LogPartitionValue> {
    check_eps(eps)?;
    let l = (1.0 / eps).ln();
    let terms: Vec<f64> = sums.iter().map(|s| l * s).collect();
    Ok(LogPartitionValue {
        log_value: log_sum_exp(&terms),
        term_count: sums.len() as f64,
        eps,
        n,
    })
}

pub fn canonical_order(len: usize) -> Vec<usize> {
    (0..len).collect()
}

/// Uniformly shuffled order determined by `seed`.
pub fn seeded_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order = canonical_order(len);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

fn table_keys(table: &OrbitTable, eps: f64) -> Option<CellKeys> {
    let fiber = table.fiber();
    let mut feats: Vec<(Feature, usize, usize)> = Vec::new();
    for j in 0..table.n() {
        for b in 0..fiber.dim() {
            let w = fiber.metric.weight(b / fiber.symbol_dim);
            if w > 0.0 {
                if let Some(f) = Feature::new(fiber.kind, eps / w) {
                    feats.push((f, j, b));
                }
            }
        }
    }
    if feats.is_empty() || table.len() < 64 {
        return None;
    }
    feats.sort_by(|a, b| {
        b.0.selectivity()
            .cmp(&a.0.selectivity())
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    feats.truncate(MAX_FEATURES);
    let slots: Vec<(usize, usize)> = feats.iter().map(|f| (f.1, f.2)).collect();
    Some(CellKeys::build(table.len(), feats.into_iter().map(|f| f.0).collect(), |i, f| {
        let (j, b) = slots[f];
        table.iterate(i, j)[b]
    }))
}

/// Greedy packing over a tabulated cloud with the trie prefilter.
pub fn greedy_on_table(table: &OrbitTable, eps: f64, order: &[usize]) -> Vec<usize> {
    let t = tie_threshold(eps);
    let keys = table_keys(table, t);
    greedy(order, keys.as_ref(), |i, p| table.within(i, p, t))
}

/// Relative margin under which a distance counts as equal to ε.
pub const TIE_RTOL: f64 = 1e-9;

/// Separation means `d > tie_threshold(ε)`. Lattice spacings that equal ε exactly
/// (0.3 on the lattice i/20, say) then count as ties whatever the rounding of
/// the coordinates.
#[inline]
pub fn tie_threshold(eps: f64) -> f64 {
    eps * (1.0 + TIE_RTOL)
}

/// Reference greedy packing: compares each candidate with every accepted point.
pub fn greedy_naive(table: &OrbitTable, eps: f64, order: &[usize]) -> Vec<usize> {
    let t = tie_threshold(eps);
    greedy(order, None, |i, p| table.within(i, p, t))
}

/// Exhaustive re-check of a separated set over a tabulated cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub separated: bool,
    pub maximal: bool,
}

pub fn verify_separated(table: &OrbitTable, points: &[usize], eps: f64) -> Certificate {
    let eps = tie_threshold(eps);
    let separated = points
        .iter()
        .enumerate()
        .all(|(a, &i)| points[a + 1..].iter().all(|&p| table.bowen_dist(i, p) > eps));
    let mut member = vec![false; table.len()];
    points.iter().for_each(|&i| member[i] = true);
    let maximal = (0..table.len()).all(|i| member[i] || points.iter().any(|&p| table.bowen_dist(i, p) <= eps));
    Certificate { separated, maximal }
}

/// Maximal `(ω, n, ε)`-separated subset of the cloud, greedy in canonical order
/// or in the order drawn from `order_seed`.
pub fn greedy_separated(
    cloud: &CandidateCloud,
    map: &RandomMapSpec,
    path: &BasePath,
    n: usize,
    eps: f64,
    order_seed: Option<u64>,
) -> Result<SeparatedSet> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(eps > 0.0) {
        return Err(Error::Epsilon(eps));
    }
    if path.len() < n {
        return Err(Error::PathTooShort {
            needed: n,
            available: path.len(),
        });
    }
    if order_seed.is_none() && applicable(cloud) {
        let ctx = ProductContext::new(cloud, map, path, n)?;
        return Ok(SeparatedSet {
            eps,
            n,
            members: Members::Product {
                axes: ctx.greedy_all(eps),
            },
            certified: true,
        });
    }
    let table = OrbitTable::from_cloud(map, path, n, cloud, DEFAULT_CLOUD_CAP)?;
    let order = match order_seed {
        Some(s) => seeded_order(table.len(), s),
        None => canonical_order(table.len()),
    };
    Ok(SeparatedSet {
        eps,
        n,
        members: Members::Explicit {
            points: greedy_on_table(&table, eps, &order),
        },
        certified: true,
    })
}

/// `log Σ_{x∈F} (1/ε)^{S_n f(ω,x)}` over explicit members of a tabulated cloud.
pub fn partition_function(
    table: &OrbitTable,
    points: &[usize],
    f: &Potential,
    path: &BasePath,
    eps: f64,
) -> Result<LogPartitionValue> {
    check_eps(eps)?;
    if f.is_zero() {
        return log_partition(&vec![0.0; points.len()], eps, table.n());
    }
    let sums = table.birkhoff_sums_of(f, path, points)?;
    log_partition(&sums, eps, table.n())
}

/// Result of [`pn_hat`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnHat {
    pub value: LogPartitionValue,
    pub set: SeparatedSet,
    /// Whether the weight-ordered second pass beat canonical order (on at least
    /// one axis for product sets).
    pub reselected: bool,
}

/// Lower estimate of `P_n(T, f, d, ω, ε)`: greedy in canonical order, then again
/// in order of decreasing `S_n f`, keeping the larger partition function.
pub fn pn_hat(
    cloud: &CandidateCloud,
    map: &RandomMapSpec,
    path: &BasePath,
    n: usize,
    eps: f64,
    f: &Potential,
) -> Result<PnHat> {
    pn_hat_with_cap(cloud, map, path, n, eps, f, DEFAULT_CLOUD_CAP)
}

pub fn pn_hat_with_cap(
    cloud: &CandidateCloud,
    map: &RandomMapSpec,
    path: &BasePath,
    n: usize,
    eps: f64,
    f: &Potential,
    cap: f64,
) -> Result<PnHat> {
    check_eps(eps)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if path.len() < n {
        return Err(Error::PathTooShort {
            needed: n,
            available: path.len(),
        });
    }
    if applicable(cloud) {
        let ctx = ProductContext::new(cloud, map, path, n)?;
        if let Some(result) = product_pn_hat(&ctx, eps, f) {
            return Ok(result);
        }
    }
    let table = OrbitTable::from_cloud(map, path, n, cloud, cap)?;
    explicit_pn_hat(&table, path, eps, f)
}

/// [`pn_hat`] on an already tabulated cloud.
pub fn explicit_pn_hat(table: &OrbitTable, path: &BasePath, eps: f64, f: &Potential) -> Result<PnHat> {
    let n = table.n();
    let first = greedy_on_table(table, eps, &canonical_order(table.len()));
    let set = |points: Vec<usize>| SeparatedSet {
        eps,
        n,
        members: Members::Explicit { points },
        certified: true,
    };
    if f.is_zero() {
        return Ok(PnHat {
            value: log_partition(&vec![0.0; first.len()], eps, n)?,
            set: set(first),
            reselected: false,
        });
    }
    let sums = table.birkhoff_sums(f, path)?;
    let pick = |pts: &[usize]| pts.iter().map(|&i| sums[i]).collect::<Vec<f64>>();
    let v1 = log_partition(&pick(&first), eps, n)?;
    let second = greedy_on_table(table, eps, &descending_order(&sums));
    let v2 = log_partition(&pick(&second), eps, n)?;
    Ok(if v2.log_value > v1.log_value {
        PnHat {
            value: v2,
            set: set(second),
            reselected: true,
        }
    } else {
        PnHat {
            value: v1,
            set: set(first),
            reselected: false,
        }
    })
}

fn product_pn_hat(ctx: &ProductContext<'_>, eps: f64, f: &Potential) -> Option<PnHat> {
    let n = ctx.n;
    let mut axes = ctx.greedy_all(eps);
    let l = (1.0 / eps).ln();
    let (constant, tables) = if f.is_zero() {
        (0.0, vec![Vec::new(); ctx.axes()])
    } else {
        ctx.birkhoff_tables(f)?
    };
    let mut reselected = false;
    let mut log_value = l * constant;
    for (a, table) in tables.iter().enumerate() {
        let mut best = axis_log_sum(table, &axes[a], l);
        if !table.is_empty() {
            let alt = axis_greedy(&ctx.orbit, &ctx.weights(a), eps, &descending_order(table));
            let v = axis_log_sum(table, &alt, l);
            if v > best {
                best = v;
                axes[a] = alt;
                reselected = true;
            }
        }
        log_value += best;
    }
    let set = SeparatedSet {
        eps,
        n,
        members: Members::Product { axes },
        certified: true,
    };
    Some(PnHat {
        value: LogPartitionValue {
            log_value,
            term_count: set.cardinality(),
            eps,
            n,
        },
        set,
        reselected,
    })
}

/// Exact maximal separated cardinality on a product lattice (no dynamics).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductOracle {
    pub per_axis: Vec<usize>,
    pub count: f64,
    /// Whether `count` is the true maximum over the product lattice. Always true
    /// on cube and binary axes; on torus axes the per-axis blocks tile the circle
    /// only when the step divides the lattice size, and otherwise `count` is a
    /// lower bound.
    pub exact_maximum: bool,
}

/// Lattice steps needed to exceed `tau` on a lattice of `m` intervals.
fn separating_step(tau: f64, m: usize) -> usize {
    let t = tau * m as f64;
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r as usize + 1
    } else {
        t.floor() as usize + 1
    }
}

/// Exact separated counts on the product lattice with `m` intervals per axis,
/// under the weighted sup metric: on axis `a` of symbol `k` two values are
/// separated iff their distance exceeds `ε / w_k`.
pub fn exact_separated_product(spec: &FiberSpaceSpec, eps: f64, m: usize) -> Result<ProductOracle> {
    spec.validate()?;
    if spec.metric.kind != MetricKind::WeightedSup {
        return Err(Error::Unsupported("exact product oracle needs the weighted_sup metric".into()));
    }
    if !(eps > 0.0) || m == 0 {
        return Err(Error::validation("eps", "need eps > 0 and a nonempty lattice"));
    }
    let mut per_axis = Vec::with_capacity(spec.dim());
    let mut exact = true;
    for a in 0..spec.dim() {
        let tau = eps / spec.metric.weight(a / spec.symbol_dim);
        let (count, tight) = match spec.kind {
            FiberKind::BinarySeq => (if tau < 1.0 { 2 } else { 1 }, true),
            FiberKind::CubeSeq => {
                if tau >= 1.0 {
                    (1, true)
                } else {
                    (m / separating_step(tau, m) + 1, true)
                }
            }
            FiberKind::TorusSeq => {
                if tau >= 0.5 {
                    (1, true)
                } else {
                    let s = separating_step(tau, m);
                    let c = (m / s).max(1);
                    (c, c == 1 || m % s == 0)
                }
            }
        };
        exact &= tight;
        per_axis.push(count);
    }
    let nontrivial = per_axis.iter().filter(|&&c| c > 1).count();
    Ok(ProductOracle {
        count: per_axis.iter().map(|&c| c as f64).product(),
        per_axis,
        exact_maximum: exact || nontrivial <= 1,
    })
}
