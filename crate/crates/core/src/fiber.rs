//! Compact sequence fibers `X` with weighted metrics and finite candidate clouds.
//!
//! A fiber point is a window of `W` symbols, each carrying `D` coordinates, stored
//! flat in symbol-major order: coordinate `c` of symbol `k` sits at `k * D + c`.

use serde::{Deserialize, Serialize};

use crate::base::counter_uniform;
use crate::error::{Error, Result};
use crate::numeric::circle_dist;

/// Cloud size above which [`grid`] refuses to build unless told otherwise.
pub const DEFAULT_CLOUD_CAP: f64 = 1.0e7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberKind {
    CubeSeq,
    TorusSeq,
    BinarySeq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    WeightedSum,
    WeightedSup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default = "default_weight_base")]
    pub weight_base: u32,
}

fn default_weight_base() -> u32 {
    2
}

impl MetricSpec {
    pub fn sup() -> Self {
        Self {
            kind: MetricKind::WeightedSup,
            weight_base: 2,
        }
    }

    pub fn sum() -> Self {
        Self {
            kind: MetricKind::WeightedSum,
            weight_base: 2,
        }
    }

    /// Weight of symbol `k`: `2^-k` for the sup metric, `2^-(k+1)` for the sum
    /// metric so that the weights sum to less than one.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        let e = match self.kind {
            MetricKind::WeightedSup => k,
            MetricKind::WeightedSum => k + 1,
        };
        if e > 1000 {
            0.0
        } else {
            (-(e as f64)).exp2()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiberSpaceSpec {
    pub kind: FiberKind,
    #[serde(rename = "D")]
    pub symbol_dim: usize,
    pub window: usize,
    pub metric: MetricSpec,
}

impl FiberSpaceSpec {
    pub fn new(kind: FiberKind, symbol_dim: usize, window: usize, metric: MetricSpec) -> Self {
        Self {
            kind,
            symbol_dim,
            window,
            metric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbol_dim == 0 {
            return Err(Error::validation("D", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::validation("window", "must be at least 1"));
        }
        if self.metric.weight_base != 2 {
            return Err(Error::validation("metric.weight_base", "only base 2 is supported"));
        }
        Ok(())
    }

    /// Number of flat coordinates, `D * W`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.symbol_dim * self.window
    }

    pub fn with_window(&self, window: usize) -> Self {
        Self { window, ..*self }
    }

    /// Distance between two coordinate values on one axis.
    #[inline]
    pub fn coord_dist(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            FiberKind::CubeSeq => (a - b).abs(),
            FiberKind::TorusSeq => circle_dist(a, b),
            FiberKind::BinarySeq => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Largest possible [`coord_dist`](Self::coord_dist).
    pub fn coord_diameter(&self) -> f64 {
        match self.kind {
            FiberKind::TorusSeq => 0.5,
            _ => 1.0,
        }
    }

    /// Per-symbol distance: sup over the `D` coordinates of symbol `k`.
    #[inline]
    pub fn symbol_dist(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        let d = self.symbol_dim;
        let mut m = 0.0f64;
        for c in k * d..(k + 1) * d {
            m = m.max(self.coord_dist(x[c], y[c]));
        }
        m
    }

    /// Window distance without shape checks.
    #[inline]
    pub fn dist_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.metric.kind {
            MetricKind::WeightedSup => {
                let mut m = 0.0f64;
                for k in 0..self.window {
                    m = m.max(self.metric.weight(k) * self.symbol_dist(k, x, y));
                }
                m
            }
            MetricKind::WeightedSum => (0..self.window)
                .map(|k| self.metric.weight(k) * self.symbol_dist(k, x, y))
                .sum(),
        }
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_shape(x)?;
        self.check_shape(y)?;
        Ok(self.dist_unchecked(x, y))
    }

    pub fn check_shape(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Checks the shape and the coordinate range.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        self.check_shape(x)?;
        let legal = |v: f64| match self.kind {
            FiberKind::BinarySeq => v == 0.0 || v == 1.0,
            _ => (0.0..=1.0).contains(&v),
        };
        match x.iter().position(|&v| !legal(v)) {
            Some(i) => Err(Error::validation(
                "coords",
                format!("coordinate {i} = {} out of range", x[i]),
            )),
            None => Ok(()),
        }
    }
}

/// A point of the fiber within the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberPoint {
    pub coords: Vec<f64>,
}

impl FiberPoint {
    pub fn new(spec: &FiberSpaceSpec, coords: Vec<f64>) -> Result<Self> {
        spec.check_point(&coords)?;
        Ok(Self { coords })
    }

    pub fn zeros(spec: &FiberSpaceSpec) -> Self {
        Self {
            coords: vec![0.0; spec.dim()],
        }
    }
}

/// `d(x, y)` for two fiber points.
pub fn dist(spec: &FiberSpaceSpec, x: &FiberPoint, y: &FiberPoint) -> Result<f64> {
    spec.dist(&x.coords, &y.coords)
}

/// Per-axis lattice with `m` intervals: `i/m` for `i = 0..=m` on the cube,
/// `i/m` for `i < m` on the torus, `{0, 1}` for binary axes.
pub fn axis_lattice(kind: FiberKind, m: usize) -> Vec<f64> {
    match kind {
        FiberKind::CubeSeq => (0..=m).map(|i| i as f64 / m as f64).collect(),
        FiberKind::TorusSeq => (0..m).map(|i| i as f64 / m as f64).collect(),
        FiberKind::BinarySeq => vec![0.0, 1.0],
    }
}

/// Number of lattice intervals for a given mesh.
pub fn intervals_for_mesh(mesh: f64) -> usize {
    ((1.0 / mesh) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Grid { mesh: f64 },
    Random { count: usize, seed: u64 },
    Explicit,
}

#[derive(Clone, Debug)]
enum Storage {
    /// Cartesian product of per-axis value lists, enumerated with axis 0 most
    /// significant.
    Product(Vec<Vec<f64>>),
    Points(Vec<f64>),
}

/// A finite stand-in for `X` used by the packing routines.
#[derive(Clone, Debug)]
pub struct CandidateCloud {
    spec: FiberSpaceSpec,
    storage: Storage,
    provenance: Provenance,
}

impl CandidateCloud {
    pub fn spec(&self) -> &FiberSpaceSpec {
        &self.spec
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Number of points, as a float because product clouds can be astronomically
    /// large.
    pub fn cardinality(&self) -> f64 {
        match &self.storage {
            Storage::Product(axes) => axes.iter().map(|a| a.len() as f64).product(),
            Storage::Points(p) => (p.len() / self.dim().max(1)) as f64,
        }
    }

    /// Number of points if it fits in memory-addressable range.
    pub fn len(&self) -> usize {
        let c = self.cardinality();
        if c > usize::MAX as f64 / 2.0 {
            usize::MAX
        } else {
            c as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality() == 0.0
    }

    /// Per-axis value lists when the cloud is a lazy product.
    pub fn axes(&self) -> Option<&[Vec<f64>]> {
        match &self.storage {
            Storage::Product(a) => Some(a),
            Storage::Points(_) => None,
        }
    }

    /// Writes point `i` into `out`.
    pub fn point_into(&self, i: usize, out: &mut [f64]) {
        match &self.storage {
            Storage::Product(axes) => {
                let mut rem = i;
                for (a, values) in axes.iter().enumerate().rev() {
                    out[a] = values[rem % values.len()];
                    rem /= values.len();
                }
            }
            Storage::Points(p) => {
                let d = self.dim();
                out.copy_from_slice(&p[i * d..(i + 1) * d]);
            }
        }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.point_into(i, &mut v);
        v
    }

    /// Flat `len * dim` array of all points; fails above `cap` points.
    pub fn materialize(&self, cap: f64) -> Result<Vec<f64>> {
        let c = self.cardinality();
        if c > cap {
            return Err(Error::CloudTooLarge { cardinality: c, cap });
        }
        if let Storage::Points(p) = &self.storage {
            return Ok(p.clone());
        }
        let n = c as usize;
        let d = self.dim();
        let mut flat = vec![0.0; n * d];
        for i in 0..n {
            self.point_into(i, &mut flat[i * d..(i + 1) * d]);
        }
        Ok(flat)
    }

    /// Explicit point list; every point is range-checked.
    pub fn explicit(spec: &FiberSpaceSpec, points: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        let mut flat = Vec::with_capacity(points.len() * spec.dim());
        for p in &points {
            spec.check_point(p)?;
            flat.extend_from_slice(p);
        }
        Ok(Self {
            spec: *spec,
            storage: Storage::Points(flat),
            provenance: Provenance::Explicit,
        })
    }

    /// Product cloud from per-axis lattices of `m` intervals, without a size cap.
    pub fn product_lattice(spec: &FiberSpaceSpec, m: usize) -> Result<Self> {
        spec.validate()?;
        if m == 0 {
            return Err(Error::validation("mesh", "need at least one interval"));
        }
        let axis = axis_lattice(spec.kind, m);
        Ok(Self {
            spec: *spec,
            storage: Storage::Product(vec![axis; spec.dim()]),
            provenance: Provenance::Grid { mesh: 1.0 / m as f64 },
        })
    }

    /// Same points, different fiber spec of identical dimension.
    pub fn with_spec(&self, spec: &FiberSpaceSpec) -> Result<Self> {
        if spec.dim() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: spec.dim(),
            });
        }
        Ok(Self {
            spec: *spec,
            ..self.clone()
        })
    }
}

/// Grid cloud of the given mesh; fails if it would hold more than `cap` points.
pub fn grid(spec: &FiberSpaceSpec, mesh: f64, cap: f64) -> Result<CandidateCloud> {
    if !(mesh > 0.0 && mesh.is_finite()) {
        return Err(Error::validation("mesh", "must be positive"));
    }
    let mut cloud = CandidateCloud::product_lattice(spec, intervals_for_mesh(mesh))?;
    cloud.provenance = Provenance::Grid { mesh };
    let c = cloud.cardinality();
    if c > cap {
        return Err(Error::CloudTooLarge { cardinality: c, cap });
    }
    Ok(cloud)
}

/// `count` points drawn uniformly (binary axes: fair bits), addressed by
/// `(seed, point index)`.
pub fn random_cloud(spec: &FiberSpaceSpec, count: usize, seed: u64) -> Result<CandidateCloud> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    let d = spec.dim();
    let mut flat = Vec::with_capacity(count * d);
    for i in 0..count {
        for c in 0..d {
            let u = counter_uniform(seed, i as u64, c as u64);
            flat.push(match spec.kind {
                FiberKind::BinarySeq => (u >= 0.5) as u8 as f64,
                _ => u,
            });
        }
    }
    Ok(CandidateCloud {
        spec: *spec,
        storage: Storage::Points(flat),
        provenance: Provenance::Random { count, seed },
    })
}

/// Window size `n + ceil(log2(1/ε)) + margin`.
pub fn truncation_window(eps: f64, n: usize, margin: usize) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Epsilon(eps));
    }
    if n == 0 {
        return Err(Error::validation("n", "must be at least 1"));
    }
    let bits = ((1.0 / eps).log2() - 1e-12).ceil().max(0.0) as usize;
    Ok(n + bits + margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus1(window: usize) -> FiberSpaceSpec {
        FiberSpaceSpec::new(FiberKind::TorusSeq, 1, window, MetricSpec::sup())
    }

    #[test]
    fn distance_examples() {
        let s = torus1(3);
        let x = FiberPoint::zeros(&s);
        let y = FiberPoint::new(&s, vec![0.9, 0.0, 0.0]).unwrap();
        assert_eq!(dist(&s, &x, &x).unwrap(), 0.0);
        assert!((dist(&s, &x, &y).unwrap() - 0.1).abs() < 1e-15);

        let c = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 4, MetricSpec::sum());
        let d = c.dist(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!((d - 0.9375).abs() < 1e-15);
        assert!(matches!(c.dist(&[0.0; 3], &[1.0; 4]), Err(Error::Shape { .. })));
    }

    #[test]
    fn sup_weights_decay_by_symbol() {
        let s = torus1(3);
        assert!((s.dist_unchecked(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.5]) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn grid_examples() {
        let c1 = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 1, MetricSpec::sup());
        let g = grid(&c1, 0.5, DEFAULT_CLOUD_CAP).unwrap();
        assert_eq!(g.materialize(10.0).unwrap(), vec![0.0, 0.5, 1.0]);

        let g = grid(&torus1(1), 0.25, DEFAULT_CLOUD_CAP).unwrap();
        assert_eq!(g.materialize(10.0).unwrap(), vec![0.0, 0.25, 0.5, 0.75]);

        let c22 = FiberSpaceSpec::new(FiberKind::CubeSeq, 2, 2, MetricSpec::sup());
        assert_eq!(grid(&c22, 0.5, DEFAULT_CLOUD_CAP).unwrap().len(), 81);

        let big = FiberSpaceSpec::new(FiberKind::CubeSeq, 2, 10, MetricSpec::sup());
        match grid(&big, 0.1, 1e6) {
            Err(Error::CloudTooLarge { cardinality, .. }) => assert!((cardinality / 11f64.powi(20) - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn product_enumeration_is_lexicographic() {
        let c = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 2, MetricSpec::sup());
        let g = grid(&c, 0.5, 100.0).unwrap();
        assert_eq!(g.point(0), vec![0.0, 0.0]);
        assert_eq!(g.point(1), vec![0.0, 0.5]);
        assert_eq!(g.point(3), vec![0.5, 0.0]);
        assert_eq!(g.point(8), vec![1.0, 1.0]);
    }

    #[test]
    fn window_formula() {
        assert_eq!(truncation_window(0.125, 4, 2).unwrap(), 9);
        assert_eq!(truncation_window(0.3, 1, 2).unwrap(), 5);
        assert_eq!(
            truncation_window(0.05, 3, 2).unwrap() - truncation_window(0.1, 3, 2).unwrap(),
            1
        );
        assert!(truncation_window(1.0, 3, 2).is_err());
    }

    #[test]
    fn random_cloud_is_seeded_and_in_range() {
        let s = FiberSpaceSpec::new(FiberKind::BinarySeq, 2, 3, MetricSpec::sup());
        let a = random_cloud(&s, 50, 4).unwrap();
        let b = random_cloud(&s, 50, 4).unwrap();
        assert_eq!(a.materialize(1e3).unwrap(), b.materialize(1e3).unwrap());
        for i in 0..50 {
            s.check_point(&a.point(i)).unwrap();
        }
    }

    #[test]
    fn json_shape() {
        let s = torus1(4);
        let v = serde_json::to_value(s).unwrap();
        assert_eq!(v["D"], 1);
        assert_eq!(v["kind"], "torus_seq");
        assert_eq!(v["metric"]["weight_base"], 2);
        let back: FiberSpaceSpec =
            serde_json::from_str(r#"{"kind":"cube_seq","D":2,"window":3,"metric":{"kind":"weighted_sum"}}"#).unwrap();
        assert_eq!(back.metric.weight_base, 2);
    }
}
