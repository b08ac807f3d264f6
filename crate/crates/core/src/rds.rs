//! Random maps `T_ω`, the skew product `Θ(ω, x) = (θω, T_ω x)`, Bowen metrics,
//! potentials and Birkhoff sums.
//!
//! Every shipped map acts coordinatewise: one step moves the window left by
//! `offset` symbols (0 or 1) and then applies the same circle/interval operation to
//! each coordinate. [`CoordAction`] exposes that structure to the packing code.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::base::{make_path, BasePath, BaseState, BaseSystemSpec, OmegaSampler, PathView};
use crate::error::{Error, Result};
use crate::exec;
use crate::fiber::{CandidateCloud, FiberKind, FiberSpaceSpec};
use crate::numeric::{frac, mean_stderr};

/// Relative slack used when spot-checking declared potential bounds.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomMapSpec {
    Identity,
    /// Left shift of the symbol window; the vacated tail symbol is padded with 0.
    Shift,
    DoublingCircle,
    /// `x ↦ a(ω) x mod 1` with `a(ω) = factors[symbol_0(ω) mod len]`.
    RandomExpanding {
        #[serde(default = "default_factors")]
        factors: Vec<u32>,
    },
    /// Shift, then rotate every coordinate by `α(ω) = scale · u_0(ω)`.
    ShiftRandomRotation {
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_factors() -> Vec<u32> {
    vec![2, 3]
}

fn default_scale() -> f64 {
    1.0
}

/// Operation applied to each coordinate after the window shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoordOp {
    Identity,
    Multiply(f64),
    Rotate(f64),
}

impl CoordOp {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            CoordOp::Identity => v,
            CoordOp::Multiply(a) => frac(a * v),
            CoordOp::Rotate(a) => frac(v + a),
        }
    }
}

/// One step of a coordinatewise map: drop `offset` leading symbols, then apply `op`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordAction {
    pub offset: usize,
    pub op: CoordOp,
}

impl RandomMapSpec {
    pub fn validate(&self, fiber: &FiberSpaceSpec) -> Result<()> {
        fiber.validate()?;
        let needs_torus = !matches!(self, RandomMapSpec::Identity | RandomMapSpec::Shift);
        if needs_torus && fiber.kind != FiberKind::TorusSeq {
            return Err(Error::validation("map", "this map is defined on torus_seq fibers only"));
        }
        match self {
            RandomMapSpec::RandomExpanding { factors } => {
                if factors.is_empty() || factors.contains(&0) {
                    return Err(Error::validation("factors", "need a nonempty list of positive integers"));
                }
            }
            RandomMapSpec::ShiftRandomRotation { scale } => {
                if !scale.is_finite() {
                    return Err(Error::validation("scale", "must be finite"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Symbols dropped per step.
    pub fn offset(&self) -> usize {
        match self {
            RandomMapSpec::Shift | RandomMapSpec::ShiftRandomRotation { .. } => 1,
            _ => 0,
        }
    }

    /// True when `T_ω` does not depend on ω.
    pub fn omega_independent(&self) -> bool {
        match self {
            RandomMapSpec::RandomExpanding { factors } => factors.iter().all(|&a| a == factors[0]),
            RandomMapSpec::ShiftRandomRotation { scale } => *scale == 0.0,
            _ => true,
        }
    }

    /// Fiberwise Lipschitz constant for the weighted metrics.
    pub fn lipschitz(&self) -> f64 {
        match self {
            RandomMapSpec::Identity => 1.0,
            RandomMapSpec::Shift | RandomMapSpec::ShiftRandomRotation { .. } => 2.0,
            RandomMapSpec::DoublingCircle => 2.0,
            RandomMapSpec::RandomExpanding { factors } => *factors.iter().max().unwrap_or(&1) as f64,
        }
    }

    pub fn action(&self, omega: PathView<'_>) -> CoordAction {
        let op = match self {
            RandomMapSpec::Identity | RandomMapSpec::Shift => CoordOp::Identity,
            RandomMapSpec::DoublingCircle => CoordOp::Multiply(2.0),
            RandomMapSpec::RandomExpanding { factors } => {
                CoordOp::Multiply(factors[omega.symbol(0) as usize % factors.len()] as f64)
            }
            RandomMapSpec::ShiftRandomRotation { scale } => CoordOp::Rotate(frac(scale * omega.uniform(0))),
        };
        CoordAction {
            offset: self.offset(),
            op,
        }
    }

    /// `out = T_ω x`.
    pub fn eval_into(&self, fiber: &FiberSpaceSpec, omega: PathView<'_>, x: &[f64], out: &mut [f64]) {
        apply_action(fiber, &self.action(omega), x, out);
    }
}

/// Applies one coordinatewise step.
pub fn apply_action(fiber: &FiberSpaceSpec, action: &CoordAction, x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    let skip = (action.offset * fiber.symbol_dim).min(dim);
    for b in 0..dim - skip {
        out[b] = action.op.apply(x[b + skip]);
    }
    for v in &mut out[dim - skip..] {
        *v = 0.0;
    }
}

/// Θ(ω, x) = (θω, T_ω x).
pub fn skew_step(
    omega: &BaseState,
    x: &[f64],
    map: &RandomMapSpec,
    fiber: &FiberSpaceSpec,
) -> Result<(BaseState, Vec<f64>)> {
    fiber.check_shape(x)?;
    let path = make_path(omega, 1)?;
    let mut out = vec![0.0; x.len()];
    map.eval_into(fiber, path.view(0), x, &mut out);
    Ok((crate::base::advance(omega), out))
}

/// The orbit `[x, T_ω x, …, T_ω^{n-1} x]` along a path, written into `out`
/// (`n * dim` values).
pub fn orbit_into(
    map: &RandomMapSpec,
    fiber: &FiberSpaceSpec,
    path: &BasePath,
    n: usize,
    x: &[f64],
    out: &mut [f64],
) {
    let d = x.len();
    out[..d].copy_from_slice(x);
    for j in 1..n {
        let (prev, cur) = out.split_at_mut(j * d);
        map.eval_into(fiber, path.view(j - 1), &prev[(j - 1) * d..], &mut cur[..d]);
    }
}

fn check_path(path: &BasePath, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::validation("n", "must be at least 1"));
    }
    if path.len() < n {
        return Err(Error::PathTooShort {
            needed: n,
            available: path.len(),
        });
    }
    Ok(())
}

/// d_n^ω(x, y) = max over j < n of d(T_ω^j x, T_ω^j y).
pub fn bowen_dist(
    map: &RandomMapSpec,
    fiber: &FiberSpaceSpec,
    path: &BasePath,
    n: usize,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_path(path, n)?;
    fiber.check_shape(x)?;
    fiber.check_shape(y)?;
    let d = x.len();
    let mut ox = vec![0.0; n * d];
    let mut oy = vec![0.0; n * d];
    orbit_into(map, fiber, path, n, x, &mut ox);
    orbit_into(map, fiber, path, n, y, &mut oy);
    Ok((0..n)
        .map(|j| fiber.dist_unchecked(&ox[j * d..(j + 1) * d], &oy[j * d..(j + 1) * d]))
        .fold(0.0, f64::max))
}

/// Whether `y` lies in the open Bowen ball `B_n^ω(center, ε)`.
pub fn bowen_ball_contains(
    map: &RandomMapSpec,
    fiber: &FiberSpaceSpec,
    path: &BasePath,
    n: usize,
    center: &[f64],
    eps: f64,
    y: &[f64],
) -> Result<bool> {
    Ok(bowen_dist(map, fiber, path, n, center, y)? < eps)
}

/// One cosine term `amplitude · cos(2π(frequency · x_coord + phase))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coord: usize,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

/// Serializable potentials `f(ω, x)`. The sup bound is computed from the
/// coefficients, assuming coordinates in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Constant {
        c: f64,
    },
    /// `Σ_b coefficients[b] · x_b` over flat coordinates.
    CoordinateLinear {
        coefficients: Vec<f64>,
    },
    Trig {
        terms: Vec<TrigTerm>,
    },
    /// `env[symbol_0(ω) mod len] · inner(ω, x)`.
    EnvModulated {
        env: Vec<f64>,
        inner: Box<PotentialSpec>,
    },
}

impl PotentialSpec {
    pub fn bound(&self) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Constant { c } => c.abs(),
            PotentialSpec::CoordinateLinear { coefficients } => coefficients.iter().map(|c| c.abs()).sum(),
            PotentialSpec::Trig { terms } => terms.iter().map(|t| t.amplitude.abs()).sum(),
            PotentialSpec::EnvModulated { env, inner } => {
                env.iter().fold(0.0f64, |m, h| m.max(h.abs())) * inner.bound()
            }
        }
    }

    pub fn validate(&self, fiber: &FiberSpaceSpec) -> Result<()> {
        let finite = |v: &f64| v.is_finite();
        match self {
            PotentialSpec::Zero => Ok(()),
            PotentialSpec::Constant { c } if c.is_finite() => Ok(()),
            PotentialSpec::Constant { .. } => Err(Error::validation("c", "must be finite")),
            PotentialSpec::CoordinateLinear { coefficients } => {
                if coefficients.len() > fiber.dim() {
                    return Err(Error::validation(
                        "coefficients",
                        format!("{} coefficients for {} coordinates", coefficients.len(), fiber.dim()),
                    ));
                }
                if !coefficients.iter().all(finite) {
                    return Err(Error::validation("coefficients", "must be finite"));
                }
                Ok(())
            }
            PotentialSpec::Trig { terms } => {
                for t in terms {
                    if t.coord >= fiber.dim() {
                        return Err(Error::validation("terms", format!("coordinate {} outside window", t.coord)));
                    }
                    if !(finite(&t.amplitude) && finite(&t.frequency) && finite(&t.phase)) {
                        return Err(Error::validation("terms", "must be finite"));
                    }
                }
                Ok(())
            }
            PotentialSpec::EnvModulated { env, inner } => {
                if env.is_empty() || !env.iter().all(finite) {
                    return Err(Error::validation("env", "need a nonempty finite table"));
                }
                inner.validate(fiber)
            }
        }
    }

    /// True when `f(ω, x)` does not depend on ω.
    pub fn omega_independent(&self) -> bool {
        match self {
            PotentialSpec::EnvModulated { env, inner } => {
                env.iter().all(|h| *h == env[0]) || inner.is_zero()
            }
            _ => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PotentialSpec::Zero => true,
            PotentialSpec::Constant { c } => *c == 0.0,
            PotentialSpec::CoordinateLinear { coefficients } => coefficients.iter().all(|c| *c == 0.0),
            PotentialSpec::Trig { terms } => terms.iter().all(|t| t.amplitude == 0.0),
            PotentialSpec::EnvModulated { env, inner } => env.iter().all(|h| *h == 0.0) || inner.is_zero(),
        }
    }

    #[inline]
    pub fn eval(&self, omega: PathView<'_>, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Constant { c } => *c,
            PotentialSpec::CoordinateLinear { coefficients } => {
                coefficients.iter().zip(x).map(|(c, v)| c * v).sum()
            }
            PotentialSpec::Trig { terms } => terms
                .iter()
                .map(|t| t.amplitude * (TAU * (t.frequency * x[t.coord] + t.phase)).cos())
                .sum(),
            PotentialSpec::EnvModulated { env, inner } => {
                env[omega.symbol(0) as usize % env.len()] * inner.eval(omega, x)
            }
        }
    }
}

/// A function of a single coordinate value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoordFn {
    Linear(f64),
    Cos { amplitude: f64, frequency: f64, phase: f64 },
}

impl CoordFn {
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            CoordFn::Linear(c) => c * v,
            CoordFn::Cos {
                amplitude,
                frequency,
                phase,
            } => amplitude * (TAU * (frequency * v + phase)).cos(),
        }
    }
}

/// `f(ω, ·)` at a fixed ω written as `constant + Σ g_i(x_{coord_i})`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Separable {
    pub constant: f64,
    pub terms: Vec<(usize, CoordFn)>,
}

impl PotentialSpec {
    fn collect_separable(&self, omega: PathView<'_>, scale: f64, out: &mut Separable) {
        match self {
            PotentialSpec::Zero => {}
            PotentialSpec::Constant { c } => out.constant += scale * c,
            PotentialSpec::CoordinateLinear { coefficients } => {
                for (b, c) in coefficients.iter().enumerate() {
                    if *c != 0.0 {
                        out.terms.push((b, CoordFn::Linear(scale * c)));
                    }
                }
            }
            PotentialSpec::Trig { terms } => {
                for t in terms {
                    out.terms.push((
                        t.coord,
                        CoordFn::Cos {
                            amplitude: scale * t.amplitude,
                            frequency: t.frequency,
                            phase: t.phase,
                        },
                    ));
                }
            }
            PotentialSpec::EnvModulated { env, inner } => {
                let h = env[omega.symbol(0) as usize % env.len()];
                if h != 0.0 {
                    inner.collect_separable(omega, scale * h, out);
                }
            }
        }
    }
}

/// Potential expressions used by the property suites: serializable specs closed
/// under weighted sums, absolute values and coboundaries `g∘Θ − g`.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Spec(PotentialSpec),
    Sum(Vec<(f64, Potential)>),
    Abs(Box<Potential>),
    Coboundary {
        g: Box<Potential>,
        map: RandomMapSpec,
        fiber: FiberSpaceSpec,
    },
}

impl From<PotentialSpec> for Potential {
    fn from(s: PotentialSpec) -> Self {
        Potential::Spec(s)
    }
}

impl Potential {
    pub fn zero() -> Self {
        Potential::Spec(PotentialSpec::Zero)
    }

    pub fn constant(c: f64) -> Self {
        Potential::Spec(PotentialSpec::Constant { c })
    }

    pub fn plus(self, other: Potential) -> Self {
        Potential::Sum(vec![(1.0, self), (1.0, other)])
    }

    pub fn scaled(self, w: f64) -> Self {
        Potential::Sum(vec![(w, self)])
    }

    pub fn abs(self) -> Self {
        Potential::Abs(Box::new(self))
    }

    pub fn coboundary(g: Potential, map: &RandomMapSpec, fiber: &FiberSpaceSpec) -> Self {
        Potential::Coboundary {
            g: Box::new(g),
            map: map.clone(),
            fiber: *fiber,
        }
    }

    /// Declared bound on `sup |f|`.
    pub fn bound(&self) -> f64 {
        match self {
            Potential::Spec(s) => s.bound(),
            Potential::Sum(terms) => terms.iter().map(|(w, p)| w.abs() * p.bound()).sum(),
            Potential::Abs(p) => p.bound(),
            Potential::Coboundary { g, .. } => 2.0 * g.bound(),
        }
    }

    pub fn omega_independent(&self) -> bool {
        match self {
            Potential::Spec(s) => s.omega_independent(),
            Potential::Sum(terms) => terms.iter().all(|(_, p)| p.omega_independent()),
            Potential::Abs(p) => p.omega_independent(),
            Potential::Coboundary { g, map, .. } => g.omega_independent() && map.omega_independent(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Potential::Spec(s) => s.is_zero(),
            Potential::Sum(terms) => terms.iter().all(|(w, p)| *w == 0.0 || p.is_zero()),
            Potential::Abs(p) => p.is_zero(),
            Potential::Coboundary { g, .. } => g.is_zero(),
        }
    }

    pub fn as_spec(&self) -> Option<&PotentialSpec> {
        match self {
            Potential::Spec(s) => Some(s),
            _ => None,
        }
    }

    pub fn eval(&self, omega: PathView<'_>, x: &[f64]) -> f64 {
        match self {
            Potential::Spec(s) => s.eval(omega, x),
            Potential::Sum(terms) => terms.iter().map(|(w, p)| w * p.eval(omega, x)).sum(),
            Potential::Abs(p) => p.eval(omega, x).abs(),
            Potential::Coboundary { g, map, fiber } => {
                let mut tx = vec![0.0; x.len()];
                map.eval_into(fiber, omega, x, &mut tx);
                g.eval(omega.next(), &tx) - g.eval(omega, x)
            }
        }
    }

    /// Coordinate-separable form at a fixed ω, or `None` for expressions that
    /// mix coordinates (absolute values, coboundaries).
    pub fn separable(&self, omega: PathView<'_>) -> Option<Separable> {
        let mut out = Separable::default();
        self.collect_separable(omega, 1.0, &mut out).then_some(out)
    }

    fn collect_separable(&self, omega: PathView<'_>, scale: f64, out: &mut Separable) -> bool {
        match self {
            Potential::Spec(s) => {
                s.collect_separable(omega, scale, out);
                true
            }
            Potential::Sum(terms) => terms
                .iter()
                .all(|(w, p)| p.collect_separable(omega, scale * w, out)),
            Potential::Abs(_) | Potential::Coboundary { .. } => false,
        }
    }

    /// Evaluates and spot-checks the declared bound.
    pub fn eval_checked(&self, omega: PathView<'_>, x: &[f64]) -> Result<f64> {
        let v = self.eval(omega, x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "potential",
                index: omega.time() as u64,
            });
        }
        let b = self.bound();
        if v.abs() > b * (1.0 + BOUND_SLACK) + BOUND_SLACK {
            return Err(Error::BoundViolation { value: v.abs(), bound: b });
        }
        Ok(v)
    }
}

/// Everything that defines the random dynamical system itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub base: BaseSystemSpec,
    pub fiber: FiberSpaceSpec,
    pub map: RandomMapSpec,
}

impl System {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.map.validate(&self.fiber)
    }

    pub fn with_window(&self, window: usize) -> Self {
        Self {
            fiber: self.fiber.with_window(window),
            ..self.clone()
        }
    }
}

/// `S_n f(ω, x) = Σ_{j<n} f(Θ^j(ω, x))`.
pub fn birkhoff_sum(
    f: &Potential,
    path: &BasePath,
    x: &[f64],
    n: usize,
    map: &RandomMapSpec,
    fiber: &FiberSpaceSpec,
) -> Result<f64> {
    check_path(path, n)?;
    fiber.check_shape(x)?;
    let d = x.len();
    let mut orbit = vec![0.0; n * d];
    orbit_into(map, fiber, path, n, x, &mut orbit);
    let mut s = 0.0;
    for j in 0..n {
        s += f.eval_checked(path.view(j), &orbit[j * d..(j + 1) * d])?;
    }
    Ok(s)
}

/// Iterates of a set of base points along one path, computed once and shared.
#[derive(Clone, Debug)]
pub struct OrbitTable {
    fiber: FiberSpaceSpec,
    n: usize,
    len: usize,
    /// `len * n * dim`, point-major.
    iterates: Vec<f64>,
}

impl OrbitTable {
    /// Builds the table for `points` (flat, `len * dim`).
    pub fn build(
        map: &RandomMapSpec,
        fiber: &FiberSpaceSpec,
        path: &BasePath,
        n: usize,
        points: &[f64],
    ) -> Result<Self> {
        check_path(path, n)?;
        let d = fiber.dim();
        if d == 0 || points.len() % d != 0 {
            return Err(Error::Shape {
                expected: d,
                got: points.len(),
            });
        }
        let len = points.len() / d;
        let chunks = exec::par_map_range(len, |i| {
            let mut o = vec![0.0; n * d];
            orbit_into(map, fiber, path, n, &points[i * d..(i + 1) * d], &mut o);
            o
        });
        Ok(Self {
            fiber: *fiber,
            n,
            len,
            iterates: chunks.concat(),
        })
    }

    pub fn from_cloud(
        map: &RandomMapSpec,
        path: &BasePath,
        n: usize,
        cloud: &CandidateCloud,
        cap: f64,
    ) -> Result<Self> {
        let points = cloud.materialize(cap)?;
        Self::build(map, cloud.spec(), path, n, &points)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fiber(&self) -> &FiberSpaceSpec {
        &self.fiber
    }

    /// `T_ω^j x_i`.
    #[inline]
    pub fn iterate(&self, i: usize, j: usize) -> &[f64] {
        let d = self.fiber.dim();
        let start = (i * self.n + j) * d;
        &self.iterates[start..start + d]
    }

    pub fn bowen_dist(&self, i: usize, p: usize) -> f64 {
        (0..self.n)
            .map(|j| self.fiber.dist_unchecked(self.iterate(i, j), self.iterate(p, j)))
            .fold(0.0, f64::max)
    }

    /// `d_n^ω(x_i, x_p) ≤ ε`, with early exit.
    #[inline]
    pub fn within(&self, i: usize, p: usize, eps: f64) -> bool {
        (0..self.n).all(|j| self.fiber.dist_unchecked(self.iterate(i, j), self.iterate(p, j)) <= eps)
    }

    /// `S_n f` for every point.
    pub fn birkhoff_sums(&self, f: &Potential, path: &BasePath) -> Result<Vec<f64>> {
        let rows = exec::par_map_range(self.len, |i| -> Result<f64> {
            let mut s = 0.0;
            for j in 0..self.n {
                s += f.eval_checked(path.view(j), self.iterate(i, j))?;
            }
            Ok(s)
        });
        rows.into_iter().collect()
    }

    /// `S_n f` for a subset of points.
    pub fn birkhoff_sums_of(&self, f: &Potential, path: &BasePath, idx: &[usize]) -> Result<Vec<f64>> {
        let rows = exec::par_map(idx, |&i| -> Result<f64> {
            let mut s = 0.0;
            for j in 0..self.n {
                s += f.eval_checked(path.view(j), self.iterate(i, j))?;
            }
            Ok(s)
        });
        rows.into_iter().collect()
    }
}

/// Monte Carlo estimate of `‖f‖ = ∫ sup_x |f(ω, x)| dℙ`, with the sup taken over
/// the cloud (hence a lower bound).
pub fn potential_norm(
    f: &Potential,
    base: &BaseSystemSpec,
    cloud: &CandidateCloud,
    m_omega: usize,
    cap: f64,
) -> Result<(f64, f64)> {
    if m_omega < 2 {
        return Err(Error::validation("m_omega", "need at least 2 samples"));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sampler = OmegaSampler::new(base)?;
    let points = cloud.materialize(cap)?;
    let d = cloud.dim();
    let values = exec::par_map_range(m_omega, |s| -> Result<f64> {
        let path = make_path(&sampler.sample(s as u64), 2)?;
        let mut m = 0.0f64;
        for x in points.chunks(d) {
            m = m.max(f.eval_checked(path.view(0), x)?.abs());
        }
        Ok(m)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    Ok(mean_stderr(&values))
}

/// Cloud-relative modulus `γ_ε(ω) = max |f(ω,x) − f(ω,y)|` over cloud pairs with
/// `d(x, y) < 2ε`.
pub fn modulus_gamma(f: &Potential, omega: PathView<'_>, eps: f64, cloud: &CandidateCloud, cap: f64) -> Result<f64> {
    let points = cloud.materialize(cap)?;
    let d = cloud.dim();
    let spec = cloud.spec();
    let vals: Vec<f64> = points.chunks(d).map(|x| f.eval(omega, x)).collect();
    Ok(modulus_from_values(spec, &points, &vals, eps))
}

/// [`modulus_gamma`] on precomputed point values.
pub fn modulus_from_values(spec: &FiberSpaceSpec, points: &[f64], vals: &[f64], eps: f64) -> f64 {
    let d = spec.dim();
    let mut g = 0.0f64;
    for a in 0..vals.len() {
        for b in a + 1..vals.len() {
            let gap = (vals[a] - vals[b]).abs();
            if gap > g && spec.dist_unchecked(&points[a * d..(a + 1) * d], &points[b * d..(b + 1) * d]) < 2.0 * eps {
                g = gap;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_omega;
    use crate::fiber::{grid, MetricSpec, DEFAULT_CLOUD_CAP};

    fn circle() -> FiberSpaceSpec {
        FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup())
    }

    fn path(n: usize) -> BasePath {
        let w = sample_omega(&BaseSystemSpec::bernoulli_half(3), 0).unwrap();
        make_path(&w, n).unwrap()
    }

    #[test]
    fn skew_step_examples() {
        let w = sample_omega(&BaseSystemSpec::bernoulli_half(3), 0).unwrap();
        let (w1, y) = skew_step(&w, &[0.3], &RandomMapSpec::Identity, &circle()).unwrap();
        assert_eq!(w1, crate::base::advance(&w));
        assert_eq!(y, vec![0.3]);
        let (_, y) = skew_step(&w, &[0.3], &RandomMapSpec::DoublingCircle, &circle()).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15);
        let cube = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 3, MetricSpec::sup());
        let (_, y) = skew_step(&w, &[0.1, 0.2, 0.3], &RandomMapSpec::Shift, &cube).unwrap();
        assert_eq!(y, vec![0.2, 0.3, 0.0]);
    }

    #[test]
    fn bowen_examples() {
        let p = path(4);
        let c = circle();
        let dbl = RandomMapSpec::DoublingCircle;
        assert!((bowen_dist(&dbl, &c, &p, 2, &[0.0], &[0.1]).unwrap() - 0.2).abs() < 1e-15);
        assert!((bowen_dist(&dbl, &c, &p, 1, &[0.0], &[0.1]).unwrap() - 0.1).abs() < 1e-15);
        assert!((bowen_dist(&RandomMapSpec::Identity, &c, &p, 4, &[0.0], &[0.1]).unwrap() - 0.1).abs() < 1e-15);
        assert!(!bowen_ball_contains(&dbl, &c, &p, 2, &[0.0], 0.15, &[0.1]).unwrap());
        assert!(bowen_ball_contains(&dbl, &c, &p, 2, &[0.0], 0.15, &[0.0]).unwrap());
        assert!(!bowen_ball_contains(&dbl, &c, &p, 1, &[0.0], 0.25, &[0.25]).unwrap());
        assert!(matches!(
            bowen_dist(&dbl, &c, &p, 5, &[0.0], &[0.1]),
            Err(Error::PathTooShort { needed: 5, available: 4 })
        ));
    }

    #[test]
    fn birkhoff_examples() {
        let p = path(3);
        let c = circle();
        let dbl = RandomMapSpec::DoublingCircle;
        let lin = Potential::Spec(PotentialSpec::CoordinateLinear { coefficients: vec![1.0] });
        let s = birkhoff_sum(&lin, &p, &[0.3], 3, &dbl, &c).unwrap();
        assert!((s - 1.1).abs() < 1e-12);
        assert_eq!(birkhoff_sum(&Potential::constant(0.7), &p, &[0.3], 3, &dbl, &c).unwrap(), 0.7 * 3.0);
        assert_eq!(birkhoff_sum(&Potential::zero(), &p, &[0.3], 3, &dbl, &c).unwrap(), 0.0);
    }

    #[test]
    fn coboundary_telescopes() {
        let p = path(6);
        let c = circle();
        let dbl = RandomMapSpec::DoublingCircle;
        let g = Potential::Spec(PotentialSpec::Trig {
            terms: vec![TrigTerm { coord: 0, amplitude: 0.5, frequency: 1.0, phase: 0.1 }],
        });
        let h = Potential::coboundary(g.clone(), &dbl, &c);
        let x = [0.123];
        let s = birkhoff_sum(&h, &p, &x, 5, &dbl, &c).unwrap();
        let mut o = vec![0.0; 6];
        orbit_into(&dbl, &c, &p, 6, &x, &mut o);
        let direct = g.eval(p.view(5), &o[5..6]) - g.eval(p.view(0), &x);
        assert!((s - direct).abs() < 1e-12);
    }

    #[test]
    fn norm_examples() {
        let base = BaseSystemSpec::bernoulli_half(2);
        let cube = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 1, MetricSpec::sup());
        let cloud = grid(&cube, 0.1, DEFAULT_CLOUD_CAP).unwrap();
        assert_eq!(potential_norm(&Potential::constant(-2.0), &base, &cloud, 10, 1e6).unwrap(), (2.0, 0.0));
        assert_eq!(potential_norm(&Potential::zero(), &base, &cloud, 10, 1e6).unwrap(), (0.0, 0.0));
        let hx = Potential::Spec(PotentialSpec::EnvModulated {
            env: vec![-1.0, 1.0],
            inner: Box::new(PotentialSpec::CoordinateLinear { coefficients: vec![1.0] }),
        });
        let (m, _) = potential_norm(&hx, &base, &cloud, 200, 1e6).unwrap();
        assert!((m - 1.0).abs() < 0.01);
    }

    #[test]
    fn gamma_examples() {
        // Dyadic mesh: on a decimal mesh 0.7 - 0.2 rounds below 0.5 and the
        // strict pair test becomes a coin flip.
        let cube = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 1, MetricSpec::sup());
        let cloud = grid(&cube, 1.0 / 16.0, DEFAULT_CLOUD_CAP).unwrap();
        let p = path(1);
        let lin = Potential::Spec(PotentialSpec::CoordinateLinear { coefficients: vec![1.0] });
        let g = modulus_gamma(&lin, p.view(0), 0.25, &cloud, 1e6).unwrap();
        assert_eq!(g, 7.0 / 16.0);
        assert_eq!(modulus_gamma(&Potential::constant(3.0), p.view(0), 0.25, &cloud, 1e6).unwrap(), 0.0);
        let full = modulus_gamma(&lin, p.view(0), 0.6, &cloud, 1e6).unwrap();
        assert!((full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separable_form_matches_eval() {
        let p = path(2);
        let f = Potential::Spec(PotentialSpec::EnvModulated {
            env: vec![-0.5, 2.0],
            inner: Box::new(PotentialSpec::Trig {
                terms: vec![TrigTerm { coord: 1, amplitude: 0.3, frequency: 2.0, phase: 0.25 }],
            }),
        })
        .plus(Potential::Spec(PotentialSpec::CoordinateLinear { coefficients: vec![0.7, -0.2] }))
        .plus(Potential::constant(1.5));
        let x = [0.31, 0.77];
        let sep = f.separable(p.view(1)).unwrap();
        let v = sep.constant + sep.terms.iter().map(|(b, g)| g.eval(x[*b])).sum::<f64>();
        assert!((v - f.eval(p.view(1), &x)).abs() < 1e-14);
        assert!(f.abs().separable(p.view(0)).is_none());
    }

    #[test]
    fn bound_violation_is_reported() {
        let p = path(1);
        let lin = Potential::Spec(PotentialSpec::CoordinateLinear { coefficients: vec![1.0] });
        assert!(matches!(lin.eval_checked(p.view(0), &[2.0]), Err(Error::BoundViolation { .. })));
    }

    #[test]
    fn map_json_uses_kind_tag() {
        let m = RandomMapSpec::RandomExpanding { factors: vec![2, 3] };
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"kind":"random_expanding","factors":[2,3]}"#);
        let back: RandomMapSpec = serde_json::from_str(r#"{"kind":"shift_random_rotation"}"#).unwrap();
        assert_eq!(back, RandomMapSpec::ShiftRandomRotation { scale: 1.0 });
        let f: PotentialSpec = serde_json::from_str(r#"{"kind":"constant","c":1.5}"#).unwrap();
        assert_eq!(f.bound(), 1.5);
    }

    #[test]
    fn maps_need_matching_fibers() {
        let cube = FiberSpaceSpec::new(FiberKind::CubeSeq, 1, 1, MetricSpec::sup());
        assert!(RandomMapSpec::DoublingCircle.validate(&cube).is_err());
        assert!(RandomMapSpec::Shift.validate(&cube).is_ok());
        assert!(RandomMapSpec::RandomExpanding { factors: vec![] }.validate(&circle()).is_err());
    }
}
