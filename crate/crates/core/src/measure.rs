//! Measures on `Ω × X` with marginal ℙ, and the measure-theoretic metric mean
//! dimension `F(μ, d)` as a search over a finite potential family.
//!
//! A measure is a sampler: ω is always drawn from ℙ, then `x ~ μ_ω`. Sample `i`
//! of a measure under seed `s` uses ChaCha stream `i` of `s`, so integrals of
//! different potentials against one measure share their random numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base::{advance_by, make_path, BaseState, OmegaSampler};
use crate::error::{Error, Result};
use crate::estimation::{mdim_estimate, Bundle, MdimEstimate, Settings};
use crate::exec;
use crate::fiber::{FiberKind, FiberSpaceSpec};
use crate::numeric::mean_stderr;
use crate::optimize::{minimize, Bounds, SearchSettings, TracePoint};
use crate::rds::{orbit_into, Potential, PotentialSpec, System};

/// Conditional fiber law of a product measure (the same for every ω).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FiberLaw {
    /// Independent uniform coordinates (fair bits on binary fibers).
    Uniform,
    /// Uniform on the product lattice `{i/m}`.
    Lattice { m: usize },
    /// Finitely many atoms; missing trailing coordinates are 0.
    Atomic {
        atoms: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureRep {
    Product {
        #[serde(flatten)]
        law: FiberLaw,
    },
    /// `(1/N) Σ_{j<N} (Θ^j)_* μ₀`.
    CesaroEmpirical { initial: Box<MeasureRep>, n: usize },
    /// Point masses along the orbit of `start`: `(1/L) Σ_{j<L} δ_{Θ^j(ω, start)}`
    /// with ω drawn from ℙ.
    AtomicOrbit { start: Vec<f64>, length: usize },
    /// Draws from `first` with probability `t`, else from `second`.
    Mixture {
        t: f64,
        first: Box<MeasureRep>,
        second: Box<MeasureRep>,
    },
}

fn pad(x: &[f64], dim: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    v.resize(dim, 0.0);
    v
}

impl MeasureRep {
    pub fn uniform() -> Self {
        MeasureRep::Product { law: FiberLaw::Uniform }
    }

    pub fn atom(point: Vec<f64>) -> Self {
        MeasureRep::Product {
            law: FiberLaw::Atomic {
                atoms: vec![point],
                weights: vec![1.0],
            },
        }
    }

    pub fn mixture(t: f64, first: MeasureRep, second: MeasureRep) -> Self {
        MeasureRep::Mixture {
            t,
            first: Box::new(first),
            second: Box::new(second),
        }
    }

    pub fn validate(&self, fiber: &FiberSpaceSpec) -> Result<()> {
        match self {
            MeasureRep::Product { law } => match law {
                FiberLaw::Uniform => Ok(()),
                FiberLaw::Lattice { m } if *m >= 1 => Ok(()),
                FiberLaw::Lattice { .. } => Err(Error::validation("m", "must be at least 1")),
                FiberLaw::Atomic { atoms, weights } => {
                    if atoms.is_empty() {
                        return Err(Error::validation("atoms", "need at least one atom"));
                    }
                    if !weights.is_empty()
                        && (weights.len() != atoms.len()
                            || weights.iter().any(|w| !(*w >= 0.0))
                            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12)
                    {
                        return Err(Error::validation("weights", "must be a probability vector over the atoms"));
                    }
                    for a in atoms {
                        if a.len() > fiber.dim() {
                            return Err(Error::Shape {
                                expected: fiber.dim(),
                                got: a.len(),
                            });
                        }
                        fiber.check_point(&pad(a, fiber.dim()))?;
                    }
                    Ok(())
                }
            },
            MeasureRep::CesaroEmpirical { initial, n } => {
                if *n == 0 {
                    return Err(Error::validation("n", "must be at least 1"));
                }
                initial.validate(fiber)
            }
            MeasureRep::AtomicOrbit { start, length } => {
                if *length == 0 {
                    return Err(Error::validation("length", "must be at least 1"));
                }
                MeasureRep::atom(start.clone()).validate(fiber)
            }
            MeasureRep::Mixture { t, first, second } => {
                if !(0.0..=1.0).contains(t) {
                    return Err(Error::validation("t", "must lie in [0, 1]"));
                }
                first.validate(fiber)?;
                second.validate(fiber)
            }
        }
    }

    fn draw(&self, sys: &System, sampler: &OmegaSampler, rng: &mut ChaCha8Rng) -> Result<(BaseState, Vec<f64>)> {
        let dim = sys.fiber.dim();
        match self {
            MeasureRep::Product { law } => {
                let omega = sampler.sample(rng.next_u64());
                let x = match law {
                    FiberLaw::Uniform => (0..dim)
                        .map(|_| match sys.fiber.kind {
                            FiberKind::BinarySeq => rng.gen_range(0..2) as f64,
                            _ => rng.gen::<f64>(),
                        })
                        .collect(),
                    FiberLaw::Lattice { m } => {
                        let top = match sys.fiber.kind {
                            FiberKind::CubeSeq => m + 1,
                            FiberKind::TorusSeq => *m,
                            FiberKind::BinarySeq => 2,
                        };
                        let scale = if sys.fiber.kind == FiberKind::BinarySeq { 1 } else { *m };
                        (0..dim).map(|_| rng.gen_range(0..top) as f64 / scale as f64).collect()
                    }
                    FiberLaw::Atomic { atoms, weights } => {
                        let k = if weights.is_empty() {
                            rng.gen_range(0..atoms.len())
                        } else {
                            let u: f64 = rng.gen();
                            let mut acc = 0.0;
                            let mut pick = atoms.len() - 1;
                            for (i, w) in weights.iter().enumerate() {
                                acc += w;
                                if u < acc {
                                    pick = i;
                                    break;
                                }
                            }
                            pick
                        };
                        pad(&atoms[k], dim)
                    }
                };
                Ok((omega, x))
            }
            MeasureRep::CesaroEmpirical { initial, n } => {
                let j = rng.gen_range(0..*n);
                let (omega, x) = initial.draw(sys, sampler, rng)?;
                push_forward(sys, &omega, &x, j)
            }
            MeasureRep::AtomicOrbit { start, length } => {
                let j = rng.gen_range(0..*length);
                let omega = sampler.sample(rng.next_u64());
                push_forward(sys, &omega, &pad(start, dim), j)
            }
            MeasureRep::Mixture { t, first, second } => {
                if rng.gen::<f64>() < *t {
                    first.draw(sys, sampler, rng)
                } else {
                    second.draw(sys, sampler, rng)
                }
            }
        }
    }

    /// Sample `index` under `seed`.
    pub fn sample(&self, sys: &System, sampler: &OmegaSampler, seed: u64, index: u64) -> Result<(BaseState, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        self.draw(sys, sampler, &mut rng)
    }
}

/// `Θ^j(ω, x)`.
pub fn push_forward(sys: &System, omega: &BaseState, x: &[f64], j: usize) -> Result<(BaseState, Vec<f64>)> {
    if j == 0 {
        return Ok((omega.clone(), x.to_vec()));
    }
    let d = x.len();
    let path = make_path(omega, j + 1)?;
    let mut orbit = vec![0.0; (j + 1) * d];
    orbit_into(&sys.map, &sys.fiber, &path, j + 1, x, &mut orbit);
    Ok((advance_by(omega, j), orbit[j * d..].to_vec()))
}

/// Wraps `μ₀` into its Cesàro average of length `n`.
pub fn cesaro_pushforward(initial: MeasureRep, n: usize) -> Result<MeasureRep> {
    if n == 0 {
        return Err(Error::validation("n", "must be at least 1"));
    }
    Ok(MeasureRep::CesaroEmpirical {
        initial: Box::new(initial),
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSettings {
    pub m_samples: usize,
    pub seed: u64,
}

fn values<G>(mu: &MeasureRep, sys: &System, samples: &SampleSettings, g: G) -> Result<Vec<f64>>
where
    G: Fn(&BaseState, &[f64]) -> Result<f64> + Sync,
{
    if samples.m_samples < 2 {
        return Err(Error::validation("m_samples", "need at least 2 samples"));
    }
    mu.validate(&sys.fiber)?;
    let sampler = OmegaSampler::new(&sys.base)?;
    exec::par_map_range(samples.m_samples, |i| {
        let (omega, x) = mu.sample(sys, &sampler, samples.seed, i as u64)?;
        g(&omega, &x)
    })
    .into_iter()
    .collect()
}

/// Monte Carlo `∫ f dμ` with its standard error.
pub fn integrate(f: &Potential, mu: &MeasureRep, sys: &System, samples: &SampleSettings) -> Result<(f64, f64)> {
    let v = values(mu, sys, samples, |omega, x| {
        let path = make_path(omega, 2)?;
        f.eval_checked(path.view(0), x)
    })?;
    Ok(mean_stderr(&v))
}

/// Paired estimates of `∫ g dμ − ∫ g∘Θ dμ` for each test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceDefect {
    pub defect: f64,
    /// Standard error of the maximizing estimate.
    pub stderr: f64,
    pub per_function: Vec<(f64, f64)>,
    /// `max_g ‖g‖_∞` from the declared bounds.
    pub max_bound: f64,
}

pub fn invariance_defect(mu: &MeasureRep, tests: &[Potential], sys: &System, samples: &SampleSettings) -> Result<InvarianceDefect> {
    if tests.is_empty() {
        return Err(Error::validation("tests", "need at least one test function"));
    }
    let per_function: Vec<(f64, f64)> = tests
        .iter()
        .map(|g| {
            let v = values(mu, sys, samples, |omega, x| {
                let path = make_path(omega, 3)?;
                let (_, y) = push_forward(sys, omega, x, 1)?;
                Ok(g.eval_checked(path.view(0), x)? - g.eval_checked(path.view(1), &y)?)
            })?;
            Ok(mean_stderr(&v))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (m, _)) in per_function.iter().enumerate() {
        if m.abs() > per_function[best].0.abs() {
            best = i;
        }
    }
    Ok(InvarianceDefect {
        defect: per_function[best].0.abs(),
        stderr: per_function[best].1,
        max_bound: tests.iter().map(|g| g.bound()).fold(0.0, f64::max),
        per_function,
    })
}

/// `f_λ = Σ λ_i φ_i` with coefficients in a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialFamily {
    pub basis: Vec<PotentialSpec>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PotentialFamily {
    pub fn constants(range: f64) -> Self {
        Self {
            basis: vec![PotentialSpec::Constant { c: 1.0 }],
            lower: vec![-range],
            upper: vec![range],
        }
    }

    pub fn validate(&self, fiber: &FiberSpaceSpec) -> Result<()> {
        if self.lower.len() != self.basis.len() || self.upper.len() != self.basis.len() {
            return Err(Error::validation("family", "one bound pair per basis potential"));
        }
        self.bounds().validate()?;
        if !self.bounds().contains(&vec![0.0; self.basis.len()]) {
            return Err(Error::validation("family", "the box must contain λ = 0"));
        }
        self.basis.iter().try_for_each(|b| b.validate(fiber))
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    /// `f_λ`, omitting zero coefficients.
    pub fn potential(&self, lambda: &[f64]) -> Potential {
        let terms: Vec<(f64, Potential)> = lambda
            .iter()
            .zip(&self.basis)
            .filter(|(l, _)| **l != 0.0)
            .map(|(l, b)| (*l, Potential::Spec(b.clone())))
            .collect();
        if terms.is_empty() {
            Potential::zero()
        } else {
            Potential::Sum(terms)
        }
    }

    /// `Σ |λ_i| B_i`.
    pub fn bound(&self, lambda: &[f64]) -> f64 {
        lambda.iter().zip(&self.basis).map(|(l, b)| l.abs() * b.bound()).sum()
    }

    /// The family with extra basis potentials appended.
    pub fn extended(&self, more: &PotentialFamily) -> Self {
        let mut out = self.clone();
        out.basis.extend(more.basis.iter().cloned());
        out.lower.extend(&more.lower);
        out.upper.extend(&more.upper);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FSettings {
    pub estimation: Settings,
    pub samples: SampleSettings,
    pub search: SearchSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FEstimate {
    /// Smallest `Ĝ(λ) = m̂dim(f_λ) − ∫f_λ dμ` evaluated.
    pub value: f64,
    pub argmin: Vec<f64>,
    pub trace: Vec<TracePoint>,
    /// `m̂dim(f_λ*)` and `∫ f_λ* dμ`.
    pub mdim_at_argmin: f64,
    pub integral_at_argmin: f64,
    /// `Ĝ(0) = m̂dim(0)`, always the first evaluation.
    pub mdim_zero: f64,
    /// `∫ φ_i dμ` and its standard error per basis potential.
    pub basis_integrals: Vec<(f64, f64)>,
}

impl FEstimate {
    pub fn gap(&self) -> f64 {
        self.mdim_zero - self.value
    }
}

fn mdim_point(est: &MdimEstimate) -> f64 {
    est.slope
}

/// Minimizes `m̂dim(f_λ) − ∫ f_λ dμ` over the family, starting from λ = 0 and
/// then from `warm` if given.
pub fn f_estimate(
    mu: &MeasureRep,
    family: &PotentialFamily,
    bundle: &Bundle,
    settings: &FSettings,
    warm: Option<&[f64]>,
) -> Result<FEstimate> {
    family.validate(&bundle.system.fiber)?;
    mu.validate(&bundle.system.fiber)?;
    if settings.search.budget < 10 {
        return Err(Error::validation("budget", "need at least 10 objective evaluations"));
    }
    let basis_integrals: Vec<(f64, f64)> = family
        .basis
        .iter()
        .map(|b| integrate(&Potential::Spec(b.clone()), mu, &bundle.system, &settings.samples))
        .collect::<Result<_>>()?;
    let integral = |lambda: &[f64]| -> f64 { lambda.iter().zip(&basis_integrals).map(|(l, (m, _))| l * m).sum() };
    let mdim_of = |lambda: &[f64]| -> Result<f64> {
        Ok(mdim_point(&mdim_estimate(&family.potential(lambda), bundle, &settings.estimation)?))
    };
    let objective = |lambda: &[f64]| -> Result<f64> { Ok(mdim_of(lambda)? - integral(lambda)) };
    let k = family.basis.len();
    let mut starts = vec![vec![0.0; k]];
    if let Some(w) = warm {
        if w.len() != k {
            return Err(Error::Shape { expected: k, got: w.len() });
        }
        starts.push(w.to_vec());
    }
    let result = minimize(&objective, &family.bounds(), &starts, &settings.search)?;
    let integral_at_argmin = integral(&result.best_x);
    Ok(FEstimate {
        value: result.best_value,
        mdim_at_argmin: result.best_value + integral_at_argmin,
        integral_at_argmin,
        argmin: result.best_x,
        mdim_zero: result.trace[0].value,
        trace: result.trace,
        basis_integrals,
    })
}

/// Outcome of the `𝒜`-membership test `m̂dim(−f) ≈ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub mdim_neg: f64,
    pub upper: f64,
    pub lower: f64,
    pub tol: f64,
}

pub fn a_membership(f: &Potential, bundle: &Bundle, settings: &Settings, tol: f64) -> Result<Membership> {
    let est = mdim_estimate(&f.clone().scaled(-1.0), bundle, settings)?;
    let m = mdim_point(&est);
    Ok(Membership {
        member: m.abs() <= tol,
        mdim_neg: m,
        upper: est.upper,
        lower: est.lower,
        tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMeasure {
    pub index: usize,
    pub estimate: FEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalSearch {
    /// Candidates by decreasing `F̂`, ties by index.
    pub ranking: Vec<RankedMeasure>,
    pub mdim_zero: f64,
    /// `m̂dim − max F̂`.
    pub gap: f64,
}

pub fn maximal_measure_search(
    candidates: &[MeasureRep],
    family: &PotentialFamily,
    bundle: &Bundle,
    settings: &FSettings,
) -> Result<MaximalSearch> {
    if candidates.is_empty() {
        return Err(Error::validation("candidates", "need at least one measure"));
    }
    let estimates = candidates
        .iter()
        .map(|mu| f_estimate(mu, family, bundle, settings, None))
        .collect::<Result<Vec<_>>>()?;
    rank_estimates(estimates)
}

/// Ranks finished `F̂` estimates (given in candidate order).
pub fn rank_estimates(estimates: Vec<FEstimate>) -> Result<MaximalSearch> {
    if estimates.is_empty() {
        return Err(Error::validation("candidates", "need at least one measure"));
    }
    let mut ranking: Vec<RankedMeasure> = estimates
        .into_iter()
        .enumerate()
        .map(|(index, estimate)| RankedMeasure { index, estimate })
        .collect();
    ranking.sort_by(|a, b| b.estimate.value.total_cmp(&a.estimate.value).then(a.index.cmp(&b.index)));
    let mdim_zero = ranking[0].estimate.mdim_zero;
    Ok(MaximalSearch {
        gap: mdim_zero - ranking[0].estimate.value,
        mdim_zero,
        ranking,
    })
}
