//! Named verification suites behind `rmdim verify`.
//!
//! Each case draws its randomness from ChaCha stream `case` of the suite seed, so
//! a violation is replayed from `(seed, case)` alone.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::base::{make_path, BaseSystemSpec, OmegaSampler};
use crate::error::{Error, Result};
use crate::estimation::properties::random_spec;
use crate::estimation::{property_suite_prop25, Bundle, CloudSpec, Prop25Settings, Settings};
use crate::exec;
use crate::fiber::{CandidateCloud, FiberKind, FiberSpaceSpec, MetricSpec, DEFAULT_CLOUD_CAP};
use crate::measure::{
    cesaro_pushforward, f_estimate, invariance_defect, FSettings, MeasureRep, PotentialFamily, SampleSettings,
};
use crate::optimize::SearchSettings;
use crate::packing::partition::{cover_bound, forward_invariant, qn_hat};
use crate::packing::{
    canonical_order, exact_separated_product, greedy_naive, greedy_separated, pn_hat, verify_separated, GridPartition,
};
use crate::rds::{birkhoff_sum, orbit_into, OrbitTable, Potential, PotentialSpec, RandomMapSpec, System, TrigTerm};

pub const SUITES: [&str; 6] = [
    "pressure-properties",
    "packing-oracles",
    "inequalities-24-25",
    "kingman",
    "cocycle",
    "measure-bounds",
];

const SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteViolation {
    pub case: usize,
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub seed: u64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub cases: usize,
    pub checks: usize,
    pub per_check: BTreeMap<String, usize>,
    pub violations: Vec<SuiteViolation>,
    /// Suite-specific numbers worth logging (achieved gaps and the like).
    pub notes: Value,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Outcome of one check inside a case.
struct Check {
    name: String,
    ok: bool,
    lhs: f64,
    rhs: f64,
    detail: String,
}

fn le(name: &str, lhs: f64, rhs: f64, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        ok: lhs <= rhs + SLACK,
        lhs,
        rhs,
        detail: detail.into(),
    }
}

fn eq(name: &str, lhs: f64, rhs: f64, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        ok: lhs == rhs,
        lhs,
        rhs,
        detail: detail.into(),
    }
}

fn truth(name: &str, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        ok,
        lhs: ok as u8 as f64,
        rhs: 1.0,
        detail: detail.into(),
    }
}

fn collect(suite: &str, seed: u64, cases: Vec<Result<Vec<Check>>>, notes: Value) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: suite.into(),
        seed,
        cases: cases.len(),
        checks: 0,
        per_check: BTreeMap::new(),
        violations: Vec::new(),
        notes,
    };
    for (case, checks) in cases.into_iter().enumerate() {
        for c in checks? {
            report.checks += 1;
            *report.per_check.entry(c.name.clone()).or_default() += 1;
            if !c.ok {
                report.violations.push(SuiteViolation {
                    case,
                    check: c.name,
                    lhs: c.lhs,
                    rhs: c.rhs,
                    seed,
                    detail: c.detail,
                });
            }
        }
    }
    Ok(report)
}

fn case_rng(seed: u64, case: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64);
    rng
}

fn circle() -> FiberSpaceSpec {
    FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup())
}

fn torus(window: usize) -> FiberSpaceSpec {
    FiberSpaceSpec::new(FiberKind::TorusSeq, 1, window, MetricSpec::sup())
}

/// Systems whose lattice clouds are forward invariant: `(map, fiber, lattice m)`.
fn invariant_systems() -> Vec<(RandomMapSpec, FiberSpaceSpec, usize)> {
    vec![
        (RandomMapSpec::DoublingCircle, circle(), 256),
        (RandomMapSpec::RandomExpanding { factors: vec![2, 3] }, circle(), 256),
        (RandomMapSpec::Identity, circle(), 64),
        (RandomMapSpec::Shift, torus(2), 8),
    ]
}

fn base(seed: u64) -> BaseSystemSpec {
    BaseSystemSpec::bernoulli_half(seed)
}

/// Runs a named suite. `trials` overrides the default case count where the
/// suite is randomized.
pub fn run_suite(name: &str, trials: Option<usize>, seed: u64) -> Result<SuiteReport> {
    if trials == Some(0) {
        return Err(Error::validation("trials", "must be positive"));
    }
    match name {
        "pressure-properties" => pressure_properties(trials.unwrap_or(200), seed),
        "packing-oracles" => packing_oracles(seed),
        "inequalities-24-25" => inequalities(trials.unwrap_or(100), seed),
        "kingman" => kingman(trials.unwrap_or(100), seed),
        "cocycle" => cocycle(trials.unwrap_or(100), seed),
        "measure-bounds" => measure_bounds(trials.unwrap_or(4000), seed),
        _ => Err(Error::validation(
            "suite",
            format!("unknown suite {name:?}; expected one of {}", SUITES.join(", ")),
        )),
    }
}

fn pressure_properties(trials: usize, seed: u64) -> Result<SuiteReport> {
    let systems = [
        (RandomMapSpec::DoublingCircle, circle(), 256),
        (RandomMapSpec::RandomExpanding { factors: vec![2, 3] }, circle(), 256),
        (RandomMapSpec::ShiftRandomRotation { scale: 1.0 }, torus(3), 8),
    ];
    let mut cases = Vec::new();
    let mut per_system = Vec::new();
    for (map, fiber, m) in systems {
        let bundle = Bundle::new(System { base: base(seed), fiber, map: map.clone() }, CloudSpec::Lattice { m });
        let r = property_suite_prop25(&bundle, &Prop25Settings::new(trials, seed))?;
        per_system.push(json!({ "map": map, "trials": r.trials, "checks": r.checks }));
        let mut checks: Vec<Check> = Vec::new();
        for (item, count) in &r.per_item {
            let bad: Vec<_> = r.violations.iter().filter(|v| &v.item == item).collect();
            // One check per item occurrence; violations carry their own replay data.
            for i in 0..*count {
                match bad.get(i) {
                    Some(v) => checks.push(Check {
                        name: item.clone(),
                        ok: false,
                        lhs: v.lhs,
                        rhs: v.rhs,
                        detail: format!("{map:?} trial={} stream={} n={} eps={}", v.trial, v.stream, v.n, v.eps),
                    }),
                    None => checks.push(truth(item, true, "")),
                }
            }
        }
        cases.push(Ok(checks));
    }
    collect("pressure-properties", seed, cases, json!({ "trials_per_system": trials, "systems": per_system }))
}

/// Largest separated subset of a 1-D lattice: the best maximal set over all
/// rotations of the scan order. Exact for cube and circle lattices because an
/// optimal set contains some point, after which the rest is an interval packing
/// that a left-to-right scan solves.
fn exhaustive_1d(table: &OrbitTable, eps: f64) -> usize {
    let len = table.len();
    (0..len)
        .map(|s| {
            let order: Vec<usize> = (0..len).map(|i| (s + i) % len).collect();
            greedy_naive(table, eps, &order).len()
        })
        .max()
        .unwrap_or(0)
}

fn packing_oracles(seed: u64) -> Result<SuiteReport> {
    let shapes = [(1, 1), (2, 1), (1, 2), (3, 1), (2, 2), (4, 1), (1, 4)];
    let mut cases: Vec<(FiberSpaceSpec, usize, f64, RandomMapSpec, usize)> = Vec::new();
    for kind in [FiberKind::CubeSeq, FiberKind::TorusSeq] {
        for (d, w) in shapes {
            let fiber = FiberSpaceSpec::new(kind, d, w, MetricSpec::sup());
            // At most 10^4 lattice points; cube axes carry both endpoints.
            let per_axis = (10f64.powf(4.0 / fiber.dim() as f64).floor() as usize).min(40);
            let m = if kind == FiberKind::CubeSeq { per_axis - 1 } else { per_axis };
            for eps in [0.3, 0.25, 0.1] {
                cases.push((fiber, m, eps, RandomMapSpec::Identity, 1));
                if w > 1 && kind == FiberKind::TorusSeq {
                    cases.push((fiber, m.min(12), eps, RandomMapSpec::Shift, 2));
                }
            }
        }
    }
    for eps in [0.3, 0.25, 0.1] {
        cases.push((circle(), 64, eps, RandomMapSpec::DoublingCircle, 3));
    }
    let sampler = OmegaSampler::new(&base(seed))?;
    let results = exec::par_map_range(cases.len(), |c| -> Result<Vec<Check>> {
        let (fiber, m, eps, ref map, n) = cases[c];
        let cloud = CandidateCloud::product_lattice(&fiber, m)?;
        let path = make_path(&sampler.sample(c as u64), n + 1)?;
        let ctx = format!("{:?} D={} W={} m={m} eps={eps} {map:?} n={n}", fiber.kind, fiber.symbol_dim, fiber.window);
        let set = greedy_separated(&cloud, map, &path, n, eps, None)?;
        let table = OrbitTable::from_cloud(map, &path, n, &cloud, 1e4)?;
        let pairwise = greedy_naive(&table, eps, &canonical_order(table.len()));
        let members = set.cloud_indices(&cloud, 1e4)?;
        let cert = verify_separated(&table, &members, eps);
        let mut checks = vec![
            eq("greedy-matches-pairwise", set.cardinality(), pairwise.len() as f64, ctx.clone()),
            truth("certificate", cert.separated && cert.maximal, ctx.clone()),
        ];
        if *map == RandomMapSpec::Identity {
            let oracle = exact_separated_product(&fiber, eps, m)?;
            if fiber.dim() == 1 {
                checks.push(eq("exhaustive-1d", oracle.count, exhaustive_1d(&table, eps) as f64, ctx.clone()));
            }
            if oracle.exact_maximum {
                checks.push(eq("exact-count", set.cardinality(), oracle.count, ctx));
            }
        }
        Ok(checks)
    });
    let n = results.len();
    collect("packing-oracles", seed, results, json!({ "configurations": n }))
}

fn random_case(rng: &mut ChaCha8Rng) -> (RandomMapSpec, FiberSpaceSpec, usize) {
    let systems = invariant_systems();
    systems[rng.gen_range(0..systems.len())].clone()
}

fn inequalities(trials: usize, seed: u64) -> Result<SuiteReport> {
    let sampler = OmegaSampler::new(&base(seed))?;
    let results = exec::par_map_range(trials, |c| -> Result<Vec<Check>> {
        let mut rng = case_rng(seed, c);
        let (map, fiber, m) = random_case(&mut rng);
        let eps = [0.3, 0.25, 0.15, 0.1][rng.gen_range(0..4)];
        let n = rng.gen_range(1..=4);
        let f: Potential = random_spec(&mut rng, &fiber).into();
        let stream = rng.gen::<u32>() as u64;
        let path = make_path(&sampler.sample(stream), n + 1)?;
        let cloud = CandidateCloud::product_lattice(&fiber, m)?;
        let ctx = format!("{map:?} m={m} eps={eps} n={n} stream={stream}");
        let p = pn_hat(&cloud, &map, &path, n, eps, &f)?;
        let part = GridPartition::new(&cloud, eps)?;
        let q = qn_hat(&part, &map, &path, n, eps, &f)?;
        let cb = cover_bound(&cloud, &map, &path, n, eps, &f, DEFAULT_CLOUD_CAP)?;
        Ok(vec![
            le("pn-below-qn", p.value.log_value, q.log_value, ctx.clone()),
            truth("invariant-cloud", cb.invariant_cloud, ctx.clone()),
            eq("subcover", cb.uncovered as f64, 0.0, ctx.clone()),
            le("cover-bound", cb.log_q, cb.rhs, ctx),
        ])
    });
    collect("inequalities-24-25", seed, results, json!({ "configurations": trials }))
}

fn kingman(trials: usize, seed: u64) -> Result<SuiteReport> {
    let sampler = OmegaSampler::new(&base(seed))?;
    let results = exec::par_map_range(trials, |c| -> Result<Vec<Check>> {
        let mut rng = case_rng(seed, c);
        let (map, fiber, m_lat) = random_case(&mut rng);
        let eps = [0.3, 0.25, 0.15, 0.1][rng.gen_range(0..4)];
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let f: Potential = random_spec(&mut rng, &fiber).into();
        let stream = rng.gen::<u32>() as u64;
        let path = make_path(&sampler.sample(stream), n + m + 1)?;
        let cloud = CandidateCloud::product_lattice(&fiber, m_lat)?;
        let part = GridPartition::new(&cloud, eps)?;
        let ctx = format!("{map:?} eps={eps} n={n} m={m} stream={stream}");
        let whole = qn_hat(&part, &map, &path, n + m, eps, &f)?.log_value;
        let head = qn_hat(&part, &map, &path, n, eps, &f)?.log_value;
        let tail = qn_hat(&part, &map, &path.suffix(n, m + 1)?, m, eps, &f)?.log_value;
        Ok(vec![
            truth("invariant-cloud", forward_invariant(&cloud, &map, &path, n + m, DEFAULT_CLOUD_CAP)?, ctx.clone()),
            le("subadditive", whole, head + tail, ctx),
        ])
    });
    collect("kingman", seed, results, json!({ "splits": trials }))
}

fn cocycle(trials: usize, seed: u64) -> Result<SuiteReport> {
    let maps = [
        RandomMapSpec::Identity,
        RandomMapSpec::DoublingCircle,
        RandomMapSpec::RandomExpanding { factors: vec![2, 3] },
        RandomMapSpec::Shift,
        RandomMapSpec::ShiftRandomRotation { scale: 1.0 },
    ];
    let sampler = OmegaSampler::new(&base(seed))?;
    let results = exec::par_map_range(trials, |c| -> Result<Vec<Check>> {
        let mut rng = case_rng(seed, c);
        let map = maps[rng.gen_range(0..maps.len())].clone();
        let fiber = if map.offset() > 0 { torus(3) } else { circle() };
        let d = fiber.dim();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=5);
        let f: Potential = random_spec(&mut rng, &fiber).into();
        let stream = rng.gen::<u32>() as u64;
        let path = make_path(&sampler.sample(stream), n + m + 1)?;
        let ctx = format!("{map:?} n={n} m={m} stream={stream}");

        let mut whole = vec![0.0; (n + m + 1) * d];
        orbit_into(&map, &fiber, &path, n + m + 1, &x, &mut whole);
        let y = &whole[n * d..(n + 1) * d];
        let tail_path = path.suffix(n, m + 1)?;
        let mut tail = vec![0.0; (m + 1) * d];
        orbit_into(&map, &fiber, &tail_path, m + 1, y, &mut tail);
        let same = whole[n * d..].iter().zip(&tail).all(|(a, b)| a.to_bits() == b.to_bits());

        let s_all = birkhoff_sum(&f, &path, &x, n + m, &map, &fiber)?;
        let s_head = birkhoff_sum(&f, &path, &x, n, &map, &fiber)?;
        let s_tail = birkhoff_sum(&f, &tail_path, y, m, &map, &fiber)?;
        let err = (s_all - s_head - s_tail).abs();
        Ok(vec![
            truth("orbit-cocycle", same, ctx.clone()),
            le("birkhoff-additive", err, 1e-12 * (1.0 + s_all.abs()), ctx),
        ])
    });
    collect("cocycle", seed, results, json!({ "cases": trials }))
}

fn cos_term(coord: usize, amplitude: f64) -> TrigTerm {
    TrigTerm {
        coord,
        amplitude,
        frequency: 1.0,
        phase: 0.0,
    }
}

fn measure_bounds(m_samples: usize, seed: u64) -> Result<SuiteReport> {
    let ladder = |from: i32, to: i32| -> Vec<f64> { (from..=to).map(|k| 0.5f64.powi(k)).collect() };
    let shift = (
        "torus_shift",
        Bundle::new(System { base: base(seed), fiber: torus(3), map: RandomMapSpec::Shift }, CloudSpec::Lattice { m: 8255 })
            .with_window_margin(2),
        ladder(3, 6),
        vec![1, 2, 3, 4],
        vec![0.5],
        PotentialFamily {
            basis: vec![
                PotentialSpec::Trig { terms: vec![cos_term(0, 1.0)] },
                PotentialSpec::CoordinateLinear { coefficients: vec![1.0] },
                PotentialSpec::Trig { terms: vec![cos_term(1, 1.0), cos_term(0, -1.0)] },
            ],
            lower: vec![-1.0; 3],
            upper: vec![1.0; 3],
        },
    );
    let doubling = (
        "doubling",
        Bundle::new(System { base: base(seed), fiber: circle(), map: RandomMapSpec::DoublingCircle }, CloudSpec::Lattice { m: 1024 }),
        ladder(2, 5),
        vec![2, 3, 4, 5],
        vec![0.3],
        PotentialFamily {
            basis: vec![
                PotentialSpec::Trig { terms: vec![cos_term(0, 1.0)] },
                PotentialSpec::CoordinateLinear { coefficients: vec![1.0] },
            ],
            lower: vec![-1.0; 2],
            upper: vec![1.0; 2],
        },
    );
    let mut cases: Vec<Result<Vec<Check>>> = Vec::new();
    let mut notes = Vec::new();
    for (label, bundle, eps_ladder, n_schedule, atom, family) in [shift, doubling] {
        let settings = FSettings {
            estimation: Settings { eps_ladder, n_schedule, m_omega: 2, stream_offset: 0 },
            samples: SampleSettings { m_samples, seed },
            search: SearchSettings::new(12),
        };
        let measures = [
            ("uniform", MeasureRep::uniform()),
            ("atom", MeasureRep::atom(atom.clone())),
            ("cesaro_atom_10", cesaro_pushforward(MeasureRep::atom(atom.clone()), 10)?),
        ];
        let mut checks = Vec::new();
        for (name, mu) in &measures {
            let est = f_estimate(mu, &family, &bundle, &settings, None)?;
            let ctx = format!("{label} {name}");
            checks.push(le("f-below-mdim", est.value, est.mdim_zero, ctx));
            notes.push(json!({ "system": label, "measure": name, "mdim": est.mdim_zero, "f_hat": est.value, "gap": est.gap() }));
        }
        let constants = f_estimate(&measures[0].1, &PotentialFamily::constants(1.0), &bundle, &settings, None)?;
        checks.push(Check {
            name: "constants-exact".into(),
            ok: (constants.value - constants.mdim_zero).abs() <= SLACK,
            lhs: constants.value,
            rhs: constants.mdim_zero,
            detail: label.into(),
        });
        let tests: Vec<Potential> = family.basis.iter().cloned().map(Potential::Spec).collect();
        for n in [10, 100] {
            let mu = cesaro_pushforward(MeasureRep::atom(atom.clone()), n)?;
            let d = invariance_defect(&mu, &tests, &bundle.system, &settings.samples)?;
            checks.push(le(
                "cesaro-defect",
                d.defect,
                2.0 * d.max_bound / n as f64 + 3.0 * d.stderr,
                format!("{label} N={n}"),
            ));
        }
        cases.push(Ok(checks));
    }
    collect("measure-bounds", seed, cases, json!({ "estimates": notes }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_validation_error() {
        assert!(matches!(run_suite("nope", None, 1), Err(Error::Validation { .. })));
    }

    #[test]
    fn randomized_suites_pass_small() {
        for name in ["inequalities-24-25", "kingman", "cocycle"] {
            let r = run_suite(name, Some(30), 11).unwrap();
            assert!(r.passed(), "{name}: {:?}", r.violations);
            assert!(r.checks >= 60);
        }
    }

    #[test]
    fn packing_oracles_pass() {
        let r = run_suite("packing-oracles", None, 3).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert!(r.per_check["exhaustive-1d"] >= 6);
    }
}
