//! Finite-n partition-function properties on a fixed separated set.
//!
//! Every inequality is checked on one greedy `F` per trial, shared by all the
//! potentials of that trial, in natural-log form with absolute slack.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base::{make_path, BasePath, OmegaSampler};
use crate::error::Result;
use crate::exec;
use crate::fiber::FiberSpaceSpec;
use crate::packing::{canonical_order, greedy_on_table, partition_function};
use crate::rds::{OrbitTable, Potential, PotentialSpec, TrigTerm};

use super::Bundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop25Settings {
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_eps")]
    pub eps_choices: Vec<f64>,
    #[serde(default = "default_points")]
    pub max_points: usize,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_n_max() -> usize {
    4
}

fn default_eps() -> Vec<f64> {
    vec![0.5, 0.3, 0.25, 0.15]
}

fn default_points() -> usize {
    4096
}

fn default_slack() -> f64 {
    1e-9
}

impl Prop25Settings {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            n_max: default_n_max(),
            eps_choices: default_eps(),
            max_points: default_points(),
            slack: default_slack(),
        }
    }
}

/// One failed check, with everything needed to replay the trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub item: String,
    pub lhs: f64,
    pub rhs: f64,
    pub seed: u64,
    pub stream: u64,
    pub n: usize,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop25Report {
    pub trials: usize,
    pub checks: usize,
    /// Number of checks per item label.
    pub per_item: BTreeMap<String, usize>,
    pub violations: Vec<Violation>,
}

impl Prop25Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub(crate) fn random_spec(rng: &mut ChaCha8Rng, fiber: &FiberSpaceSpec) -> PotentialSpec {
    let dim = fiber.dim();
    let trig = |rng: &mut ChaCha8Rng| PotentialSpec::Trig {
        terms: (0..rng.gen_range(1..=3))
            .map(|_| TrigTerm {
                coord: rng.gen_range(0..dim),
                amplitude: rng.gen_range(-1.0..1.0),
                frequency: rng.gen_range(1..=3) as f64,
                phase: rng.gen_range(0.0..1.0),
            })
            .collect(),
    };
    match rng.gen_range(0..4) {
        0 => trig(rng),
        1 => PotentialSpec::CoordinateLinear {
            coefficients: (0..dim.min(4)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        },
        2 => PotentialSpec::EnvModulated {
            env: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            inner: Box::new(trig(rng)),
        },
        _ => PotentialSpec::Constant {
            c: rng.gen_range(-1.0..1.0),
        },
    }
}

struct Trial<'a> {
    table: OrbitTable,
    points: Vec<usize>,
    path: &'a BasePath,
    eps: f64,
    l: f64,
    /// `T^n x` for every cloud point, needed for the coboundary envelope.
    last: Vec<f64>,
}

impl Trial<'_> {
    fn z(&self, f: &Potential) -> Result<f64> {
        Ok(partition_function(&self.table, &self.points, f, self.path, self.eps)?.log_value)
    }

    /// `Σ_j sup_i |f(θ^j ω, T^j x_i)|` over the tabulated cloud orbits.
    fn envelope(&self, f: &Potential) -> f64 {
        (0..self.table.n())
            .map(|j| {
                (0..self.table.len())
                    .map(|i| f.eval(self.path.view(j), self.table.iterate(i, j)).abs())
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    fn sup_at(&self, f: &Potential, j: usize) -> f64 {
        let d = self.table.fiber().dim();
        if j == self.table.n() {
            self.last
                .chunks(d)
                .map(|x| f.eval(self.path.view(j), x).abs())
                .fold(0.0, f64::max)
        } else {
            (0..self.table.len())
                .map(|i| f.eval(self.path.view(j), self.table.iterate(i, j)).abs())
                .fold(0.0, f64::max)
        }
    }
}

struct Checks {
    slack: f64,
    out: Vec<(String, f64, f64)>,
}

impl Checks {
    /// Records `lhs ≤ rhs`; failures are kept.
    fn le(&mut self, item: &str, lhs: f64, rhs: f64) {
        self.out.push((item.to_string(), lhs, rhs + self.slack));
    }

    fn eq(&mut self, item: &str, lhs: f64, rhs: f64) {
        self.le(item, lhs, rhs);
        self.le(item, rhs, lhs);
    }
}

fn run_trial(bundle: &Bundle, settings: &Prop25Settings, sampler: &OmegaSampler, trial: usize) -> Result<(Vec<(String, f64, f64)>, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(trial as u64);
    let n = rng.gen_range(1..=settings.n_max.max(1));
    let eps = settings.eps_choices[rng.gen_range(0..settings.eps_choices.len())];
    let map = &bundle.system.map;
    let cloud = bundle.cloud_for(eps, n)?;
    let fiber = *cloud.spec();
    let path = make_path(&sampler.sample(trial as u64), n + 1)?;
    let table = OrbitTable::from_cloud(map, &path, n, &cloud, settings.max_points as f64)?;
    let points = greedy_on_table(&table, eps, &canonical_order(table.len()));
    let d = fiber.dim();
    let mut last = vec![0.0; table.len() * d];
    for (i, out) in last.chunks_mut(d).enumerate() {
        map.eval_into(&fiber, path.view(n - 1), table.iterate(i, n - 1), out);
    }
    let t = Trial {
        table,
        points,
        path: &path,
        eps,
        l: (1.0 / eps).ln(),
        last,
    };

    let f: Potential = random_spec(&mut rng, &fiber).into();
    let g: Potential = random_spec(&mut rng, &fiber).into();
    let h: Potential = random_spec(&mut rng, &fiber).into();
    let mut c = Checks {
        slack: settings.slack,
        out: Vec::new(),
    };
    let zf = t.z(&f)?;
    let zg = t.z(&g)?;
    let log_card = (t.points.len() as f64).ln();
    let nf = n as f64;

    // (1) f ≤ f + |h|
    c.le("1-monotone", zf, t.z(&f.clone().plus(h.clone().abs()))?);

    // (2) translation by a constant
    let shift: f64 = rng.gen_range(-2.0..2.0);
    c.eq("2-translation", t.z(&f.clone().plus(Potential::constant(shift)))?, zf + nf * shift * t.l);

    // (3) envelope around the zero potential
    let env = t.l * t.envelope(&f);
    c.le("3-envelope-lower", log_card - env, zf);
    c.le("3-envelope-upper", zf, log_card + env);

    // (5) convexity and Lipschitz continuity
    let p: f64 = rng.gen_range(0.0..=1.0);
    let mix = Potential::Sum(vec![(p, f.clone()), (1.0 - p, g.clone())]);
    c.le("5-convexity", t.z(&mix)?, p * zf + (1.0 - p) * zg);
    let diff = Potential::Sum(vec![(1.0, f.clone()), (-1.0, g.clone())]);
    c.le("5-lipschitz", (zf - zg).abs(), t.l * t.envelope(&diff));

    // (6) subadditivity in the potential
    c.le("6-sum", t.z(&f.clone().plus(g.clone()))?, zf + zg);

    // (7) coboundary sandwich
    let cob = f.clone().plus(Potential::coboundary(g.clone(), map, &fiber));
    let zc = t.z(&cob)?;
    let spread = t.l * (t.sup_at(&g, n) + t.sup_at(&g, 0));
    c.le("7-coboundary-lower", zf - spread, zc);
    c.le("7-coboundary-upper", zc, zf + spread);

    // (8) powers
    let up: f64 = rng.gen_range(1.0..3.0);
    c.le("8-power-above-one", t.z(&f.clone().scaled(up))?, up * zf);
    let down: f64 = rng.gen_range(-1.0..=1.0);
    c.le("8-power-below-one", down * zf, t.z(&f.clone().scaled(down))?);

    // (9) absolute values
    let za = t.z(&f.clone().abs())?;
    c.le("9-lower", t.z(&f.clone().abs().scaled(-1.0))?, zf);
    c.le("9-upper", zf, za);
    c.le("9-modulus", zf.abs(), za);

    Ok((c.out, n, eps))
}

/// Runs `settings.trials` randomized trials; trial `t` uses ω-stream `t` and RNG
/// stream `t` of `settings.seed`.
pub fn property_suite_prop25(bundle: &Bundle, settings: &Prop25Settings) -> Result<Prop25Report> {
    bundle.validate()?;
    let sampler = OmegaSampler::new(&bundle.system.base)?;
    let results = exec::par_map_range(settings.trials, |t| run_trial(bundle, settings, &sampler, t));
    let mut report = Prop25Report {
        trials: settings.trials,
        checks: 0,
        per_item: BTreeMap::new(),
        violations: Vec::new(),
    };
    for (trial, r) in results.into_iter().enumerate() {
        let (checks, n, eps) = r?;
        for (item, lhs, rhs) in checks {
            report.checks += 1;
            *report.per_item.entry(item.clone()).or_default() += 1;
            if !(lhs <= rhs) {
                report.violations.push(Violation {
                    trial,
                    item,
                    lhs,
                    rhs,
                    seed: settings.seed,
                    stream: trial as u64,
                    n,
                    eps,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseSystemSpec;
    use crate::estimation::CloudSpec;
    use crate::fiber::{FiberKind, MetricSpec};
    use crate::rds::{RandomMapSpec, System};

    fn bundle(map: RandomMapSpec, window: usize, m: usize) -> Bundle {
        Bundle::new(
            System {
                base: BaseSystemSpec::bernoulli_half(5),
                fiber: FiberSpaceSpec::new(FiberKind::TorusSeq, 1, window, MetricSpec::sup()),
                map,
            },
            CloudSpec::Lattice { m },
        )
    }

    #[test]
    fn constant_shift_on_four_points() {
        // Corners of the unit square under the identity are pairwise at distance 1.
        let fiber = FiberSpaceSpec::new(FiberKind::CubeSeq, 2, 1, MetricSpec::sup());
        let cloud = CloudSpec::Lattice { m: 1 }.build(&fiber).unwrap();
        let w = OmegaSampler::new(&BaseSystemSpec::bernoulli_half(5)).unwrap().sample(0);
        let path = make_path(&w, 3).unwrap();
        let table = OrbitTable::from_cloud(&RandomMapSpec::Identity, &path, 3, &cloud, 1e6).unwrap();
        let pts = greedy_on_table(&table, 0.5, &canonical_order(4));
        assert_eq!(pts.len(), 4);
        let z0 = partition_function(&table, &pts, &Potential::zero(), &path, 0.5).unwrap();
        let z1 = partition_function(&table, &pts, &Potential::constant(1.0), &path, 0.5).unwrap();
        assert!((z1.log_value - z0.log_value - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn suite_passes_on_reference_systems() {
        for map in [
            RandomMapSpec::DoublingCircle,
            RandomMapSpec::RandomExpanding { factors: vec![2, 3] },
            RandomMapSpec::ShiftRandomRotation { scale: 1.0 },
        ] {
            let window = if map.offset() > 0 { 3 } else { 1 };
            let m = if window == 3 { 8 } else { 256 };
            let r = property_suite_prop25(&bundle(map, window, m), &Prop25Settings::new(40, 9)).unwrap();
            assert!(r.passed(), "{:?}", r.violations);
            assert_eq!(r.per_item.len(), 14);
        }
    }

    #[test]
    fn identical_potentials_are_tight() {
        let b = bundle(RandomMapSpec::DoublingCircle, 1, 64);
        let cloud = b.cloud.build(&b.system.fiber).unwrap();
        let w = OmegaSampler::new(&b.system.base).unwrap().sample(0);
        let path = make_path(&w, 3).unwrap();
        let table = OrbitTable::from_cloud(&b.system.map, &path, 2, &cloud, 1e6).unwrap();
        let pts = greedy_on_table(&table, 0.1, &canonical_order(table.len()));
        let f: Potential = PotentialSpec::CoordinateLinear { coefficients: vec![0.7] }.into();
        let zf = partition_function(&table, &pts, &f, &path, 0.1).unwrap().log_value;
        let zmix = partition_function(&table, &pts, &Potential::Sum(vec![(0.3, f.clone()), (0.7, f.clone())]), &path, 0.1)
            .unwrap()
            .log_value;
        assert!((zf - zmix).abs() < 1e-12);
    }
}
