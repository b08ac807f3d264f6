//! ω-averaged pressure curves, fiber entropy and metric mean dimension fits.
//!
//! Work is split into tasks keyed by `(ε index, ω stream)`. A task computes
//! `log P̂_n` for the whole n-schedule along one base path; [`assemble`] reduces
//! task records in key order, so results do not depend on how tasks were
//! scheduled or whether some came from disk.

pub mod properties;

use serde::{Deserialize, Serialize};

use crate::base::{make_path, OmegaSampler};
use crate::error::{Error, Result};
use crate::exec;
use crate::fiber::{grid, random_cloud, truncation_window, CandidateCloud, FiberSpaceSpec, DEFAULT_CLOUD_CAP};
use crate::numeric::{mean_stderr, weighted_line_fit};
use crate::packing::pn_hat_with_cap;
use crate::rds::{Potential, System};

pub use properties::{property_suite_prop25, Prop25Report, Prop25Settings, Violation};

/// How the candidate cloud is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CloudSpec {
    /// Product lattice with `m` intervals per axis.
    Lattice { m: usize },
    Grid { mesh: f64 },
    Random { count: usize, seed: u64 },
}

impl CloudSpec {
    pub fn build(&self, fiber: &FiberSpaceSpec) -> Result<CandidateCloud> {
        match *self {
            CloudSpec::Lattice { m } => CandidateCloud::product_lattice(fiber, m),
            CloudSpec::Grid { mesh } => grid(fiber, mesh, f64::INFINITY),
            CloudSpec::Random { count, seed } => random_cloud(fiber, count, seed),
        }
    }
}

/// A system together with the cloud its pressures are computed on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub system: System,
    pub cloud: CloudSpec,
    /// When set, the window at scale ε is `truncation_window(ε, n_max, margin)`
    /// instead of the fiber's own.
    #[serde(default)]
    pub window_margin: Option<usize>,
    #[serde(default = "default_cap")]
    pub cloud_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_CLOUD_CAP
}

impl Bundle {
    pub fn new(system: System, cloud: CloudSpec) -> Self {
        Self {
            system,
            cloud,
            window_margin: None,
            cloud_cap: DEFAULT_CLOUD_CAP,
        }
    }

    pub fn with_window_margin(mut self, margin: usize) -> Self {
        self.window_margin = Some(margin);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.system.fiber.validate()
    }

    pub fn fiber_for(&self, eps: f64, n_max: usize) -> Result<FiberSpaceSpec> {
        Ok(match self.window_margin {
            Some(margin) => self.system.fiber.with_window(truncation_window(eps, n_max, margin)?),
            None => self.system.fiber,
        })
    }

    pub fn cloud_for(&self, eps: f64, n_max: usize) -> Result<CandidateCloud> {
        self.cloud.build(&self.fiber_for(eps, n_max)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub eps_ladder: Vec<f64>,
    pub n_schedule: Vec<usize>,
    pub m_omega: usize,
    /// ω-samples use streams `stream_offset..stream_offset + m_omega`.
    #[serde(default)]
    pub stream_offset: u64,
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        if self.eps_ladder.is_empty() {
            return Err(Error::validation("epsilon_ladder", "needs at least one rung"));
        }
        if let Some(e) = self.eps_ladder.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::validation("epsilon_ladder", format!("rung {e} outside (0, 1)")));
        }
        if self.n_schedule.len() < 4 {
            return Err(Error::validation("n_schedule", "needs at least 4 entries"));
        }
        if self.n_schedule[0] == 0 || self.n_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("n_schedule", "must be positive and strictly increasing"));
        }
        if self.m_omega < 2 {
            return Err(Error::validation("m_omega", "need at least 2 samples"));
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        *self.n_schedule.last().unwrap_or(&1)
    }
}

/// Checks that a ladder is geometric, strictly decreasing and has at least 4 rungs.
pub fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 4 {
        return Err(Error::validation("epsilon_ladder", "needs at least 4 rungs"));
    }
    if ladder.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::validation("epsilon_ladder", "rungs must lie in (0, 1)"));
    }
    let r = ladder[1] / ladder[0];
    if !(r < 1.0) || ladder.windows(2).any(|w| ((w[1] / w[0]) / r - 1.0).abs() > 1e-9) {
        return Err(Error::validation("epsilon_ladder", "must be geometric and decreasing"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub eps_index: usize,
    pub omega_index: usize,
}

/// `log P̂_n` along one base path for every n in the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub key: TaskKey,
    pub eps: f64,
    pub stream: u64,
    pub log_pn: Vec<f64>,
    pub log_count: Vec<f64>,
}

/// Validated work list for one pressure curve.
pub struct Plan<'a> {
    pub bundle: &'a Bundle,
    pub settings: &'a Settings,
    pub f: &'a Potential,
    /// The system and potential ignore ω, so one path stands for all samples.
    pub deduplicated: bool,
    sampler: OmegaSampler,
}

impl<'a> Plan<'a> {
    pub fn new(f: &'a Potential, bundle: &'a Bundle, settings: &'a Settings) -> Result<Self> {
        bundle.validate()?;
        settings.validate()?;
        let deduplicated = bundle.system.map.omega_independent() && f.omega_independent();
        Ok(Self {
            bundle,
            settings,
            f,
            deduplicated,
            sampler: OmegaSampler::new(&bundle.system.base)?,
        })
    }

    pub fn keys(&self) -> Vec<TaskKey> {
        let per_eps = if self.deduplicated { 1 } else { self.settings.m_omega };
        (0..self.settings.eps_ladder.len())
            .flat_map(|e| (0..per_eps).map(move |w| TaskKey { eps_index: e, omega_index: w }))
            .collect()
    }

    pub fn stream(&self, key: TaskKey) -> u64 {
        self.settings.stream_offset + key.omega_index as u64
    }

    pub fn run(&self, key: TaskKey) -> Result<TaskRecord> {
        let eps = self.settings.eps_ladder[key.eps_index];
        let n_max = self.settings.n_max();
        let cloud = self.bundle.cloud_for(eps, n_max)?;
        let stream = self.stream(key);
        let path = make_path(&self.sampler.sample(stream), n_max + 1)?;
        let mut log_pn = Vec::with_capacity(self.settings.n_schedule.len());
        let mut log_count = Vec::with_capacity(self.settings.n_schedule.len());
        for &n in &self.settings.n_schedule {
            let p = pn_hat_with_cap(&cloud, &self.bundle.system.map, &path, n, eps, self.f, self.bundle.cloud_cap)?;
            log_pn.push(p.value.log_value);
            log_count.push(p.set.log_cardinality());
        }
        Ok(TaskRecord {
            key,
            eps,
            stream,
            log_pn,
            log_count,
        })
    }
}

/// Per-n statistics of `log P̂_n` over ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NStats {
    pub n: usize,
    pub mean_log: f64,
    pub stderr_log: f64,
    /// Mean and stderr of `(1/n) log P̂_n`.
    pub mean_rate: f64,
    pub stderr_rate: f64,
}

/// Pressure at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureRecord {
    pub eps: f64,
    pub per_n: Vec<NStats>,
    /// Largest two-point slope of the ω-averaged `log P̂_n` over the top half of
    /// the schedule (limsup proxy). This is the pressure estimate.
    pub growth: f64,
    pub growth_stderr: f64,
    /// Smallest such slope (liminf proxy).
    pub growth_lower: f64,
    /// Least-squares slope over the top half.
    pub growth_ols: f64,
    /// Per-ω limsup proxy, then averaged.
    pub inside: f64,
    pub inside_stderr: f64,
    pub samples: usize,
    pub deduplicated: bool,
}

impl PressureRecord {
    /// Gap between the averaged-then-limsup and limsup-then-averaged forms, in
    /// units of their combined standard error (0 when both errors vanish).
    pub fn order_gap_sigma(&self) -> f64 {
        let se = (self.growth_stderr.powi(2) + self.inside_stderr.powi(2)).sqrt();
        let gap = (self.growth - self.inside).abs();
        if se > 0.0 {
            gap / se
        } else if gap > 1e-12 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub eps_ladder: Vec<f64>,
    pub n_schedule: Vec<usize>,
    pub records: Vec<PressureRecord>,
}

fn top_half_start(len: usize) -> usize {
    (len - 1) / 2
}

fn two_point_slopes(ns: &[usize], ys: &[f64]) -> Vec<f64> {
    let s = top_half_start(ns.len());
    (s..ns.len() - 1)
        .map(|i| (ys[i + 1] - ys[i]) / (ns[i + 1] - ns[i]) as f64)
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn record_from(eps: f64, ns: &[usize], logs: &[Vec<f64>], replicas: usize, deduplicated: bool) -> PressureRecord {
    let cols = ns.len();
    let column = |i: usize| -> Vec<f64> { logs.iter().map(|r| r[i]).collect() };
    let per_n: Vec<NStats> = (0..cols)
        .map(|i| {
            let c = column(i);
            let (mean_log, stderr_log) = mean_stderr(&c);
            let rates: Vec<f64> = c.iter().map(|v| v / ns[i] as f64).collect();
            let (mean_rate, stderr_rate) = mean_stderr(&rates);
            NStats {
                n: ns[i],
                mean_log,
                stderr_log,
                mean_rate,
                stderr_rate,
            }
        })
        .collect();
    let means: Vec<f64> = per_n.iter().map(|s| s.mean_log).collect();
    let slopes = two_point_slopes(ns, &means);
    let k = argmax(&slopes);
    let start = top_half_start(cols);
    let per_omega_at_k: Vec<f64> = logs
        .iter()
        .map(|r| (r[start + k + 1] - r[start + k]) / (ns[start + k + 1] - ns[start + k]) as f64)
        .collect();
    let (_, growth_stderr) = mean_stderr(&per_omega_at_k);
    let top_n: Vec<f64> = ns[start..].iter().map(|&n| n as f64).collect();
    let (growth_ols, _, _) = weighted_line_fit(&top_n, &means[start..], &vec![1.0; top_n.len()]);
    let inside_vals: Vec<f64> = logs
        .iter()
        .map(|r| two_point_slopes(ns, r).into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (inside, inside_stderr) = mean_stderr(&inside_vals);
    PressureRecord {
        eps,
        per_n,
        growth: slopes[k],
        growth_stderr,
        growth_lower: slopes.iter().copied().fold(f64::INFINITY, f64::min),
        growth_ols,
        inside,
        inside_stderr,
        samples: replicas,
        deduplicated,
    }
}

/// Reduces task records (any order, any origin) into a pressure curve.
pub fn assemble(plan: &Plan<'_>, records: &[TaskRecord]) -> Result<PressureCurve> {
    let mut sorted: Vec<&TaskRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.key);
    let expected = plan.keys();
    if sorted.len() != expected.len() || sorted.iter().zip(&expected).any(|(r, k)| r.key != *k) {
        return Err(Error::validation("tasks", "records do not match the plan"));
    }
    let ns = &plan.settings.n_schedule;
    let m = plan.settings.m_omega;
    let records = plan
        .settings
        .eps_ladder
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let logs: Vec<Vec<f64>> = sorted
                .iter()
                .filter(|r| r.key.eps_index == e)
                .map(|r| r.log_pn.clone())
                .collect();
            let logs = if plan.deduplicated { vec![logs[0].clone(); m] } else { logs };
            record_from(eps, ns, &logs, m, plan.deduplicated)
        })
        .collect();
    Ok(PressureCurve {
        eps_ladder: plan.settings.eps_ladder.clone(),
        n_schedule: ns.clone(),
        records,
    })
}

/// Runs every task of the plan in parallel and assembles the curve.
pub fn pressure_curve(f: &Potential, bundle: &Bundle, settings: &Settings) -> Result<PressureCurve> {
    let plan = Plan::new(f, bundle, settings)?;
    let keys = plan.keys();
    let records: Vec<TaskRecord> = exec::par_map(&keys, |k| plan.run(*k)).into_iter().collect::<Result<_>>()?;
    assemble(&plan, &records)
}

/// Pressure `P(T, f, d, ε)` at a single scale.
pub fn pressure_at(
    eps: f64,
    f: &Potential,
    bundle: &Bundle,
    n_schedule: &[usize],
    m_omega: usize,
    stream_offset: u64,
) -> Result<PressureRecord> {
    let settings = Settings {
        eps_ladder: vec![eps],
        n_schedule: n_schedule.to_vec(),
        m_omega,
        stream_offset,
    };
    Ok(pressure_curve(f, bundle, &settings)?.records.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdimEstimate {
    /// Weighted least-squares slope of pressure against `log(1/ε)`.
    pub slope: f64,
    pub intercept: f64,
    /// Largest / smallest successive slope over the small-ε half of the ladder.
    pub upper: f64,
    pub lower: f64,
    pub residuals: Vec<f64>,
    pub curve: PressureCurve,
}

/// Fits pressure against `log(1/ε)` with weights `1/(stderr² + 1e-8)`.
pub fn mdim_from_curve(curve: PressureCurve) -> Result<MdimEstimate> {
    check_ladder(&curve.eps_ladder)?;
    let x: Vec<f64> = curve.eps_ladder.iter().map(|e| (1.0 / e).ln()).collect();
    let y: Vec<f64> = curve.records.iter().map(|r| r.growth).collect();
    let w: Vec<f64> = curve.records.iter().map(|r| 1.0 / (r.growth_stderr.powi(2) + 1e-8)).collect();
    let (slope, intercept, residuals) = weighted_line_fit(&x, &y, &w);
    let start = top_half_start(x.len());
    let seg: Vec<f64> = (start..x.len() - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let upper = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = seg.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MdimEstimate {
        slope,
        intercept,
        upper,
        lower,
        residuals,
        curve,
    })
}

pub fn mdim_estimate(f: &Potential, bundle: &Bundle, settings: &Settings) -> Result<MdimEstimate> {
    check_ladder(&settings.eps_ladder)?;
    mdim_from_curve(pressure_curve(f, bundle, settings)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub eps_ladder: Vec<f64>,
    pub growth: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Running maximum of `growth` as ε decreases.
    pub envelope: Vec<f64>,
    /// Sup over the ladder.
    pub value: f64,
    pub value_stderr: f64,
    pub curve: PressureCurve,
}

pub fn entropy_from_curve(curve: PressureCurve) -> EntropyEstimate {
    let mut order: Vec<usize> = (0..curve.eps_ladder.len()).collect();
    order.sort_by(|&a, &b| curve.eps_ladder[b].total_cmp(&curve.eps_ladder[a]));
    let growth: Vec<f64> = curve.records.iter().map(|r| r.growth).collect();
    let stderr: Vec<f64> = curve.records.iter().map(|r| r.growth_stderr).collect();
    let mut envelope = vec![0.0; growth.len()];
    let mut run = f64::NEG_INFINITY;
    for &i in &order {
        run = run.max(growth[i]);
        envelope[i] = run;
    }
    let best = argmax(&growth);
    EntropyEstimate {
        eps_ladder: curve.eps_ladder.clone(),
        value: growth[best],
        value_stderr: stderr[best],
        growth,
        stderr,
        envelope,
        curve,
    }
}

/// Fiber topological entropy: pressure of the zero potential, sup over the ladder.
pub fn fiber_entropy(bundle: &Bundle, settings: &Settings) -> Result<EntropyEstimate> {
    Ok(entropy_from_curve(pressure_curve(&Potential::zero(), bundle, settings)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseSystemSpec;
    use crate::fiber::{FiberKind, MetricSpec};
    use crate::rds::RandomMapSpec;

    fn circle_bundle(map: RandomMapSpec, m: usize) -> Bundle {
        Bundle::new(
            System {
                base: BaseSystemSpec::bernoulli_half(11),
                fiber: FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup()),
                map,
            },
            CloudSpec::Lattice { m },
        )
    }

    fn settings(ladder: Vec<f64>, ns: Vec<usize>, m: usize) -> Settings {
        Settings {
            eps_ladder: ladder,
            n_schedule: ns,
            m_omega: m,
            stream_offset: 0,
        }
    }

    #[test]
    fn identity_has_no_growth() {
        let b = circle_bundle(RandomMapSpec::Identity, 64);
        let r = pressure_at(0.125, &Potential::zero(), &b, &[1, 2, 3, 4], 4, 0).unwrap();
        assert_eq!(r.growth, 0.0);
        assert_eq!(r.per_n[0].mean_log, 7f64.ln());
        assert!(r.deduplicated);
    }

    #[test]
    fn constant_potential_shifts_by_c_log_inv_eps() {
        let b = circle_bundle(RandomMapSpec::DoublingCircle, 1 << 10);
        let ns = [1, 2, 3, 4];
        let p0 = pressure_at(0.125, &Potential::zero(), &b, &ns, 2, 0).unwrap();
        let pc = pressure_at(0.125, &Potential::constant(0.3), &b, &ns, 2, 0).unwrap();
        assert!((pc.growth - p0.growth - 0.3 * 8f64.ln()).abs() < 1e-12);
    }

    /// Under doubling, `d_n(x, y) > ε` iff the circle distance of `x, y` exceeds
    /// `ε·2^{1-n}`, so greedy on `i/m` packs with step `⌊mτ⌋ + 1` around the circle.
    fn doubling_count(m: usize, eps: f64, n: usize) -> f64 {
        let tau = eps * 0.5f64.powi(n as i32 - 1);
        let step = (m as f64 * tau).floor() as usize + 1;
        (m / step).max(1) as f64
    }

    fn two_point_max(ns: &[usize], logs: &[f64]) -> f64 {
        two_point_slopes(ns, logs).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn doubling_growth_matches_dyadic_counts() {
        let m = 1 << 12;
        let ns = [2, 3, 4, 5];
        let b = circle_bundle(RandomMapSpec::DoublingCircle, m);
        let r = pressure_at(1.0 / 32.0, &Potential::zero(), &b, &ns, 3, 0).unwrap();
        let oracle: Vec<f64> = ns.iter().map(|&n| doubling_count(m, 1.0 / 32.0, n).ln()).collect();
        for (s, o) in r.per_n.iter().zip(&oracle) {
            assert!((s.mean_log - o).abs() < 1e-12);
        }
        assert!((r.growth - two_point_max(&ns, &oracle)).abs() < 1e-12);
        assert!((r.growth - 2f64.ln()).abs() < 0.05, "{}", r.growth);
    }

    #[test]
    fn validation_errors_name_fields() {
        let b = circle_bundle(RandomMapSpec::Identity, 16);
        let e = mdim_estimate(&Potential::zero(), &b, &settings(vec![0.1], vec![1, 2, 3, 4], 2)).unwrap_err();
        assert!(e.to_string().contains("epsilon_ladder"));
        let e = pressure_at(0.1, &Potential::zero(), &b, &[1, 2, 3], 2, 0).unwrap_err();
        assert!(e.to_string().contains("n_schedule"));
    }

    #[test]
    fn shift_mdim_slope_is_near_one() {
        let b = Bundle::new(
            System {
                base: BaseSystemSpec::bernoulli_half(1),
                fiber: FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup()),
                map: RandomMapSpec::Shift,
            },
            CloudSpec::Lattice { m: 8255 },
        )
        .with_window_margin(2);
        let ladder: Vec<f64> = (3..8).map(|k| 0.5f64.powi(k)).collect();
        let est = mdim_estimate(&Potential::zero(), &b, &settings(ladder, vec![1, 2, 3, 4], 2)).unwrap();
        for (r, k) in est.curve.records.iter().zip(3..8) {
            assert!((r.growth - ((1u64 << k) as f64 - 1.0).ln()).abs() < 1e-9, "k={k} {}", r.growth);
        }
        assert!((est.slope - 1.0).abs() < 0.15, "{}", est.slope);
        assert!(est.upper >= est.lower);
    }

    #[test]
    fn entropy_envelope_is_monotone() {
        let m = 1 << 12;
        let ns = [2, 3, 4, 5];
        let ladder = vec![0.25, 0.125, 0.0625];
        let b = circle_bundle(RandomMapSpec::DoublingCircle, m);
        let e = fiber_entropy(&b, &settings(ladder.clone(), ns.to_vec(), 2)).unwrap();
        assert!(e.envelope.windows(2).all(|w| w[1] >= w[0]));
        let oracle = ladder
            .iter()
            .map(|&eps| {
                let logs: Vec<f64> = ns.iter().map(|&n| doubling_count(m, eps, n).ln()).collect();
                two_point_max(&ns, &logs)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((e.value - oracle).abs() < 1e-12);
    }

    #[test]
    fn assemble_is_order_insensitive() {
        let b = circle_bundle(RandomMapSpec::RandomExpanding { factors: vec![2, 3] }, 1 << 10);
        let s = settings(vec![0.125], vec![1, 2, 3, 4], 4);
        let f = Potential::zero();
        let plan = Plan::new(&f, &b, &s).unwrap();
        let mut recs: Vec<TaskRecord> = plan.keys().iter().map(|k| plan.run(*k).unwrap()).collect();
        let a = assemble(&plan, &recs).unwrap();
        recs.reverse();
        assert_eq!(assemble(&plan, &recs).unwrap(), a);
        recs.pop();
        assert!(assemble(&plan, &recs).is_err());
    }
}
