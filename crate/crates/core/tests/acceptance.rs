//! Acceptance criteria 1-10. Runs as a plain binary (`harness = false`) so each
//! criterion prints one PASS/FAIL line; exits nonzero if any fails.
//!
//! Run alone with `cargo test -p rmdim --test acceptance --release`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rmdim::base::{make_path, OmegaSampler};
use rmdim::estimation::{fiber_entropy, mdim_estimate, Plan, TaskKey};
use rmdim::exec;
use rmdim::experiments::{reference_config, run_estimate, run_mmdim, run_suite, Format, RunConfig, RunOptions, MANIFEST};
use rmdim::fiber::{CandidateCloud, FiberKind, FiberSpaceSpec, MetricSpec};
use rmdim::packing::{canonical_order, exact_separated_product, greedy_naive, greedy_separated, Members};
use rmdim::rds::{OrbitTable, Potential, RandomMapSpec};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn suite(name: &str, trials: Option<usize>) -> Outcome {
    let r = run_suite(name, trials, 20240917).map_err(e)?;
    let summary = format!("{} checks over {} cases, {} violations", r.checks, r.cases, r.violations.len());
    ensure(r.passed(), || format!("{summary}; first {:?}", r.violations.first()))?;
    Ok(summary)
}

fn c1_packing() -> Outcome {
    suite("packing-oracles", None)
}

/// Greedy count of the dyadic circle lattice `i/m` under doubling: after `n`
/// steps two points conflict iff their circle distance is at most `ε 2^{1-n}`,
/// so the scan keeps every `(⌊m τ⌋ + 1)`-th point.
fn doubling_count(m: usize, eps: f64, n: usize) -> f64 {
    let tau = eps * 0.5f64.powi(n as i32 - 1);
    (m / ((m as f64 * tau).floor() as usize + 1)) as f64
}

fn c2_doubling() -> Outcome {
    let c = reference_config("doubling").map_err(e)?;
    let (bundle, settings) = (c.bundle(), c.settings());
    let f = Potential::zero();
    let plan = Plan::new(&f, &bundle, &settings).map_err(e)?;
    let m = 1usize << 18;
    for (ei, &eps) in settings.eps_ladder.iter().enumerate() {
        let rec = plan.run(TaskKey { eps_index: ei, omega_index: 0 }).map_err(e)?;
        for (i, &n) in settings.n_schedule.iter().enumerate() {
            let want = doubling_count(m, eps, n);
            ensure((rec.log_count[i].exp() - want).abs() < 1e-6 * want, || {
                format!("eps={eps} n={n}: count {} vs oracle {want}", rec.log_count[i].exp())
            })?;
        }
    }
    let est = fiber_entropy(&bundle, &settings).map_err(e)?;
    let at = est.growth[1];
    let ln2 = 2f64.ln();
    ensure((at - ln2).abs() <= 0.05, || format!("growth at 1/32 = {at}"))?;
    ensure((est.value - ln2).abs() <= 0.05, || format!("entropy = {}", est.value))?;
    Ok(format!("h(1/32) = {at:.4}, sup = {:.4}, counts match the dyadic oracle", est.value))
}

fn c3_expanding() -> Outcome {
    let c = reference_config("random_expanding").map_err(e)?;
    let settings = c.settings();
    let map = c.map.clone();
    let fiber = c.fiber;
    // Oracle: pairwise brute force on 4096 points, and the closed-form count
    // m / (⌊m ε / A⌋ + 1) with A the product of the first n-1 factors.
    let sampler = OmegaSampler::new(&c.base).map_err(e)?;
    let RandomMapSpec::RandomExpanding { factors } = &map else {
        return Err("reference is not a random expanding map".into());
    };
    let eps = 1.0 / 16.0;
    for w in 0..8u64 {
        let path = make_path(&sampler.sample(w), 7).map_err(e)?;
        for n in 1..=6 {
            let a: f64 = (0..n - 1).map(|j| factors[path.symbol(j, 0) as usize % factors.len()] as f64).product();
            for m in [4096usize, 1 << 19] {
                let cloud = CandidateCloud::product_lattice(&fiber, m).map_err(e)?;
                let set = greedy_separated(&cloud, &map, &path, n, eps, None).map_err(e)?;
                let formula = (m / ((m as f64 * eps / a).floor() as usize + 1)) as f64;
                ensure(set.cardinality() == formula, || format!("ω={w} n={n} m={m}: {} vs {formula}", set.cardinality()))?;
                if m == 4096 {
                    let table = OrbitTable::from_cloud(&map, &path, n, &cloud, 1e5).map_err(e)?;
                    let brute = greedy_naive(&table, eps, &canonical_order(table.len())).len() as f64;
                    ensure(brute == formula, || format!("ω={w} n={n}: brute {brute} vs {formula}"))?;
                }
            }
        }
    }
    let est = fiber_entropy(&c.bundle(), &settings).map_err(e)?;
    let target = 0.5 * (2f64.ln() + 3f64.ln());
    ensure((est.value - target).abs() <= 0.07, || format!("entropy = {} vs {target}", est.value))?;
    Ok(format!(
        "h = {:.4} ± {:.4} over {} ω (target {target:.4}); counts match brute force",
        est.value, est.value_stderr, settings.m_omega
    ))
}

/// Exact shift counts: coordinate `b` of symbol `k` is seen with weight
/// `2^{-(k - min(k, n-1))}` over `n` steps, so axis `b` must separate by more
/// than `ε / w`.
fn shift_oracle(fiber: &FiberSpaceSpec, m: usize, eps: f64, n: usize) -> Result<f64, String> {
    let circle = FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup());
    let mut log = 0.0;
    for b in 0..fiber.dim() {
        let k = b / fiber.symbol_dim;
        let w = 0.5f64.powi((k - k.min(n - 1)) as i32);
        let o = exact_separated_product(&circle, eps / w, m).map_err(e)?;
        log += o.count.ln();
    }
    Ok(log)
}

fn c4_shift() -> Outcome {
    let mut notes = Vec::new();
    for (name, d) in [("torus_shift", 1.0), ("torus_shift_d2", 2.0)] {
        let c = reference_config(name).map_err(e)?;
        let (bundle, settings) = (c.bundle(), c.settings());
        let f = Potential::zero();
        let plan = Plan::new(&f, &bundle, &settings).map_err(e)?;
        for (ei, &eps) in settings.eps_ladder.iter().enumerate() {
            let rec = plan.run(TaskKey { eps_index: ei, omega_index: 0 }).map_err(e)?;
            let fiber = bundle.fiber_for(eps, settings.n_max()).map_err(e)?;
            for (i, &n) in settings.n_schedule.iter().enumerate() {
                let want = shift_oracle(&fiber, 8255, eps, n)?;
                ensure((rec.log_count[i] - want).abs() < 1e-9, || {
                    format!("{name} eps={eps} n={n}: log count {} vs {want}", rec.log_count[i])
                })?;
            }
        }
        let est = mdim_estimate(&f, &bundle, &settings).map_err(e)?;
        ensure((est.slope - d).abs() <= 0.15 * d, || format!("{name}: slope {} vs {d}", est.slope))?;
        notes.push(format!("D={d}: slope {:.4}", est.slope));
    }
    Ok(format!("{}; counts match the product oracle", notes.join(", ")))
}

fn axis_sizes(m: &Members) -> Vec<usize> {
    match m {
        Members::Product { axes } => axes.iter().map(|a| a.len()).collect(),
        Members::Explicit { points } => vec![points.len()],
    }
}

fn c5_isometry() -> Outcome {
    let shift = reference_config("torus_shift").map_err(e)?;
    let rot = reference_config("shift_random_rotation").map_err(e)?;
    let settings = rot.settings();
    let (bs, br) = (shift.bundle(), rot.bundle());
    let sampler = OmegaSampler::new(&rot.base).map_err(e)?;
    let mut compared = 0;
    for &eps in &settings.eps_ladder {
        let cloud = br.cloud_for(eps, settings.n_max()).map_err(e)?;
        ensure(bs.fiber_for(eps, settings.n_max()).map_err(e)? == *cloud.spec(), || "fibers differ".into())?;
        for w in 0..settings.m_omega as u64 {
            let path = make_path(&sampler.sample(w), settings.n_max() + 1).map_err(e)?;
            for &n in &settings.n_schedule {
                let a = greedy_separated(&cloud, &bs.system.map, &path, n, eps, None).map_err(e)?;
                let b = greedy_separated(&cloud, &br.system.map, &path, n, eps, None).map_err(e)?;
                ensure(axis_sizes(&a.members) == axis_sizes(&b.members), || {
                    format!("eps={eps} ω={w} n={n}: {:?} vs {:?}", axis_sizes(&a.members), axis_sizes(&b.members))
                })?;
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} (ω, n, ε) counts identical over {} ω-paths", settings.m_omega))
}

fn c6_properties() -> Outcome {
    suite("pressure-properties", Some(200))
}

fn c7_inequalities() -> Outcome {
    suite("inequalities-24-25", Some(100))
}

fn c8_kingman() -> Outcome {
    suite("kingman", Some(100))
}

fn c9_measures() -> Outcome {
    suite("measure-bounds", None)
}

fn outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for sub in ["", "tasks"] {
        for entry in fs::read_dir(dir.join(sub)).map_err(e)? {
            let entry = entry.map_err(e)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_file() && name != MANIFEST {
                files.push((format!("{sub}/{name}"), fs::read(entry.path()).map_err(e)?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn c10_reproducible() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let mut rot = reference_config("shift_random_rotation").map_err(e)?;
    rot.epsilon_ladder.truncate(4);
    let mut mm = reference_config("torus_shift_mmdim").map_err(e)?;
    if let Some(m) = mm.mmdim.as_mut() {
        m.search.budget = 16;
        m.m_samples = 400;
    }
    let runs: [(&str, &RunConfig, bool); 2] = [("estimate", &rot, false), ("mmdim", &mm, true)];
    let mut files = 0;
    for (label, cfg, is_mm) in runs {
        for format in [Format::Csv, Format::Json] {
            let mut seen = Vec::new();
            for threads in [1usize, 8] {
                let out = tmp.path().join(format!("{label}_{format:?}_{threads}"));
                let opts = RunOptions {
                    out: out.clone(),
                    threads: Some(threads),
                    format,
                };
                if is_mm {
                    run_mmdim(cfg, &opts).map_err(e)?;
                } else {
                    run_estimate(cfg, &opts).map_err(e)?;
                }
                seen.push(outputs(&out)?);
            }
            ensure(seen[0] == seen[1], || format!("{label} {format:?}: outputs differ between 1 and 8 threads"))?;
            files += seen[0].len();
        }
    }
    Ok(format!("{files} files byte-identical at 1 vs 8 threads (parallel build: {})", exec::is_parallel()))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "exact packing oracles", budget: Some(Duration::from_secs(10)), run: c1_packing },
        Criterion { id: 2, name: "doubling entropy = log 2", budget: Some(Duration::from_secs(60)), run: c2_doubling },
        Criterion { id: 3, name: "random {2,3} entropy", budget: Some(Duration::from_secs(300)), run: c3_expanding },
        Criterion { id: 4, name: "torus shift mdim = D", budget: Some(Duration::from_secs(600)), run: c4_shift },
        Criterion { id: 5, name: "isometry neutrality", budget: None, run: c5_isometry },
        Criterion { id: 6, name: "finite-n pressure properties", budget: None, run: c6_properties },
        Criterion { id: 7, name: "packing vs partition vs cover", budget: None, run: c7_inequalities },
        Criterion { id: 8, name: "Kingman subadditivity", budget: None, run: c8_kingman },
        Criterion { id: 9, name: "measure bounds", budget: None, run: c9_measures },
        Criterion { id: 10, name: "thread-count reproducibility", budget: None, run: c10_reproducible },
    ];
    let only: Vec<u32> = std::env::var("RMDIM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t = Instant::now();
        let mut r = (c.run)();
        let el = t.elapsed();
        if let (Ok(msg), Some(b)) = (&r, c.budget) {
            if el > b {
                r = Err(format!("{msg}; over the {:?} budget", b));
            }
        }
        match r {
            Ok(msg) => println!("criterion {:>2} PASS  {} [{:.1}s]: {msg}", c.id, c.name, el.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {} [{:.1}s]: {msg}", c.id, c.name, el.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
