//! `estimate` and `mmdim` runs: per-task records on disk, deterministic outputs,
//! and a manifest written last.
//!
//! Layout of an output directory:
//!
//! ```text
//! out/
//!   config.json        canonical config
//!   tasks/*.json       one record per task, reused when the config hash matches
//!   pressure.csv|json  per-(ε, n) table
//!   summary.json       result, config hash and seed table
//!   manifest.json      timestamps, versions, digests; absent until the run finishes
//! ```
//!
//! Everything except the manifest is a pure function of the config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::{
    assemble, entropy_from_curve, mdim_from_curve, Plan, PressureCurve, TaskKey, TaskRecord,
};
use crate::exec;
use crate::measure::{f_estimate, rank_estimates, FEstimate};

use super::config::{RunConfig, Task};
use super::registry::expected;

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub format: Format,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            threads: None,
            format: Format::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub task: String,
    pub master_seed: u64,
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedTask {
    pub task: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub command: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub versions: Value,
    pub threads: Option<usize>,
    pub seeds: Vec<SeedEntry>,
    pub resumed_tasks: usize,
    pub failed_tasks: Vec<FailedTask>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// Every listed file exists with the recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<bool> {
        for f in &self.files {
            match fs::read(dir.join(&f.path)) {
                Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Value,
    pub manifest: RunManifest,
}

/// A run that finished with failed tasks; the manifest lists them.
fn failed(manifest: &RunManifest) -> Error {
    let first = &manifest.failed_tasks[0];
    Error::Unsupported(format!(
        "{} task(s) failed, first {}: {}",
        manifest.failed_tasks.len(),
        first.task,
        first.error
    ))
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn versions() -> Value {
    json!({
        "rmdim": env!("CARGO_PKG_VERSION"),
        "format": FORMAT_VERSION,
        "parallel": exec::is_parallel(),
    })
}

#[derive(Serialize, Deserialize)]
struct Stored<T> {
    config_hash: String,
    record: T,
}

/// Per-task record files under `out/tasks`.
struct TaskStore {
    dir: PathBuf,
    hash: String,
}

impl TaskStore {
    fn open(out: &Path, hash: &str) -> Result<Self> {
        let dir = out.join("tasks");
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hash: hash.to_string(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.json"))
    }

    fn load<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Option<T> {
        let bytes = fs::read(self.path(name)).ok()?;
        let s: Stored<T> = serde_json::from_slice(&bytes).ok()?;
        (s.config_hash == self.hash).then_some(s.record)
    }

    fn save<T: Serialize>(&self, name: &str, record: &T) -> Result<()> {
        let s = Stored {
            config_hash: self.hash.clone(),
            record,
        };
        write_atomic(&self.path(name), &pretty(&s)?)
    }
}

fn task_name(key: TaskKey) -> String {
    format!("e{:02}_w{:04}", key.eps_index, key.omega_index)
}

struct Prepared {
    hash: String,
    started: u128,
}

fn prepare(config: &RunConfig, opts: &RunOptions) -> Result<Prepared> {
    config.validate()?;
    let started = now_ms();
    fs::create_dir_all(&opts.out)?;
    match fs::remove_file(opts.out.join(MANIFEST)) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    let hash = config.hash();
    write_atomic(&opts.out.join("config.json"), &pretty(&serde_json::from_str::<Value>(&config.canonical_json())?)?)?;
    Ok(Prepared { hash, started })
}

/// Runs `f` over the tasks not already on disk; returns records in input order
/// and the failures.
fn run_tasks<K, T, F>(store: &TaskStore, keys: &[K], name: impl Fn(&K) -> String + Sync, f: F) -> Result<(Vec<Option<T>>, usize, Vec<FailedTask>)>
where
    K: Sync,
    T: Serialize + for<'de> Deserialize<'de> + Send,
    F: Fn(&K) -> Result<T> + Sync,
{
    let cached: Vec<Option<T>> = keys.iter().map(|k| store.load(&name(k))).collect();
    let resumed = cached.iter().filter(|c| c.is_some()).count();
    let todo: Vec<usize> = (0..keys.len()).filter(|&i| cached[i].is_none()).collect();
    let fresh = exec::par_map(&todo, |&i| -> std::result::Result<T, String> {
        let k = &keys[i];
        let r = f(k).map_err(|e| e.to_string())?;
        store.save(&name(k), &r).map_err(|e| e.to_string())?;
        Ok(r)
    });
    let mut out = cached;
    let mut failures = Vec::new();
    for (i, r) in todo.into_iter().zip(fresh) {
        match r {
            Ok(v) => out[i] = Some(v),
            Err(error) => failures.push(FailedTask {
                task: name(&keys[i]),
                error,
            }),
        }
    }
    Ok((out, resumed, failures))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    opts: &RunOptions,
    command: &str,
    prep: &Prepared,
    seeds: Vec<SeedEntry>,
    resumed: usize,
    failed_tasks: Vec<FailedTask>,
    outputs: &[String],
) -> Result<RunManifest> {
    let mut names: Vec<String> = outputs.to_vec();
    names.push("config.json".into());
    let mut task_files: Vec<String> = fs::read_dir(opts.out.join("tasks"))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json"))
        .map(|n| format!("tasks/{n}"))
        .collect();
    task_files.sort();
    names.extend(task_files);
    let files = names
        .into_iter()
        .map(|path| {
            let bytes = fs::read(opts.out.join(&path))?;
            Ok(FileEntry {
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
                path,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        config_hash: prep.hash.clone(),
        command: command.into(),
        started_unix_ms: prep.started,
        finished_unix_ms: now_ms(),
        versions: versions(),
        threads: opts.threads,
        seeds,
        resumed_tasks: resumed,
        failed_tasks,
        files,
    };
    write_atomic(&opts.out.join(MANIFEST), &pretty(&manifest)?)?;
    Ok(manifest)
}

fn pressure_csv(curve: &PressureCurve) -> String {
    let mut s = String::from(
        "eps,log_inv_eps,n,mean_log_pn,stderr_log_pn,mean_rate,stderr_rate,growth,growth_stderr,growth_lower,growth_ols,inside,inside_stderr,samples\n",
    );
    for r in &curve.records {
        for st in &r.per_n {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.eps,
                (1.0 / r.eps).ln(),
                st.n,
                st.mean_log,
                st.stderr_log,
                st.mean_rate,
                st.stderr_rate,
                r.growth,
                r.growth_stderr,
                r.growth_lower,
                r.growth_ols,
                r.inside,
                r.inside_stderr,
                r.samples
            );
        }
    }
    s
}

fn result_value(task: Task, curve: &PressureCurve) -> Result<Value> {
    Ok(match task {
        Task::Pressure => json!({ "growth": curve.records.iter().map(|r| r.growth).collect::<Vec<_>>() }),
        Task::Entropy => {
            let e = entropy_from_curve(curve.clone());
            json!({
                "value": e.value,
                "stderr": e.value_stderr,
                "growth": e.growth,
                "envelope": e.envelope,
            })
        }
        Task::Mdim => {
            let m = mdim_from_curve(curve.clone())?;
            json!({
                "slope": m.slope,
                "intercept": m.intercept,
                "upper": m.upper,
                "lower": m.lower,
                "residuals": m.residuals,
            })
        }
    })
}

/// `estimate`: the pressure curve of the config, reduced per its task.
pub fn run_estimate(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    exec::with_threads(opts.threads, || estimate_inner(config, opts))
}

fn estimate_inner(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let prep = prepare(config, opts)?;
    let bundle = config.bundle();
    let settings = config.settings();
    let f = config.potential();
    let plan = Plan::new(&f, &bundle, &settings)?;
    let keys = plan.keys();
    let store = TaskStore::open(&opts.out, &prep.hash)?;
    let (records, resumed, failures) = run_tasks(&store, &keys, |k| task_name(*k), |k| plan.run(*k))?;
    let seeds: Vec<SeedEntry> = keys
        .iter()
        .map(|k| SeedEntry {
            task: task_name(*k),
            master_seed: config.master_seed(),
            stream: plan.stream(*k),
        })
        .collect();
    if !failures.is_empty() {
        let m = finish(opts, "estimate", &prep, seeds, resumed, failures, &[])?;
        return Err(failed(&m));
    }
    let records: Vec<TaskRecord> = records.into_iter().flatten().collect();
    let curve = assemble(&plan, &records)?;

    let table = match opts.format {
        Format::Csv => {
            write_atomic(&opts.out.join("pressure.csv"), pressure_csv(&curve).as_bytes())?;
            "pressure.csv"
        }
        Format::Json => {
            write_atomic(&opts.out.join("pressure.json"), &pretty(&curve)?)?;
            "pressure.json"
        }
    };
    let summary = json!({
        "name": config.name,
        "task": config.task,
        "config_hash": prep.hash,
        "master_seed": config.master_seed(),
        "deduplicated": plan.deduplicated,
        "seeds": seeds,
        "result": result_value(config.task, &curve)?,
        "expected": expected(&config.name),
    });
    write_atomic(&opts.out.join("summary.json"), &pretty(&summary)?)?;
    let manifest = finish(
        opts,
        "estimate",
        &prep,
        seeds,
        resumed,
        Vec::new(),
        &[table.to_string(), "summary.json".to_string()],
    )?;
    Ok(RunOutcome { summary, manifest })
}

fn trace_csv(names: &[String], estimates: &[FEstimate]) -> String {
    let k = estimates.first().map_or(0, |e| e.argmin.len());
    let mut s = String::from("measure,evaluation");
    (0..k).for_each(|i| {
        let _ = write!(s, ",lambda_{i}");
    });
    s.push_str(",objective,best\n");
    for (name, e) in names.iter().zip(estimates) {
        for (i, t) in e.trace.iter().enumerate() {
            let _ = write!(s, "{name},{i}");
            t.x.iter().for_each(|v| {
                let _ = write!(s, ",{v}");
            });
            let _ = writeln!(s, ",{},{}", t.value, t.best);
        }
    }
    s
}

/// `mmdim`: `F̂(μ, d)` for every configured measure and their ranking.
pub fn run_mmdim(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    exec::with_threads(opts.threads, || mmdim_inner(config, opts))
}

fn mmdim_inner(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mm = config
        .mmdim
        .as_ref()
        .ok_or_else(|| Error::validation("mmdim", "an mmdim run needs an \"mmdim\" section"))?;
    let prep = prepare(config, opts)?;
    let bundle = config.bundle();
    let fs_settings = config.f_settings().expect("mmdim section present");
    let store = TaskStore::open(&opts.out, &prep.hash)?;
    let idx: Vec<usize> = (0..mm.measures.len()).collect();
    let name = |i: &usize| format!("measure_{:02}", i);
    // Measures run one after another; each search parallelizes internally.
    let (records, resumed, failures) = run_tasks(&store, &idx, name, |&i| {
        f_estimate(&mm.measures[i].measure, &mm.family, &bundle, &fs_settings, None)
    })?;
    let seeds: Vec<SeedEntry> = idx
        .iter()
        .map(|i| SeedEntry {
            task: name(i),
            master_seed: config.master_seed(),
            stream: mm.sample_seed,
        })
        .collect();
    if !failures.is_empty() {
        let m = finish(opts, "mmdim", &prep, seeds, resumed, failures, &[])?;
        return Err(failed(&m));
    }
    let estimates: Vec<FEstimate> = records.into_iter().flatten().collect();
    let names: Vec<String> = mm.measures.iter().map(|m| m.name.clone()).collect();
    let search = rank_estimates(estimates.clone())?;
    let per_measure: Vec<Value> = names
        .iter()
        .zip(&estimates)
        .map(|(n, e)| {
            json!({
                "measure": n,
                "value": e.value,
                "argmin": e.argmin,
                "mdim_zero": e.mdim_zero,
                "gap": e.gap(),
                "mdim_at_argmin": e.mdim_at_argmin,
                "integral_at_argmin": e.integral_at_argmin,
                "basis_integrals": e.basis_integrals,
                "below_mdim": e.value <= e.mdim_zero + 1e-9,
                "evaluations": e.trace.len(),
            })
        })
        .collect();
    let ranking: Vec<&str> = search.ranking.iter().map(|r| names[r.index].as_str()).collect();

    let table = match opts.format {
        Format::Csv => {
            write_atomic(&opts.out.join("mmdim_trace.csv"), trace_csv(&names, &estimates).as_bytes())?;
            "mmdim_trace.csv"
        }
        Format::Json => {
            let v: Vec<Value> = names
                .iter()
                .zip(&estimates)
                .map(|(n, e)| json!({ "measure": n, "estimate": e }))
                .collect();
            write_atomic(&opts.out.join("mmdim.json"), &pretty(&v)?)?;
            "mmdim.json"
        }
    };
    let summary = json!({
        "name": config.name,
        "task": "mmdim",
        "config_hash": prep.hash,
        "master_seed": config.master_seed(),
        "sample_seed": mm.sample_seed,
        "seeds": seeds,
        "result": {
            "mdim": search.mdim_zero,
            "max_f": search.mdim_zero - search.gap,
            "achieved_gap": search.gap,
            "ranking": ranking,
            "measures": per_measure,
        },
    });
    write_atomic(&opts.out.join("summary.json"), &pretty(&summary)?)?;
    let manifest = finish(
        opts,
        "mmdim",
        &prep,
        seeds,
        resumed,
        Vec::new(),
        &[table.to_string(), "summary.json".to_string()],
    )?;
    Ok(RunOutcome { summary, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::registry::reference_config;

    fn read(dir: &Path, name: &str) -> Vec<u8> {
        fs::read(dir.join(name)).unwrap()
    }

    #[test]
    fn identity_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = reference_config("identity").unwrap();
        let out = run_estimate(&c, &RunOptions::new(dir.path())).unwrap();
        let slope = out.summary["result"]["slope"].as_f64().unwrap();
        assert!(slope.abs() < 0.05, "{slope}");
        assert_eq!(out.summary["config_hash"], c.hash());
        let m: RunManifest = serde_json::from_slice(&read(dir.path(), MANIFEST)).unwrap();
        assert!(m.verify(dir.path()).unwrap());
        assert!(m.files.iter().any(|f| f.path == "pressure.csv"));
        assert_eq!(m.seeds.len(), 4);
    }

    #[test]
    fn rerun_resumes_and_reproduces_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let c = reference_config("identity").unwrap();
        let opts = RunOptions::new(dir.path());
        run_estimate(&c, &opts).unwrap();
        let csv = read(dir.path(), "pressure.csv");
        let summary = read(dir.path(), "summary.json");
        let again = run_estimate(&c, &opts).unwrap();
        assert_eq!(again.manifest.resumed_tasks, 4);
        assert_eq!(read(dir.path(), "pressure.csv"), csv);
        assert_eq!(read(dir.path(), "summary.json"), summary);
    }

    #[test]
    fn stale_records_are_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let c = reference_config("identity").unwrap();
        let opts = RunOptions::new(dir.path());
        run_estimate(&c, &opts).unwrap();
        let other = run_estimate(&c.clone().with_seed(5), &opts).unwrap();
        assert_eq!(other.manifest.resumed_tasks, 0);
    }

    #[test]
    fn invalid_config_leaves_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = reference_config("identity").unwrap();
        c.epsilon_ladder = vec![0.25];
        assert!(matches!(run_estimate(&c, &RunOptions::new(dir.path())), Err(Error::Validation { .. })));
        assert!(!dir.path().join(MANIFEST).exists());
    }

    #[test]
    fn json_format_writes_the_curve() {
        let dir = tempfile::tempdir().unwrap();
        let c = reference_config("identity").unwrap();
        let mut opts = RunOptions::new(dir.path());
        opts.format = Format::Json;
        run_estimate(&c, &opts).unwrap();
        let curve: PressureCurve = serde_json::from_slice(&read(dir.path(), "pressure.json")).unwrap();
        assert_eq!(curve.records.len(), 4);
    }
}
