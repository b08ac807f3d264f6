//! Sequential vs parallel evaluation of the hot loops. With the `parallel`
//! feature off, the "parallel" variants fall back to plain iteration.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rmdim::base::{make_path, BaseSystemSpec, OmegaSampler};
use rmdim::estimation::{Plan, TaskKey};
use rmdim::exec;
use rmdim::experiments::reference_config;
use rmdim::fiber::{random_cloud, FiberKind, FiberSpaceSpec, MetricSpec};
use rmdim::packing::{greedy_on_table, seeded_order};
use rmdim::rds::{OrbitTable, Potential, RandomMapSpec};

fn pressure_tasks(c: &mut Criterion) {
    let mut cfg = reference_config("shift_random_rotation").unwrap();
    cfg.m_omega = 16;
    cfg.epsilon_ladder.truncate(3);
    let (bundle, settings) = (cfg.bundle(), cfg.settings());
    let f = Potential::zero();
    let plan = Plan::new(&f, &bundle, &settings).unwrap();
    let keys: Vec<TaskKey> = plan.keys();
    let mut g = c.benchmark_group("pressure_tasks");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| exec::seq_map_range(keys.len(), |i| plan.run(keys[i]).unwrap()))
    });
    g.bench_function("parallel", |b| b.iter(|| exec::par_map(&keys, |k| plan.run(*k).unwrap())));
    g.finish();
}

fn orbit_tables(c: &mut Criterion) {
    let fiber = FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 6, MetricSpec::sup());
    let cloud = random_cloud(&fiber, 20_000, 3).unwrap();
    let w = OmegaSampler::new(&BaseSystemSpec::bernoulli_half(1)).unwrap().sample(0);
    let path = make_path(&w, 9).unwrap();
    let map = RandomMapSpec::ShiftRandomRotation { scale: 1.0 };
    let mut g = c.benchmark_group("orbit_table");
    for threads in [1usize, 4] {
        g.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| exec::with_threads(Some(t), || OrbitTable::from_cloud(&map, &path, 8, &cloud, 1e6).unwrap()))
        });
    }
    g.finish();
}

fn greedy(c: &mut Criterion) {
    let fiber = FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 4, MetricSpec::sup());
    let cloud = random_cloud(&fiber, 8_000, 5).unwrap();
    let w = OmegaSampler::new(&BaseSystemSpec::bernoulli_half(1)).unwrap().sample(0);
    let path = make_path(&w, 5).unwrap();
    let table = OrbitTable::from_cloud(&RandomMapSpec::Shift, &path, 4, &cloud, 1e6).unwrap();
    let order = seeded_order(table.len(), 1);
    c.bench_function("greedy_on_table/8000", |b| b.iter(|| greedy_on_table(&table, 0.1, &order)));
}

criterion_group!(benches, pressure_tasks, orbit_tables, greedy);
criterion_main!(benches);
