//! Sequential against rayon-parallel evaluation on a default phantom.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use brachynav_core::case::{generate_phantom, PatientCase, PhantomSpec};
use brachynav_core::dose::{ContiguitySettings, DoseEngine, SourceModel};
use brachynav_core::dv::{evaluate_plan, EvalContext, PointCount};
use brachynav_core::optimizer::{optimize, OptimizationSettings};
use brachynav_core::Parallelism;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn setup() -> (PatientCase, Vec<f64>) {
    let case = generate_phantom(&PhantomSpec::default()).expect("phantom");
    let times = case
        .dwell_mask
        .effective_max_flat()
        .iter()
        .map(|&m| if m > 0.0 { 6.0 } else { 0.0 })
        .collect();
    (case, times)
}

fn dose(c: &mut Criterion) {
    let (case, times) = setup();
    let ctx = EvalContext::for_case(&case, PointCount::Optimization).unwrap();
    let mut g = c.benchmark_group("plan_evaluation");
    for (name, mode) in MODES {
        let engine = DoseEngine::new(SourceModel::default(), mode);
        g.bench_function(BenchmarkId::new("dv_table", name), |b| {
            b.iter(|| evaluate_plan(&engine, &case, &times, &ctx).unwrap())
        });
        g.bench_function(BenchmarkId::new("contiguity", name), |b| {
            b.iter(|| engine.check_contiguity(&case, &times, &ContiguitySettings::default()).unwrap())
        });
    }
    g.finish();
}

fn optimizer(c: &mut Criterion) {
    let (case, _) = setup();
    let settings = OptimizationSettings {
        evaluation_budget: 240,
        population_size: 40,
        ..OptimizationSettings::default()
    };
    let mut g = c.benchmark_group("optimize");
    g.sample_size(10);
    for (name, mode) in MODES {
        let engine = DoseEngine::new(SourceModel::default(), mode);
        g.bench_function(BenchmarkId::new("budget_240", name), |b| {
            b.iter(|| optimize(&engine, &case, &settings).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, dose, optimizer);
criterion_main!(benches);
