use criterion::{black_box, criterion_group, criterion_main, Criterion};

use spinphoton_core::analysis::build_table;
use spinphoton_core::defect::DefectParams;
use spinphoton_core::detection::MeasureBasis;
use spinphoton_core::dynamics::{run_sequence_exact, TrajectoryPlan};
use spinphoton_core::experiment::{simulate_fast, EntanglementSetup};
use spinphoton_core::sequence::ReadoutBasis;

fn engines(c: &mut Criterion) {
    let params = DefectParams::v1();
    let setup = EntanglementSetup::full_noise(&params);
    let seq = setup.sequence(ReadoutBasis::SuperPlus).unwrap();

    let mut g = c.benchmark_group("engine");
    g.sample_size(10);
    g.bench_function("exact entanglement sequence", |b| {
        b.iter(|| run_sequence_exact(black_box(&seq), &params).unwrap())
    });
    let plan = TrajectoryPlan::new(&seq, &params).unwrap();
    let mut i = 0u64;
    g.bench_function("one trajectory", |b| {
        b.iter(|| {
            i += 1;
            plan.run(7, i).unwrap()
        })
    });
    g.finish();
}

fn analysis(c: &mut Criterion) {
    let setup = EntanglementSetup::full_noise(&DefectParams::v1());
    let contexts = [ReadoutBasis::EigenUp, ReadoutBasis::EigenDown];
    let sim = simulate_fast(&setup, &contexts, 200_000, 1).unwrap();

    let mut g = c.benchmark_group("analysis");
    g.sample_size(10);
    g.bench_function("coincidence table, 4e5 runs", |b| {
        b.iter(|| build_table(black_box(&sim.clicks), MeasureBasis::Eigen, setup.eta, &sim.runs).unwrap())
    });
    g.finish();
}

criterion_group!(benches, engines, analysis);
criterion_main!(benches);
