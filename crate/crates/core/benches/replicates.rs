use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hcmrf::experiments::{consistency_experiment, GraphFamily, SamplerSettings};
use hcmrf::{Execution, Preset};
use std::hint::black_box;

// Replicate-level parallelism: each replicate samples, fits and scores
// independently, so the two modes must agree and only wall time differs.
fn bench_replicates(c: &mut Criterion) {
    let mut group = c.benchmark_group("consistency_replicates");
    group.sample_size(10);
    let family = GraphFamily::RandomRegular { d: 3 };
    let settings = SamplerSettings { burn_in: Some(50) };
    for &n in &[128usize, 512] {
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, &n| {
                b.iter(|| {
                    consistency_experiment(
                        &family,
                        Preset::Hardcore,
                        &[0.5],
                        black_box(&[n]),
                        16,
                        &settings,
                        7,
                        exec,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_replicates);
criterion_main!(benches);
