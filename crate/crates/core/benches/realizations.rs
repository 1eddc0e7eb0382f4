use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use molcomm::ber::monte_carlo_ber;
use molcomm::detect::{equal_weights, WeightedSumSpec};
use molcomm::sim::Simulator;
use molcomm::{Environment, Execution, SimConfig, TransmissionSpec};

fn realizations(c: &mut Criterion) {
    let env = Environment::base_case();
    let tx = TransmissionSpec::uniform(1000, 200e-6, 10, 10);
    let detector = WeightedSumSpec::new(equal_weights(10), 4.0).unwrap();
    let mut group = c.benchmark_group("monte_carlo_ber");
    group.sample_size(10);
    for count in [16u64, 64] {
        let cfg = SimConfig { realization_count: count, ..SimConfig::default() };
        let sim = Simulator::new(&env, &tx, &cfg).unwrap();
        for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
            group.bench_with_input(BenchmarkId::new(name, count), &exec, |b, &exec| {
                b.iter(|| monte_carlo_ber(&sim, &detector, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, realizations);
criterion_main!(benches);
