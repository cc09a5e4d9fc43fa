use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use paramspec::dephasing::{simulate_coherence, CoherenceSim, DDSequence};
use paramspec::device::{FluxDrive, TransmonParams};
use paramspec::hz_to_rad;
use paramspec::noisegen::NoiseSpec;
use paramspec::par::Execution;

fn trials(c: &mut Criterion) {
    let p = TransmonParams::reference();
    let drive = FluxDrive::at_sweet_spot(0.6, hz_to_rad(500e6), 0.5e-6).unwrap();
    let noise = NoiseSpec::two_peak_reference();
    let zero = NoiseSpec::zero();
    let dd = DDSequence::xy8();
    let mut group = c.benchmark_group("simulate_coherence");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let sim = CoherenceSim {
            n_trials: 256,
            dt: None,
            n_times: 16,
            seed: 1,
            exec,
        };
        group.bench_with_input(BenchmarkId::new(name, sim.n_trials), &sim, |b, sim| {
            b.iter(|| simulate_coherence(&p, &drive, &dd, &noise, &zero, sim).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, trials);
criterion_main!(benches);
