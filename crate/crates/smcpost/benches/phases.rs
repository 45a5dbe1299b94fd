//! Phase benchmarks comparing the sequential and rayon execution paths.
//!
//! Run with `cargo bench -p smcpost`; the parallel variants only exist when
//! the default `parallel` feature is enabled.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use smcpost::exec::ExecMode;
use smcpost::models::ConjugateNormal;
use smcpost::mutation::{m_phase, MPhaseRule, MutationSampler, StepsizeState};
use smcpost::particle::{c_phase_step, init_particles};
use smcpost::rng::{stream_for, Phase, StreamKey};

const GROUPS: usize = 16;
const PER_GROUP: usize = 512;

fn modes() -> Vec<(&'static str, ExecMode)> {
    let mut out = vec![("sequential", ExecMode::Sequential)];
    #[cfg(feature = "parallel")]
    out.push(("parallel", ExecMode::Parallel));
    out
}

fn bench_c_phase(c: &mut Criterion) {
    let model = ConjugateNormal::new(0.0, 10.0, 1.0);
    let mut group = c.benchmark_group("c_phase_step");
    for (label, mode) in modes() {
        let base = init_particles(&model, GROUPS, PER_GROUP, 7, mode).unwrap();
        group.bench_function(label, |b| {
            b.iter_batched(
                || base.clone(),
                |mut sys| c_phase_step(&mut sys, &model, 0.4, mode).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_m_phase_sweep(c: &mut Criterion) {
    let model = ConjugateNormal::new(0.0, 10.0, 1.0);
    let mut data_stream = stream_for(StreamKey::new(3, 0, 0, Phase::Aux));
    let data: Vec<f64> = (0..100).map(|_| 1.0 + data_stream.normal()).collect();
    let rule = MPhaseRule::Deterministic {
        rbar: 1,
        kappa: 1,
        d1: 0.5,
        d2: 0.2,
    };
    let mut group = c.benchmark_group("metropolis_sweep");
    for (label, mode) in modes() {
        let mut base = init_particles(&model, GROUPS, PER_GROUP, 7, mode).unwrap();
        for y in &data {
            c_phase_step(&mut base, &model, *y, mode).unwrap();
        }
        group.bench_function(label, |b| {
            b.iter_batched(
                || (base.clone(), StepsizeState::default()),
                |(mut sys, mut step)| {
                    m_phase(
                        &mut sys,
                        &model,
                        &data,
                        rule,
                        0.3,
                        false,
                        &mut step,
                        MutationSampler::RandomWalk,
                        7,
                        mode,
                    )
                    .unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_c_phase, bench_m_phase_sweep);
criterion_main!(benches);
