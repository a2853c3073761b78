use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pargrappa::bgrappa::{assess_hyperparameters, icm_map, reconstruct_frame, IcmConfig};
use pargrappa::grappa::{interpolate_missing, CalibrationSystem, KernelSpec, WeightSet, WeightSharing};
use pargrappa::{ft2, ComplexImage};
use pargrappa_bench::short_run;

fn fft(c: &mut Criterion) {
    let (e, _) = short_run();
    let img: ComplexImage = e.truth_rest.clone();
    c.bench_function("ft2 96x96", |b| b.iter(|| ft2(black_box(&img))));
}

fn grappa(c: &mut Criterion) {
    let (e, sub) = short_run();
    let kernel = KernelSpec::default();
    let placements = pargrappa::grappa::grappa_placements(&e.mask, &kernel);
    let first: Vec<_> = placements.iter().take(1).collect();
    let sys = CalibrationSystem::from_placements(&e.calib, &first).unwrap();
    c.bench_function("estimate_weights one location", |b| {
        b.iter(|| pargrappa::grappa::estimate_weights(black_box(&sys)))
    });
    let weights = WeightSet::estimate(&e.calib, &e.mask, &kernel, WeightSharing::PerLocation).unwrap();
    c.bench_function("grappa interpolate frame", |b| {
        b.iter(|| interpolate_missing(sub.frame(0), &e.mask, &weights).unwrap())
    });
}

fn bgrappa(c: &mut Criterion) {
    let (e, sub) = short_run();
    let prior = assess_hyperparameters(&e.calib, &e.mask, &KernelSpec::default(), WeightSharing::PerLocation).unwrap();
    let config = IcmConfig::default();
    let group = &prior.groups()[0];
    let (r, col) = group.targets[0];
    let f_e: Vec<_> = (0..sub.n_coils()).map(|k| sub.data()[[0, k, r, col]]).collect();
    let f_e = pargrappa::IsoVector::from_complex(&f_e);
    let hyper = prior.hyperparameters(0);
    c.bench_function("icm_map one group", |b| b.iter(|| icm_map(black_box(&f_e), &hyper, &config).unwrap()));
    let mut g = c.benchmark_group("bgrappa");
    g.sample_size(10);
    g.bench_function("frame 96x96x8", |b| b.iter(|| reconstruct_frame(sub.frame(0), &prior, &config).unwrap()));
    g.finish();
}

criterion_group!(benches, fft, grappa, bgrappa);
criterion_main!(benches);
