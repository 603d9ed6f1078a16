use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gmwave_bench::fixture;
use gmwave_core::audio::Waveform;
use gmwave_core::cwt::{cwt_decompose, dyadic_scales, SCALE0_S};
use gmwave_core::gmm::{fit_gmm, FitSettings};
use gmwave_core::hmm::{backward, forward, seed_model, ObservationSequence};
use gmwave_core::pipeline::{analyze, hmm_features, spectral_analysis, AnalysisOptions};
use gmwave_core::read_wav;
use gmwave_core::synthesis::{synthesize, SynthesisOptions};

fn voice() -> Waveform {
    read_wav(fixture("mid_voice")).expect("fixture")
}

fn gmm(c: &mut Criterion) {
    let sa = spectral_analysis(&voice(), &AnalysisOptions::default()).unwrap();
    let env = sa
        .envelopes
        .iter()
        .max_by(|a, b| a.values[20].total_cmp(&b.values[20]))
        .unwrap()
        .clone();
    c.bench_function("fit_gmm k=16", |b| {
        b.iter(|| fit_gmm(black_box(&env), 16, &FitSettings::default()))
    });
}

fn hmm(c: &mut Criterion) {
    let ys: Vec<f64> = (0..500)
        .map(|t| ((t / 37) % 2) as f64 * 4.0 + (t as f64 * 0.7).sin())
        .collect();
    let obs = ObservationSequence::scalar(&ys).unwrap();
    let model = seed_model(&obs, 2).unwrap();
    c.bench_function("forward+backward T=500", |b| {
        b.iter(|| (forward(&model, black_box(&obs)), backward(&model, black_box(&obs))))
    });
    let envelopes = spectral_analysis(&voice(), &AnalysisOptions::default())
        .unwrap()
        .envelopes;
    let gmms: Vec<_> = envelopes
        .iter()
        .take(200)
        .map(|e| fit_gmm(e, 16, &FitSettings::default()))
        .collect();
    let features = ObservationSequence::new(hmm_features(&gmms)).unwrap();
    let model = seed_model(&features, 2).unwrap();
    c.bench_function("forward d=17 T=200", |b| {
        b.iter(|| forward(&model, black_box(&features)))
    });
}

fn cwt(c: &mut Criterion) {
    let s: Vec<f64> = (0..2048)
        .map(|i| 5.0 + 0.2 * (i as f64 * 0.01).sin() + 0.05 * (i as f64 * 0.13).cos())
        .collect();
    let scales = dyadic_scales(SCALE0_S, 10);
    c.bench_function("cwt 2048 frames x 10 scales", |b| {
        b.iter(|| cwt_decompose(black_box(&s), 0.005, &scales))
    });
}

fn pipeline(c: &mut Criterion) {
    let full = voice();
    let clip = Waveform::new(full.samples[..16_000].to_vec(), 16_000);
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("analyze 1 s", |b| {
        b.iter(|| analyze(black_box(&clip), &AnalysisOptions::default()))
    });
    let features = analyze(&clip, &AnalysisOptions::default()).unwrap();
    group.bench_function("synthesize 1 s", |b| {
        b.iter(|| synthesize(black_box(&features), &SynthesisOptions::default()))
    });
    group.finish();
}

criterion_group!(benches, gmm, hmm, cwt, pipeline);
criterion_main!(benches);
