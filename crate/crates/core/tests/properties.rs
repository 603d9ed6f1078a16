use gmwave_core::audio::{frame_signal, read_wav, write_wav, Waveform};
use gmwave_core::contf0::smooth_random_walk;
use gmwave_core::cwt::{cwt_decompose, cwt_reconstruct, dyadic_scales};
use gmwave_core::features::{CwtBlock, FeatureFile, GmmRecord, HmmBlock};
use gmwave_core::gmm::{fit_gmm_traced, gmm_eval, i_divergence, Component, FitSettings, GmmEnvelope, SIGMA_MIN_HZ};
use gmwave_core::hmm::{
    backward, baum_welch, forward, posterior, stationary_distribution, BaumWelchSettings, Emission, HmmModel,
    ObservationSequence, VAR_MIN,
};
use gmwave_core::metrics::{mcd, MCD_SCALE};
use gmwave_core::spectral::{
    cepstral_lifter, envelope_to_melcepstrum, estimate_envelope, MelCepstrum, SpectralEnvelope, ENVELOPE_FLOOR,
};
use gmwave_core::synthesis::apply_anchor_distortion;
use proptest::collection::vec;
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn stochastic_row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.01f64..1.0, n).prop_map(|r| {
        let s: f64 = r.iter().sum();
        r.iter().map(|v| v / s).collect()
    })
}

fn stochastic_matrix(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(stochastic_row(n), n)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn frames_index_original_samples(samples in vec(-1.0f64..1.0, 1..3000), hop in 1usize..100, extra in 0usize..300) {
        let win = hop + extra;
        let w = Waveform::new(samples.clone(), 16_000);
        let fs = frame_signal(&w, hop, win).unwrap();
        for (i, f) in fs.frames.iter().enumerate() {
            prop_assert_eq!(f.len(), win);
            if i * hop < samples.len() {
                prop_assert_eq!(f[0], samples[i * hop]);
            }
        }
        prop_assert!(fs.len() * hop + win - hop >= samples.len());
    }

    #[test]
    fn wav_reread_is_idempotent(samples in vec(-1.2f64..1.2, 0..500)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&Waveform::new(samples.clone(), 16_000), &p).unwrap();
        let once = read_wav(&p).unwrap();
        for (a, b) in once.samples.iter().zip(&samples) {
            prop_assert!((a - b.clamp(-1.0, 1.0)).abs() <= 1.0 / 32768.0);
        }
        write_wav(&once, &p).unwrap();
        prop_assert_eq!(read_wav(&p).unwrap(), once);
    }

    #[test]
    fn envelope_floored_and_finite(frame in vec(-1.0f64..1.0, 400), f0 in 40.0f64..600.0, scale in prop_oneof![Just(0.0), 1e-6f64..1.0]) {
        let frame: Vec<f64> = frame.iter().map(|v| v * scale).collect();
        let env = estimate_envelope(&frame, f0, 1024, 16_000).unwrap();
        prop_assert!(env.values.iter().all(|v| v.is_finite() && *v >= ENVELOPE_FLOOR));
        let mc = envelope_to_melcepstrum(&env, 24, 0.42);
        prop_assert!(mc.coeffs.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn lifter_idempotent(values in vec(1e-3f64..10.0, 257), order in 1usize..200) {
        let env = SpectralEnvelope::new(values, 512, 16_000);
        let once = cepstral_lifter(&env, order).unwrap();
        let twice = cepstral_lifter(&once, order).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            prop_assert!((a.ln() - b.ln()).abs() <= 1e-9);
        }
    }

    #[test]
    fn melcep_scale_covariant(values in vec(1e-3f64..10.0, 513), s in 1e-3f64..1e3) {
        let env = SpectralEnvelope::new(values.clone(), 1024, 16_000);
        let scaled = SpectralEnvelope::new(values.iter().map(|v| v * s).collect(), 1024, 16_000);
        let a = envelope_to_melcepstrum(&env, 24, 0.42);
        let b = envelope_to_melcepstrum(&scaled, 24, 0.42);
        prop_assert!((b.coeffs[0] - a.coeffs[0] - s.ln()).abs() <= 1e-9);
        for m in 1..=24 {
            prop_assert!((a.coeffs[m] - b.coeffs[m]).abs() <= 1e-9);
        }
    }

    #[test]
    fn i_divergence_nonnegative(h in vec(0.0f64..5.0, 1..64), g in vec(1e-6f64..5.0, 64)) {
        let g = &g[..h.len()];
        prop_assert!(i_divergence(&h, g) >= -1e-12);
        let pos: Vec<f64> = g.to_vec();
        prop_assert!(i_divergence(&pos, &pos).abs() <= 1e-12);
    }

    #[test]
    fn stationary_is_fixed_point(p in (1usize..=5).prop_flat_map(stochastic_matrix)) {
        let pi = stationary_distribution(&p).unwrap();
        let n = p.len();
        for j in 0..n {
            let v: f64 = (0..n).map(|i| pi[i] * p[i][j]).sum();
            prop_assert!((v - pi[j]).abs() <= 1e-12);
        }
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn posteriors_normalized_and_likelihood_consistent(
        p in (1usize..=4).prop_flat_map(stochastic_matrix),
        ys in vec(-3.0f64..3.0, 1..40),
        seed_means in vec(-2.0f64..2.0, 4),
    ) {
        let n = p.len();
        let em = (0..n).map(|i| Emission::new(vec![seed_means[i]], vec![0.5 + i as f64])).collect();
        let model = HmmModel::new(p, em).unwrap();
        let obs = ObservationSequence::scalar(&ys).unwrap();
        let f = forward(&model, &obs);
        let b = backward(&model, &obs);
        for g in posterior(&f.log_alpha, &b) {
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        // The likelihood is the same through any time slice.
        for t in 0..ys.len() {
            let via: Vec<f64> = (0..n).map(|i| f.log_alpha[t][i] + b[t][i]).collect();
            prop_assert!((gmwave_core::hmm::log_sum_exp(via) - f.log_likelihood).abs() <= 1e-9);
        }
    }

    #[test]
    fn smoother_variance_monotone(obs in vec((-1.0f64..1.0, 1e-4f64..2.0), 1..60), q in 0.0f64..0.1) {
        let z: Vec<f64> = obs.iter().map(|o| o.0).collect();
        let r: Vec<f64> = obs.iter().map(|o| o.1).collect();
        let pass = smooth_random_walk(&z, &r, q);
        for t in 0..z.len() {
            prop_assert!(pass.smoothed_var[t] <= pass.filtered_var[t] + 1e-12);
            prop_assert!(pass.filtered_var[t] <= r[t] + 1e-12);
        }
    }

    #[test]
    fn mcd_metric_properties(
        a in vec(-2.0f64..2.0, 25), b in vec(-2.0f64..2.0, 25), c in vec(-2.0f64..2.0, 25), shift in -5.0f64..5.0,
    ) {
        let mc = |v: &Vec<f64>| vec![MelCepstrum { coeffs: v.clone() }];
        let d = |x: &Vec<f64>, y: &Vec<f64>| mcd(&mc(x), &mc(y)).unwrap().mean_mcd_db;
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        let mut a0 = a.clone();
        a0[0] += shift;
        prop_assert!((d(&a0, &b) - d(&a, &b)).abs() <= 1e-12);
        prop_assert!(d(&a, &b) >= 0.0);
        let direct: f64 = MCD_SCALE * (1..25).map(|m| (a[m] - b[m]).powi(2)).sum::<f64>().sqrt();
        prop_assert!((d(&a, &b) - direct).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn cwt_residual_round_trip(signal in vec(-3.0f64..3.0, 2..400)) {
        let d = cwt_decompose(&signal, 0.005, &dyadic_scales(0.02, 10)).unwrap();
        let back = cwt_reconstruct(&d, true);
        for (a, b) in back.iter().zip(&signal) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn cwt_linear(f in vec(-1.0f64..1.0, 300), g in vec(-1.0f64..1.0, 300), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let scales = dyadic_scales(0.02, 10);
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| alpha * x + beta * y).collect();
        let df = cwt_decompose(&f, 0.005, &scales).unwrap();
        let dg = cwt_decompose(&g, 0.005, &scales).unwrap();
        let dc = cwt_decompose(&combo, 0.005, &scales).unwrap();
        for i in 0..scales.len() {
            for b in 0..300 {
                let expect = alpha * df.coefficients[i][b] + beta * dg.coefficients[i][b];
                prop_assert!((dc.coefficients[i][b] - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cwt_shift_covariant(signal in vec(-1.0f64..1.0, 2000), shift in 1usize..50) {
        // Interior: far from either edge at the scales compared.
        let scales = dyadic_scales(0.02, 4);
        let a = cwt_decompose(&signal, 0.005, &scales).unwrap();
        let shifted: Vec<f64> = (0..signal.len()).map(|i| signal[(i + signal.len() - shift) % signal.len()]).collect();
        let b = cwt_decompose(&shifted, 0.005, &scales).unwrap();
        let mean_shift = b.mean_level - a.mean_level;
        prop_assert!(mean_shift.abs() < 1e-12);
        let margin = (8.0 * 0.16 / 0.005) as usize + shift;
        for i in 0..scales.len() {
            for x in margin..signal.len() - margin {
                prop_assert!((b.coefficients[i][x] - a.coefficients[i][x - shift]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn gmm_fit_invariants(
        comps in vec((0.05f64..1.0, 200.0f64..7800.0, 60.0f64..600.0), 1..5),
        noise in vec(0.8f64..1.25, 513),
        k in 1usize..6,
    ) {
        let truth = GmmEnvelope {
            gain: 1.0,
            components: comps.iter().map(|&(weight, mean_hz, sigma_hz)| Component { weight, mean_hz, sigma_hz }).collect(),
        };
        let grid = SpectralEnvelope::floor(1024, 16_000).freqs();
        let values: Vec<f64> = gmm_eval(&truth, &grid).iter().zip(&noise).map(|(v, n)| v * n).collect();
        let env = SpectralEnvelope::new(values, 1024, 16_000);
        let settings = FitSettings { max_iters: 60, tol: 1e-9 };
        let fit = fit_gmm_traced(&env, k, &settings);
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        for c in &fit.params.components {
            prop_assert!(c.sigma_hz >= SIGMA_MIN_HZ && (0.0..=8000.0).contains(&c.mean_hz) && c.weight >= 0.0);
        }
        prop_assert!(gmm_eval(&fit.params, &grid).iter().all(|v| *v >= 0.0));
        prop_assert_eq!(fit.params, fit_gmm_traced(&env, k, &settings).params);
    }

    #[test]
    fn baum_welch_keeps_rows_stochastic(ys in vec(-3.0f64..3.0, 10..80), n in 1usize..4) {
        let obs = ObservationSequence::scalar(&ys).unwrap();
        let seed = gmwave_core::hmm::seed_model(&obs, n).unwrap();
        let fit = baum_welch(&obs, &seed, &BaumWelchSettings { max_iters: 15, tol: 0.0 }).unwrap();
        for row in &fit.model.transition {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
        for e in &fit.model.emissions {
            prop_assert!(e.var.iter().all(|v| *v >= VAR_MIN));
        }
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn feature_file_round_trip(
        t in 0usize..6, k in 1usize..5, n in 1usize..4, m in 0usize..4, residuals in any::<bool>(),
        bits in vec(any::<u32>(), 400),
    ) {
        let mut it = bits.into_iter().cycle();
        let mut f = move || f32::from_bits(it.next().unwrap());
        let d = 1 + k;
        let file = FeatureFile {
            sample_rate_hz: 16_000,
            hop_samples: 80,
            win_samples: 400,
            fft_size: 1024,
            n_components: k as u32,
            n_states: n as u32,
            scale0_s: f(),
            frames: (0..t).map(|_| GmmRecord { gain: f(), components: (0..k).map(|_| [f(), f(), f()]).collect() }).collect(),
            hmm: HmmBlock {
                dim: d,
                transition: (0..n * n).map(|_| f()).collect(),
                means: (0..n * d).map(|_| f()).collect(),
                vars: (0..n * d).map(|_| f()).collect(),
                path: (0..t).map(|i| (i % n) as u32).collect(),
                residuals: residuals.then(|| (0..t * d).map(|_| f()).collect()),
            },
            cwt: CwtBlock {
                scales: (0..m).map(|_| f()).collect(),
                coefficients: (0..m * t).map(|_| f()).collect(),
                residual: (0..t).map(|_| f()).collect(),
                mean_level: f(),
            },
            energy: (0..t).map(|_| f()).collect(),
        };
        let bytes = file.encode().unwrap();
        let back = FeatureFile::decode(&bytes).unwrap();
        // Bit-level comparison (NaN payloads included).
        prop_assert_eq!(back.encode().unwrap(), bytes);
        prop_assert_eq!(format!("{back:?}"), format!("{file:?}"));
    }

    #[test]
    fn anchor_is_idempotent(
        frames in vec(vec((0.0f32..1.0, 0.0f32..8000.0, 10.0f32..800.0), 16), 1..4),
    ) {
        let t = frames.len();
        let file = FeatureFile {
            sample_rate_hz: 16_000,
            hop_samples: 80,
            win_samples: 400,
            fft_size: 1024,
            n_components: 16,
            n_states: 1,
            scale0_s: 0.02,
            frames: frames
                .iter()
                .map(|cs| GmmRecord { gain: 1.0, components: cs.iter().map(|&(w, m, s)| [w, m, s]).collect() })
                .collect(),
            hmm: HmmBlock { dim: 17, transition: vec![1.0], means: vec![0.0; 17], vars: vec![1.0; 17], path: vec![0; t], residuals: None },
            cwt: CwtBlock { scales: vec![], coefficients: vec![], residual: vec![0.0; t], mean_level: 0.0 },
            energy: vec![0.0; t],
        };
        let once = apply_anchor_distortion(&file);
        prop_assert_eq!(&apply_anchor_distortion(&once), &once);
        for fr in &once.frames {
            prop_assert!(fr.components[8..].iter().all(|c| *c == fr.components[8]));
            prop_assert!(fr.components.windows(2).all(|w| w[0][1] <= w[1][1]));
        }
    }
}
