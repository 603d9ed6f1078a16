//! Source-filter resynthesis: pulse/noise excitation shaped by per-frame
//! zero-phase magnitude envelopes and overlap-added.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::audio::Waveform;
use crate::contf0::ContF0Track;
use crate::cwt::cwt_reconstruct;
use crate::dsp::{fft, hann, ifft, irfft, rfft};
use crate::error::{Error, Result};
use crate::features::FeatureFile;
use crate::gmm::{gmm_eval, Component, GmmEnvelope};
use crate::spectral::{SpectralEnvelope, F0_MAX_HZ, F0_MIN_HZ};

pub const DEFAULT_SPLIT_HZ: f64 = 4000.0;
pub const DEFAULT_SEED: u64 = 42;
pub const PEAK_LIMIT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPlan {
    pub f0_track: ContF0Track,
    pub voicing_split_hz: f64,
    pub noise_seed: u64,
    /// Target RMS per frame.
    pub frame_gains: Vec<f64>,
    pub hop_samples: usize,
    pub win_samples: usize,
}

/// The two excitation bands, kept apart so each can be filtered separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    /// Pulse train below the split.
    pub voiced: Vec<f64>,
    /// Gaussian noise above the split.
    pub unvoiced: Vec<f64>,
}

impl Excitation {
    pub fn mixed(&self) -> Vec<f64> {
        self.voiced.iter().zip(&self.unvoiced).map(|(v, u)| v + u).collect()
    }
}

/// Linear interpolation of per-frame values at every sample, with frame `t`
/// centred at `t * hop + win / 2` and constant extension past the ends.
pub fn frames_to_samples(values: &[f64], hop: usize, win: usize, n_samples: usize) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0; n_samples];
    }
    let centre0 = win as f64 / 2.0;
    let last = values.len() - 1;
    (0..n_samples)
        .map(|n| {
            let pos = (n as f64 - centre0) / hop as f64;
            if pos <= 0.0 {
                values[0]
            } else if pos >= last as f64 {
                values[last]
            } else {
                let i = pos.floor() as usize;
                let frac = pos - i as f64;
                values[i] + frac * (values[i + 1] - values[i])
            }
        })
        .collect()
}

/// Sample indices of a unit-phase pulse train driven by a per-sample F0.
///
/// The phase advances by `f0(n) / fs` each sample; a pulse is emitted at the
/// first sample whose accumulated phase reaches the next integer. The first
/// pulse is at sample 0.
pub fn pulse_positions(f0_per_sample: &[f64], sample_rate: u32) -> Vec<usize> {
    // Absorbs rounding in the running sum so integer periods stay exact.
    const SNAP: f64 = 1e-9;
    let fs = sample_rate as f64;
    let mut out = Vec::new();
    let mut phase = 0.0f64;
    let mut next = 0.0f64;
    for (n, &f0) in f0_per_sample.iter().enumerate() {
        if n > 0 {
            phase += f0 / fs;
        }
        if phase + SNAP >= next {
            out.push(n);
            next = (phase + SNAP).floor() + 1.0;
        }
    }
    out
}

/// Splits a signal into complementary bands with a zero-phase brick-wall mask.
/// Returns `(below, above)`; their sum is the input.
pub fn split_bands(signal: &[f64], split_hz: f64, sample_rate: u32) -> (Vec<f64>, Vec<f64>) {
    let n = signal.len();
    let nyquist = sample_rate as f64 / 2.0;
    if n == 0 || split_hz >= nyquist {
        return (signal.to_vec(), vec![0.0; n]);
    }
    if split_hz <= 0.0 {
        return (vec![0.0; n], signal.to_vec());
    }
    let mut spec: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft(&mut spec);
    let bin_hz = sample_rate as f64 / n as f64;
    let mut low = spec.clone();
    for (k, v) in low.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * bin_hz;
        if f >= split_hz {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    ifft(&mut low);
    let below: Vec<f64> = low.iter().map(|c| c.re / n as f64).collect();
    let above = signal.iter().zip(&below).map(|(x, b)| x - b).collect();
    (below, above)
}

/// Pulse train below the split, seeded white Gaussian noise above it, both at
/// unit power before the per-sample gain is applied.
pub fn build_excitation(plan: &ExcitationPlan, n_samples: usize, sample_rate: u32) -> Excitation {
    let (hop, win) = (plan.hop_samples, plan.win_samples);
    let f0 = frames_to_samples(&plan.f0_track.f0_hz, hop, win, n_samples);
    let gain = frames_to_samples(&plan.frame_gains, hop, win, n_samples);
    let fs = sample_rate as f64;

    let mut pulses = vec![0.0; n_samples];
    for p in pulse_positions(&f0, sample_rate) {
        pulses[p] = (fs / f0[p]).sqrt() * gain[p];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.noise_seed);
    let noise: Vec<f64> = gain
        .iter()
        .map(|g| {
            let z: f64 = StandardNormal.sample(&mut rng);
            g * z
        })
        .collect();

    let (voiced, _) = split_bands(&pulses, plan.voicing_split_hz, sample_rate);
    let (_, unvoiced) = split_bands(&noise, plan.voicing_split_hz, sample_rate);
    Excitation { voiced, unvoiced }
}

/// Zero-phase filtering of `excitation` by one envelope per frame, with
/// Hann-windowed overlap-add.
///
/// The excitation must span exactly `n_frames * hop + win - hop` samples.
/// Frames overhanging either end reuse the nearest envelope so every sample
/// has full window coverage.
pub fn envelope_filter(excitation: &[f64], envelopes: &[SpectralEnvelope], hop: usize, win: usize) -> Result<Waveform> {
    if envelopes.is_empty() {
        return Err(Error::invalid("no envelopes to filter with"));
    }
    if hop == 0 || win < hop {
        return Err(Error::invalid(format!("bad framing: hop {hop}, win {win}")));
    }
    let len = excitation.len();
    let t = envelopes.len();
    let expected_len = t * hop + win - hop;
    if len != expected_len {
        return Err(Error::FrameCountMismatch {
            expected: t,
            found: crate::audio::frame_count(len, hop, win),
        });
    }
    let fft_size = envelopes[0].fft_size;
    let sample_rate = envelopes[0].sample_rate_hz;
    if envelopes
        .iter()
        .any(|e| e.fft_size != fft_size || e.sample_rate_hz != sample_rate)
    {
        return Err(Error::invalid("envelopes differ in fft size or sample rate"));
    }
    if fft_size < win {
        return Err(Error::invalid("fft size shorter than window"));
    }
    let window = hann(win);
    let offset = (fft_size - win) / 2;
    let first = -(((win - 1) / hop) as isize);
    let last = ((len - 1) / hop) as isize;

    let filtered: Vec<Vec<f64>> = (first..=last)
        .into_par_iter()
        .map(|i| {
            let start = i * hop as isize;
            let mut buf = vec![0.0; fft_size];
            for (j, w) in window.iter().enumerate() {
                let n = start + j as isize;
                if n >= 0 && (n as usize) < len {
                    buf[offset + j] = excitation[n as usize] * w;
                }
            }
            let env = &envelopes[i.clamp(0, t as isize - 1) as usize];
            let mut spec = rfft(&buf, fft_size);
            for (s, &h) in spec.iter_mut().zip(&env.values) {
                *s *= h;
            }
            irfft(&spec)
        })
        .collect();

    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    for (idx, frame) in filtered.iter().enumerate() {
        let start = (first + idx as isize) * hop as isize - offset as isize;
        for (p, &y) in frame.iter().enumerate() {
            let n = start + p as isize;
            if n >= 0 && (n as usize) < len {
                out[n as usize] += y;
            }
        }
        let wstart = start + offset as isize;
        for (j, w) in window.iter().enumerate() {
            let n = wstart + j as isize;
            if n >= 0 && (n as usize) < len {
                norm[n as usize] += w;
            }
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        *o /= w;
    }
    Ok(Waveform::new(out, sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub seed: u64,
    pub voicing_split_hz: f64,
    /// Add the stored CWT residual to the reconstructed log-F0.
    pub f0_residual: bool,
    /// Use HMM state means instead of the per-frame mixtures.
    pub hmm_restore: bool,
    /// With `hmm_restore`, add the stored per-frame HMM residuals back.
    pub hmm_residual: bool,
    /// Multiplies the reconstructed F0.
    pub f0_scale: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            seed: DEFAULT_SEED,
            voicing_split_hz: DEFAULT_SPLIT_HZ,
            f0_residual: true,
            hmm_restore: false,
            hmm_residual: false,
            f0_scale: 1.0,
        }
    }
}

/// Per-frame mixtures to synthesize from: stored, or rebuilt from the HMM.
///
/// HMM restoration takes log-gain and weights from the decoded state's
/// emission mean; means and widths are the per-state averages over the frames
/// decoded into that state.
pub fn frame_mixtures(features: &FeatureFile, options: &SynthesisOptions) -> Vec<GmmEnvelope> {
    let direct: Vec<GmmEnvelope> = features.frames.iter().map(|r| r.to_gmm()).collect();
    if !options.hmm_restore {
        return direct;
    }
    let hmm = &features.hmm;
    let k = features.n_components as usize;
    let n = features.n_states as usize;
    let mut shape = vec![vec![(0.0, 0.0); k]; n];
    let mut count = vec![0usize; n];
    for (g, &s) in direct.iter().zip(&hmm.path) {
        count[s as usize] += 1;
        for (acc, c) in shape[s as usize].iter_mut().zip(&g.components) {
            acc.0 += c.mean_hz;
            acc.1 += c.sigma_hz;
        }
    }
    hmm.path
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let s = s as usize;
            let mut v: Vec<f64> = hmm.mean(s).iter().map(|&x| x as f64).collect();
            if options.hmm_residual {
                if let Some(r) = hmm.residual(t) {
                    for (x, e) in v.iter_mut().zip(r) {
                        *x += *e as f64;
                    }
                }
            }
            let c = count[s] as f64;
            GmmEnvelope {
                gain: v[0].exp(),
                components: (0..k)
                    .map(|i| Component {
                        weight: v[1 + i].max(0.0),
                        mean_hz: shape[s][i].0 / c,
                        sigma_hz: shape[s][i].1 / c,
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Mixture evaluated on the synthesis grid and scaled to unit mean power.
/// Silent mixtures stay at the floor.
pub fn synthesis_envelope(params: &GmmEnvelope, fft_size: usize, sample_rate: u32) -> SpectralEnvelope {
    let grid = SpectralEnvelope::floor(fft_size, sample_rate);
    let env = SpectralEnvelope::new(gmm_eval(params, &grid.freqs()), fft_size, sample_rate);
    if env.is_silent() {
        return env;
    }
    let last = env.values.len() - 1;
    let power: f64 = env
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 || i == last { 0.5 * v * v } else { v * v })
        .sum::<f64>()
        / last as f64;
    let scale = power.sqrt().recip();
    SpectralEnvelope::new(env.values.iter().map(|v| v * scale).collect(), fft_size, sample_rate)
}

/// Reconstructed F0 track, clamped to the analysis search range.
pub fn synthesis_f0(features: &FeatureFile, options: &SynthesisOptions) -> ContF0Track {
    let hop_s = features.frame_hop_s();
    let log_f0 = cwt_reconstruct(&features.cwt.to_decomposition(hop_s), options.f0_residual);
    let f0_hz: Vec<f64> = log_f0
        .iter()
        .map(|z| (z.exp() * options.f0_scale).clamp(F0_MIN_HZ, F0_MAX_HZ))
        .collect();
    ContF0Track {
        variance: vec![0.0; f0_hz.len()],
        f0_hz,
        frame_hop_s: hop_s,
    }
}

/// Full resynthesis. Output length is `n_frames * hop + win - hop` samples and
/// the result is attenuated (never amplified) to peak at most 0.95.
pub fn synthesize(features: &FeatureFile, options: &SynthesisOptions) -> Result<Waveform> {
    features.validate()?;
    let t = features.n_frames();
    if t == 0 {
        return Err(Error::invalid("feature file has no frames"));
    }
    let sr = features.sample_rate_hz;
    let nyquist = sr as f64 / 2.0;
    if !(0.0..=nyquist).contains(&options.voicing_split_hz) {
        return Err(Error::invalid(format!(
            "voicing split {} Hz outside [0, {nyquist}]",
            options.voicing_split_hz
        )));
    }
    if !(options.f0_scale > 0.0) {
        return Err(Error::invalid("F0 scale must be positive"));
    }
    let hop = features.hop_samples as usize;
    let win = features.win_samples as usize;
    let fft_size = features.fft_size as usize;
    let envelopes: Vec<SpectralEnvelope> = frame_mixtures(features, options)
        .par_iter()
        .map(|g| synthesis_envelope(g, fft_size, sr))
        .collect();
    let plan = ExcitationPlan {
        f0_track: synthesis_f0(features, options),
        voicing_split_hz: options.voicing_split_hz,
        noise_seed: options.seed,
        frame_gains: features.energy.iter().map(|&e| e as f64).collect(),
        hop_samples: hop,
        win_samples: win,
    };
    let len = t * hop + win - hop;
    let exc = build_excitation(&plan, len, sr);
    let voiced = envelope_filter(&exc.voiced, &envelopes, hop, win)?;
    let unvoiced = envelope_filter(&exc.unvoiced, &envelopes, hop, win)?;
    // Re-mask: frame-wise filtering leaks each band slightly across the split.
    let (low, _) = split_bands(&voiced.samples, options.voicing_split_hz, sr);
    let (_, high) = split_bands(&unvoiced.samples, options.voicing_split_hz, sr);
    let mut out: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let s = PEAK_LIMIT / peak;
        out.iter_mut().for_each(|v| *v *= s);
    }
    Ok(Waveform::new(out, sr))
}

/// 1-based inclusive component range that the anchor condition averages.
pub fn anchor_range(k: usize) -> (usize, usize) {
    match k {
        16 => (9, 16),
        k if k < 16 => (k.div_ceil(2), k),
        k => (k / 2 + 1, k),
    }
}

/// Degraded reference: in every frame, components in [`anchor_range`] (by
/// ascending mean) have weight, mean and width replaced by their averages.
pub fn apply_anchor_distortion(features: &FeatureFile) -> FeatureFile {
    let mut out = features.clone();
    let k = features.n_components as usize;
    if k == 0 {
        return out;
    }
    let (lo, hi) = anchor_range(k);
    let count = (hi - lo + 1) as f64;
    for frame in &mut out.frames {
        frame.components.sort_by(|a, b| a[1].total_cmp(&b[1]));
        let upper = &mut frame.components[lo - 1..hi];
        let mut avg = [0.0f64; 3];
        for c in upper.iter() {
            for (a, v) in avg.iter_mut().zip(c) {
                *a += *v as f64;
            }
        }
        let avg = avg.map(|a| (a / count) as f32);
        let uniform = upper.iter().all(|c| *c == upper[0]);
        if !uniform {
            upper.iter_mut().for_each(|c| *c = avg);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn plan(f0: Vec<f64>, split: f64, seed: u64) -> ExcitationPlan {
        let t = f0.len();
        ExcitationPlan {
            f0_track: ContF0Track {
                f0_hz: f0,
                variance: vec![0.0; t],
                frame_hop_s: 0.005,
            },
            voicing_split_hz: split,
            noise_seed: seed,
            frame_gains: vec![1.0; t],
            hop_samples: 80,
            win_samples: 400,
        }
    }

    #[test]
    fn constant_f0_pulses_every_period() {
        let p = plan(vec![100.0; 50], 8000.0, 1);
        let n = 50 * 80 + 320;
        let exc = build_excitation(&p, n, 16_000);
        assert!(exc.unvoiced.iter().all(|&v| v == 0.0));
        let at: Vec<usize> = (0..n).filter(|&i| exc.voiced[i] != 0.0).collect();
        assert_eq!(at, (0..n).step_by(160).collect::<Vec<_>>());
        assert!((exc.voiced[0] - 160f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_integer_period_does_not_drift() {
        let f0 = vec![16_000.0 / 137.5; 16_000];
        let pos = pulse_positions(&f0, 16_000);
        for (i, &p) in pos.iter().enumerate() {
            let ideal = i as f64 * 137.5;
            assert!((p as f64 - ideal).abs() <= 1.0, "pulse {i} at {p}, ideal {ideal}");
        }
    }

    #[test]
    fn ramp_spacing_tracks_instantaneous_period() {
        let frames = 200;
        let f0: Vec<f64> = (0..frames)
            .map(|t| 100.0 + 100.0 * t as f64 / (frames - 1) as f64)
            .collect();
        let n = frames * 80 + 320;
        let per_sample = frames_to_samples(&f0, 80, 400, n);
        let pos = pulse_positions(&per_sample, 16_000);
        assert!(pos.len() > 100);
        // Oracle: the phase integral between consecutive pulses is one cycle.
        for w in pos.windows(2) {
            let cycles: f64 = per_sample[w[0] + 1..=w[1]].iter().map(|f| f / 16_000.0).sum();
            assert!((cycles - 1.0).abs() * 16_000.0 / per_sample[w[1]] <= 1.0);
            let span = &per_sample[w[0] + 1..=w[1]];
            let period = 16_000.0 * span.len() as f64 / span.iter().sum::<f64>();
            assert!(((w[1] - w[0]) as f64 - period).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn zero_split_is_seeded_noise() {
        let p = plan(vec![120.0; 20], 0.0, 7);
        let a = build_excitation(&p, 20 * 80 + 320, 16_000);
        let b = build_excitation(&p, 20 * 80 + 320, 16_000);
        assert!(a.voiced.iter().all(|&v| v == 0.0));
        assert_eq!(a, b);
        let c = build_excitation(&plan(vec![120.0; 20], 0.0, 8), 20 * 80 + 320, 16_000);
        assert_ne!(a.unvoiced, c.unvoiced);
        assert!((rms(&a.unvoiced) - 1.0).abs() < 0.1);
    }

    #[test]
    fn mixed_excitation_has_unit_power() {
        let p = plan(vec![125.0; 400], 4000.0, 3);
        let exc = build_excitation(&p, 400 * 80 + 320, 16_000);
        assert!((rms(&exc.mixed()) - 1.0).abs() < 0.05);
    }

    #[test]
    fn bands_are_complementary() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let (lo, hi) = split_bands(&x, 3000.0, 16_000);
        for ((a, b), v) in lo.iter().zip(&hi).zip(&x) {
            assert!((a + b - v).abs() < 1e-12);
        }
        let (lo2, hi2) = split_bands(&lo, 3000.0, 16_000);
        assert!(lo2.iter().zip(&lo).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(hi2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn unity_envelopes_reproduce_excitation() {
        let t = 60;
        let exc = build_excitation(&plan(vec![110.0; t], 4000.0, 5), t * 80 + 320, 16_000).mixed();
        let unity = vec![SpectralEnvelope::new(vec![1.0; 513], 1024, 16_000); t];
        let out = envelope_filter(&exc, &unity, 80, 400).unwrap();
        let err: Vec<f64> = out.samples.iter().zip(&exc).map(|(a, b)| a - b).collect();
        assert!(rms(&err) / rms(&exc) <= 1e-6);
    }

    #[test]
    fn floored_envelopes_annihilate() {
        let t = 30;
        let exc = build_excitation(&plan(vec![110.0; t], 4000.0, 5), t * 80 + 320, 16_000).mixed();
        let floor = vec![SpectralEnvelope::floor(1024, 16_000); t];
        let out = envelope_filter(&exc, &floor, 80, 400).unwrap();
        assert!(20.0 * (rms(&out.samples) / rms(&exc)).log10() <= -120.0);
    }

    #[test]
    fn resonance_sets_centroid() {
        let t = 200;
        let exc = build_excitation(&plan(vec![100.0; t], 0.0, 11), t * 80 + 320, 16_000).mixed();
        let grid = SpectralEnvelope::floor(1024, 16_000).freqs();
        let values = grid
            .iter()
            .map(|f| (-(f - 1000.0) * (f - 1000.0) / (2.0 * 80.0 * 80.0)).exp())
            .collect();
        let env = vec![SpectralEnvelope::new(values, 1024, 16_000); t];
        let out = envelope_filter(&exc, &env, 80, 400).unwrap();
        let spec = rfft(&out.samples, out.len().next_power_of_two());
        let bin = 16_000.0 / out.len().next_power_of_two() as f64;
        let (num, den) = spec.iter().enumerate().fold((0.0, 0.0), |(n, d), (k, c)| {
            let p = c.norm_sqr();
            (n + p * k as f64 * bin, d + p)
        });
        assert!((num / den - 1000.0).abs() <= 100.0, "centroid {}", num / den);
    }

    #[test]
    fn frame_count_mismatch_rejected() {
        let unity = vec![SpectralEnvelope::new(vec![1.0; 513], 1024, 16_000); 10];
        let err = envelope_filter(&vec![0.0; 999], &unity, 80, 400).unwrap_err();
        assert!(matches!(err, Error::FrameCountMismatch { expected: 10, .. }));
    }

    #[test]
    fn anchor_ranges() {
        assert_eq!(anchor_range(16), (9, 16));
        assert_eq!(anchor_range(8), (4, 8));
        assert_eq!(anchor_range(3), (2, 3));
        assert_eq!(anchor_range(20), (11, 20));
    }
}
