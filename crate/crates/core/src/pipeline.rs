//! End-to-end analysis, copy-synthesis and waveform-level distortion.

use rayon::prelude::*;

use crate::audio::{frame_signal, quantize, Waveform, HOP_SAMPLES, SAMPLE_RATE_HZ, WIN_SAMPLES};
use crate::contf0::{estimate_pitch_candidates, kalman_smooth, ContF0Track, PitchSettings};
use crate::cwt::{cwt_decompose, dyadic_scales, DEFAULT_SCALES, SCALE0_S};
use crate::error::{Error, Result};
use crate::features::{CwtBlock, FeatureFile, GmmRecord, HmmBlock};
use crate::gmm::{fit_gmm, FitSettings, GmmEnvelope, DEFAULT_COMPONENTS};
use crate::hmm::{reduce_restore, ObservationSequence, DEFAULT_STATES};
use crate::metrics::{mcd, McdReport};
use crate::spectral::{
    envelope_to_melcepstrum, estimate_envelope, MelCepstrum, SpectralEnvelope, DEFAULT_FFT_SIZE, MEL_ORDER, WARP_ALPHA,
};
use crate::synthesis::{apply_anchor_distortion, synthesize, SynthesisOptions};

/// Floor inside the log of the mixture gain used as the HMM energy feature.
pub const LOG_GAIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub components: usize,
    pub states: usize,
    pub scales: usize,
    pub scale0_s: f64,
    pub fft_size: usize,
    pub hop_samples: usize,
    pub win_samples: usize,
    pub pitch: PitchSettings,
    pub fit: FitSettings,
    /// Store per-frame HMM residuals in the feature file.
    pub hmm_residuals: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            components: DEFAULT_COMPONENTS,
            states: DEFAULT_STATES,
            scales: DEFAULT_SCALES,
            scale0_s: SCALE0_S,
            fft_size: DEFAULT_FFT_SIZE,
            hop_samples: HOP_SAMPLES,
            win_samples: WIN_SAMPLES,
            pitch: PitchSettings::default(),
            fit: FitSettings::default(),
            hmm_residuals: true,
        }
    }
}

/// Framing, smoothed F0 and per-frame envelopes of one waveform.
#[derive(Debug, Clone)]
pub struct SpectralAnalysis {
    pub frames: Vec<Vec<f64>>,
    pub f0: ContF0Track,
    pub envelopes: Vec<SpectralEnvelope>,
}

pub fn spectral_analysis(waveform: &Waveform, options: &AnalysisOptions) -> Result<SpectralAnalysis> {
    waveform.require_rate(SAMPLE_RATE_HZ)?;
    let (hop, win) = (options.hop_samples, options.win_samples);
    let frames = frame_signal(waveform, hop, win)?.frames;
    let observations = estimate_pitch_candidates(waveform, hop, win, &options.pitch)?;
    let f0 = kalman_smooth(
        &observations,
        hop as f64 / waveform.sample_rate_hz as f64,
        &options.pitch,
    );
    let envelopes = frames
        .par_iter()
        .zip(&f0.f0_hz)
        .map(|(frame, &f0)| estimate_envelope(frame, f0, options.fft_size, waveform.sample_rate_hz))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralAnalysis { frames, f0, envelopes })
}

/// Order-24 mel-cepstra (α = 0.42) of every analysis frame.
pub fn melcepstra(waveform: &Waveform, options: &AnalysisOptions) -> Result<Vec<MelCepstrum>> {
    Ok(spectral_analysis(waveform, options)?
        .envelopes
        .par_iter()
        .map(|e| envelope_to_melcepstrum(e, MEL_ORDER, WARP_ALPHA))
        .collect())
}

/// `[ln gain, w_1, .., w_K]` for each frame.
pub fn hmm_features(gmms: &[GmmEnvelope]) -> Vec<Vec<f64>> {
    gmms.iter()
        .map(|g| {
            std::iter::once(g.gain.max(LOG_GAIN_FLOOR).ln())
                .chain(g.components.iter().map(|c| c.weight))
                .collect()
        })
        .collect()
}

fn check_options(o: &AnalysisOptions) -> Result<()> {
    if o.components == 0 || o.states == 0 || o.scales == 0 {
        return Err(Error::invalid("components, states and scales must be positive"));
    }
    if !(o.scale0_s > 0.0) {
        return Err(Error::invalid("first CWT scale must be positive"));
    }
    Ok(())
}

/// Runs the whole analysis chain and packs the results into a feature file.
pub fn analyze(waveform: &Waveform, options: &AnalysisOptions) -> Result<FeatureFile> {
    check_options(options)?;
    let sa = spectral_analysis(waveform, options)?;
    let t = sa.frames.len();
    if t < 2 {
        return Err(Error::invalid(format!(
            "input too short: {} samples give {t} frame(s), need at least 2",
            waveform.len()
        )));
    }
    let gmms: Vec<GmmEnvelope> = sa
        .envelopes
        .par_iter()
        .map(|e| fit_gmm(e, options.components, &options.fit))
        .collect();

    // HMM on per-utterance standardized features; stored back in raw units.
    let raw = hmm_features(&gmms);
    let d = raw[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| raw.iter().map(|v| v[j]).sum::<f64>() / t as f64)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = raw.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / t as f64;
            if var.sqrt() > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardized = raw
        .iter()
        .map(|v| (0..d).map(|j| (v[j] - mean[j]) / std[j]).collect())
        .collect();
    let red = reduce_restore(&ObservationSequence::new(standardized)?, options.states)?;
    let model = &red.model;
    let means: Vec<f64> = model
        .emissions
        .iter()
        .flat_map(|e| (0..d).map(|j| e.mean[j] * std[j] + mean[j]).collect::<Vec<_>>())
        .collect();
    let vars: Vec<f32> = model
        .emissions
        .iter()
        .flat_map(|e| (0..d).map(|j| (e.var[j] * std[j] * std[j]) as f32).collect::<Vec<_>>())
        .collect();
    let means_ref = &means;
    let residuals = options.hmm_residuals.then(|| {
        red.path
            .iter()
            .zip(&raw)
            .flat_map(|(&s, v)| (0..d).map(move |j| v[j] - means_ref[s * d + j]).collect::<Vec<_>>())
            .map(|r| r as f32)
            .collect()
    });
    let hmm = HmmBlock {
        dim: d,
        transition: model.transition.iter().flatten().map(|&p| p as f32).collect(),
        means: means.iter().map(|&m| m as f32).collect(),
        vars,
        path: red.path.iter().map(|&s| s as u32).collect(),
        residuals,
    };

    let hop_s = options.hop_samples as f64 / waveform.sample_rate_hz as f64;
    let cwt = cwt_decompose(&sa.f0.log_f0(), hop_s, &dyadic_scales(options.scale0_s, options.scales))?;

    let energy = sa
        .frames
        .iter()
        .map(|f| (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64).sqrt() as f32)
        .collect();

    let file = FeatureFile {
        sample_rate_hz: waveform.sample_rate_hz,
        hop_samples: options.hop_samples as u32,
        win_samples: options.win_samples as u32,
        fft_size: options.fft_size as u32,
        n_components: options.components as u32,
        n_states: options.states as u32,
        scale0_s: options.scale0_s as f32,
        frames: gmms.iter().map(GmmRecord::from_gmm).collect(),
        hmm,
        cwt: CwtBlock::from_decomposition(&cwt),
        energy,
    };
    file.validate()?;
    Ok(file)
}

/// Distortion between two waveforms framed identically. Durations may differ
/// by at most one window; the shorter frame count is compared.
pub fn mcd_between(reference: &Waveform, test: &Waveform, options: &AnalysisOptions) -> Result<McdReport> {
    let diff = reference.len().abs_diff(test.len());
    if diff > options.win_samples {
        return Err(Error::LengthMismatch(format!(
            "durations differ by {diff} samples ({} vs {}), more than one {}-sample frame",
            reference.len(),
            test.len(),
            options.win_samples
        )));
    }
    let a = melcepstra(reference, options)?;
    let b = melcepstra(test, options)?;
    let n = a.len().min(b.len());
    mcd(&a[..n], &b[..n])
}

/// Rounds samples to the 16-bit grid exactly as a WAV write/read would.
pub fn quantize_waveform(waveform: &Waveform) -> Waveform {
    Waveform::new(
        waveform.samples.iter().map(|&s| quantize(s) as f64 / 32768.0).collect(),
        waveform.sample_rate_hz,
    )
}

#[derive(Debug, Clone)]
pub struct CopySynthesis {
    pub features: FeatureFile,
    /// 16-bit-quantized output, identical to what lands in the WAV file.
    pub output: Waveform,
    pub report: McdReport,
}

/// Analyze, optionally apply the anchor distortion, resynthesize, and score
/// the result against the input.
pub fn copy_synthesis(
    input: &Waveform,
    analysis: &AnalysisOptions,
    synthesis: &SynthesisOptions,
    anchor: bool,
) -> Result<CopySynthesis> {
    let features = analyze(input, analysis)?;
    resynthesize(input, &features, analysis, synthesis, anchor)
}

/// The synthesis half of [`copy_synthesis`] for features already extracted
/// from `input` with `analysis`.
pub fn resynthesize(
    input: &Waveform,
    features: &FeatureFile,
    analysis: &AnalysisOptions,
    synthesis: &SynthesisOptions,
    anchor: bool,
) -> Result<CopySynthesis> {
    let features = if anchor {
        apply_anchor_distortion(features)
    } else {
        features.clone()
    };
    let output = quantize_waveform(&synthesize(&features, synthesis)?);
    let report = mcd_between(input, &output, analysis)?;
    Ok(CopySynthesis {
        features,
        output,
        report,
    })
}
