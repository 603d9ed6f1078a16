//! Per-frame spectral envelopes, cepstral liftering and mel-cepstra.
//!
//! Envelopes are linear magnitudes on the `fft_size / 2 + 1` bin grid and are
//! floored at [`ENVELOPE_FLOOR`] so that logarithms and ratios stay finite.

use crate::dsp;
use crate::error::{Error, Result};

pub const ENVELOPE_FLOOR: f64 = 1e-9;
pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 500.0;
pub const DEFAULT_FFT_SIZE: usize = 1024;
pub const MEL_ORDER: usize = 24;
/// All-pass warping factor approximating the mel scale at 16 kHz.
pub const WARP_ALPHA: f64 = 0.42;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEnvelope {
    pub values: Vec<f64>,
    pub fft_size: usize,
    pub sample_rate_hz: u32,
}

impl SpectralEnvelope {
    /// Builds an envelope, flooring every value at [`ENVELOPE_FLOOR`].
    pub fn new(values: Vec<f64>, fft_size: usize, sample_rate_hz: u32) -> Self {
        assert_eq!(values.len(), fft_size / 2 + 1, "bin count must be fft_size/2 + 1");
        let values = values.into_iter().map(floor).collect();
        SpectralEnvelope {
            values,
            fft_size,
            sample_rate_hz,
        }
    }

    pub fn floor(fft_size: usize, sample_rate_hz: u32) -> Self {
        SpectralEnvelope {
            values: vec![ENVELOPE_FLOOR; fft_size / 2 + 1],
            fft_size,
            sample_rate_hz,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.fft_size as f64
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / 2.0
    }

    /// Bin center frequencies in Hz.
    pub fn freqs(&self) -> Vec<f64> {
        let df = self.bin_hz();
        (0..self.n_bins()).map(|k| k as f64 * df).collect()
    }

    pub fn is_silent(&self) -> bool {
        self.values.iter().all(|&v| v <= ENVELOPE_FLOOR)
    }
}

fn floor(v: f64) -> f64 {
    if v.is_nan() {
        ENVELOPE_FLOOR
    } else {
        v.max(ENVELOPE_FLOOR)
    }
}

fn check_fft_size(fft_size: usize, win: usize) -> Result<()> {
    if !fft_size.is_power_of_two() || fft_size < 2 {
        return Err(Error::invalid(format!("fft size {fft_size} is not a power of two")));
    }
    if fft_size < win {
        return Err(Error::invalid(format!(
            "fft size {fft_size} is shorter than the window ({win} samples)"
        )));
    }
    Ok(())
}

/// Magnitude of the Hann-windowed, zero-padded half spectrum.
pub fn magnitude_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    check_fft_size(fft_size, frame.len())?;
    let win = dsp::hann(frame.len());
    let windowed: Vec<f64> = frame.iter().zip(&win).map(|(x, w)| x * w).collect();
    Ok(dsp::rfft(&windowed, fft_size).iter().map(|c| c.norm()).collect())
}

/// Rectangular moving average over `width_bins` (fractional) of a half
/// spectrum, treating each bin as a unit-width cell and mirroring the
/// spectrum at DC and Nyquist.
fn smooth_rectangular(half: &[f64], width_bins: f64) -> Vec<f64> {
    if width_bins <= 1.0 {
        return half.to_vec();
    }
    let n = half.len();
    let margin = width_bins.ceil() as usize + 2;
    let last = n - 1;
    let at = |i: isize| -> f64 {
        // even symmetry about 0 and about the Nyquist bin
        let period = 2 * last as isize;
        let mut j = i.rem_euclid(period.max(1));
        if j > last as isize {
            j = period - j;
        }
        half[j as usize]
    };
    // cumulative[j] = integral over cells with index < j - margin
    let ext_len = n + 2 * margin;
    let mut cumulative = Vec::with_capacity(ext_len + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for j in 0..ext_len {
        acc += at(j as isize - margin as isize);
        cumulative.push(acc);
    }
    // integral of the step function from -inf (offset) to bin coordinate x
    let integral = |x: f64| -> f64 {
        let pos = x + 0.5 + margin as f64;
        let cell = pos.floor();
        let idx = cell as usize;
        cumulative[idx] + (pos - cell) * at(idx as isize - margin as isize)
    };
    let half_w = width_bins / 2.0;
    (0..n)
        .map(|k| {
            let k = k as f64;
            (integral(k + half_w) - integral(k - half_w)) / width_bins
        })
        .collect()
}

/// Simplified pitch-adaptive envelope estimator.
///
/// Hann-windowed power spectrum, rectangular smoothing over `2 f0 / 3` Hz,
/// then cepstral liftering with a cutoff at quefrency `0.5 / f0` seconds.
/// The result is a linear magnitude envelope.
pub fn estimate_envelope(frame: &[f64], f0_hz: f64, fft_size: usize, sample_rate_hz: u32) -> Result<SpectralEnvelope> {
    let f0 = if f0_hz.is_finite() {
        f0_hz.clamp(F0_MIN_HZ, F0_MAX_HZ)
    } else {
        F0_MIN_HZ
    };
    let magnitude = magnitude_spectrum(frame, fft_size)?;
    let power: Vec<f64> = magnitude.iter().map(|m| m * m).collect();
    let bin_hz = sample_rate_hz as f64 / fft_size as f64;
    let smoothed = smooth_rectangular(&power, 2.0 * f0 / 3.0 / bin_hz);
    let power_floor = ENVELOPE_FLOOR * ENVELOPE_FLOOR;
    if smoothed.iter().all(|&p| p <= power_floor) {
        return Ok(SpectralEnvelope::floor(fft_size, sample_rate_hz));
    }
    let env = SpectralEnvelope::new(
        smoothed.iter().map(|p| p.max(power_floor).sqrt()).collect(),
        fft_size,
        sample_rate_hz,
    );
    let cutoff = ((0.5 / f0) * sample_rate_hz as f64).floor() as usize;
    cepstral_lifter(&env, cutoff.max(1))
}

/// Keeps cepstral coefficients `c(0)..c(lifter_order - 1)` of the log envelope.
pub fn cepstral_lifter(envelope: &SpectralEnvelope, lifter_order: usize) -> Result<SpectralEnvelope> {
    if lifter_order == 0 {
        return Err(Error::invalid("lifter order must be at least 1"));
    }
    let log_env: Vec<f64> = envelope.values.iter().map(|v| v.ln()).collect();
    let mut cep = dsp::half_spectrum_to_cepstrum(&log_env);
    let n = cep.len();
    for (q, c) in cep.iter_mut().enumerate() {
        if q.min(n - q) >= lifter_order {
            *c = 0.0;
        }
    }
    let smooth = dsp::cepstrum_to_half_spectrum(&cep);
    Ok(SpectralEnvelope::new(
        smooth.into_iter().map(f64::exp).collect(),
        envelope.fft_size,
        envelope.sample_rate_hz,
    ))
}

/// Mel-cepstral coefficients `c(0)..c(M)` of a log envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct MelCepstrum {
    pub coeffs: Vec<f64>,
}

impl MelCepstrum {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// Bilinear (first-order all-pass) frequency warping of `omega` in radians.
pub fn warp_frequency(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin()).atan2(1.0 - alpha * omega.cos())
}

/// dΩ/dω of [`warp_frequency`].
fn warp_derivative(omega: f64, alpha: f64) -> f64 {
    (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * omega.cos() + alpha * alpha)
}

/// Projects the log envelope onto `cos(m Ω)` in the warped domain.
///
/// The warped-axis integral is evaluated on the linear bin grid by change of
/// variables, which keeps the transform exact for envelopes produced by
/// [`melcepstrum_to_envelope`].
pub fn envelope_to_melcepstrum(envelope: &SpectralEnvelope, order: usize, alpha: f64) -> MelCepstrum {
    let bins = envelope.n_bins();
    let n = 2 * (bins - 1);
    let step = std::f64::consts::TAU / n as f64;
    let mut coeffs = vec![0.0; order + 1];
    for (k, &v) in envelope.values.iter().enumerate() {
        let omega = k as f64 * step;
        let warped = warp_frequency(omega, alpha);
        let mult = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
        let weight = mult * floor(v).ln() * warp_derivative(omega, alpha) / n as f64;
        for (m, c) in coeffs.iter_mut().enumerate() {
            *c += weight * (m as f64 * warped).cos();
        }
    }
    MelCepstrum { coeffs }
}

/// Evaluates `exp(c(0) + 2 Σ c(m) cos(m Ω(ω)))` on an `fft_size` bin grid.
pub fn melcepstrum_to_envelope(mc: &MelCepstrum, alpha: f64, fft_size: usize, sample_rate_hz: u32) -> SpectralEnvelope {
    let bins = fft_size / 2 + 1;
    let step = std::f64::consts::TAU / fft_size as f64;
    let values = (0..bins)
        .map(|k| {
            let warped = warp_frequency(k as f64 * step, alpha);
            let log = mc.coeffs[0]
                + 2.0
                    * mc.coeffs[1..]
                        .iter()
                        .enumerate()
                        .map(|(m, c)| c * ((m + 1) as f64 * warped).cos())
                        .sum::<f64>();
            log.exp()
        })
        .collect();
    SpectralEnvelope::new(values, fft_size, sample_rate_hz)
}
