//! Mexican-hat continuous wavelet transform of a (log-)F0 contour at
//! octave-spaced scales, with a single-sum reconstruction and an explicit
//! residual that makes the round trip exact.

use rayon::prelude::*;

use crate::dsp::{irfft, rfft};
use crate::error::{Error, Result};

pub const DEFAULT_SCALES: usize = 10;
/// Smallest scale in seconds; scale `i` is `SCALE0_S * 2^i`.
pub const SCALE0_S: f64 = 0.02;
/// Kernels are truncated at `|t| <= KERNEL_SUPPORT` (in units of the scale).
const KERNEL_SUPPORT: f64 = 8.0;

/// Constant multiplying `Σ_i W(a_i, x) / √a_i` in [`cwt_reconstruct`].
///
/// Least-squares fit on the reference chirp of
/// [`calibrate_reconstruction_gain`]; the calibration test recomputes it.
pub const RECONSTRUCTION_GAIN: f64 = 0.339_181_192_4;

/// Unit-L2-norm Mexican hat, `2/(√3 π^¼) (1 − t²) e^{−t²/2}`.
pub fn mexican_hat(t: f64) -> f64 {
    let norm = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
    norm * (1.0 - t * t) * (-0.5 * t * t).exp()
}

pub fn dyadic_scales(scale0_s: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| scale0_s * 2f64.powi(i as i32)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwtDecomposition {
    /// Scales in seconds.
    pub scales: Vec<f64>,
    /// `coefficients[i][b] = W(a_i, b)`.
    pub coefficients: Vec<Vec<f64>>,
    /// Difference between the mean-removed input and the scale-sum reconstruction.
    pub residual: Vec<f64>,
    pub mean_level: f64,
    pub frame_hop_s: f64,
}

impl CwtDecomposition {
    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }
}

/// Half-sample symmetric extension of `0..n` to any integer index.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - 1 - j) as usize
    }
}

/// `W(a, b) = a^{-½} Σ_x s(x) ψ((x − b) hop / a) hop` over the reflected signal.
///
/// The kernel is symmetric, so the correlation is a linear convolution of
/// the extended signal, done by FFT.
fn transform_scale(signal: &[f64], hop_s: f64, scale: f64) -> Vec<f64> {
    let n = signal.len();
    let half = (KERNEL_SUPPORT * scale / hop_s).ceil() as isize;
    let norm = hop_s / scale.sqrt();
    let kernel: Vec<f64> = (-half..=half)
        .map(|j| norm * mexican_hat(j as f64 * hop_s / scale))
        .collect();
    let extended: Vec<f64> = (-half..n as isize + half).map(|i| signal[reflect(i, n)]).collect();
    let size = (extended.len() + kernel.len() - 1).next_power_of_two();
    let a = rfft(&extended, size);
    let b = rfft(&kernel, size);
    let product: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let full = irfft(&product);
    let lag = 2 * half as usize;
    full[lag..lag + n].to_vec()
}

fn scale_sum(coefficients: &[Vec<f64>], scales: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (row, &a) in coefficients.iter().zip(scales) {
        let w = RECONSTRUCTION_GAIN / a.sqrt();
        for (o, c) in out.iter_mut().zip(row) {
            *o += w * c;
        }
    }
    out
}

/// Mean-removes `signal`, transforms it at each scale and stores the residual
/// of the scale-sum reconstruction.
pub fn cwt_decompose(signal: &[f64], frame_hop_s: f64, scales: &[f64]) -> Result<CwtDecomposition> {
    if signal.len() < 2 {
        return Err(Error::invalid("CWT needs at least two samples"));
    }
    if !(frame_hop_s > 0.0) {
        return Err(Error::invalid("frame hop must be positive"));
    }
    if let Some(&bad) = scales.iter().find(|&&a| !(a >= 2.0 * frame_hop_s)) {
        return Err(Error::invalid(format!(
            "scale {bad} s is shorter than two frame hops ({} s)",
            2.0 * frame_hop_s
        )));
    }
    let n = signal.len();
    let mean_level = signal.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = signal.iter().map(|v| v - mean_level).collect();
    let coefficients: Vec<Vec<f64>> = scales
        .par_iter()
        .map(|&a| transform_scale(&centred, frame_hop_s, a))
        .collect();
    let approx = scale_sum(&coefficients, scales, n);
    let residual = centred.iter().zip(&approx).map(|(s, r)| s - r).collect();
    Ok(CwtDecomposition {
        scales: scales.to_vec(),
        coefficients,
        residual,
        mean_level,
        frame_hop_s,
    })
}

/// `mean_level + C Σ_i W(a_i, x)/√a_i`, plus the residual when requested.
pub fn cwt_reconstruct(decomp: &CwtDecomposition, include_residual: bool) -> Vec<f64> {
    let mut out = scale_sum(&decomp.coefficients, &decomp.scales, decomp.len());
    for (i, o) in out.iter_mut().enumerate() {
        *o += decomp.mean_level;
        if include_residual {
            *o += decomp.residual[i];
        }
    }
    out
}

/// Reference signal for [`calibrate_reconstruction_gain`]: a unit-amplitude
/// exponential chirp whose period sweeps from `4 a_0` to `a_9 / 4` over
/// 8192 frames of 5 ms.
pub fn calibration_chirp() -> (Vec<f64>, f64) {
    let hop = 0.005;
    let n = 8192;
    let duration = n as f64 * hop;
    let f_start = 1.0 / (4.0 * SCALE0_S);
    let f_end = 1.0 / (SCALE0_S * 2f64.powi(DEFAULT_SCALES as i32 - 1) / 4.0);
    let k = (f_end / f_start).ln() / duration;
    let signal = (0..n)
        .map(|i| {
            let t = i as f64 * hop;
            let phase = std::f64::consts::TAU * f_start * ((k * t).exp() - 1.0) / k;
            phase.sin()
        })
        .collect();
    (signal, hop)
}

/// Least-squares gain mapping the raw scale sum onto the reference chirp.
pub fn calibrate_reconstruction_gain() -> f64 {
    let (signal, hop) = calibration_chirp();
    let scales = dyadic_scales(SCALE0_S, DEFAULT_SCALES);
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let centred: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let mut raw = vec![0.0; centred.len()];
    for &a in &scales {
        for (r, c) in raw.iter_mut().zip(transform_scale(&centred, hop, a)) {
            *r += c / a.sqrt();
        }
    }
    let num: f64 = raw.iter().zip(&centred).map(|(r, s)| r * s).sum();
    let den: f64 = raw.iter().map(|r| r * r).sum();
    num / den
}
