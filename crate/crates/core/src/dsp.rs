//! FFT plumbing shared by the analysis and synthesis paths.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place forward DFT (no scaling).
pub fn fft(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

/// In-place inverse DFT (no 1/N scaling).
pub fn ifft(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    plan.process(buf);
}

/// Hann window sampled at half-integer points, `sin²(π(n + ½)/len)`.
///
/// Sums to exactly `len / (2 hop)` under overlap-add whenever `len / hop` is an
/// integer ≥ 2, and is strictly positive at both ends.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let s = (std::f64::consts::PI * (n as f64 + 0.5) / len as f64).sin();
            s * s
        })
        .collect()
}

/// Zero-padded DFT of a real sequence, returning bins `0..=n/2`.
pub fn rfft(x: &[f64], n: usize) -> Vec<Complex64> {
    assert!(x.len() <= n, "input longer than transform size");
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    fft(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`rfft`] for a Hermitian half spectrum; returns `n = 2 (bins - 1)` samples.
pub fn irfft(half: &[Complex64]) -> Vec<f64> {
    let n = 2 * (half.len() - 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..half.len()].copy_from_slice(half);
    for k in 1..n / 2 {
        buf[n - k] = half[k].conj();
    }
    ifft(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Real cepstrum of an even spectrum given by its half `0..=n/2` samples.
pub fn half_spectrum_to_cepstrum(half: &[f64]) -> Vec<f64> {
    let spec: Vec<Complex64> = half.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    irfft(&spec)
}

/// Inverse of [`half_spectrum_to_cepstrum`] for an even cepstrum of length `n`.
pub fn cepstrum_to_half_spectrum(cep: &[f64]) -> Vec<f64> {
    let n = cep.len();
    rfft(cep, n).iter().map(|c| c.re).collect()
}
