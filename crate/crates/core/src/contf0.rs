//! Continuous F0: per-frame autocorrelation pitch observations with a
//! confidence-derived variance, smoothed by a Kalman/RTS smoother over a
//! random walk in log-F0. Every frame gets a value, voiced or not.

use crate::audio::{frame_count, Waveform};
use crate::error::{Error, Result};
use crate::spectral::{F0_MAX_HZ, F0_MIN_HZ};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchSettings {
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Observation variance (log-Hz²) at zero clarity.
    pub v0: f64,
    pub v_floor: f64,
    /// Random-walk variance per frame in log-F0.
    pub process_noise: f64,
}

impl Default for PitchSettings {
    fn default() -> Self {
        PitchSettings {
            f0_min_hz: F0_MIN_HZ,
            f0_max_hz: F0_MAX_HZ,
            v0: 1.0,
            v_floor: 1e-4,
            process_noise: 5e-4,
        }
    }
}

/// One frame's pitch estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchObservation {
    pub f0_hz: f64,
    /// Variance of `ln f0_hz`.
    pub variance: f64,
    /// Normalized autocorrelation peak height in [0, 1].
    pub clarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContF0Track {
    pub f0_hz: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_hop_s: f64,
}

impl ContF0Track {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn log_f0(&self) -> Vec<f64> {
        self.f0_hz.iter().map(|f| f.ln()).collect()
    }
}

/// Normalized cross-correlation pitch estimate for every analysis frame.
///
/// Frame `i` is centred at `i * hop + win / 2`. Correlation uses a fixed
/// summation length of `fs / f0_min` samples, so the analysis span around the
/// centre is two periods of the lowest pitch (or the frame, if longer).
pub fn estimate_pitch_candidates(
    waveform: &Waveform,
    hop: usize,
    win: usize,
    settings: &PitchSettings,
) -> Result<Vec<PitchObservation>> {
    if hop == 0 || win == 0 || hop > win {
        return Err(Error::invalid("invalid hop/window for pitch analysis"));
    }
    if waveform.is_empty() {
        return Err(Error::invalid("cannot estimate pitch of an empty waveform"));
    }
    let fs = waveform.sample_rate_hz as f64;
    let lag_min = ((fs / settings.f0_max_hz).floor() as usize).max(2);
    let lag_max = (fs / settings.f0_min_hz).ceil() as usize;
    let span = win.max(2 * lag_max);
    let len = span - lag_max;
    let n_frames = frame_count(waveform.len(), hop, win);
    let x = &waveform.samples;

    Ok((0..n_frames)
        .map(|i| {
            let start = (i * hop + win / 2) as isize - (span / 2) as isize;
            let mut seg: Vec<f64> = (0..span as isize + 1)
                .map(|k| {
                    let t = start + k;
                    if t >= 0 && (t as usize) < x.len() {
                        x[t as usize]
                    } else {
                        0.0
                    }
                })
                .collect();
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            seg.iter_mut().for_each(|v| *v -= mean);
            frame_pitch(&seg, len, lag_min, lag_max, fs, settings)
        })
        .collect())
}

fn frame_pitch(
    seg: &[f64],
    len: usize,
    lag_min: usize,
    lag_max: usize,
    fs: f64,
    settings: &PitchSettings,
) -> PitchObservation {
    let unvoiced = PitchObservation {
        f0_hz: (settings.f0_min_hz * settings.f0_max_hz).sqrt(),
        variance: settings.v0 + settings.v_floor,
        clarity: 0.0,
    };
    let head = &seg[..len];
    let e0: f64 = head.iter().map(|v| v * v).sum();
    if e0 <= 1e-20 {
        return unvoiced;
    }
    // r[k] holds lag lag_min - 1 + k
    let r: Vec<f64> = (lag_min - 1..=lag_max + 1)
        .map(|lag| {
            let tail = &seg[lag..lag + len];
            let el: f64 = tail.iter().map(|v| v * v).sum();
            if el <= 1e-20 {
                return 0.0;
            }
            head.iter().zip(tail).map(|(a, b)| a * b).sum::<f64>() / (e0 * el).sqrt()
        })
        .collect();
    let inner = 1..r.len() - 1;
    let best = inner
        .clone()
        .max_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a)))
        .unwrap();
    if r[best] <= 0.0 {
        return unvoiced;
    }
    // earliest strong local maximum guards against picking a subharmonic
    let pick = inner
        .clone()
        .find(|&k| r[k] > r[k - 1] && r[k] >= r[k + 1] && r[k] >= 0.9 * r[best])
        .unwrap_or(best);
    let (a, b, c) = (r[pick - 1], r[pick], r[pick + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (lag_min - 1 + pick) as f64 + offset;
    let clarity = b.clamp(0.0, 1.0);
    PitchObservation {
        f0_hz: (fs / lag).clamp(settings.f0_min_hz, settings.f0_max_hz),
        variance: settings.v0 * (1.0 - clarity).powi(2) + settings.v_floor,
        clarity,
    }
}

/// Forward (filtered) and backward (smoothed) moments of the log-F0 state.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherPass {
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub smoothed_mean: Vec<f64>,
    pub smoothed_var: Vec<f64>,
}

/// Kalman filter plus Rauch-Tung-Striebel smoother for the scalar random
/// walk `x_{t+1} = x_t + w`, `w ~ N(0, q)`, observed as `z_t = x_t + v_t`,
/// `v_t ~ N(0, r_t)`. The first state has a flat prior.
pub fn smooth_random_walk(z: &[f64], r: &[f64], q: f64) -> SmootherPass {
    assert_eq!(z.len(), r.len());
    assert!(!z.is_empty(), "need at least one observation");
    let n = z.len();
    let mut fm = vec![0.0; n];
    let mut fv = vec![0.0; n];
    let mut pred_var = vec![0.0; n];
    fm[0] = z[0];
    fv[0] = r[0];
    pred_var[0] = f64::INFINITY;
    for t in 1..n {
        let p = fv[t - 1] + q;
        pred_var[t] = p;
        let s = p + r[t];
        let gain = if s > 0.0 { p / s } else { 0.0 };
        fm[t] = fm[t - 1] + gain * (z[t] - fm[t - 1]);
        fv[t] = if s > 0.0 { p * r[t] / s } else { 0.0 };
    }
    let mut sm = fm.clone();
    let mut sv = fv.clone();
    for t in (0..n - 1).rev() {
        let p = pred_var[t + 1];
        let c = if p > 0.0 { fv[t] / p } else { 0.0 };
        sm[t] = fm[t] + c * (sm[t + 1] - fm[t]);
        sv[t] = (fv[t] + c * c * (sv[t + 1] - p)).max(0.0);
    }
    SmootherPass {
        filtered_mean: fm,
        filtered_var: fv,
        smoothed_mean: sm,
        smoothed_var: sv,
    }
}

/// Smooths pitch observations into a gap-free track in Hz.
pub fn kalman_smooth(observations: &[PitchObservation], frame_hop_s: f64, settings: &PitchSettings) -> ContF0Track {
    let z: Vec<f64> = observations.iter().map(|o| o.f0_hz.ln()).collect();
    let r: Vec<f64> = observations.iter().map(|o| o.variance).collect();
    let pass = smooth_random_walk(&z, &r, settings.process_noise);
    ContF0Track {
        f0_hz: pass
            .smoothed_mean
            .iter()
            .map(|x| x.exp().clamp(settings.f0_min_hz, settings.f0_max_hz))
            .collect(),
        variance: pass.smoothed_var,
        frame_hop_s,
    }
}

/// Pitch candidates followed by smoothing.
pub fn continuous_f0(waveform: &Waveform, hop: usize, win: usize, settings: &PitchSettings) -> Result<ContF0Track> {
    let obs = estimate_pitch_candidates(waveform, hop, win, settings)?;
    Ok(kalman_smooth(
        &obs,
        hop as f64 / waveform.sample_rate_hz as f64,
        settings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sawtooth(f0: f64, seconds: f64) -> Waveform {
        let fs = 16_000.0;
        let n = (seconds * fs) as usize;
        Waveform::new(
            (0..n)
                .map(|t| 0.5 * (((t as f64 * f0 / fs) % 1.0) * 2.0 - 1.0))
                .collect(),
            16_000,
        )
    }

    #[test]
    fn sawtooth_pitch() {
        let obs = estimate_pitch_candidates(&sawtooth(100.0, 1.0), 80, 400, &PitchSettings::default()).unwrap();
        let mut f0: Vec<f64> = obs.iter().map(|o| o.f0_hz).collect();
        f0.sort_by(f64::total_cmp);
        let median = f0[f0.len() / 2];
        assert!((median - 100.0).abs() <= 1.0, "median {median}");
    }

    #[test]
    fn silence_has_maximal_variance() {
        let s = PitchSettings::default();
        let obs = estimate_pitch_candidates(&Waveform::new(vec![0.0; 8000], 16_000), 80, 400, &s).unwrap();
        assert!(obs.iter().all(|o| o.clarity == 0.0 && o.variance == s.v0 + s.v_floor));
    }

    #[test]
    fn white_noise_has_low_clarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..100 * 80 + 320)
            .map(|_| 0.2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let obs = estimate_pitch_candidates(&Waveform::new(x, 16_000), 80, 400, &PitchSettings::default()).unwrap();
        let mean = obs.iter().take(100).map(|o| o.clarity).sum::<f64>() / 100.0;
        assert!(mean <= 0.3, "mean clarity {mean}");
    }

    #[test]
    fn perfect_observations_pass_through() {
        let z = [4.6, 4.7, 5.0, 4.2, 4.4];
        let pass = smooth_random_walk(&z, &[0.0; 5], 1e-3);
        assert_eq!(pass.smoothed_mean, z.to_vec());
    }

    #[test]
    fn zero_process_noise_gives_weighted_mean() {
        let z = [4.6, 4.7, 5.0, 4.2, 4.4];
        let pass = smooth_random_walk(&z, &[0.3; 5], 0.0);
        let mean = z.iter().sum::<f64>() / 5.0;
        for m in &pass.smoothed_mean {
            assert!((m - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_is_bridged() {
        let s = PitchSettings::default();
        let mut obs = vec![
            PitchObservation {
                f0_hz: 120.0,
                variance: s.v_floor,
                clarity: 1.0
            };
            30
        ];
        for o in &mut obs[10..20] {
            *o = PitchObservation {
                f0_hz: 300.0,
                variance: s.v0 + s.v_floor,
                clarity: 0.0,
            };
        }
        let track = kalman_smooth(&obs, 0.005, &s);
        for f in &track.f0_hz {
            assert!((f / 120.0 - 1.0).abs() <= 0.02, "{f}");
        }
    }
}
