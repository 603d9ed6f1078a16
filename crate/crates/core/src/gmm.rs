//! Gaussian-mixture approximation of a spectral envelope.
//!
//! A frame's envelope `H(ω)` is modelled as
//! `G(ω) = gain · Σ_k w_k N(ω; μ_k, σ_k²)` on the envelope's linear frequency
//! grid (Hz) and fitted by minimizing the I-divergence `Σ H ln(H/G) − H + G`.
//!
//! The optimizer is the EM-style majorization for I-divergence: responsibilities
//! `r_k(ω) = w_k N_k(ω) / Σ_j w_j N_j(ω)`, moment updates for `μ_k, σ_k` and the
//! exact weight update given those moments. Near the band edges the moment
//! update is not guaranteed to decrease the objective, so every step is
//! checked and damped; the recorded divergence trace is non-increasing.

use crate::spectral::{SpectralEnvelope, ENVELOPE_FLOOR};

pub const DEFAULT_COMPONENTS: usize = 16;
pub const SIGMA_MIN_HZ: f64 = 10.0;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean_hz: f64,
    pub sigma_hz: f64,
}

/// Per-frame mixture parameters. `gain` carries the envelope's area so the
/// weights describe shape only.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmEnvelope {
    pub gain: f64,
    pub components: Vec<Component>,
}

impl GmmEnvelope {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// A mixture with no mass: uniform means, default widths, zero weights and gain.
    pub fn silent(k: usize, nyquist_hz: f64) -> Self {
        let sigma = initial_sigma(k, nyquist_hz);
        GmmEnvelope {
            gain: 0.0,
            components: uniform_means(k, nyquist_hz)
                .map(|mean_hz| Component {
                    weight: 0.0,
                    mean_hz,
                    sigma_hz: sigma,
                })
                .collect(),
        }
    }

    pub fn sort_by_mean(&mut self) {
        self.components.sort_by(|a, b| a.mean_hz.total_cmp(&b.mean_hz));
    }
}

fn initial_sigma(k: usize, nyquist_hz: f64) -> f64 {
    (nyquist_hz / (2.0 * k as f64)).max(SIGMA_MIN_HZ)
}

fn uniform_means(count: usize, nyquist_hz: f64) -> impl Iterator<Item = f64> {
    (0..count).map(move |i| (i as f64 + 0.5) * nyquist_hz / count as f64)
}

fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Evaluates `gain · Σ w_k N(ω; μ_k, σ_k²)` at each frequency.
pub fn gmm_eval(params: &GmmEnvelope, freqs_hz: &[f64]) -> Vec<f64> {
    freqs_hz
        .iter()
        .map(|&f| {
            params.gain
                * params
                    .components
                    .iter()
                    .map(|c| c.weight * normal_pdf(f, c.mean_hz, c.sigma_hz))
                    .sum::<f64>()
        })
        .collect()
}

/// `Σ H ln(H/G) − H + G` with `0 ln 0 = 0` and `G` floored where `H > 0`.
pub fn i_divergence(h: &[f64], g: &[f64]) -> f64 {
    assert_eq!(h.len(), g.len(), "I-divergence needs equal-length inputs");
    h.iter()
        .zip(g)
        .map(|(&h, &g)| {
            if h > 0.0 {
                let g = g.max(ENVELOPE_FLOOR);
                h * (h / g).ln() - h + g
            } else {
                g
            }
        })
        .sum()
}

/// Places means on the `k` largest local maxima of the envelope and matches
/// each component's peak height to the envelope amplitude there.
pub fn init_gmm(envelope: &SpectralEnvelope, k: usize) -> GmmEnvelope {
    assert!(k >= 1, "need at least one component");
    let nyquist = envelope.nyquist_hz();
    let v = &envelope.values;
    let df = envelope.bin_hz();
    let gain: f64 = v.iter().sum::<f64>() * df;
    if envelope.is_silent() {
        return GmmEnvelope::silent(k, nyquist);
    }

    let last = v.len() - 1;
    let mut peaks: Vec<usize> = (0..=last)
        .filter(|&i| {
            let left = i == 0 || v[i] > v[i - 1];
            let right = i == last || v[i] >= v[i + 1];
            let rises = (i > 0 && v[i] > v[i - 1]) || (i < last && v[i] > v[i + 1]);
            left && right && rises
        })
        .collect();
    peaks.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    peaks.truncate(k);

    let mut means: Vec<f64> = peaks.iter().map(|&i| i as f64 * df).collect();
    means.extend(uniform_means(k - means.len(), nyquist));

    let sigma = initial_sigma(k, nyquist);
    let peak_scale = (2.0 * std::f64::consts::PI).sqrt() * sigma / gain;
    let mut params = GmmEnvelope {
        gain,
        components: means
            .into_iter()
            .map(|mean_hz| {
                let amp = interpolate(v, mean_hz / df);
                Component {
                    weight: amp * peak_scale,
                    mean_hz,
                    sigma_hz: sigma,
                }
            })
            .collect(),
    };
    params.sort_by_mean();
    params
}

fn interpolate(v: &[f64], pos: f64) -> f64 {
    let pos = pos.clamp(0.0, (v.len() - 1) as f64);
    let i = pos.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let t = pos - i as f64;
    v[i] * (1.0 - t) + v[i + 1] * t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

/// Result of [`fit_gmm_traced`]: the fit plus the divergence after
/// initialization and after every accepted update.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: GmmEnvelope,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_gmm(envelope: &SpectralEnvelope, k: usize, settings: &FitSettings) -> GmmEnvelope {
    fit_gmm_traced(envelope, k, settings).params
}

pub fn fit_gmm_traced(envelope: &SpectralEnvelope, k: usize, settings: &FitSettings) -> GmmFit {
    let init = init_gmm(envelope, k);
    if envelope.is_silent() || init.gain <= 0.0 {
        return GmmFit {
            params: init,
            trace: Vec::new(),
            iterations: 0,
        };
    }
    let fitter = Fitter::new(envelope, init.gain);
    let mut state = fitter.evaluate(init.components);
    let mut trace = vec![state.divergence];
    let mut frozen = vec![false; k];
    let mut impute_tails = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;
        let previous = state.divergence;
        let target = fitter.em_target(&state, impute_tails);

        let mut accepted = fitter.damped_step(&state, &target, |i| !frozen[i]);
        if accepted.is_none() {
            // whole-mixture step failed: update components one at a time
            let mut current = state.clone();
            let mut any = false;
            for i in 0..k {
                if frozen[i] {
                    continue;
                }
                match fitter.damped_step(&current, &target, |j| j == i) {
                    Some(next) => {
                        current = next;
                        any = true;
                    }
                    None => frozen[i] = true,
                }
            }
            if any {
                accepted = Some(current);
            }
        }
        let stalled = match accepted {
            Some(next) => {
                state = next;
                trace.push(state.divergence);
                previous <= 0.0 || (previous - state.divergence) / previous < settings.tol
            }
            None => true,
        };
        if stalled {
            // Plain updates converge quickly but to a biased point when a
            // component overhangs a band edge; finish with corrected ones.
            if impute_tails || previous <= 0.0 {
                break;
            }
            impute_tails = true;
            frozen.fill(false);
        }
    }

    let mut params = GmmEnvelope {
        gain: init.gain,
        components: state.components,
    };
    params.sort_by_mean();
    GmmFit {
        params,
        trace,
        iterations,
    }
}

#[derive(Debug, Clone)]
struct State {
    components: Vec<Component>,
    /// Row-major `k × bins` Gaussian densities on the grid.
    densities: Vec<f64>,
    /// Shape mixture `Σ w_k N_k` per bin.
    mixture: Vec<f64>,
    divergence: f64,
}

struct Fitter<'a> {
    envelope: &'a [f64],
    /// `H / gain`.
    shape: Vec<f64>,
    gain: f64,
    df: f64,
    nyquist: f64,
}

impl<'a> Fitter<'a> {
    fn new(envelope: &'a SpectralEnvelope, gain: f64) -> Self {
        Fitter {
            envelope: &envelope.values,
            shape: envelope.values.iter().map(|v| v / gain).collect(),
            gain,
            df: envelope.bin_hz(),
            nyquist: envelope.nyquist_hz(),
        }
    }

    fn bins(&self) -> usize {
        self.envelope.len()
    }

    /// Fills `row` with N(k·df; mean, sigma²) using a multiplicative recurrence
    /// outward from the bin nearest the mean.
    fn density_row(&self, mean: f64, sigma: f64, row: &mut [f64]) {
        let n = row.len();
        let df = self.df;
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
        let inv2s2 = 0.5 / (sigma * sigma);
        let start = ((mean / df).round() as isize).clamp(0, n as isize - 1) as usize;
        let d0 = start as f64 * df - mean;
        let v0 = norm * (-(d0 * d0) * inv2s2).exp();
        let step_sq = (-(df * df) * inv2s2 * 2.0).exp();
        row[start] = v0;
        // ratio between neighbours: exp(-((d ± df)² - d²)/(2σ²))
        let mut value = v0;
        let mut ratio = (-(2.0 * d0 * df + df * df) * inv2s2).exp();
        for slot in row.iter_mut().skip(start + 1) {
            value *= ratio;
            ratio *= step_sq;
            *slot = value;
        }
        value = v0;
        ratio = (-(-2.0 * d0 * df + df * df) * inv2s2).exp();
        for slot in row[..start].iter_mut().rev() {
            value *= ratio;
            ratio *= step_sq;
            *slot = value;
        }
    }

    fn evaluate(&self, components: Vec<Component>) -> State {
        let bins = self.bins();
        let mut densities = vec![0.0; components.len() * bins];
        let mut mixture = vec![0.0; bins];
        for (c, row) in components.iter().zip(densities.chunks_mut(bins)) {
            self.density_row(c.mean_hz, c.sigma_hz, row);
            for (m, d) in mixture.iter_mut().zip(row.iter()) {
                *m += c.weight * d;
            }
        }
        let model: Vec<f64> = mixture.iter().map(|m| m * self.gain).collect();
        let divergence = i_divergence(self.envelope, &model);
        State {
            components,
            densities,
            mixture,
            divergence,
        }
    }

    /// Full EM update from `state`. With `impute_tails` the Gaussian mass
    /// outside the band is treated as missing data, which removes the
    /// truncation bias of the plain moment update near DC and Nyquist.
    fn em_target(&self, state: &State, impute_tails: bool) -> Vec<Component> {
        let bins = self.bins();
        let ratio: Vec<f64> = self
            .shape
            .iter()
            .zip(&state.mixture)
            .map(|(&h, &g)| if g > 0.0 { h / g } else { 0.0 })
            .collect();
        state
            .components
            .iter()
            .zip(state.densities.chunks(bins))
            .map(|(c, row)| {
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for (j, (&q, &d)) in ratio.iter().zip(row).enumerate() {
                    let r = q * d;
                    let off = j as f64 * self.df - c.mean_hz;
                    m0 += r;
                    m1 += r * off;
                    m2 += r * off * off;
                }
                // Bins past either band edge are unobserved; their expected
                // content is the current model itself, so the ratio there is 1.
                if impute_tails {
                    let (t0, t1, t2) = self.tail_sums(c.mean_hz, c.sigma_hz);
                    m0 += t0;
                    m1 += t1;
                    m2 += t2;
                }
                let mass = c.weight * m0;
                if !(mass > 0.0) || !(m0 > 0.0) {
                    return Component { weight: 0.0, ..*c };
                }
                let shift = m1 / m0;
                let mean_hz = (c.mean_hz + shift).clamp(0.0, self.nyquist);
                let var = (m2 / m0 - shift * shift).max(0.0);
                let sigma_hz = var.sqrt().max(SIGMA_MIN_HZ);
                let mut row = vec![0.0; bins];
                self.density_row(mean_hz, sigma_hz, &mut row);
                let mut coverage: f64 = row.iter().sum();
                if impute_tails {
                    coverage += self.tail_sums(mean_hz, sigma_hz).0;
                }
                let weight = if coverage > 0.0 { mass / coverage } else { 0.0 };
                Component {
                    weight,
                    mean_hz,
                    sigma_hz,
                }
            })
            .collect()
    }

    /// Density sums `Σ N, Σ N·(ω−μ), Σ N·(ω−μ)²` over lattice points `j·Δf`
    /// outside `[0, Nyquist]`, out to 10σ.
    fn tail_sums(&self, mean: f64, sigma: f64) -> (f64, f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let mut add = |j: isize| {
            let off = j as f64 * self.df - mean;
            let d = normal_pdf(j as f64 * self.df, mean, sigma);
            s0 += d;
            s1 += d * off;
            s2 += d * off * off;
        };
        let reach = 10.0 * sigma;
        let mut j = -1isize;
        while j as f64 * self.df >= mean - reach {
            add(j);
            j -= 1;
        }
        let mut j = self.bins() as isize;
        while j as f64 * self.df <= mean + reach {
            add(j);
            j += 1;
        }
        (s0, s1, s2)
    }

    /// Moves the selected components toward `target`, halving the step until
    /// the divergence does not increase.
    fn damped_step(&self, state: &State, target: &[Component], select: impl Fn(usize) -> bool) -> Option<State> {
        let mut step = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<Component> = state
                .components
                .iter()
                .zip(target)
                .enumerate()
                .map(|(i, (cur, tgt))| {
                    if select(i) {
                        self.project(Component {
                            weight: cur.weight + step * (tgt.weight - cur.weight),
                            mean_hz: cur.mean_hz + step * (tgt.mean_hz - cur.mean_hz),
                            sigma_hz: cur.sigma_hz + step * (tgt.sigma_hz - cur.sigma_hz),
                        })
                    } else {
                        *cur
                    }
                })
                .collect();
            let next = self.evaluate(candidate);
            if next.divergence <= state.divergence {
                return Some(next);
            }
            step *= 0.5;
        }
        None
    }

    fn project(&self, c: Component) -> Component {
        Component {
            weight: c.weight.max(0.0),
            mean_hz: c.mean_hz.clamp(0.0, self.nyquist),
            sigma_hz: c.sigma_hz.max(SIGMA_MIN_HZ),
        }
    }
}
