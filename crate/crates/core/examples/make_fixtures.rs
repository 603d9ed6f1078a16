//! Regenerates the bundled test clips: formant-synthesized vowel/fricative
//! sequences with a moving pitch contour, 16 kHz mono.
//!
//! cargo run -p gmwave-core --example make_fixtures -- crates/core/tests/fixtures

use std::f64::consts::PI;
use std::path::PathBuf;

use gmwave_core::{write_wav, Waveform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FS: f64 = 16_000.0;

#[derive(Clone, Copy)]
enum Seg {
    Vowel([f64; 4]),
    Fricative(f64),
    Silence,
}

const A: [f64; 4] = [730.0, 1090.0, 2440.0, 3400.0];
const I: [f64; 4] = [270.0, 2290.0, 3010.0, 3700.0];
const U: [f64; 4] = [300.0, 870.0, 2240.0, 3300.0];
const E: [f64; 4] = [530.0, 1840.0, 2480.0, 3500.0];
const O: [f64; 4] = [570.0, 840.0, 2410.0, 3400.0];
const BANDWIDTHS: [f64; 4] = [80.0, 100.0, 140.0, 200.0];

struct Resonator {
    a: f64,
    b1: f64,
    b2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Resonator {
            a: 0.0,
            b1: 0.0,
            b2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tune(&mut self, f: f64, bw: f64) {
        let r = (-PI * bw / FS).exp();
        self.b1 = 2.0 * r * (2.0 * PI * f / FS).cos();
        self.b2 = -r * r;
        self.a = 1.0 - self.b1 - self.b2;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b1 * self.y1 + self.b2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn render(segments: &[(Seg, f64)], f0_base: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = segments.iter().map(|s| s.1).sum();
    let n = (total * FS) as usize;
    let mut out = Vec::with_capacity(n);
    let mut formants = [Resonator::new(), Resonator::new(), Resonator::new(), Resonator::new()];
    let mut fric = Resonator::new();
    let mut tilt = [0.0f64; 2];
    let mut phase = 0.0;
    let mut current = [500.0, 1500.0, 2500.0, 3500.0];
    let mut t0 = 0.0;
    let mut prev_glottal = 0.0;
    for &(seg, dur) in segments {
        let len = (dur * FS) as usize;
        for j in 0..len {
            let t = t0 + j as f64 / FS;
            // Amplitude ramps of 25 ms at segment edges.
            let edge = (j.min(len - 1 - j) as f64 / (0.025 * FS)).min(1.0);
            let ramp = 0.5 - 0.5 * (PI * edge).cos();
            let f0 = f0_base * (1.0 + 0.12 * (2.0 * PI * 0.7 * t).sin() - 0.08 * t / total);
            phase += f0 / FS;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            // Two one-pole low-passes give a −12 dB/oct source, differentiated to −6 dB/oct.
            tilt[0] = 0.97 * tilt[0] + pulse;
            tilt[1] = 0.9 * tilt[1] + tilt[0];
            let glottal = tilt[1] - prev_glottal;
            prev_glottal = tilt[1];
            let noise: f64 = StandardNormal.sample(&mut rng);
            let sample = match seg {
                Seg::Vowel(target) => {
                    for (c, tgt) in current.iter_mut().zip(target) {
                        *c += (tgt - *c) * (1.0 / (0.03 * FS));
                    }
                    let mut x = glottal + 0.02 * noise;
                    let mut y = 0.0;
                    for (k, r) in formants.iter_mut().enumerate() {
                        r.tune(current[k], BANDWIDTHS[k]);
                        x = r.step(x);
                        y = x;
                    }
                    0.3 * y * ramp
                }
                Seg::Fricative(centre) => {
                    fric.tune(centre, 1500.0);
                    0.15 * fric.step(noise) * ramp
                }
                Seg::Silence => 1e-4 * noise,
            };
            out.push(sample);
        }
        t0 += dur;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.iter().map(|v| v * 0.5 / peak).collect()
}

fn main() {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/tests/fixtures".into()),
    );
    std::fs::create_dir_all(&dir).expect("create fixture directory");
    use Seg::*;
    let clips: [(&str, Vec<(Seg, f64)>, f64, u64); 3] = [
        (
            "low_voice.wav",
            vec![
                (Silence, 0.15),
                (Vowel(A), 0.35),
                (Vowel(I), 0.3),
                (Fricative(5000.0), 0.15),
                (Vowel(U), 0.35),
                (Vowel(E), 0.3),
                (Silence, 0.1),
                (Vowel(O), 0.4),
                (Vowel(A), 0.3),
                (Silence, 0.1),
            ],
            110.0,
            1,
        ),
        (
            "high_voice.wav",
            vec![
                (Silence, 0.1),
                (Vowel(E), 0.3),
                (Vowel(A), 0.35),
                (Fricative(6000.0), 0.2),
                (Vowel(I), 0.3),
                (Vowel(O), 0.35),
                (Fricative(4000.0), 0.15),
                (Vowel(U), 0.3),
                (Vowel(E), 0.3),
                (Silence, 0.15),
            ],
            210.0,
            2,
        ),
        (
            "mid_voice.wav",
            vec![
                (Silence, 0.1),
                (Vowel(O), 0.3),
                (Vowel(I), 0.25),
                (Vowel(A), 0.3),
                (Fricative(4500.0), 0.2),
                (Vowel(E), 0.3),
                (Silence, 0.12),
                (Vowel(U), 0.3),
                (Vowel(A), 0.35),
                (Fricative(5500.0), 0.15),
                (Vowel(I), 0.3),
                (Silence, 0.13),
            ],
            150.0,
            3,
        ),
    ];
    for (name, segs, f0, seed) in clips {
        let w = Waveform::new(render(&segs, f0, seed), FS as u32);
        write_wav(&w, dir.join(name)).expect("write fixture");
        println!("{name}: {:.2} s", w.duration_s());
    }
}
